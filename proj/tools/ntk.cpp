// ntk: command-line front end for the kernel library.

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ntk/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Exact limiting and finite-width neural tangent kernels"};
  app.set_version_flag("--version", std::string(ntk::kVersion));
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::string format = "csv";
  int jobs = 1;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed override for every random draw");
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Output directory")->capture_default_str();
  app.add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
  app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app.fallthrough();

  const char* help[][2] = {{"regime", "Regime classification and r over a beta grid"},
                           {"dual", "Dual activation and its derivative on a rho grid"},
                           {"fc-profile", "Normalized NTK on the unit circle"},
                           {"dcnn", "Checkerboard profile and output kernel of a deconvolutional net"},
                           {"border", "Diagonal kernel profile of a bounded deconvolutional net"},
                           {"spectrum", "Gram spectra and checkerboard energy"},
                           {"finwidth", "Finite-width Monte Carlo and layer norm checks"},
                           {"bn-check", "Constant Rayleigh quotient under batch norm"}};
  for (const auto& [name, text] : help) app.add_subcommand(name, text);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    nlohmann::json config = nlohmann::json::object();
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      try {
        config = nlohmann::json::parse(f);
      } catch (const nlohmann::json::exception& e) {
        throw ntk::ConfigError(std::string("cannot parse ") + config_path + ": " + e.what());
      }
    }
    ntk::cli::RunOptions opt;
    opt.out_dir = out_dir;
    opt.format = format;
    opt.jobs = jobs;
    if (*seed_opt) opt.seed = seed;
    opt.log = &std::cout;
    std::vector<std::filesystem::path> written;
    const std::string command = app.get_subcommands().front()->get_name();
    const int code = ntk::cli::run(command, config, opt, &written);
    for (const auto& p : written) std::cout << "wrote " << p.string() << "\n";
    return code;
  } catch (const ntk::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
