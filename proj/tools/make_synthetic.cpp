// Writes the synthetic toy dataset (PNG images, masks, manifest.csv).
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "robustlens/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate the synthetic chest-radiograph-like toy dataset", "make_synthetic"};
  std::string output, config_path;
  std::optional<std::uint64_t> seed;
  app.add_option("-o,--output", output, "output directory")->required();
  app.add_option("-c,--config", config_path, "generator config JSON")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "generator seed");
  CLI11_PARSE(app, argc, argv);
  try {
    robustlens::SyntheticConfig cfg;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      cfg = robustlens::synthetic_from_json(nlohmann::json::parse(in));
    }
    if (seed) cfg.seed = *seed;
    const auto manifest = robustlens::write_synthetic_dataset(output, cfg);
    std::cout << "wrote " << manifest.generic_string() << "\n";
  } catch (const robustlens::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
