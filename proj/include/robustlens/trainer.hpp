#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "robustlens/adversarial.hpp"
#include "robustlens/data.hpp"
#include "robustlens/metrics.hpp"
#include "robustlens/model.hpp"
#include "robustlens/optim.hpp"

namespace robustlens {

/// Everything one experiment needs. JSON schema: see README.
struct RunConfig {
  std::string name = "tiny";
  ModelConfig model;  // input size and class count live here
  std::filesystem::path manifest;
  /// Train-time augmentation; std::nullopt trains on the plain images.
  std::optional<AugmentationConfig> augmentation = AugmentationConfig{};
  /// Used for adversarial training and for the starred (perturbed) rows.
  std::optional<AttackConfig> attack;
  bool adversarial = false;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  int early_stop_patience = 15;
  double learning_rate = 1e-4;
  double plateau_factor = 0.2;
  int plateau_patience = 2;
  double plateau_min_delta = 1e-4;
  std::size_t rounds = 15;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/tiny";

  /// Throws ConfigError on inconsistent values (rounds < 1, batch 0, ...).
  void validate() const;
  /// Seed of round i.
  std::uint64_t round_seed(std::size_t i) const { return seed + i; }
};

nlohmann::json to_json(const RunConfig& c);
/// `model` is either a preset name ("tiny", "vgg-mini") combined with
/// "image_size": [H, W], or a full model object.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

struct RunRecord {
  std::size_t round = 0;
  std::uint64_t seed = 0;
  bool adversarial = false;
  std::vector<double> train_losses;
  std::vector<double> val_losses;
  std::vector<double> lr_trace;  // rate used during each epoch
  std::size_t halt_epoch = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double train_accuracy = 0.0;  // best snapshot, clean train split
  std::string checkpoint;       // relative to the output directory
  MetricsReport test;
  std::optional<MetricsReport> test_perturbed;
  std::string error;            // non-empty when the round failed
};

nlohmann::json to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);

/// Result of one round: the record and the best-validation model.
struct RoundResult {
  RunRecord record;
  Model model;
};

/// One round on an already decoded dataset: seeded init, epochs of
/// (augmented) training, validation-driven plateau decay and early stopping,
/// test evaluation of the best snapshot (clean, and under attack when an
/// attack is configured). Does not touch the filesystem.
RoundResult train_round(const RunConfig& config, const Dataset& dataset, std::size_t round);

/// Decodes the config's manifest at the model's input size.
Dataset load_dataset(const RunConfig& config);

struct ExperimentResult {
  std::vector<RunRecord> records;
  std::vector<TableRow> rows;
  std::string table;
};

/// Runs every round (in parallel, capped by ROBUSTLENS_THREADS) and writes
/// config.json, round-<i>/checkpoint.rlck, round-<i>/record.json, report.txt
/// and report.json under the output directory. Failed rounds are recorded;
/// throws when no round succeeds or when rounds >= 2 but fewer than two
/// succeed.
ExperimentResult run_experiment(const RunConfig& config);
ExperimentResult run_experiment(const RunConfig& config, const Dataset& dataset);

/// Worker cap: ROBUSTLENS_THREADS when set and positive, else hardware
/// concurrency (at least 1).
std::size_t worker_threads();

/// Clean row (and a starred row when perturbed results exist) for the
/// successful records of one model.
std::vector<TableRow> table_rows(const std::string& model, const std::vector<RunRecord>& records);

/// Reads <dir>/config.json and every <dir>/round-<i>/record.json.
std::pair<RunConfig, std::vector<RunRecord>> load_run(const std::filesystem::path& dir);

/// Writes report.txt and report.json for the given rows.
void write_report(const std::filesystem::path& dir, const std::vector<TableRow>& rows);

/// Writes `text` to `path` (binary, truncating). Throws DataError.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace robustlens
