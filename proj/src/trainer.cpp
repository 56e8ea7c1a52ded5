#include "robustlens/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace robustlens {

namespace fs = std::filesystem;

void RunConfig::validate() const {
  if (rounds < 1) throw ConfigError("run config: rounds must be >= 1");
  if (batch_size < 1) throw ConfigError("run config: batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("run config: max_epochs must be >= 1");
  if (early_stop_patience < 1) throw ConfigError("run config: early_stop_patience must be >= 1");
  if (plateau_patience < 1) throw ConfigError("run config: plateau_patience must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("run config: learning_rate must be > 0");
  if (!(plateau_factor > 0.0 && plateau_factor <= 1.0)) throw ConfigError("run config: plateau_factor outside (0, 1]");
  if (!(plateau_min_delta >= 0.0)) throw ConfigError("run config: plateau_min_delta must be >= 0");
  if (adversarial && !attack) throw ConfigError("run config: adversarial training needs an attack config");
  if (augmentation) augmentation->validate();
  if (attack) attack->validate();
  shape_check(model);
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j{{"name", c.name},
                   {"model", to_json(c.model)},
                   {"manifest", c.manifest.generic_string()},
                   {"augmentation", c.augmentation ? to_json(*c.augmentation) : nlohmann::json(nullptr)},
                   {"attack", c.attack ? to_json(*c.attack) : nlohmann::json(nullptr)},
                   {"adversarial", c.adversarial},
                   {"batch_size", c.batch_size},
                   {"max_epochs", c.max_epochs},
                   {"early_stop_patience", c.early_stop_patience},
                   {"learning_rate", c.learning_rate},
                   {"plateau", {{"factor", c.plateau_factor},
                                {"patience", c.plateau_patience},
                                {"min_delta", c.plateau_min_delta}}},
                   {"rounds", c.rounds},
                   {"seed", c.seed},
                   {"output_dir", c.output_dir.generic_string()}};
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (!j.is_object()) throw ConfigError("run config: expected a JSON object");
    static const std::vector<std::string> known{
        "name", "model", "image_size", "num_classes", "manifest", "augmentation", "attack", "adversarial",
        "batch_size", "max_epochs", "early_stop_patience", "learning_rate", "plateau", "rounds", "seed",
        "output_dir"};
    for (const auto& [key, _] : j.items()) {
      if (std::find(known.begin(), known.end(), key) == known.end()) {
        throw ConfigError("run config: unknown key '" + key + "'");
      }
    }
    const auto& m = j.contains("model") ? j.at("model") : nlohmann::json("tiny");
    if (m.is_string()) {
      std::array<std::size_t, 2> size{64, 64};
      if (j.contains("image_size")) size = j.at("image_size").get<std::array<std::size_t, 2>>();
      c.model = preset_config(m.get<std::string>(), size[0], size[1], 1, j.value("num_classes", std::size_t{3}));
    } else {
      c.model = model_config_from_json(m);
    }
    c.name = j.value("name", c.model.name);
    c.manifest = j.value("manifest", std::string());
    if (j.contains("augmentation")) {
      const auto& a = j.at("augmentation");
      if (a.is_null()) {
        c.augmentation.reset();
      } else {
        c.augmentation = augmentation_from_json(a);
      }
    }
    if (j.contains("attack") && !j.at("attack").is_null()) c.attack = attack_from_json(j.at("attack"));
    c.adversarial = j.value("adversarial", c.adversarial);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("plateau")) {
      const auto& p = j.at("plateau");
      c.plateau_factor = p.value("factor", c.plateau_factor);
      c.plateau_patience = p.value("patience", c.plateau_patience);
      c.plateau_min_delta = p.value("min_delta", c.plateau_min_delta);
    }
    c.rounds = j.value("rounds", c.rounds);
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir.generic_string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("run config: cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("run config '" + path.string() + "': " + e.what());
  }
  RunConfig c = run_config_from_json(j);
  if (!c.manifest.empty() && c.manifest.is_relative()) c.manifest = path.parent_path() / c.manifest;
  return c;
}

nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json j{{"round", r.round},
                   {"seed", r.seed},
                   {"adversarial", r.adversarial},
                   {"train_losses", r.train_losses},
                   {"val_losses", r.val_losses},
                   {"lr_trace", r.lr_trace},
                   {"halt_epoch", r.halt_epoch},
                   {"best_epoch", r.best_epoch},
                   {"best_val_loss", r.best_val_loss},
                   {"train_accuracy", r.train_accuracy},
                   {"checkpoint", r.checkpoint},
                   {"test", to_json(r.test)},
                   {"test_perturbed", r.test_perturbed ? to_json(*r.test_perturbed) : nlohmann::json(nullptr)}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

RunRecord run_record_from_json(const nlohmann::json& j) {
  RunRecord r;
  try {
    r.round = j.at("round").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.adversarial = j.value("adversarial", false);
    r.train_losses = j.at("train_losses").get<std::vector<double>>();
    r.val_losses = j.at("val_losses").get<std::vector<double>>();
    r.lr_trace = j.at("lr_trace").get<std::vector<double>>();
    r.halt_epoch = j.at("halt_epoch").get<std::size_t>();
    r.best_epoch = j.at("best_epoch").get<std::size_t>();
    r.best_val_loss = j.at("best_val_loss").is_null() ? 0.0 : j.at("best_val_loss").get<double>();
    r.train_accuracy = j.value("train_accuracy", 0.0);
    r.checkpoint = j.value("checkpoint", std::string());
    r.error = j.value("error", std::string());
    if (r.error.empty()) r.test = metrics_report_from_json(j.at("test"));
    if (j.contains("test_perturbed") && !j.at("test_perturbed").is_null()) {
      r.test_perturbed = metrics_report_from_json(j.at("test_perturbed"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("run record: ") + e.what());
  }
  return r;
}

namespace {

double accuracy_of(const Model& model, const Dataset& ds, Split split, std::size_t batch) {
  return evaluate(model, ds, split, batch).metrics.accuracy;
}

}  // namespace

RoundResult train_round(const RunConfig& config, const Dataset& dataset, std::size_t round) {
  config.validate();
  if (dataset.size(Split::kTrain) == 0) throw DataError("train split is empty");
  if (dataset.size(Split::kVal) == 0) throw DataError("validation split is empty");
  if (dataset.size(Split::kTest) == 0) throw DataError("test split is empty");

  RunRecord rec;
  rec.round = round;
  rec.seed = config.round_seed(round);
  rec.adversarial = config.adversarial;

  Model model;
  model.config = config.model;
  model.config.seed = rec.seed;
  model.params = build(model.config);

  AdamState adam;
  adam.learning_rate = config.learning_rate;
  PlateauState plateau;
  plateau.factor = config.plateau_factor;
  plateau.patience = config.plateau_patience;
  plateau.min_delta = config.plateau_min_delta;
  EarlyStopState<ModelParams<float>> stop;
  stop.patience = config.early_stop_patience;
  stop.max_epochs = config.max_epochs;

  std::optional<AugmentationConfig> aug = config.augmentation;
  for (std::size_t epoch = 1;; ++epoch) {
    rec.lr_trace.push_back(adam.learning_rate);
    BatchIterator it(dataset, Split::kTrain, config.batch_size, aug, derive_seed(rec.seed, epoch));
    double total = 0.0;
    std::size_t seen = 0, batch_index = 0;
    while (auto batch = it.next()) {
      float loss = 0.0f;
      try {
        loss = config.adversarial
                   ? adversarial_train_step(model, batch->images, batch->labels, adam, *config.attack)
                   : train_step(model, batch->images, batch->labels, adam);
      } catch (const NumericalError& e) {
        throw NumericalError("round " + std::to_string(round) + " epoch " + std::to_string(epoch) + " batch " +
                             std::to_string(batch_index) + ": " + e.what());
      }
      total += static_cast<double>(loss) * static_cast<double>(batch->labels.size());
      seen += batch->labels.size();
      ++batch_index;
    }
    rec.train_losses.push_back(total / static_cast<double>(seen));
    const double val = mean_loss(model, dataset, Split::kVal, config.batch_size);
    if (!std::isfinite(val)) {
      throw NumericalError("round " + std::to_string(round) + " epoch " + std::to_string(epoch) +
                           ": non-finite validation loss");
    }
    rec.val_losses.push_back(val);
    const EarlyStopDecision d = early_stop_update(stop, val, model.params);
    double lr = adam.learning_rate;
    plateau_update(plateau, val, lr);
    adam.learning_rate = lr;
    if (d.halt) break;
  }
  rec.halt_epoch = stop.epoch;
  rec.best_epoch = stop.best_epoch;
  rec.best_val_loss = stop.best;
  model.params = std::move(*stop.best_snapshot);

  rec.train_accuracy = accuracy_of(model, dataset, Split::kTrain, config.batch_size);
  rec.test = evaluate(model, dataset, Split::kTest, config.batch_size).metrics;
  if (config.attack) {
    rec.test_perturbed = evaluate_under_attack(model, dataset, Split::kTest, *config.attack, config.batch_size).metrics;
  }
  return {std::move(rec), std::move(model)};
}

Dataset load_dataset(const RunConfig& config) {
  if (config.manifest.empty()) throw ConfigError("run config: no manifest given");
  ManifestOptions opts;
  opts.num_classes = config.model.num_classes;
  const DatasetManifest manifest = load_manifest(config.manifest, opts);
  const double rescale = config.augmentation ? config.augmentation->rescale : 1.0 / 255.0;
  return Dataset::from_manifest(manifest, config.model.input[1], config.model.input[2], rescale);
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("ROBUSTLENS_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::vector<TableRow> table_rows(const std::string& model, const std::vector<RunRecord>& records) {
  TableRow clean{model, false, {}};
  TableRow perturbed{model, true, {}};
  for (const auto& r : records) {
    if (!r.error.empty()) continue;
    clean.rounds.push_back(r.test);
    if (r.test_perturbed) perturbed.rounds.push_back(*r.test_perturbed);
  }
  std::vector<TableRow> rows{clean};
  if (!perturbed.rounds.empty()) rows.push_back(perturbed);
  return rows;
}

void write_report(const fs::path& dir, const std::vector<TableRow>& rows) {
  write_text_file(dir / "report.txt", format_table(rows));
  write_text_file(dir / "report.json", table_to_json(rows).dump(2) + "\n");
}

ExperimentResult run_experiment(const RunConfig& config) {
  config.validate();
  const Dataset ds = load_dataset(config);
  return run_experiment(config, ds);
}

ExperimentResult run_experiment(const RunConfig& config, const Dataset& dataset) {
  config.validate();
  fs::create_directories(config.output_dir);
  write_text_file(config.output_dir / "config.json", to_json(config).dump(2) + "\n");

  const std::size_t n = config.rounds;
  std::vector<RunRecord> records(n);
  std::vector<std::exception_ptr> failures(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const fs::path round_dir = config.output_dir / ("round-" + std::to_string(i));
      try {
        fs::create_directories(round_dir);
        RoundResult res = train_round(config, dataset, i);
        res.record.checkpoint = "round-" + std::to_string(i) + "/checkpoint.rlck";
        Checkpoint ckpt;
        ckpt.config = res.model.config;
        ckpt.params = std::move(res.model.params);
        ckpt.metadata = {res.record.best_epoch, res.record.best_val_loss, res.record.seed};
        save_checkpoint(ckpt, (round_dir / "checkpoint.rlck").string());
        records[i] = std::move(res.record);
      } catch (const std::exception& e) {
        failures[i] = std::current_exception();
        records[i] = RunRecord{};
        records[i].round = i;
        records[i].seed = config.round_seed(i);
        records[i].adversarial = config.adversarial;
        records[i].error = e.what();
      }
      try {
        write_text_file(round_dir / "record.json", to_json(records[i]).dump(2) + "\n");
      } catch (...) {
        if (!failures[i]) failures[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(worker_threads(), n);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::size_t ok = 0;
  std::exception_ptr first;
  for (std::size_t i = 0; i < n; ++i) {
    if (failures[i]) {
      if (!first) first = failures[i];
    } else {
      ++ok;
    }
  }
  if (ok == 0) std::rethrow_exception(first);
  if (n >= 2 && ok < 2) {
    try {
      std::rethrow_exception(first);
    } catch (const std::exception& e) {
      throw Error("only " + std::to_string(ok) + " of " + std::to_string(n) +
                  " rounds succeeded; aggregation needs 2 (first failure: " + e.what() + ")");
    }
  }

  ExperimentResult result;
  result.records = std::move(records);
  result.rows = table_rows(config.name, result.records);
  result.table = format_table(result.rows);
  write_report(config.output_dir, result.rows);
  return result;
}

std::pair<RunConfig, std::vector<RunRecord>> load_run(const fs::path& dir) {
  const fs::path cfg_path = dir / "config.json";
  std::ifstream in(cfg_path, std::ios::binary);
  if (!in) throw DataError("no config.json in '" + dir.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + cfg_path.string() + "': " + e.what());
  }
  RunConfig cfg = run_config_from_json(j);
  std::vector<RunRecord> records;
  for (std::size_t i = 0;; ++i) {
    const fs::path p = dir / ("round-" + std::to_string(i)) / "record.json";
    if (!fs::exists(p)) break;
    std::ifstream rin(p, std::ios::binary);
    nlohmann::json rj;
    try {
      rin >> rj;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("'" + p.string() + "': " + e.what());
    }
    records.push_back(run_record_from_json(rj));
  }
  if (records.empty()) throw DataError("no round records under '" + dir.string() + "'");
  return {std::move(cfg), std::move(records)};
}

}  // namespace robustlens
