#include "robustlens/cli.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "robustlens/gradcam.hpp"
#include "robustlens/image_io.hpp"
#include "robustlens/trainer.hpp"

namespace robustlens {

namespace fs = std::filesystem;

namespace {

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rounds;
  std::optional<double> epsilon;
  std::optional<std::size_t> max_epochs;
  std::string output;
  std::string manifest;
};

struct ModelDataArgs {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  std::string output;
  std::size_t batch = 32;
};

struct Loaded {
  Model model;
  Dataset dataset;
  Split split;
};

Loaded load_model_and_data(const ModelDataArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  Loaded l{{ckpt.config, ckpt.params}, {}, parse_split(a.split)};
  ManifestOptions opts;
  opts.num_classes = ckpt.config.num_classes;
  const DatasetManifest manifest = load_manifest(a.manifest, opts);
  l.dataset = Dataset::from_manifest(manifest, ckpt.config.input[1], ckpt.config.input[2]);
  if (l.dataset.size(l.split) == 0) {
    throw DataError("split '" + a.split + "' of '" + a.manifest + "' is empty");
  }
  return l;
}

std::string sample_stem(const Dataset& ds, Split split, std::size_t i) {
  const auto p = ds.path(split, i);
  std::string stem = std::to_string(i);
  if (p) stem += "_" + p->stem().string();
  return stem;
}

void add_train_options(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("-c,--config", a.config, "run config JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", a.seed, "base seed (round i uses seed + i)");
  cmd->add_option("--rounds", a.rounds, "number of rounds")->check(CLI::PositiveNumber);
  cmd->add_option("--epsilon", a.epsilon, "FGSM budget")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--max-epochs", a.max_epochs, "epoch cap")->check(CLI::PositiveNumber);
  cmd->add_option("-o,--output", a.output, "output directory");
  cmd->add_option("--manifest", a.manifest, "dataset manifest (overrides the config)");
}

int cmd_train(const TrainArgs& a, bool adversarial, std::ostream& out) {
  RunConfig cfg = load_run_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.rounds) cfg.rounds = *a.rounds;
  if (a.max_epochs) cfg.max_epochs = *a.max_epochs;
  if (!a.output.empty()) cfg.output_dir = a.output;
  if (!a.manifest.empty()) cfg.manifest = a.manifest;
  if (a.epsilon) {
    if (!cfg.attack) cfg.attack = AttackConfig{};
    cfg.attack->epsilon = *a.epsilon;
  }
  cfg.adversarial = adversarial;
  if (adversarial && !cfg.attack) cfg.attack = AttackConfig{};
  cfg.validate();
  const ExperimentResult res = run_experiment(cfg);
  out << res.table;
  out << "wrote " << cfg.output_dir.generic_string() << "\n";
  return kExitOk;
}

int cmd_eval(const ModelDataArgs& a, bool perturbed, double epsilon, std::ostream& out) {
  const Loaded l = load_model_and_data(a);
  AttackConfig attack;
  attack.epsilon = epsilon;
  attack.validate();
  const Evaluation ev = perturbed ? evaluate_under_attack(l.model, l.dataset, l.split, attack, a.batch)
                                  : evaluate(l.model, l.dataset, l.split, a.batch);
  nlohmann::json j = to_json(ev.metrics);
  j["split"] = split_name(l.split);
  j["perturbed"] = perturbed;
  j["epsilon"] = perturbed ? nlohmann::json(epsilon) : nlohmann::json(nullptr);
  j["mean_loss"] = ev.mean_loss;
  j["confusion"] = to_json(confusion(ev.labels, ev.predictions, l.model.config.num_classes));
  const fs::path dir = a.output.empty() ? fs::path("eval") : fs::path(a.output);
  fs::create_directories(dir);
  write_text_file(dir / "report.json", j.dump(2) + "\n");
  const std::vector<TableRow> rows{{l.model.config.name, perturbed, {ev.metrics}}};
  const std::string table = format_table(rows);
  write_text_file(dir / "report.txt", table);
  out << table;
  return kExitOk;
}

int cmd_attack(const ModelDataArgs& a, double epsilon, std::ostream& out) {
  const Loaded l = load_model_and_data(a);
  AttackConfig attack;
  attack.epsilon = epsilon;
  attack.validate();
  const fs::path dir = a.output.empty() ? fs::path("attack") : fs::path(a.output);
  fs::create_directories(dir / "images");
  const auto& samples = l.dataset.split(l.split);
  nlohmann::json entries = nlohmann::json::array();
  std::size_t flips = 0, clean_ok = 0, adv_ok = 0;
  BatchIterator it(l.dataset, l.split, a.batch, std::nullopt, 0, /*shuffle=*/false);
  while (auto batch = it.next()) {
    const PerturbedBatch adv = fgsm(l.model, batch->images, batch->labels, attack);
    const std::vector<int> clean_pred = argmax_rows(predict(l.model, batch->images));
    const std::vector<int> adv_pred = argmax_rows(predict(l.model, adv.images));
    const std::size_t plane = samples.front().image.numel();
    for (std::size_t b = 0; b < batch->indices.size(); ++b) {
      const std::size_t i = batch->indices[b];
      Tensor<float> img({1, l.model.config.input[1], l.model.config.input[2]});
      std::copy_n(adv.images.data().begin() + static_cast<std::ptrdiff_t>(b * plane), plane, img.data().begin());
      const std::string file = "images/" + sample_stem(l.dataset, l.split, i) + ".png";
      write_png(dir / file, to_gray_image(img));
      const bool flipped = clean_pred[b] != adv_pred[b];
      flips += flipped ? 1 : 0;
      clean_ok += clean_pred[b] == batch->labels[b] ? 1 : 0;
      adv_ok += adv_pred[b] == batch->labels[b] ? 1 : 0;
      const auto src = l.dataset.path(l.split, i);
      entries.push_back({{"index", i},
                         {"source", src ? src->generic_string() : std::string()},
                         {"output", file},
                         {"label", batch->labels[b]},
                         {"clean_prediction", clean_pred[b]},
                         {"adversarial_prediction", adv_pred[b]},
                         {"flipped", flipped}});
    }
  }
  const double n = static_cast<double>(samples.size());
  nlohmann::json j{{"epsilon", epsilon},
                   {"split", split_name(l.split)},
                   {"images", samples.size()},
                   {"flips", flips},
                   {"clean_accuracy", static_cast<double>(clean_ok) / n},
                   {"adversarial_accuracy", static_cast<double>(adv_ok) / n},
                   {"entries", entries}};
  write_text_file(dir / "flips.json", j.dump(2) + "\n");
  out << "epsilon " << epsilon << ": " << flips << " of " << samples.size() << " predictions flipped\n";
  return kExitOk;
}

struct GradcamArgs {
  std::string layer;
  std::optional<int> target_class;
  bool include_misclassified = false;
  std::optional<std::size_t> limit;
  std::string stamp;
};

int cmd_gradcam(const ModelDataArgs& a, const GradcamArgs& g, std::ostream& out) {
  const Checkpoint probe = load_checkpoint(a.checkpoint);
  gradcam_tap_index(probe.config, g.layer);  // validate before decoding data
  const Loaded l = load_model_and_data(a);
  const fs::path dir = a.output.empty() ? fs::path("gradcam") : fs::path(a.output);
  fs::create_directories(dir / "overlays");
  const auto& samples = l.dataset.split(l.split);
  nlohmann::json entries = nlohmann::json::array();
  double sum_containment = 0.0;
  std::size_t scored = 0, written = 0;
  GradCamOptions opts;
  opts.layer = g.layer;
  opts.target_class = g.target_class;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (g.limit && written >= *g.limit) break;
    const Sample& s = samples[i];
    const Heatmap h = gradcam(l.model, s.image, opts);
    if (!g.include_misclassified && h.predicted_class != s.label) continue;
    const std::string file = "overlays/" + sample_stem(l.dataset, l.split, i) + ".png";
    write_png(dir / file, overlay(h, s.image));
    const auto src = l.dataset.path(l.split, i);
    nlohmann::json e{{"index", i},
                     {"source", src ? src->generic_string() : std::string()},
                     {"overlay", file},
                     {"label", s.label},
                     {"predicted", h.predicted_class},
                     {"class", h.class_id},
                     {"layer", h.layer},
                     {"zero_map", h.zero_map}};
    if (s.mask) {
      const SaliencyScore sc = score_containment(h, *s.mask);
      e["score"] = to_json(sc);
      sum_containment += sc.containment;
      ++scored;
    }
    if (!g.stamp.empty()) {
      TextStamp stamp;
      stamp.x = 1;
      stamp.y = 1;
      stamp.text = g.stamp;
      if (s.mask) {
        e["annotation_sensitivity"] = to_json(annotation_sensitivity(l.model, s.image, *s.mask, stamp, g.layer));
      }
    }
    entries.push_back(e);
    ++written;
  }
  nlohmann::json j{{"layer", g.layer.empty() ? conv_layer_ids(l.model.config).back() : g.layer},
                   {"split", split_name(l.split)},
                   {"images", written},
                   {"mean_containment", scored ? nlohmann::json(sum_containment / static_cast<double>(scored))
                                               : nlohmann::json(nullptr)},
                   {"entries", entries}};
  write_text_file(dir / "scores.json", j.dump(2) + "\n");
  out << "wrote " << written << " overlays to " << dir.generic_string() << "\n";
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& output, std::ostream& out) {
  std::vector<TableRow> rows;
  for (const auto& r : runs) {
    const auto [cfg, records] = load_run(r);
    for (auto& row : table_rows(cfg.name, records)) rows.push_back(std::move(row));
  }
  const fs::path dir = output.empty() ? fs::path("report") : fs::path(output);
  fs::create_directories(dir);
  write_report(dir, rows);
  out << format_table(rows);
  return kExitOk;
}

void add_model_data_options(CLI::App* cmd, ModelDataArgs& a) {
  cmd->add_option("--checkpoint", a.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--manifest", a.manifest, "dataset manifest CSV")->required()->check(CLI::ExistingFile);
  cmd->add_option("--split", a.split, "train, val or test");
  cmd->add_option("-o,--output", a.output, "output directory");
  cmd->add_option("--batch", a.batch, "batch size")->check(CLI::PositiveNumber);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"robustlens: train, attack and explain small CNN image classifiers", "robustlens"};
  app.require_subcommand(1, 1);

  TrainArgs train_args, adv_args;
  add_train_options(app.add_subcommand("train", "standard training over all rounds"), train_args);
  add_train_options(app.add_subcommand("train-adv", "FGSM adversarial training over all rounds"), adv_args);

  ModelDataArgs eval_args;
  bool eval_perturbed = false;
  double eval_eps = 0.02;
  CLI::App* eval = app.add_subcommand("eval", "metrics of a checkpoint on a split");
  add_model_data_options(eval, eval_args);
  eval->add_flag("--perturbed", eval_perturbed, "evaluate on FGSM inputs (starred row)");
  eval->add_option("--epsilon", eval_eps, "FGSM budget for --perturbed")->check(CLI::Range(0.0, 1.0));

  ModelDataArgs attack_args;
  double attack_eps = 0.02;
  CLI::App* attack = app.add_subcommand("attack", "write FGSM images and prediction flips");
  add_model_data_options(attack, attack_args);
  attack->add_option("--epsilon", attack_eps, "FGSM budget")->check(CLI::Range(0.0, 1.0));

  ModelDataArgs cam_args;
  GradcamArgs cam;
  CLI::App* gc = app.add_subcommand("gradcam", "Grad-CAM overlays and containment scores");
  add_model_data_options(gc, cam_args);
  gc->add_option("--layer", cam.layer, "conv layer id (default: last conv layer)");
  gc->add_option("--class", cam.target_class, "explained class (default: predicted)");
  gc->add_flag("--include-misclassified", cam.include_misclassified, "also explain misclassified images");
  gc->add_option("--limit", cam.limit, "maximum number of images");
  gc->add_option("--stamp", cam.stamp, "also report sensitivity to this text stamped in the top-left corner");

  std::vector<std::string> report_runs;
  std::string report_out;
  CLI::App* rep = app.add_subcommand("report", "merge run directories into one results table");
  rep->add_option("--run", report_runs, "run output directory (repeatable)")->required()->check(CLI::ExistingDirectory);
  rep->add_option("-o,--output", report_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    CLI::App* failed = &app;
    for (CLI::App* sub : app.get_subcommands()) failed = sub;
    err << failed->help();
    return kExitUsage;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "train") return cmd_train(train_args, false, out);
    if (name == "train-adv") return cmd_train(adv_args, true, out);
    if (name == "eval") return cmd_eval(eval_args, eval_perturbed, eval_eps, out);
    if (name == "attack") return cmd_attack(attack_args, attack_eps, out);
    if (name == "gradcam") return cmd_gradcam(cam_args, cam, out);
    return cmd_report(report_runs, report_out, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const GraphError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace robustlens
