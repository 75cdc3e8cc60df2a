#include "fuseguard/cli.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "fuseguard/attacks.hpp"
#include "fuseguard/cka.hpp"
#include "fuseguard/dataset.hpp"
#include "fuseguard/detector.hpp"
#include "fuseguard/harness.hpp"
#include "fuseguard/train.hpp"

namespace fuseguard {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<double> parse_ascending_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("'" + item + "' is not a number");
    }
    if (used != item.size() || !std::isfinite(v)) throw std::invalid_argument("'" + item + "' is not a finite number");
    if (!out.empty() && !(v > out.back())) throw std::invalid_argument("list '" + text + "' must be strictly ascending");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

namespace {

// Validator so malformed lists fail at parse time (exit 2).
const CLI::Validator kAscending(
    [](std::string& s) -> std::string {
      try {
        parse_ascending_list(s);
      } catch (const std::exception& e) {
        return e.what();
      }
      return {};
    },
    "FLOAT[,FLOAT...]", "ascending list");

void setup_logging() {
  auto logger = spdlog::get("fuseguard");
  if (!logger) {
    logger = spdlog::stderr_color_st("fuseguard");
    logger->set_pattern("[%l] %v");
  }
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("FUSEGUARD_LOG")) {
    const std::string v = env;
    if (v == "error") spdlog::set_level(spdlog::level::err);
    else if (v == "warn") spdlog::set_level(spdlog::level::warn);
    else if (v == "info") spdlog::set_level(spdlog::level::info);
    else if (v == "debug") spdlog::set_level(spdlog::level::debug);
    else spdlog::warn("ignoring FUSEGUARD_LOG={} (expected error|warn|info|debug)", v);
  }
}

std::size_t default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

struct Loaded {
  LoadedDataset data;
  std::vector<LabeledInput> train, test;
};

Loaded load_data(const fs::path& dir) {
  Loaded l{load_dataset(dir), {}, {}};
  l.train = preprocess_all(l.data.split.train, l.data.preprocessor);
  l.test = preprocess_all(l.data.split.test, l.data.preprocessor);
  return l;
}

void check_compatible(const FusionNet<float>& net, const DatasetSpec& spec, const fs::path& ckpt) {
  if (net.arch.classes != spec.num_classes || net.arch.image_size != spec.image_size) {
    throw std::runtime_error(ckpt.string() + ": checkpoint expects " + std::to_string(net.arch.classes) + " classes at " +
                             std::to_string(net.arch.image_size) + " px, dataset has " +
                             std::to_string(spec.num_classes) + " at " + std::to_string(spec.image_size) + " px");
  }
}

const std::vector<LabeledInput>& pick_split(const Loaded& l, const std::string& split) {
  return split == "train" ? l.train : l.test;
}

std::vector<LabeledInput> first_n(const std::vector<LabeledInput>& v, std::size_t limit) {
  if (limit == 0 || limit >= v.size()) return v;
  return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(limit)};
}

// ε conventions: unit values are preprocessed-input units, pixel values are on
// the 0-255 scale. auto treats patch budgets as pixel values.
enum class EpsScale { automatic, unit, pixel };

double eps_factor(EpsScale s, bool patch) {
  if (s == EpsScale::pixel || (s == EpsScale::automatic && patch)) return 1.0 / 255.0;
  return 1.0;
}

struct AttackFlags {
  std::string mode = "pgd";
  std::string parts = "both";
  std::string placement = "center";
  std::string rule = "sign";
  std::string eps_scale = "auto";
  std::size_t steps = 100;
  double step_size = 0.0;
  double warmup = 0.5;

  void add(CLI::App* cmd) {
    cmd->add_option("--mode", mode, "Attack mode")
        ->check(CLI::IsMember({"pgd", "patch", "adaptive-pgd", "adaptive-patch"}))
        ->capture_default_str();
    cmd->add_option("--parts", parts, "Perturbed inputs")->check(CLI::IsMember({"rgb", "depth", "both"}))->capture_default_str();
    cmd->add_option("--steps", steps, "Iterations")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--step-size", step_size, "Step size; 0 selects 2.5*eps/steps (patch: 1 pixel level)")
        ->capture_default_str();
    cmd->add_option("--step-rule", rule, "Update direction")->check(CLI::IsMember({"sign", "raw"}))->capture_default_str();
    cmd->add_option("--placement", placement, "Patch placement")->check(CLI::IsMember({"center", "random"}))->capture_default_str();
    cmd->add_option("--eps-scale", eps_scale, "Units of eps and step size")
        ->check(CLI::IsMember({"auto", "unit", "pixel"}))
        ->capture_default_str();
    cmd->add_option("--warmup", warmup, "Adaptive modes: fraction of steps on the plain margin loss first")
        ->check(CLI::Range(0.0, 0.999))
        ->capture_default_str();
  }

  EpsScale scale() const {
    if (eps_scale == "unit") return EpsScale::unit;
    if (eps_scale == "pixel") return EpsScale::pixel;
    return EpsScale::automatic;
  }

  AttackMode attack_mode() const { return parse_attack_mode(mode); }

  // Budget for a patch run (epsilon bounds the covered pixels) or a template for
  // full-image runs (epsilon filled in per level).
  AttackBudget budget(double patch_eps) const {
    const bool patch = is_patch(attack_mode());
    const double f = eps_factor(scale(), patch);
    AttackBudget b;
    b.steps = steps;
    b.rule = parse_step_rule(rule);
    b.parts = patch ? TargetParts::rgb : parse_parts(parts);
    b.adaptive_warmup = warmup;
    if (patch) {
      b.epsilon = patch_eps * f;
      b.step_size = (step_size > 0.0 ? step_size : 1.0) * f;
    } else {
      b.step_size = step_size > 0.0 ? step_size * f : 0.0;
    }
    return b;
  }

  Placement placement_kind() const { return parse_placement(placement); }
};

void check_patch_parts(const AttackFlags& a) {
  if (is_patch(a.attack_mode()) && a.parts != "rgb" && a.parts != "both") {
    throw std::invalid_argument("patch attacks perturb the rgb image only (got --parts " + a.parts + ")");
  }
}

std::unique_ptr<DetectorState> maybe_detector(const std::string& path, AttackMode mode) {
  if (path.empty()) {
    if (is_adaptive(mode)) throw std::invalid_argument("adaptive attacks need --detector");
    return nullptr;
  }
  auto det = std::make_unique<DetectorState>(load_detector(path));
  det->require_calibrated();
  return det;
}

struct TrainFlags {
  std::string variant = "rgbd";
  TrainConfig cfg;
  std::string optimizer = "rmsprop";

  void add(CLI::App* cmd) {
    cmd->add_option("--variant", variant, "Input streams")->check(CLI::IsMember({"rgbd", "rgb", "depth"}))->capture_default_str();
    cmd->add_option("--epochs", cfg.epochs, "Training epochs")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--batch-size", cfg.batch_size, "Minibatch size")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--lr", cfg.learning_rate, "Learning rate")->capture_default_str();
    cmd->add_option("--optimizer", optimizer, "Optimizer")->check(CLI::IsMember({"rmsprop", "sgd"}))->capture_default_str();
    cmd->add_option("--momentum", cfg.momentum, "Momentum")->capture_default_str();
    cmd->add_option("--alpha", cfg.alpha, "RMSprop decay")->capture_default_str();
    cmd->add_option("--weight-decay", cfg.weight_decay, "L2 weight decay")->capture_default_str();
  }

  TrainConfig resolved(std::uint64_t seed) const {
    TrainConfig c = cfg;
    c.optimizer = parse_optimizer(optimizer);
    c.seed = seed;
    c.validate();
    return c;
  }

  Architecture arch(const DatasetSpec& spec) const {
    Architecture a;
    a.classes = spec.num_classes;
    a.image_size = spec.image_size;
    a.variant = parse_variant(variant);
    a.validate();
    return a;
  }
};

json train_summary(const TrainResult& r, const FusionNet<float>& net, const Loaded& l) {
  return {{"initial_loss", r.initial_loss},
          {"epoch_loss", r.epoch_loss},
          {"train_accuracy", r.final_train_accuracy},
          {"test_accuracy", accuracy(net, l.test)}};
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"fuseguard: adversarial robustness toolkit for RGB-D fusion classifiers"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read flags from a TOML/INI file");
  app.failure_message(CLI::FailureMessage::help);

  std::uint64_t seed = 0;
  std::size_t jobs = default_jobs();
  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", seed, "Random seed (default 0)")->capture_default_str(); };
  auto add_jobs = [&](CLI::App* c) { c->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber); };

  // generate
  auto* gen = app.add_subcommand("generate", "Render the synthetic RGB-D dataset");
  DatasetSpec dspec;
  std::string gen_out, norm = "per_image";
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--classes", dspec.num_classes, "Number of classes")->capture_default_str();
  gen->add_option("--per-class", dspec.samples_per_class, "Samples per class")->capture_default_str();
  gen->add_option("--instances", dspec.instances_per_class, "Object instances per class (last one is the test split)")
      ->capture_default_str();
  gen->add_option("--size", dspec.image_size, "Image side in pixels")->capture_default_str();
  gen->add_option("--depth-norm", norm, "Depth normalization")->check(CLI::IsMember({"per_image", "global"}))->capture_default_str();
  gen->add_option("--depth-gain", dspec.depth_gain, "Depth range before colorization")->capture_default_str();
  gen->add_option("--depth-noise", dspec.depth_noise, "Depth sensor noise stddev")->capture_default_str();
  add_seed(gen);

  // train
  auto* tr = app.add_subcommand("train", "Train a fusion classifier");
  std::string data_dir, out_path, ckpt;
  TrainFlags tflags;
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--out", out_path, "Checkpoint directory")->required();
  tflags.add(tr);
  add_seed(tr);

  // attack
  auto* at = app.add_subcommand("attack", "Attack every sample of a split and record per-sample results");
  AttackFlags aflags;
  std::string eps_text = "0.1", detector_path, split = "test";
  std::size_t patch_side = 8, limit = 0;
  double patch_eps = 20.0;
  at->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  at->add_option("--data", data_dir, "Dataset directory")->required();
  at->add_option("--out", out_path, "Results JSON")->required();
  at->add_option("--detector", detector_path, "Detector JSON (required for adaptive modes)");
  aflags.add(at);
  at->add_option("--eps", eps_text, "Full-image modes: ascending list of budgets; patch modes: single bound (default 20 pixel levels)")
      ->check(kAscending);
  at->add_option("--patch-side", patch_side, "Patch side in pixels")->capture_default_str();
  at->add_option("--split", split, "Split to attack")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  at->add_option("--limit", limit, "Attack only the first N samples (0 = all)")->capture_default_str();
  add_seed(at);
  add_jobs(at);

  // cka
  auto* ck = app.add_subcommand("cka", "Layer-pair CKA heatmap for one stream");
  std::string stream = "depth", kernel = "linear";
  double sigma_fraction = 0.5;
  ck->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  ck->add_option("--data", data_dir, "Dataset directory")->required();
  ck->add_option("--out", out_path, "Heatmap CSV")->required();
  ck->add_option("--stream", stream, "Stream")->check(CLI::IsMember({"rgb", "depth"}))->capture_default_str();
  ck->add_option("--kernel", kernel, "Kernel")->check(CLI::IsMember({"linear", "rbf"}))->capture_default_str();
  ck->add_option("--sigma-fraction", sigma_fraction, "RBF bandwidth as a fraction of the median distance")->capture_default_str();
  ck->add_option("--split", split, "Samples to use")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  ck->add_option("--limit", limit, "Use only the first N samples (0 = all)")->capture_default_str();

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Fit centroids and the rejection threshold");
  CalibrationOptions copts;
  double holdout = 0.0;
  cal->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  cal->add_option("--data", data_dir, "Dataset directory")->required();
  cal->add_option("--out", out_path, "Detector JSON")->required();
  cal->add_option("--fpr", copts.fpr, "Target false positive rate")->capture_default_str();
  cal->add_option("--rho", copts.rho, "Threshold grid spacing")->capture_default_str();
  cal->add_option("--lambda", copts.lambda, "Soft rejection sharpness")->capture_default_str();
  cal->add_option("--holdout", holdout,
                  "Fraction of each training class held out to set the threshold (0 = calibrate on the training split)")
      ->check(CLI::Range(0.0, 0.9))
      ->capture_default_str();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Security evaluation curve");
  std::string levels_text;
  ev->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--out", out_path, "Curve CSV; a .json sidecar is written next to it")->required();
  ev->add_option("--detector", detector_path, "Detector JSON; without it the model is evaluated undefended");
  aflags.add(ev);
  ev->add_option("--levels", levels_text,
                 "Ascending levels starting at 0: eps for full-image modes, patch sides for patch modes")
      ->check(kAscending);
  ev->add_option("--eps", patch_eps, "Patch modes: per-pixel bound on the patch")->capture_default_str();
  ev->add_option("--limit", limit, "Evaluate only the first N test samples (0 = all)")->capture_default_str();
  add_seed(ev);
  add_jobs(ev);

  // adv-train
  auto* adv = app.add_subcommand("adv-train", "Adversarial training with PGD-augmented batches");
  AdvTrainConfig acfg;
  std::string eps_list_text = "0.1", augment = "regenerate", adv_parts = "both";
  adv->add_option("--data", data_dir, "Dataset directory")->required();
  adv->add_option("--out", out_path, "Checkpoint directory")->required();
  adv->add_option("--eps-list", eps_list_text, "Ascending budgets; one is drawn per batch")->check(kAscending)->capture_default_str();
  adv->add_option("--attack-steps", acfg.steps, "PGD iterations per adversarial copy")->check(CLI::PositiveNumber)->capture_default_str();
  adv->add_option("--step-factor", acfg.step_factor, "Step size = factor * eps / steps")->capture_default_str();
  adv->add_option("--adv-ratio", acfg.adv_ratio, "Adversarial copies per clean batch sample")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  adv->add_option("--augment", augment, "Augmentation mode")->check(CLI::IsMember({"regenerate", "fixed"}))->capture_default_str();
  adv->add_option("--parts", adv_parts, "Perturbed inputs")->check(CLI::IsMember({"rgb", "depth", "both"}))->capture_default_str();
  tflags.add(adv);
  add_seed(adv);
  add_jobs(adv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return 2;
  }

  setup_logging();
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "generate") {
      dspec.seed = seed;
      dspec.normalization = norm == "global" ? DepthNormalization::global : DepthNormalization::per_image;
      dspec.validate();
      const auto splits = generate(dspec);
      const auto pre = Preprocessor::fit(splits.train);
      save_dataset(gen_out, splits, pre, {{"command", "generate"}, {"seed", seed}});
      spdlog::info("wrote {} train / {} test samples to {}", splits.train.size(), splits.test.size(), gen_out);
      return 0;
    }

    if (command == "train" || command == "adv-train") {
      const Loaded l = load_data(data_dir);
      const TrainConfig cfg = tflags.resolved(seed);
      const Architecture arch = tflags.arch(l.data.split.spec);
      json meta = {{"command", command}, {"seed", seed}, {"data", data_dir}, {"train", cfg.to_json()}};
      TrainResult r;
      if (command == "train") {
        spdlog::info("training {} for {} epochs", to_string(arch.variant), cfg.epochs);
        r = train(init_fusion_net(arch, seed), l.train, cfg);
      } else {
        acfg.eps_list = parse_ascending_list(eps_list_text);
        acfg.mode = parse_augmentation(augment);
        acfg.parts = parse_parts(adv_parts);
        acfg.jobs = jobs;
        acfg.validate();
        meta["adversarial"] = acfg.to_json();
        spdlog::info("adversarial training {} for {} epochs", to_string(arch.variant), cfg.epochs);
        r = adversarial_train(init_fusion_net(arch, seed), l.train, l.data.preprocessor.bounds(), acfg, cfg);
      }
      meta["result"] = train_summary(r, r.net, l);
      save_checkpoint(out_path, r.net, meta);
      spdlog::info("final loss {:.4f}, test accuracy {:.3f}", r.epoch_loss.back(), meta["result"]["test_accuracy"].get<double>());
      return 0;
    }

    const FusionNet<float> net = load_checkpoint(ckpt);
    const Loaded l = load_data(data_dir);
    check_compatible(net, l.data.split.spec, ckpt);

    if (command == "calibrate") {
      std::vector<LabeledInput> fit_set, cal_set;
      if (holdout > 0.0) {
        // Per class, the last ceil(holdout * n) training samples set the threshold.
        std::vector<std::vector<const LabeledInput*>> by_class(net.arch.classes);
        for (const auto& s : l.train) by_class.at(s.label).push_back(&s);
        for (const auto& members : by_class) {
          const auto k = static_cast<std::size_t>(std::ceil(holdout * static_cast<double>(members.size())));
          for (std::size_t i = 0; i < members.size(); ++i) (i + k < members.size() ? fit_set : cal_set).push_back(*members[i]);
        }
      } else {
        fit_set = l.train;
        cal_set = l.train;
      }
      const DetectorState det = calibrate(net, fit_set, cal_set, copts);
      save_detector(out_path, det,
                    {{"command", "calibrate"},
                     {"ckpt", ckpt},
                     {"data", data_dir},
                     {"fpr", copts.fpr},
                     {"rho", copts.rho},
                     {"lambda", copts.lambda},
                     {"holdout", holdout}});
      spdlog::info("beta {:.6g}, achieved FPR {:.4f} on {} samples", det.beta, det.achieved_fpr, det.calibration_samples);
      return 0;
    }

    if (command == "cka") {
      const auto samples = first_n(pick_split(l, split), limit);
      const auto hm = stream_heatmap(net, stream == "rgb" ? Modality::rgb : Modality::depth, samples, parse_kernel(kernel),
                                     sigma_fraction);
      write_heatmap_csv(out_path, hm);
      json side = {{"command", "cka"},         {"ckpt", ckpt},     {"data", data_dir},         {"stream", stream},
                   {"kernel", kernel},         {"split", split},   {"samples", hm.samples},    {"layers", hm.layers},
                   {"sigma_fraction", sigma_fraction}, {"redundancy", redundancy_score(hm)}};
      fs::path side_path = fs::path(out_path).replace_extension(".json");
      if (side_path == fs::path(out_path)) side_path += ".meta.json";
      write_json(side_path, side);
      spdlog::info("{} stream redundancy {:.4f} ({} kernel)", stream, redundancy_score(hm), kernel);
      return 0;
    }

    check_patch_parts(aflags);
    const AttackMode mode = aflags.attack_mode();
    const auto det = maybe_detector(detector_path, mode);
    const InputBounds bounds = l.data.preprocessor.bounds();

    if (command == "attack") {
      const auto samples = first_n(pick_split(l, split), limit);
      const bool patch = is_patch(mode);
      std::vector<double> levels;
      AttackBudget budget = aflags.budget(patch_eps);
      if (patch) {
        if (at->count("--eps")) {
          const auto v = parse_ascending_list(eps_text);
          if (v.size() != 1) throw std::invalid_argument("patch attacks take a single --eps");
          budget = aflags.budget(v.front());
        }
        levels = {static_cast<double>(patch_side)};
      } else {
        levels = parse_ascending_list(eps_text);
        for (double& e : levels) e *= eps_factor(aflags.scale(), false);
      }
      AttackContext actx{net, bounds, det.get()};
      json runs = json::array();
      for (std::size_t li = 0; li < levels.size(); ++li) {
        std::vector<json> rows(samples.size());
        parallel_for(samples.size(), jobs, [&](std::size_t i) {
          const auto& s = samples[i];
          const auto r = run_attack(actx, mode, s.input.rgb, s.input.depth, s.label, levels[li], budget,
                                    aflags.placement_kind(), derive_seed(derive_seed(seed, s.id), li));
          rows[i] = {{"id", s.id},           {"label", s.label},         {"clean_label", r.clean_label},
                     {"adv_label", r.adv_label}, {"defended_label", r.defended_label}, {"rejected", r.rejected},
                     {"anomaly", r.anomaly}, {"success", r.success},     {"linf_norm", r.linf_norm},
                     {"loss_trace", r.loss_trace}};
        });
        std::size_t fooled = 0;
        for (const auto& row : rows) fooled += row["success"].get<bool>();
        spdlog::info("level {}: {} / {} successful", levels[li], fooled, rows.size());
        runs.push_back({{"level", levels[li]}, {"samples", rows}});
      }
      json budget_json = budget.to_json();
      if (!patch) budget_json.erase("epsilon");
      if (!patch && !(budget.step_size > 0.0)) budget_json["step_size"] = "2.5*eps/steps";
      json cfg = {{"command", "attack"}, {"ckpt", ckpt},         {"data", data_dir},  {"mode", to_string(mode)},
                  {"budget", budget_json}, {"split", split},     {"seed", seed},      {"limit", limit},
                  {"placement", to_string(aflags.placement_kind())}, {"detector", detector_path}};
      if (patch) cfg["patch_side"] = patch_side;
      write_json(out_path, {{"config", cfg}, {"runs", runs}});
      return 0;
    }

    // evaluate
    CurveConfig cc;
    cc.mode = mode;
    cc.placement = aflags.placement_kind();
    cc.seed = seed;
    cc.jobs = jobs;
    cc.budget = aflags.budget(patch_eps);
    if (!levels_text.empty()) {
      cc.levels = parse_ascending_list(levels_text);
      if (!is_patch(mode)) {
        for (double& e : cc.levels) e *= eps_factor(aflags.scale(), false);
      }
    } else if (is_patch(mode)) {
      cc.levels = {0, 4, 8, 12, 16};
    }
    const auto test = first_n(l.test, limit);
    const SecurityCurve curve = evaluate_curve(net, det.get(), bounds, test, cc);
    json cfg = curve.config;
    cfg["command"] = "evaluate";
    cfg["ckpt"] = ckpt;
    cfg["data"] = data_dir;
    cfg["detector"] = detector_path;
    cfg["limit"] = limit;
    SecurityCurve out = curve;
    out.config = cfg;
    fs::path side_path = fs::path(out_path).replace_extension(".json");
    if (side_path == fs::path(out_path)) side_path += ".meta.json";
    write_text(out_path, curve_csv(out));
    write_json(side_path, curve_json(out));
    for (const auto& p : out.points) {
      spdlog::info("level {:<6g} acc_undef {:.3f} acc_def {:.3f} rej {:.3f}", p.level, p.acc_undef, p.acc_def, p.rej_rate);
    }
    return 0;
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", command, e.what());
    return 1;
  }
}

}  // namespace fuseguard
