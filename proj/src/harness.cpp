#include "fuseguard/harness.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace fuseguard {

std::string to_string(CurveAxis a) { return a == CurveAxis::epsilon ? "epsilon" : "patch_side"; }

CurvePoint tally(double level, const std::vector<SampleOutcome>& outcomes) {
  if (outcomes.empty()) throw std::invalid_argument("tally: no samples");
  std::size_t correct = 0, defended = 0, rejected = 0;
  for (const auto& o : outcomes) {
    const bool right = o.predicted == o.label;
    correct += right;
    rejected += o.rejected;
    if (level == 0.0) {
      defended += right && !o.rejected;
    } else {
      defended += o.rejected || right;
    }
  }
  const auto n = static_cast<double>(outcomes.size());
  return {level, static_cast<float>(correct / n), static_cast<float>(defended / n), static_cast<float>(rejected / n),
          outcomes.size()};
}

void validate_levels(const std::vector<double>& levels) {
  if (levels.empty()) throw std::invalid_argument("no curve levels given");
  if (levels.front() != 0.0) throw std::invalid_argument("the first curve level must be 0 (clean)");
  for (std::size_t i = 1; i < levels.size(); ++i) {
    if (!(levels[i] > levels[i - 1])) throw std::invalid_argument("curve levels must be strictly increasing");
  }
}

void CurveConfig::validate() const {
  validate_levels(levels);
  if (is_patch(mode)) {
    for (double l : levels) {
      if (l != std::floor(l)) throw std::invalid_argument("patch levels are side lengths and must be integers");
    }
  }
  AttackBudget b = budget;
  if (!is_patch(mode)) b.epsilon = levels.back();
  b.validate();
  if (jobs == 0) throw std::invalid_argument("jobs must be at least 1");
}

nlohmann::json CurveConfig::to_json() const {
  nlohmann::json b = budget.to_json();
  if (!is_patch(mode)) {
    b.erase("epsilon");
    if (!(budget.step_size > 0.0)) b["step_size"] = "2.5*level/steps";
  }
  return {{"mode", to_string(mode)}, {"levels", levels}, {"budget", b}, {"placement", to_string(placement)}, {"seed", seed}};
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(jobs);
  for (std::size_t t = 0; t < jobs; ++t) {
    workers.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += jobs) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

SecurityCurve evaluate_curve(const FusionNet<float>& net, const DetectorState* detector, const InputBounds& bounds,
                             const std::vector<LabeledInput>& test, const CurveConfig& cfg,
                             std::vector<std::vector<SampleOutcome>>* records) {
  cfg.validate();
  if (test.empty()) throw std::invalid_argument("evaluate_curve: empty test set");
  if (detector) detector->require_calibrated();
  if (is_adaptive(cfg.mode) && !detector) throw std::invalid_argument("adaptive attacks need a detector");

  AttackContext ctx{net, bounds, detector};
  SecurityCurve curve;
  curve.axis = is_patch(cfg.mode) ? CurveAxis::patch_side : CurveAxis::epsilon;
  curve.seed = cfg.seed;
  curve.config = cfg.to_json();
  curve.config["defended"] = detector != nullptr;
  if (records) records->clear();

  for (std::size_t li = 0; li < cfg.levels.size(); ++li) {
    const double level = cfg.levels[li];
    std::vector<SampleOutcome> outcomes(test.size());
    parallel_for(test.size(), cfg.jobs, [&](std::size_t i) {
      const auto& s = test[i];
      SampleOutcome o{s.id, s.label, 0, false};
      if (level == 0.0) {
        const auto ev = evaluate(net, s.input.rgb, s.input.depth);
        o.predicted = ev.label;
        if (detector) o.rejected = defend(ev.scores, anomaly_score(ev.feature, ev.label, detector->centroids), *detector, RejectMode::hard).rejected;
      } else {
        const std::uint64_t seed = derive_seed(derive_seed(cfg.seed, s.id), li);
        const auto r = run_attack(ctx, cfg.mode, s.input.rgb, s.input.depth, s.label, level, cfg.budget, cfg.placement, seed);
        o.predicted = r.adv_label;
        o.rejected = r.rejected;
      }
      outcomes[i] = o;
    });
    curve.points.push_back(tally(level, outcomes));
    if (records) records->push_back(std::move(outcomes));
  }
  return curve;
}

namespace {

std::string format9(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Nearest double to the 9-significant-digit decimal of v, so JSON carries the
// same digits as the CSV.
double decimal9(double v) { return std::strtod(format9(v).c_str(), nullptr); }

}  // namespace

std::string curve_csv(const SecurityCurve& curve) {
  std::ostringstream os;
  os << "level,acc_undef,acc_def,rej_rate,n\n";
  for (const auto& p : curve.points) {
    os << format9(p.level) << ',' << format9(p.acc_undef) << ',' << format9(p.acc_def) << ',' << format9(p.rej_rate)
       << ',' << p.n << '\n';
  }
  return os.str();
}

std::vector<CurvePoint> parse_curve_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "level,acc_undef,acc_def,rej_rate,n") {
    throw std::runtime_error("curve CSV: bad header '" + line + "'");
  }
  std::vector<CurvePoint> points;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream row(line);
    for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
    if (cells.size() != 5) throw std::runtime_error("curve CSV: expected 5 columns in '" + line + "'");
    CurvePoint p;
    p.level = std::stod(cells[0]);
    p.acc_undef = std::stof(cells[1]);
    p.acc_def = std::stof(cells[2]);
    p.rej_rate = std::stof(cells[3]);
    p.n = std::stoul(cells[4]);
    points.push_back(p);
  }
  return points;
}

nlohmann::json curve_json(const SecurityCurve& curve) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : curve.points) {
    pts.push_back({{"level", decimal9(p.level)},
                   {"acc_undef", decimal9(p.acc_undef)},
                   {"acc_def", decimal9(p.acc_def)},
                   {"rej_rate", decimal9(p.rej_rate)},
                   {"n", p.n}});
  }
  return {{"axis", to_string(curve.axis)},
          {"counting_rule",
           "level 0: defended = correct and accepted; level > 0: defended = rejected or correct; "
           "rejection rate = rejected / total"},
          {"seed", curve.seed},
          {"config", curve.config},
          {"points", pts}};
}

SecurityCurve curve_from_json(const nlohmann::json& j) {
  SecurityCurve c;
  const auto axis = j.at("axis").get<std::string>();
  if (axis == "epsilon") c.axis = CurveAxis::epsilon;
  else if (axis == "patch_side") c.axis = CurveAxis::patch_side;
  else throw std::runtime_error("curve JSON: unknown axis '" + axis + "'");
  c.seed = j.at("seed").get<std::uint64_t>();
  c.config = j.at("config");
  for (const auto& p : j.at("points")) {
    c.points.push_back({p.at("level").get<double>(), static_cast<float>(p.at("acc_undef").get<double>()),
                        static_cast<float>(p.at("acc_def").get<double>()), static_cast<float>(p.at("rej_rate").get<double>()),
                        p.at("n").get<std::size_t>()});
  }
  return c;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::string to_string(AugmentationMode m) { return m == AugmentationMode::regenerate ? "regenerate" : "fixed"; }

AugmentationMode parse_augmentation(std::string_view s) {
  if (s == "regenerate") return AugmentationMode::regenerate;
  if (s == "fixed") return AugmentationMode::fixed;
  throw std::invalid_argument("unknown augmentation mode '" + std::string(s) + "' (expected regenerate|fixed)");
}

void AdvTrainConfig::validate() const {
  if (eps_list.empty()) throw std::invalid_argument("adversarial training needs at least one epsilon");
  for (double e : eps_list) {
    if (!(e >= 0.0)) throw std::invalid_argument("adversarial training epsilons must be >= 0");
  }
  if (steps == 0) throw std::invalid_argument("adversarial training needs at least one attack step");
  if (!(step_factor > 0.0)) throw std::invalid_argument("step factor must be positive");
  if (!(adv_ratio >= 0.0 && adv_ratio <= 1.0)) throw std::invalid_argument("adv_ratio must be in [0, 1]");
  if (jobs == 0) throw std::invalid_argument("jobs must be at least 1");
}

nlohmann::json AdvTrainConfig::to_json() const {
  return {{"eps_list", eps_list}, {"steps", steps},           {"step_factor", step_factor},
          {"adv_ratio", adv_ratio}, {"parts", to_string(parts)}, {"mode", to_string(mode)}};
}

namespace {

constexpr std::uint64_t kEpsilonStream = 0xe951;

LabeledInput craft(const FusionNet<float>& net, const InputBounds& bounds, const LabeledInput& s, double eps,
                   const AdvTrainConfig& adv) {
  if (eps == 0.0) return s;
  AttackContext ctx{net, bounds, nullptr};
  AttackBudget b;
  b.epsilon = eps;
  b.steps = adv.steps;
  b.step_size = adv.step_factor * eps / static_cast<double>(adv.steps);
  b.parts = adv.parts;
  auto r = pgd_attack(ctx, s.input.rgb, s.input.depth, s.label, b);
  return {s.id, s.label, {std::move(r.adv_rgb), std::move(r.adv_depth)}};
}

}  // namespace

TrainResult adversarial_train(FusionNet<float> init, const std::vector<LabeledInput>& train, const InputBounds& bounds,
                              const AdvTrainConfig& adv, const TrainConfig& cfg) {
  adv.validate();
  cfg.validate();
  const std::uint64_t eps_seed = derive_seed(cfg.seed, kEpsilonStream);

  if (adv.mode == AugmentationMode::fixed) {
    // One adversarial copy per sample, crafted against the initial weights.
    std::vector<LabeledInput> crafted(train.size());
    parallel_for(train.size(), adv.jobs, [&](std::size_t i) {
      Rng rng(derive_seed(eps_seed, train[i].id));
      crafted[i] = craft(init, bounds, train[i], adv.eps_list[rng.below(adv.eps_list.size())], adv);
    });
    std::vector<std::size_t> index_of_id;
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (train[i].id >= index_of_id.size()) index_of_id.resize(train[i].id + 1, train.size());
      index_of_id[train[i].id] = i;
    }
    auto transform = [&](const FusionNet<float>&, const std::vector<LabeledInput>& batch, std::size_t, std::size_t) {
      std::vector<LabeledInput> out = batch;
      const auto k = static_cast<std::size_t>(std::lround(adv.adv_ratio * static_cast<double>(batch.size())));
      for (std::size_t i = 0; i < k; ++i) out.push_back(crafted[index_of_id.at(batch[i].id)]);
      return out;
    };
    return fuseguard::train(std::move(init), train, cfg, transform);
  }

  auto transform = [&](const FusionNet<float>& net, const std::vector<LabeledInput>& batch, std::size_t epoch,
                       std::size_t b) {
    Rng rng(derive_seed(eps_seed, (static_cast<std::uint64_t>(epoch) << 32) | b));
    const double eps = adv.eps_list[rng.below(adv.eps_list.size())];
    const auto k = static_cast<std::size_t>(std::lround(adv.adv_ratio * static_cast<double>(batch.size())));
    std::vector<LabeledInput> out = batch;
    out.resize(batch.size() + k);
    parallel_for(k, adv.jobs, [&](std::size_t i) { out[batch.size() + i] = craft(net, bounds, batch[i], eps, adv); });
    return out;
  };
  return fuseguard::train(std::move(init), train, cfg, transform);
}

}  // namespace fuseguard
