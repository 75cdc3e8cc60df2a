#include "fuseguard/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fuseguard {

void DetectorState::require_calibrated() const {
  if (!calibrated()) throw std::logic_error("detector is not calibrated; run calibration first");
}

nlohmann::json DetectorState::to_json() const {
  nlohmann::json c = nlohmann::json::array();
  for (const auto& t : centroids) c.push_back(t.values());
  return {{"centroids", c},
          {"beta", beta},
          {"lambda", lambda},
          {"fpr_target", fpr_target},
          {"rho", rho},
          {"achieved_fpr", achieved_fpr},
          {"calibration_samples", calibration_samples}};
}

DetectorState DetectorState::from_json(const nlohmann::json& j) {
  DetectorState d;
  for (const auto& c : j.at("centroids")) {
    auto v = c.get<std::vector<float>>();
    if (v.empty()) throw std::runtime_error("detector: empty centroid");
    const std::size_t n = v.size();
    d.centroids.emplace_back(Shape{n}, std::move(v));
  }
  for (const auto& c : d.centroids) {
    if (c.size() != d.centroids.front().size()) throw std::runtime_error("detector: centroids differ in length");
  }
  d.beta = j.at("beta").get<double>();
  d.lambda = j.at("lambda").get<double>();
  d.fpr_target = j.at("fpr_target").get<double>();
  d.rho = j.at("rho").get<double>();
  d.achieved_fpr = j.at("achieved_fpr").get<double>();
  d.calibration_samples = j.at("calibration_samples").get<std::size_t>();
  return d;
}

void save_detector(const std::filesystem::path& path, const DetectorState& det, const nlohmann::json& config) {
  nlohmann::json j = det.to_json();
  j["config"] = config;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write detector to " + path.string());
  os << j.dump(2) << '\n';
}

DetectorState load_detector(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open detector file " + path.string());
  try {
    return DetectorState::from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::vector<Tensor> compute_centroids(const std::vector<Tensor>& features, const std::vector<std::size_t>& labels,
                                      std::size_t classes) {
  if (features.size() != labels.size()) throw std::invalid_argument("compute_centroids: features and labels differ in count");
  if (features.empty()) throw std::invalid_argument("compute_centroids: no samples");
  const std::size_t a = features.front().size();
  std::vector<std::vector<double>> sums(classes, std::vector<double>(a, 0.0));
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t k = 0; k < features.size(); ++k) {
    if (labels[k] >= classes) throw std::invalid_argument("compute_centroids: label " + std::to_string(labels[k]) + " out of range");
    if (features[k].size() != a) throw ShapeError("compute_centroids: feature sizes differ");
    for (std::size_t i = 0; i < a; ++i) sums[labels[k]][i] += features[k][i];
    ++counts[labels[k]];
  }
  std::vector<Tensor> out;
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw std::invalid_argument("compute_centroids: class " + std::to_string(c) + " has no training samples");
    Tensor t({a});
    for (std::size_t i = 0; i < a; ++i) t[i] = static_cast<float>(sums[c][i] / static_cast<double>(counts[c]));
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Tensor> compute_centroids(const FusionNet<float>& net, const std::vector<LabeledInput>& train) {
  std::vector<Tensor> features;
  std::vector<std::size_t> labels;
  for (const auto& s : train) {
    features.push_back(evaluate(net, s.input.rgb, s.input.depth).feature);
    labels.push_back(s.label);
  }
  return compute_centroids(features, labels, net.arch.classes);
}

double anomaly_score(const Tensor& feature, std::size_t predicted, const std::vector<Tensor>& centroids) {
  if (predicted >= centroids.size()) throw std::invalid_argument("anomaly_score: no centroid for class " + std::to_string(predicted));
  const Tensor& c = centroids[predicted];
  if (c.size() != feature.size()) throw ShapeError("anomaly_score: feature " + shape_string(feature.shape()) + " vs centroid " + shape_string(c.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double d = static_cast<double>(feature[i]) - c[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double anomaly_score(const FusionNet<float>& net, const DetectorState& det, const Tensor& x_rgb, const Tensor& x_depth) {
  if (det.centroids.empty()) throw std::logic_error("anomaly_score: detector has no centroids");
  const auto ev = evaluate(net, x_rgb, x_depth);
  return anomaly_score(ev.feature, ev.label, det.centroids);
}

double exceedance_rate(std::span<const double> scores, double beta) {
  if (scores.empty()) throw std::invalid_argument("exceedance_rate: no scores");
  const auto n = std::count_if(scores.begin(), scores.end(), [beta](double e) { return e > beta; });
  return static_cast<double>(n) / static_cast<double>(scores.size());
}

double calibrate_threshold(std::span<const double> scores, double r, double rho, double grid_steps) {
  if (scores.empty()) throw std::invalid_argument("calibrate_threshold: no scores");
  if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("calibrate_threshold: FPR target must be in (0, 1]");
  if (!(rho > 0.0)) throw std::invalid_argument("calibrate_threshold: grid step rho must be positive");
  if (!(grid_steps >= 1.0)) throw std::invalid_argument("calibrate_threshold: need at least one grid step");
  for (double e : scores) {
    if (!std::isfinite(e)) throw std::invalid_argument("calibrate_threshold: non-finite anomaly score");
  }
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n_total = static_cast<double>(sorted.size());
  const auto last = static_cast<std::uint64_t>(std::min(grid_steps, 9.0e18));

  // Walk the grid in order. The exceedance count only changes when β passes a
  // score, so stretches of the grid below the next score are skipped.
  std::size_t p = 0;  // sorted[p] is the smallest score still above β
  for (std::uint64_t i = 1; i <= last;) {
    const double beta = rho * static_cast<double>(i);
    while (p < sorted.size() && sorted[p] <= beta) ++p;
    const double rate = static_cast<double>(sorted.size() - p) / n_total;
    if (rate <= r) return beta;
    const double target = std::floor(sorted[p] / rho);
    std::uint64_t next = i + 1;
    if (target - 1.0 > static_cast<double>(next)) {
      next = target - 1.0 >= static_cast<double>(last) ? last : static_cast<std::uint64_t>(target - 1.0);
      next = std::max(next, i + 1);
    }
    i = next;
  }
  const double max_beta = rho * static_cast<double>(last);
  std::ostringstream os;
  os << "calibrate_threshold: no grid value up to " << max_beta << " reaches FPR " << r << " (residual FPR "
     << exceedance_rate(scores, max_beta) << "); increase rho or the grid size";
  throw std::runtime_error(os.str());
}

DetectorState calibrate(const FusionNet<float>& net, const std::vector<LabeledInput>& train,
                        const std::vector<LabeledInput>& calibration, const CalibrationOptions& opts) {
  if (!(opts.lambda > 0.0)) throw std::invalid_argument("calibrate: lambda must be positive");
  DetectorState det;
  det.centroids = compute_centroids(net, train);
  std::vector<double> scores;
  for (const auto& s : calibration) {
    const auto ev = evaluate(net, s.input.rgb, s.input.depth);
    scores.push_back(anomaly_score(ev.feature, ev.label, det.centroids));
  }
  det.beta = calibrate_threshold(scores, opts.fpr, opts.rho, opts.grid_steps);
  det.lambda = opts.lambda;
  det.fpr_target = opts.fpr;
  det.rho = opts.rho;
  det.achieved_fpr = exceedance_rate(scores, det.beta);
  det.calibration_samples = scores.size();
  return det;
}

double soft_reject_score(double e, double beta, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("soft_reject_score: lambda must be positive");
  return ops::sigmoid_value(lambda * (e - beta));
}

DefendedPrediction defend(const Tensor& scores, double anomaly, const DetectorState& det, RejectMode mode) {
  det.require_calibrated();
  const std::size_t c = scores.size();
  if (c != det.classes()) throw ShapeError("defend: " + std::to_string(c) + " scores for " + std::to_string(det.classes()) + " centroids");
  double reject = 0.0, accept = 1.0;
  if (mode == RejectMode::hard) {
    reject = anomaly > det.beta ? 1.0 : 0.0;
    accept = 1.0 - reject;
  } else {
    reject = soft_reject_score(anomaly, det.beta, det.lambda);
    accept = ops::sigmoid_value(-det.lambda * (anomaly - det.beta));
  }
  DefendedPrediction out;
  out.scores = Tensor({c + 1});
  for (std::size_t i = 0; i < c; ++i) out.scores[i] = static_cast<float>(accept * scores[i]);
  out.scores[c] = static_cast<float>(reject);
  out.label = argmax<float>(out.scores.data());
  out.anomaly = anomaly;
  out.rejected = out.label == c;
  return out;
}

DefendedPrediction defended_predict(const FusionNet<float>& net, const DetectorState& det, const Tensor& x_rgb,
                                    const Tensor& x_depth, RejectMode mode) {
  det.require_calibrated();
  const auto ev = evaluate(net, x_rgb, x_depth);
  return defend(ev.scores, anomaly_score(ev.feature, ev.label, det.centroids), det, mode);
}

}  // namespace fuseguard
