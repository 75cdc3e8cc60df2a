#ifndef FUSEGUARD_DETECTOR_HPP
#define FUSEGUARD_DETECTOR_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fuseguard/dataset.hpp"
#include "fuseguard/model.hpp"
#include "json.hpp"

namespace fuseguard {

struct DetectorState {
  std::vector<Tensor> centroids;  // one [a] vector per class
  double beta = 0.0;              // rejection threshold
  double lambda = 30.0;           // sharpness of the soft rejection score
  double fpr_target = 0.1;
  double rho = 1e-5;              // threshold grid spacing
  double achieved_fpr = 0.0;
  std::size_t calibration_samples = 0;

  bool calibrated() const { return !centroids.empty() && beta > 0.0; }
  std::size_t classes() const { return centroids.size(); }
  /// Index of the rejection class in defended score vectors.
  std::size_t reject_label() const { return centroids.size(); }
  void require_calibrated() const;

  nlohmann::json to_json() const;
  static DetectorState from_json(const nlohmann::json& j);
};

void save_detector(const std::filesystem::path& path, const DetectorState& det,
                   const nlohmann::json& config = nlohmann::json::object());
DetectorState load_detector(const std::filesystem::path& path);

/// Per-class mean of R(x), grouped by the true labels.
std::vector<Tensor> compute_centroids(const FusionNet<float>& net, const std::vector<LabeledInput>& train);
/// Same from precomputed features.
std::vector<Tensor> compute_centroids(const std::vector<Tensor>& features, const std::vector<std::size_t>& labels,
                                      std::size_t classes);

/// ℓ2 distance between a feature and the centroid of the predicted class.
double anomaly_score(const Tensor& feature, std::size_t predicted, const std::vector<Tensor>& centroids);
double anomaly_score(const FusionNet<float>& net, const DetectorState& det, const Tensor& x_rgb, const Tensor& x_depth);

constexpr double kDefaultGridSteps = 1e10;

/// Smallest grid value β = ρ·i, i ∈ [1, T], whose exceedance rate
/// #{E_k > β}/N is at most r. Throws when no grid value qualifies.
double calibrate_threshold(std::span<const double> scores, double r, double rho, double grid_steps = kDefaultGridSteps);

/// Fraction of scores strictly above beta.
double exceedance_rate(std::span<const double> scores, double beta);

struct CalibrationOptions {
  double fpr = 0.1;
  double rho = 1e-5;
  double grid_steps = kDefaultGridSteps;
  double lambda = 30.0;
};

/// Centroids from `train`; threshold from anomaly scores on `calibration`
/// (the training split unless a held-out set is passed).
DetectorState calibrate(const FusionNet<float>& net, const std::vector<LabeledInput>& train,
                        const std::vector<LabeledInput>& calibration, const CalibrationOptions& opts);

enum class RejectMode { hard, soft };

double soft_reject_score(double e, double beta, double lambda);

struct DefendedPrediction {
  Tensor scores;  // S'(x), c+1 entries
  std::size_t label = 0;
  double anomaly = 0.0;
  bool rejected = false;  // label == rejection class
};

/// S'(x) from undefended scores and an anomaly score.
DefendedPrediction defend(const Tensor& scores, double anomaly, const DetectorState& det, RejectMode mode);
DefendedPrediction defended_predict(const FusionNet<float>& net, const DetectorState& det, const Tensor& x_rgb,
                                    const Tensor& x_depth, RejectMode mode = RejectMode::hard);

}  // namespace fuseguard

#endif  // FUSEGUARD_DETECTOR_HPP
