#ifndef FUSEGUARD_HARNESS_HPP
#define FUSEGUARD_HARNESS_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fuseguard/attacks.hpp"
#include "fuseguard/dataset.hpp"
#include "fuseguard/detector.hpp"
#include "fuseguard/train.hpp"
#include "json.hpp"

namespace fuseguard {

enum class CurveAxis { epsilon, patch_side };

std::string to_string(CurveAxis a);

/// What happened to one sample at one level.
struct SampleOutcome {
  std::size_t id = 0;
  std::size_t label = 0;
  std::size_t predicted = 0;  // undefended argmax
  bool rejected = false;      // hard-mode detector decision (false without a detector)
};

struct CurvePoint {
  double level = 0.0;
  float acc_undef = 0.0f;
  float acc_def = 0.0f;
  float rej_rate = 0.0f;
  std::size_t n = 0;

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

// Defended accuracy at level 0 counts correct and accepted samples; at any
// level above 0 a sample counts when it is rejected or accepted with its true
// label. Rejection rate is rejected / total at every level.
CurvePoint tally(double level, const std::vector<SampleOutcome>& outcomes);

struct SecurityCurve {
  CurveAxis axis = CurveAxis::epsilon;
  std::vector<CurvePoint> points;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
};

struct CurveConfig {
  AttackMode mode = AttackMode::pgd;
  std::vector<double> levels{0.0, 0.05, 0.1, 0.2, 0.3, 0.5};
  AttackBudget budget;  // epsilon is ignored for full-image modes (the level is used)
  Placement placement = Placement::fixed_center;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Strictly increasing, starting at 0.
void validate_levels(const std::vector<double>& levels);

/// Attacks every sample at every level. Samples run in parallel; each uses a
/// seed derived from its id, so the result does not depend on `jobs`.
SecurityCurve evaluate_curve(const FusionNet<float>& net, const DetectorState* detector, const InputBounds& bounds,
                             const std::vector<LabeledInput>& test, const CurveConfig& cfg,
                             std::vector<std::vector<SampleOutcome>>* records = nullptr);

std::string curve_csv(const SecurityCurve& curve);
std::vector<CurvePoint> parse_curve_csv(const std::string& text);
nlohmann::json curve_json(const SecurityCurve& curve);
SecurityCurve curve_from_json(const nlohmann::json& j);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

enum class AugmentationMode {
  regenerate,  // adversarial copies crafted against the current weights for every batch
  fixed,       // crafted once against the initial weights
};

std::string to_string(AugmentationMode m);
AugmentationMode parse_augmentation(std::string_view s);

struct AdvTrainConfig {
  std::vector<double> eps_list{0.1};  // one ε drawn per batch
  std::size_t steps = 10;
  double step_factor = 2.5;  // η = step_factor · ε / steps
  double adv_ratio = 1.0;    // adversarial copies per clean sample, in [0, 1]
  TargetParts parts = TargetParts::both;
  AugmentationMode mode = AugmentationMode::regenerate;
  std::size_t jobs = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

TrainResult adversarial_train(FusionNet<float> init, const std::vector<LabeledInput>& train, const InputBounds& bounds,
                              const AdvTrainConfig& adv, const TrainConfig& cfg);

}  // namespace fuseguard

#endif  // FUSEGUARD_HARNESS_HPP
