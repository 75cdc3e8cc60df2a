#ifndef FUSEGUARD_ATTACKS_HPP
#define FUSEGUARD_ATTACKS_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fuseguard/dataset.hpp"
#include "fuseguard/detector.hpp"
#include "fuseguard/model.hpp"
#include "json.hpp"

namespace fuseguard {

enum class TargetParts { rgb, depth, both };
enum class StepRule {
  sign,  // δ ← δ − η·sign(∇), the usual ℓ∞ PGD step
  raw,   // δ ← δ − η·∇
};
enum class AttackMode { pgd, patch, adaptive_pgd, adaptive_patch };

std::string to_string(TargetParts p);
std::string to_string(StepRule r);
std::string to_string(AttackMode m);
TargetParts parse_parts(std::string_view s);
StepRule parse_step_rule(std::string_view s);
AttackMode parse_attack_mode(std::string_view s);
inline bool is_patch(AttackMode m) { return m == AttackMode::patch || m == AttackMode::adaptive_patch; }
inline bool is_adaptive(AttackMode m) { return m == AttackMode::adaptive_pgd || m == AttackMode::adaptive_patch; }

struct AttackBudget {
  double epsilon = 0.1;    // ℓ∞ radius, preprocessed-input units
  double step_size = 0.0;  // η; zero or negative selects 2.5·ε/steps
  std::size_t steps = 100;
  TargetParts parts = TargetParts::both;
  StepRule rule = StepRule::sign;
  // Adaptive modes only: this fraction of the iterations runs on the plain
  // margin loss before switching to the defense-aware loss.
  double adaptive_warmup = 0.5;

  double step() const { return step_size > 0.0 ? step_size : 2.5 * epsilon / static_cast<double>(steps); }
  void validate() const;
  std::size_t warmup_steps() const;
  nlohmann::json to_json() const;
};

enum class Placement {
  fixed_center,
  random_translation,  // new integer offset every iteration; final patch placed at the center
};

std::string to_string(Placement p);
Placement parse_placement(std::string_view s);

struct PatchSpec {
  std::size_t side = 8;
  Placement placement = Placement::fixed_center;
  nlohmann::json to_json() const;
};

struct PatchOffset {
  std::size_t y = 0;
  std::size_t x = 0;
};

PatchOffset center_offset(std::size_t image_size, std::size_t side);
/// Binary mask μ of input shape [C×H×W], ones on the s×s window at `at` in every channel.
Tensor patch_mask(const Shape& shape, std::size_t side, PatchOffset at);
/// Writes a [C×s×s] patch into a zero tensor of `shape` at `at`.
Tensor place_patch(const Tensor& patch, const Shape& shape, PatchOffset at);
/// Window of `full` covered by a patch at `at`.
Tensor crop_patch(const Tensor& full, std::size_t side, PatchOffset at);

/// x ⊕ content = (1−μ)∘x + μ∘content. Pixels with μ = 0 are copied from x.
Tensor apply_patch(const Tensor& x, const Tensor& content, const Tensor& mask);

template <class T>
Var<T> apply_patch(const Var<T>& x, const Var<T>& content, const BasicTensor<T>& mask) {
  const auto& xv = x.value();
  const auto& cv = content.value();
  if (xv.shape() != cv.shape() || xv.shape() != mask.shape()) {
    throw ShapeError("apply_patch: shapes " + shape_string(xv.shape()) + ", " + shape_string(cv.shape()) + " and mask " +
                     shape_string(mask.shape()) + " differ");
  }
  BasicTensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] != T{0} ? cv[i] : xv[i];
  return x.tape().record(std::move(out), {x, content},
                         [x, content, mask](Tape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
                           auto gx = tape.grad_of(x);
                           auto gc = tape.grad_of(content);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             if (!gx.empty()) gx[i] += (T{1} - mask[i]) * g[i];
                             if (!gc.empty()) gc[i] += mask[i] * g[i];
                           }
                         });
}

/// Componentwise clamp to [−ε, ε].
Tensor project_linf(const Tensor& delta, double epsilon);

/// s_y − max_{j≠y} s_j.
double margin_loss(std::span<const float> scores, std::size_t y);

template <class T>
Var<T> margin_loss(const Var<T>& scores, std::size_t y) {
  const auto& s = scores.value();
  if (s.size() < 2 || y >= s.size()) throw std::invalid_argument("margin_loss: label out of range");
  std::size_t best = y == 0 ? 1 : 0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (j != y && s[j] > s[best]) best = j;
  }
  return ops::element(scores, y) - ops::element(scores, best);
}

/// Defense-aware loss on S'(x) with a sigmoid rejection score. The centroid
/// index (current argmax) and the competing class are fixed for the step.
template <class T>
Var<T> adaptive_loss(const ForwardRecord<T>& rec, const std::vector<BasicTensor<T>>& centroids, double beta,
                     double lambda, std::size_t y) {
  const auto& s = rec.scores.value();
  if (centroids.size() != s.size()) throw std::invalid_argument("adaptive_loss: centroid count differs from class count");
  if (s.size() < 2 || y >= s.size()) throw std::invalid_argument("adaptive_loss: label out of range");
  const std::size_t gamma = argmax<T>(s.data());
  Tape<T>& tape = rec.scores.tape();
  auto e = ops::l2_norm(rec.feature - tape.constant(centroids[gamma]));
  auto z = ops::mul(ops::add(e, static_cast<T>(-beta)), static_cast<T>(lambda));
  // 1 − s_rej evaluated as sigmoid(−z) so it stays nonzero when s_rej rounds to 1.
  auto accept = ops::sigmoid(ops::neg(z));
  return ops::mul(accept, margin_loss(rec.scores, y));
}

struct AttackContext {
  const FusionNet<float>& net;
  InputBounds bounds;
  const DetectorState* detector = nullptr;  // needed by adaptive modes; also used to report rejection
};

struct AttackResult {
  Tensor delta_rgb;    // input-shaped perturbation actually added (zero for untouched parts)
  Tensor delta_depth;
  Tensor adv_rgb;
  Tensor adv_depth;
  std::vector<double> loss_trace;  // loss before each update plus the final loss (steps + 1 entries)
  std::size_t label = 0;           // true label
  std::size_t clean_label = 0;
  std::size_t adv_label = 0;       // undefended prediction on the adversarial input
  std::size_t defended_label = 0;  // hard-mode prediction with the detector (when present)
  double anomaly = 0.0;
  bool rejected = false;
  bool success = false;
  double linf_norm = 0.0;
};

// Called after every update with the projected state of both parts.
using IterationObserver =
    std::function<void(std::size_t iteration, const Tensor& adv_rgb, const Tensor& adv_depth, const Tensor& delta_rgb,
                       const Tensor& delta_depth)>;

AttackResult pgd_attack(const AttackContext& ctx, const Tensor& x_rgb, const Tensor& x_depth, std::size_t y,
                        const AttackBudget& budget, bool adaptive = false, const IterationObserver& observer = {});

/// RGB-only patch attack; the ℓ∞ bound applies to the change of the covered pixels.
AttackResult patch_attack(const AttackContext& ctx, const Tensor& x_rgb, const Tensor& x_depth, std::size_t y,
                          const PatchSpec& patch, const AttackBudget& budget, std::uint64_t seed, bool adaptive = false,
                          const IterationObserver& observer = {});

/// Dispatch on mode; `level` is ε for full-image modes and the patch side for patch modes.
AttackResult run_attack(const AttackContext& ctx, AttackMode mode, const Tensor& x_rgb, const Tensor& x_depth,
                        std::size_t y, double level, const AttackBudget& budget, Placement placement,
                        std::uint64_t seed);

}  // namespace fuseguard

#endif  // FUSEGUARD_ATTACKS_HPP
