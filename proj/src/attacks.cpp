#include "fuseguard/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fuseguard {

std::string to_string(TargetParts p) {
  switch (p) {
    case TargetParts::rgb: return "rgb";
    case TargetParts::depth: return "depth";
    case TargetParts::both: return "both";
  }
  return "both";
}

std::string to_string(StepRule r) { return r == StepRule::sign ? "sign" : "raw"; }

std::string to_string(AttackMode m) {
  switch (m) {
    case AttackMode::pgd: return "pgd";
    case AttackMode::patch: return "patch";
    case AttackMode::adaptive_pgd: return "adaptive-pgd";
    case AttackMode::adaptive_patch: return "adaptive-patch";
  }
  return "pgd";
}

std::string to_string(Placement p) { return p == Placement::fixed_center ? "center" : "random"; }

TargetParts parse_parts(std::string_view s) {
  if (s == "rgb") return TargetParts::rgb;
  if (s == "depth") return TargetParts::depth;
  if (s == "both") return TargetParts::both;
  throw std::invalid_argument("unknown target parts '" + std::string(s) + "' (expected rgb|depth|both)");
}

StepRule parse_step_rule(std::string_view s) {
  if (s == "sign") return StepRule::sign;
  if (s == "raw") return StepRule::raw;
  throw std::invalid_argument("unknown step rule '" + std::string(s) + "' (expected sign|raw)");
}

AttackMode parse_attack_mode(std::string_view s) {
  if (s == "pgd") return AttackMode::pgd;
  if (s == "patch") return AttackMode::patch;
  if (s == "adaptive-pgd") return AttackMode::adaptive_pgd;
  if (s == "adaptive-patch") return AttackMode::adaptive_patch;
  throw std::invalid_argument("unknown attack mode '" + std::string(s) + "' (expected pgd|patch|adaptive-pgd|adaptive-patch)");
}

Placement parse_placement(std::string_view s) {
  if (s == "center") return Placement::fixed_center;
  if (s == "random") return Placement::random_translation;
  throw std::invalid_argument("unknown patch placement '" + std::string(s) + "' (expected center|random)");
}

void AttackBudget::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("attack epsilon must be a finite value >= 0");
  if (steps == 0) throw std::invalid_argument("attack needs at least one iteration");
  if (!std::isfinite(step_size)) throw std::invalid_argument("attack step size must be finite");
  if (!(step() > 0.0) && epsilon > 0.0) throw std::invalid_argument("attack step size must be positive");
  if (!(adaptive_warmup >= 0.0 && adaptive_warmup < 1.0)) throw std::invalid_argument("adaptive warm-up must be in [0, 1)");
}

std::size_t AttackBudget::warmup_steps() const {
  return static_cast<std::size_t>(std::floor(adaptive_warmup * static_cast<double>(steps)));
}

nlohmann::json AttackBudget::to_json() const {
  return {{"epsilon", epsilon}, {"step_size", step()}, {"steps", steps}, {"parts", to_string(parts)}, {"step_rule", to_string(rule)}, {"adaptive_warmup", adaptive_warmup}};
}

nlohmann::json PatchSpec::to_json() const { return {{"side", side}, {"placement", to_string(placement)}}; }

PatchOffset center_offset(std::size_t image_size, std::size_t side) {
  if (side > image_size) throw std::invalid_argument("patch side " + std::to_string(side) + " exceeds image size " + std::to_string(image_size));
  const std::size_t o = (image_size - side) / 2;
  return {o, o};
}

namespace {

void check_window(const Shape& shape, std::size_t side, PatchOffset at) {
  if (shape.size() != 3) throw ShapeError("patch: expected C×H×W shape, got " + shape_string(shape));
  if (at.y + side > shape[1] || at.x + side > shape[2]) {
    throw std::invalid_argument("patch of side " + std::to_string(side) + " at (" + std::to_string(at.y) + ", " +
                                std::to_string(at.x) + ") exceeds image bounds " + shape_string(shape));
  }
}

}  // namespace

Tensor patch_mask(const Shape& shape, std::size_t side, PatchOffset at) {
  check_window(shape, side, at);
  Tensor m(shape);
  for (std::size_t c = 0; c < shape[0]; ++c) {
    for (std::size_t y = at.y; y < at.y + side; ++y) {
      for (std::size_t x = at.x; x < at.x + side; ++x) m.at(c, y, x) = 1.0f;
    }
  }
  return m;
}

Tensor place_patch(const Tensor& patch, const Shape& shape, PatchOffset at) {
  const std::size_t side = patch.dim(1);
  if (patch.rank() != 3 || patch.dim(2) != side || patch.dim(0) != shape.at(0)) {
    throw ShapeError("place_patch: patch " + shape_string(patch.shape()) + " does not fit " + shape_string(shape));
  }
  check_window(shape, side, at);
  Tensor out(shape);
  for (std::size_t c = 0; c < shape[0]; ++c) {
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) out.at(c, at.y + y, at.x + x) = patch.at(c, y, x);
    }
  }
  return out;
}

Tensor crop_patch(const Tensor& full, std::size_t side, PatchOffset at) {
  check_window(full.shape(), side, at);
  Tensor out({full.dim(0), side, side});
  for (std::size_t c = 0; c < full.dim(0); ++c) {
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) out.at(c, y, x) = full.at(c, at.y + y, at.x + x);
    }
  }
  return out;
}

Tensor apply_patch(const Tensor& x, const Tensor& content, const Tensor& mask) {
  if (x.shape() != content.shape() || x.shape() != mask.shape()) {
    throw ShapeError("apply_patch: shapes " + shape_string(x.shape()) + ", " + shape_string(content.shape()) +
                     " and mask " + shape_string(mask.shape()) + " differ");
  }
  Tensor out(x);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i] != 0.0f) out[i] = content[i];
  }
  return out;
}

Tensor project_linf(const Tensor& delta, double epsilon) {
  if (epsilon < 0.0) throw std::invalid_argument("project_linf: epsilon must be >= 0");
  const auto e = static_cast<float>(epsilon);
  Tensor out(delta);
  for (auto& v : out.data()) v = std::clamp(v, -e, e);
  return out;
}

double margin_loss(std::span<const float> scores, std::size_t y) {
  if (scores.size() < 2 || y >= scores.size()) throw std::invalid_argument("margin_loss: label out of range");
  double best = -1e300;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j != y) best = std::max(best, static_cast<double>(scores[j]));
  }
  return static_cast<double>(scores[y]) - best;
}

namespace {

struct Bounds {
  std::array<float, 3> lo, hi;
};

// Feasible version of δ for clean input x: x+δ inside the valid box and
// |δ| ≤ ε. Only positions with mask ≠ 0 may be nonzero (no mask: all).
void make_feasible(Tensor& delta, const Tensor& x, const Bounds& b, float eps, const Tensor* mask) {
  const std::size_t hw = x.dim(1) * x.dim(2);
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (mask && (*mask)[i] == 0.0f) {
      delta[i] = 0.0f;
      continue;
    }
    const std::size_t c = i / hw;
    const float v = std::clamp(x[i] + delta[i], b.lo[c], b.hi[c]);
    delta[i] = std::clamp(v - x[i], -eps, eps);
  }
}

Tensor perturbed(const Tensor& x, const Tensor& delta, const Bounds& b) {
  const std::size_t hw = x.dim(1) * x.dim(2);
  Tensor out(x);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (delta[i] != 0.0f) out[i] = std::clamp(x[i] + delta[i], b.lo[i / hw], b.hi[i / hw]);
  }
  return out;
}

float step_value(StepRule rule, float g) {
  if (rule == StepRule::raw) return g;
  return g > 0.0f ? 1.0f : (g < 0.0f ? -1.0f : 0.0f);
}

void check_input(const FusionNet<float>& net, const Tensor& x, const char* what) {
  if (x.shape() != net.arch.input_shape()) {
    throw ShapeError(std::string("attack: ") + what + " input " + shape_string(x.shape()) + " does not match network input " +
                     shape_string(net.arch.input_shape()));
  }
}

class AttackLoop {
 public:
  AttackLoop(const AttackContext& ctx, const Tensor& x_rgb, const Tensor& x_depth, std::size_t y,
             const AttackBudget& budget, bool adaptive)
      : ctx_(ctx), x_rgb_(x_rgb), x_depth_(x_depth), y_(y), budget_(budget), adaptive_(adaptive) {
    budget.validate();
    check_input(ctx.net, x_rgb, "rgb");
    check_input(ctx.net, x_depth, "depth");
    if (y >= ctx.net.arch.classes) throw std::invalid_argument("attack: label " + std::to_string(y) + " out of range");
    if (adaptive) {
      if (!ctx.detector) throw std::invalid_argument("adaptive attack needs a calibrated detector");
      ctx.detector->require_calibrated();
    }
    rgb_bounds_ = {ctx.bounds.rgb_lo, ctx.bounds.rgb_hi};
    depth_bounds_ = {ctx.bounds.depth_lo, ctx.bounds.depth_hi};
  }

  const Bounds& rgb_bounds() const { return rgb_bounds_; }
  const Bounds& depth_bounds() const { return depth_bounds_; }

  // Loss at the given perturbations; gradients w.r.t. the active ones.
  // When `mask` is set the RGB part goes through the patch operator.
  double loss_and_grad(const Tensor& d_rgb, const Tensor& d_depth, bool want_rgb, bool want_depth, const Tensor* mask,
                       Tensor* g_rgb, Tensor* g_depth) const {
    Tape<float> tape;
    auto bound = bind(tape, ctx_.net, false);
    auto xr = tape.constant(x_rgb_);
    auto xd = tape.constant(x_depth_);
    // Inactive parts still carry their (fixed) perturbation.
    Var<float> vr = want_rgb ? tape.variable(d_rgb) : tape.constant(d_rgb);
    Var<float> vd = want_depth ? tape.variable(d_depth) : tape.constant(d_depth);
    Var<float> adv_r = mask ? apply_patch(xr, xr + vr, *mask) : xr + vr;
    Var<float> adv_d = xd + vd;
    auto rec = forward(ctx_.net.arch, bound, adv_r, adv_d);
    Var<float> loss = adaptive_ && adaptive_phase_ ? adaptive_loss(rec, ctx_.detector->centroids, ctx_.detector->beta,
                                                ctx_.detector->lambda, y_)
                                : margin_loss(rec.scores, y_);
    const double value = loss.value().item();
    if (!std::isfinite(value)) throw std::runtime_error("attack: non-finite loss");
    if (!want_rgb && !want_depth) return value;
    tape.backward(loss);
    auto take = [](const Tape<float>& t, const Var<float>& v, Tensor* out) {
      *out = t.grad(v);
      for (float g : out->data()) {
        if (!std::isfinite(g)) throw std::runtime_error("attack: non-finite input gradient");
      }
    };
    if (want_rgb) take(tape, vr, g_rgb);
    if (want_depth) take(tape, vd, g_depth);
    return value;
  }

  AttackResult finish(Tensor d_rgb, Tensor d_depth, const Tensor& adv_rgb, const Tensor& adv_depth,
                      std::vector<double> trace) const {
    AttackResult r;
    r.label = y_;
    r.clean_label = evaluate(ctx_.net, x_rgb_, x_depth_).label;
    const auto ev = evaluate(ctx_.net, adv_rgb, adv_depth);
    r.adv_label = ev.label;
    r.defended_label = ev.label;
    if (ctx_.detector && ctx_.detector->calibrated()) {
      const auto def = defend(ev.scores, anomaly_score(ev.feature, ev.label, ctx_.detector->centroids), *ctx_.detector,
                              RejectMode::hard);
      r.defended_label = def.label;
      r.anomaly = def.anomaly;
      r.rejected = def.rejected;
    }
    r.success = adaptive_ ? (r.defended_label != y_ && !r.rejected) : r.adv_label != y_;
    r.linf_norm = std::max(max_abs<float>(d_rgb.data()), max_abs<float>(d_depth.data()));
    r.delta_rgb = std::move(d_rgb);
    r.delta_depth = std::move(d_depth);
    r.adv_rgb = adv_rgb;
    r.adv_depth = adv_depth;
    r.loss_trace = std::move(trace);
    return r;
  }

  const AttackBudget& budget() const { return budget_; }
  void set_adaptive_phase(bool on) { adaptive_phase_ = on; }
  const Tensor& x_rgb() const { return x_rgb_; }
  const Tensor& x_depth() const { return x_depth_; }

 private:
  const AttackContext& ctx_;
  const Tensor& x_rgb_;
  const Tensor& x_depth_;
  std::size_t y_;
  AttackBudget budget_;
  bool adaptive_;
  bool adaptive_phase_ = true;
  Bounds rgb_bounds_{}, depth_bounds_{};
};

}  // namespace

AttackResult pgd_attack(const AttackContext& ctx, const Tensor& x_rgb, const Tensor& x_depth, std::size_t y,
                        const AttackBudget& budget, bool adaptive, const IterationObserver& observer) {
  AttackLoop loop(ctx, x_rgb, x_depth, y, budget, adaptive);
  const bool use_rgb = budget.parts != TargetParts::depth && ctx.net.arch.uses_rgb();
  const bool use_depth = budget.parts != TargetParts::rgb && ctx.net.arch.uses_depth();
  const auto eps = static_cast<float>(budget.epsilon);
  const auto eta = static_cast<float>(budget.step());
  Tensor d_rgb(x_rgb.shape()), d_depth(x_depth.shape()), g_rgb, g_depth;
  std::vector<double> trace;
  const std::size_t warm = budget.warmup_steps();
  for (std::size_t it = 0; it < budget.steps; ++it) {
    loop.set_adaptive_phase(it >= warm);
    trace.push_back(loop.loss_and_grad(d_rgb, d_depth, use_rgb, use_depth, nullptr, &g_rgb, &g_depth));
    if (use_rgb) {
      for (std::size_t i = 0; i < d_rgb.size(); ++i) d_rgb[i] -= eta * step_value(budget.rule, g_rgb[i]);
      make_feasible(d_rgb, x_rgb, loop.rgb_bounds(), eps, nullptr);
    }
    if (use_depth) {
      for (std::size_t i = 0; i < d_depth.size(); ++i) d_depth[i] -= eta * step_value(budget.rule, g_depth[i]);
      make_feasible(d_depth, x_depth, loop.depth_bounds(), eps, nullptr);
    }
    if (observer) {
      observer(it, perturbed(x_rgb, d_rgb, loop.rgb_bounds()), perturbed(x_depth, d_depth, loop.depth_bounds()), d_rgb,
               d_depth);
    }
  }
  loop.set_adaptive_phase(true);
  trace.push_back(loop.loss_and_grad(d_rgb, d_depth, false, false, nullptr, nullptr, nullptr));
  const Tensor adv_rgb = perturbed(x_rgb, d_rgb, loop.rgb_bounds());
  const Tensor adv_depth = perturbed(x_depth, d_depth, loop.depth_bounds());
  return loop.finish(std::move(d_rgb), std::move(d_depth), adv_rgb, adv_depth, std::move(trace));
}

AttackResult patch_attack(const AttackContext& ctx, const Tensor& x_rgb, const Tensor& x_depth, std::size_t y,
                          const PatchSpec& patch, const AttackBudget& budget, std::uint64_t seed, bool adaptive,
                          const IterationObserver& observer) {
  if (budget.parts != TargetParts::rgb) throw std::invalid_argument("patch attacks target the rgb part only");
  if (!ctx.net.arch.uses_rgb()) throw std::invalid_argument("patch attack needs a network with an rgb stream");
  AttackLoop loop(ctx, x_rgb, x_depth, y, budget, adaptive);
  const std::size_t n = ctx.net.arch.image_size;
  const std::size_t side = patch.side;
  const PatchOffset center = center_offset(n, side);
  const Tensor zero_depth(x_depth.shape());

  if (side == 0) {
    const double clean = loop.loss_and_grad(Tensor(x_rgb.shape()), zero_depth, false, false, nullptr, nullptr, nullptr);
    if (observer) {
      for (std::size_t it = 0; it < budget.steps; ++it) observer(it, x_rgb, x_depth, Tensor(x_rgb.shape()), zero_depth);
    }
    return loop.finish(Tensor(x_rgb.shape()), zero_depth, x_rgb, x_depth, std::vector<double>(budget.steps + 1, clean));
  }

  const auto eps = static_cast<float>(budget.epsilon);
  const auto eta = static_cast<float>(budget.step());
  Rng rng(seed);
  auto next_offset = [&]() -> PatchOffset {
    if (patch.placement == Placement::fixed_center) return center;
    return {static_cast<std::size_t>(rng.below(n - side + 1)), static_cast<std::size_t>(rng.below(n - side + 1))};
  };
  // Perturbation applied at `at`: the patch delta placed there and made feasible for the covered pixels.
  auto applied = [&](const Tensor& d_patch, PatchOffset at, const Tensor& mask) {
    Tensor full = place_patch(d_patch, x_rgb.shape(), at);
    make_feasible(full, x_rgb, loop.rgb_bounds(), eps, &mask);
    return full;
  };

  Tensor d_patch({x_rgb.dim(0), side, side});
  Tensor g_rgb, unused;
  std::vector<double> trace;
  PatchOffset at = next_offset();
  const std::size_t warm = budget.warmup_steps();
  for (std::size_t it = 0; it < budget.steps; ++it) {
    loop.set_adaptive_phase(it >= warm);
    const Tensor mask = patch_mask(x_rgb.shape(), side, at);
    const Tensor full = applied(d_patch, at, mask);
    trace.push_back(loop.loss_and_grad(full, zero_depth, true, false, &mask, &g_rgb, &unused));
    const Tensor g_patch = crop_patch(g_rgb, side, at);
    d_patch = crop_patch(full, side, at);
    for (std::size_t i = 0; i < d_patch.size(); ++i) d_patch[i] -= eta * step_value(budget.rule, g_patch[i]);
    d_patch = project_linf(d_patch, budget.epsilon);
    at = next_offset();
    if (observer) {
      const Tensor next_mask = patch_mask(x_rgb.shape(), side, at);
      const Tensor d = applied(d_patch, at, next_mask);
      observer(it, apply_patch(x_rgb, perturbed(x_rgb, d, loop.rgb_bounds()), next_mask), x_depth, d, zero_depth);
    }
  }
  const Tensor mask = patch_mask(x_rgb.shape(), side, center);
  Tensor full = applied(d_patch, center, mask);
  loop.set_adaptive_phase(true);
  trace.push_back(loop.loss_and_grad(full, zero_depth, false, false, &mask, nullptr, nullptr));
  const Tensor adv_rgb = apply_patch(x_rgb, perturbed(x_rgb, full, loop.rgb_bounds()), mask);
  return loop.finish(std::move(full), zero_depth, adv_rgb, x_depth, std::move(trace));
}

AttackResult run_attack(const AttackContext& ctx, AttackMode mode, const Tensor& x_rgb, const Tensor& x_depth,
                        std::size_t y, double level, const AttackBudget& budget, Placement placement,
                        std::uint64_t seed) {
  if (!(level >= 0.0)) throw std::invalid_argument("attack level must be >= 0");
  if (is_patch(mode)) {
    if (level != std::floor(level)) throw std::invalid_argument("patch side must be an integer");
    PatchSpec spec{static_cast<std::size_t>(level), placement};
    AttackBudget b = budget;
    b.parts = TargetParts::rgb;
    return patch_attack(ctx, x_rgb, x_depth, y, spec, b, seed, is_adaptive(mode));
  }
  AttackBudget b = budget;
  b.epsilon = level;
  return pgd_attack(ctx, x_rgb, x_depth, y, b, is_adaptive(mode));
}

}  // namespace fuseguard
