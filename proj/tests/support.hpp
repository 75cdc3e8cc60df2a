#ifndef FUSEGUARD_TESTS_SUPPORT_HPP
#define FUSEGUARD_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include "fuseguard/model.hpp"
#include "fuseguard/ops.hpp"
#include "fuseguard/random.hpp"

namespace fuseguard::testing {

using DTensor = BasicTensor<double>;
using ScalarFn = std::function<Var<double>(Tape<double>&, const Var<double>&)>;

inline DTensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  DTensor t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor random_float_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return random_tensor(std::move(shape), seed, lo, hi).cast<float>();
}

inline double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a) + std::abs(b), 1e-8);
  return std::abs(a - b) / scale;
}

// Largest relative error between tape and central-difference gradients of a
// scalar function, over every coordinate of x.
inline double gradient_error(const ScalarFn& f, const DTensor& x, double h = 1e-6) {
  Tape<double> tape;
  auto xv = tape.variable(x);
  auto y = f(tape, xv);
  tape.backward(y);
  const DTensor g = tape.grad(xv);
  auto eval = [&](const DTensor& at) {
    Tape<double> t;
    return f(t, t.constant(at)).value().item();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    DTensor plus = x, minus = x;
    plus[i] += h;
    minus[i] -= h;
    const double numeric = (eval(plus) - eval(minus)) / (2.0 * h);
    worst = std::max(worst, rel_err(g[i], numeric));
  }
  return worst;
}

// Weighted sum with fixed pseudo-random weights so every output coordinate
// contributes a distinct gradient.
inline Var<double> probe(Tape<double>& tape, const Var<double>& y, std::uint64_t seed = 99) {
  auto w = tape.constant(random_tensor(y.shape(), seed));
  return ops::sum(ops::mul(y, w));
}

struct NetGradientReport {
  double worst_param = 0.0;
  double worst_input = 0.0;
  std::size_t params_checked = 0;
  std::size_t inputs_checked = 0;
};

// Cross-entropy gradients of a whole fusion net (in double) against central
// differences, for randomly chosen parameter entries and input pixels.
inline NetGradientReport net_gradient_check(const FusionNet<double>& net, const DTensor& x_rgb, const DTensor& x_depth,
                                            std::size_t label, std::size_t n_params, std::size_t n_inputs,
                                            std::uint64_t seed, double h = 1e-5) {
  auto loss_at = [&](const FusionNet<double>& n, const DTensor& r, const DTensor& d) {
    Tape<double> t;
    auto bound = bind(t, n, false);
    return ops::cross_entropy(forward(n.arch, bound, t.constant(r), t.constant(d)).logits, label).value().item();
  };
  Tape<double> tape;
  auto bound = bind(tape, net, true);
  auto vr = tape.variable(x_rgb);
  auto vd = tape.variable(x_depth);
  auto loss = ops::cross_entropy(forward(net.arch, bound, vr, vd).logits, label);
  tape.backward(loss);

  std::vector<std::pair<std::string, DTensor>> grads;
  for_each_param(bound, [&](const std::string& name, const Var<double>& v) { grads.emplace_back(name, tape.grad(v)); });
  const DTensor g_rgb = tape.grad(vr), g_depth = tape.grad(vd);

  auto err = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-6); };
  NetGradientReport rep;
  Rng rng(seed);
  for (std::size_t k = 0; k < n_params; ++k) {
    const std::size_t which = rng.below(grads.size());
    const std::size_t idx = rng.below(grads[which].second.size());
    auto plus = net, minus = net;
    auto bump = [&](FusionNet<double>& n, double d) {
      for_each_param(n.params, [&](const std::string& name, DTensor& t) {
        if (name == grads[which].first) t[idx] += d;
      });
    };
    bump(plus, h);
    bump(minus, -h);
    const double numeric = (loss_at(plus, x_rgb, x_depth) - loss_at(minus, x_rgb, x_depth)) / (2 * h);
    rep.worst_param = std::max(rep.worst_param, err(grads[which].second[idx], numeric));
    ++rep.params_checked;
  }
  for (std::size_t k = 0; k < n_inputs; ++k) {
    const bool rgb = net.arch.uses_rgb() && (!net.arch.uses_depth() || rng.below(2) == 0);
    const std::size_t idx = rng.below(x_rgb.size());
    DTensor rp = x_rgb, rm = x_rgb, dp = x_depth, dm = x_depth;
    (rgb ? rp : dp)[idx] += h;
    (rgb ? rm : dm)[idx] -= h;
    const double numeric = (loss_at(net, rp, dp) - loss_at(net, rm, dm)) / (2 * h);
    rep.worst_input = std::max(rep.worst_input, err((rgb ? g_rgb : g_depth)[idx], numeric));
    ++rep.inputs_checked;
  }
  return rep;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fuseguard_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline Architecture small_arch(Variant v = Variant::rgbd) {
  Architecture a;
  a.image_size = 8;
  a.stage_channels = {3, 4};
  a.projection_channels = 3;
  a.projection_dim = 4;
  a.hidden = 3;
  a.classes = 3;
  a.variant = v;
  return a;
}

}  // namespace fuseguard::testing

#endif  // FUSEGUARD_TESTS_SUPPORT_HPP
