#ifndef FUSEGUARD_OPS_HPP
#define FUSEGUARD_OPS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fuseguard/autodiff.hpp"

// Differentiable primitives over Var<T>. Broadcasting is limited to
// equal shapes or one operand holding a single element.
namespace fuseguard::ops {

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return a;
  if (shape_numel(b) == 1) return a;
  if (shape_numel(a) == 1) return b;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

// f(x, y) -> value; da(x, y) and db(x, y) are the local partials.
template <class T, class F, class DA, class DB>
Var<T> binary(const Var<T>& a, const Var<T>& b, const char* name, F f, DA da, DB db) {
  const auto& av = a.value();
  const auto& bv = b.value();
  Shape shape = broadcast_shape(av.shape(), bv.shape(), name);
  const std::size_t n = shape_numel(shape);
  const bool sa = av.size() == 1 && n != 1;
  const bool sb = bv.size() == 1 && n != 1;
  BasicTensor<T> out(std::move(shape));
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[sa ? 0 : i], bv[sb ? 0 : i]);
  return a.tape().record(std::move(out), {a, b}, [a, b, sa, sb, da, db](Tape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    const auto& av = a.value();
    const auto& bv = b.value();
    auto ga = tape.grad_of(a);
    auto gb = tape.grad_of(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = av[sa ? 0 : i];
      const T y = bv[sb ? 0 : i];
      if (!ga.empty()) ga[sa ? 0 : i] += g[i] * da(x, y);
      if (!gb.empty()) gb[sb ? 0 : i] += g[i] * db(x, y);
    }
  });
}

// df(x, y) is the derivative given input x and output y.
template <class T, class F, class DF>
Var<T> unary(const Var<T>& a, F f, DF df) {
  const auto& av = a.value();
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return a.tape().record(std::move(out), {a}, [a, df](Tape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>& y) {
    const auto& av = a.value();
    auto ga = tape.grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(av[i], y[i]);
  });
}

}  // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return detail::binary(a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T{1}; },
                        [](T, T) { return T{1}; });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return detail::binary(a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T{1}; },
                        [](T, T) { return T{-1}; });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return detail::binary(a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                        [](T x, T) { return x; });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return detail::binary(a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T{1} / y; },
                        [](T x, T y) { return -x / (y * y); });
}

template <class T>
Var<T> add(const Var<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x + s; }, [](T, T) { return T{1}; });
}

template <class T>
Var<T> mul(const Var<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

// s - a
template <class T>
Var<T> rsub(T s, const Var<T>& a) {
  return detail::unary(a, [s](T x) { return s - x; }, [](T, T) { return T{-1}; });
}

template <class T>
Var<T> neg(const Var<T>& a) {
  return mul(a, T{-1});
}

template <class T>
Var<T> exp(const Var<T>& a) {
  return detail::unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(const Var<T>& a) {
  return detail::unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  return detail::unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <class T>
T sigmoid_value(T x) {
  // Branches keep exp() from overflowing for large |x|.
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary(a, [](T x) { return sigmoid_value(x); }, [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Var<T> square(const Var<T>& a) {
  return detail::unary(a, [](T x) { return x * x; }, [](T x, T) { return T{2} * x; });
}

template <class T>
Var<T> maximum(const Var<T>& a, T s) {
  return detail::unary(a, [s](T x) { return std::max(x, s); }, [s](T x, T) { return x > s ? T{1} : T{0}; });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  return maximum(a, T{0});
}

template <class T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  return detail::unary(a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
                       [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T{1} : T{0}; });
}


template <class T>
Var<T> sum(const Var<T>& a) {
  double acc = 0.0;
  for (T v : a.value().data()) acc += v;
  return a.tape().record(BasicTensor<T>::scalar(static_cast<T>(acc)), {a},
                         [a](Tape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
                           for (auto& v : tape.grad_of(a)) v += g[0];
                         });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return mul(sum(a), T{1} / static_cast<T>(a.size()));
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  return a.tape().record(a.value().reshaped(std::move(shape)), {a}, [a](Tape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    auto ga = tape.grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

/// Flattened concatenation into a 1-d vector.
template <class T>
Var<T> concat(const Var<T>& a, const Var<T>& b) {
  std::vector<T> out(a.value().values());
  out.insert(out.end(), b.value().data().begin(), b.value().data().end());
  const std::size_t na = a.size();
  const std::size_t n = out.size();
  return a.tape().record(BasicTensor<T>(Shape{n}, std::move(out)), {a, b},
                         [a, b, na](Tape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
                           auto ga = tape.grad_of(a);
                           auto gb = tape.grad_of(b);
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                           for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
                         });
}

/// Single element of a as a 1-element tensor.
template <class T>
Var<T> element(const Var<T>& a, std::size_t index) {
  if (index >= a.size()) {
    throw ShapeError("element: index " + std::to_string(index) + " out of range for shape " +
                     shape_string(a.shape()));
  }
  return a.tape().record(BasicTensor<T>::scalar(a.value()[index]), {a},
                         [a, index](Tape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) { tape.grad_of(a)[index] += g[0]; });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_string(A.shape()) + " by " + shape_string(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  BasicTensor<T> C(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) C[i * n + j] += aip * B[p * n + j];
    }
  }
  return a.tape().record(std::move(C), {a, b}, [a, b, m, k, n](Tape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    const auto& A = a.value();
    const auto& B = b.value();
    auto ga = tape.grad_of(a);
    auto gb = tape.grad_of(b);
    // dA = dC·Bᵀ, dB = Aᵀ·dC
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        T acc{0};
        for (std::size_t j = 0; j < n; ++j) {
          acc += g[i * n + j] * B[p * n + j];
          if (!gb.empty()) gb[p * n + j] += A[i * k + p] * g[i * n + j];
        }
        if (!ga.empty()) ga[i * k + p] += acc;
      }
    }
  });
}

/// W[m×k] · x[k] -> [m]
template <class T>
Var<T> matvec(const Var<T>& w, const Var<T>& x) {
  const auto& W = w.value();
  const auto& X = x.value();
  if (W.rank() != 2 || X.size() != W.dim(1)) {
    throw ShapeError("matvec: cannot multiply " + shape_string(W.shape()) + " by " + shape_string(X.shape()));
  }
  const std::size_t m = W.dim(0), k = W.dim(1);
  BasicTensor<T> y(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    T acc{0};
    for (std::size_t p = 0; p < k; ++p) acc += W[i * k + p] * X[p];
    y[i] = acc;
  }
  return w.tape().record(std::move(y), {w, x}, [w, x, m, k](Tape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    const auto& W = w.value();
    const auto& X = x.value();
    auto gw = tape.grad_of(w);
    auto gx = tape.grad_of(x);
    for (std::size_t i = 0; i < m; ++i) {
      const T gi = g[i];
      for (std::size_t p = 0; p < k; ++p) {
        if (!gw.empty()) gw[i * k + p] += gi * X[p];
        if (!gx.empty()) gx[p] += gi * W[i * k + p];
      }
    }
  });
}

/// Cross-correlation of x[Cin×H×W] with kernels[Cout×Cin×k×k].
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernels, std::size_t stride, std::size_t padding) {
  const auto& X = x.value();
  const auto& K = kernels.value();
  if (X.rank() != 3 || K.rank() != 4 || K.dim(1) != X.dim(0) || K.dim(2) != K.dim(3)) {
    throw ShapeError("conv2d: kernels " + shape_string(K.shape()) + " do not match input " + shape_string(X.shape()));
  }
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::size_t cin = X.dim(0), h = X.dim(1), w = X.dim(2);
  const std::size_t cout = K.dim(0), k = K.dim(2);
  if (k > h + 2 * padding || k > w + 2 * padding) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + "x" + std::to_string(k) +
                     " larger than padded input " + shape_string(X.shape()));
  }
  const std::size_t ho = (h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (w + 2 * padding - k) / stride + 1;
  BasicTensor<T> out(Shape{cout, ho, wo});

  // Visits every (output, input, weight) index triple that contributes.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t ci = 0; ci < cin; ++ci) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t widx = ((co * cin + ci) * k + ky) * k + kx;
            for (std::size_t oy = 0; oy < ho; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t ox = 0; ox < wo; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                fn((co * ho + oy) * wo + ox, (ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix), widx);
              }
            }
          }
        }
      }
    }
  };

  for_each_tap([&](std::size_t o, std::size_t i, std::size_t wi) { out[o] += K[wi] * X[i]; });

  return x.tape().record(std::move(out), {x, kernels}, [x, kernels, for_each_tap](Tape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    const auto& X = x.value();
    const auto& K = kernels.value();
    auto gx = tape.grad_of(x);
    auto gk = tape.grad_of(kernels);
    if (!gx.empty() && !gk.empty()) {
      for_each_tap([&](std::size_t o, std::size_t i, std::size_t wi) {
        gx[i] += K[wi] * g[o];
        gk[wi] += X[i] * g[o];
      });
    } else if (!gx.empty()) {
      for_each_tap([&](std::size_t o, std::size_t i, std::size_t wi) { gx[i] += K[wi] * g[o]; });
    } else if (!gk.empty()) {
      for_each_tap([&](std::size_t o, std::size_t i, std::size_t wi) { gk[wi] += X[i] * g[o]; });
    }
  });
}

/// Adds b[c] to every pixel of channel c of x[C×H×W].
template <class T>
Var<T> bias_add(const Var<T>& x, const Var<T>& b) {
  const auto& X = x.value();
  if (X.rank() != 3 || b.size() != X.dim(0)) {
    throw ShapeError("bias_add: bias " + shape_string(b.shape()) + " does not match " + shape_string(X.shape()));
  }
  const std::size_t c = X.dim(0), hw = X.dim(1) * X.dim(2);
  BasicTensor<T> out(X);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T bv = b.value()[ch];
    for (std::size_t i = 0; i < hw; ++i) out[ch * hw + i] += bv;
  }
  return x.tape().record(std::move(out), {x, b}, [x, b, c, hw](Tape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    auto gx = tape.grad_of(x);
    auto gb = tape.grad_of(b);
    for (std::size_t ch = 0; ch < c; ++ch) {
      T acc{0};
      for (std::size_t i = 0; i < hw; ++i) {
        acc += g[ch * hw + i];
        if (!gx.empty()) gx[ch * hw + i] += g[ch * hw + i];
      }
      if (!gb.empty()) gb[ch] += acc;
    }
  });
}

/// [C×H×W] -> [C], mean over spatial positions.
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& X = x.value();
  if (X.rank() != 3) throw ShapeError("global_avg_pool expects C×H×W, got " + shape_string(X.shape()));
  const std::size_t c = X.dim(0), hw = X.dim(1) * X.dim(2);
  BasicTensor<T> out(Shape{c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += X[ch * hw + i];
    out[ch] = static_cast<T>(acc / static_cast<double>(hw));
  }
  return x.tape().record(std::move(out), {x}, [x, c, hw](Tape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    auto gx = tape.grad_of(x);
    const T scale = T{1} / static_cast<T>(hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < hw; ++i) gx[ch * hw + i] += g[ch] * scale;
    }
  });
}

template <class T>
BasicTensor<T> softmax_values(const BasicTensor<T>& z) {
  const T zmax = *std::max_element(z.data().begin(), z.data().end());
  BasicTensor<T> p(z.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - zmax);
    total += p[i];
  }
  for (auto& v : p.data()) v = static_cast<T>(v / total);
  return p;
}

template <class T>
Var<T> softmax(const Var<T>& z) {
  if (z.size() < 2) throw ShapeError("softmax needs at least 2 entries, got " + shape_string(z.shape()));
  return z.tape().record(softmax_values(z.value()), {z}, [z](Tape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>& p) {
    T dot{0};
    for (std::size_t i = 0; i < p.size(); ++i) dot += g[i] * p[i];
    auto gz = tape.grad_of(z);
    for (std::size_t i = 0; i < p.size(); ++i) gz[i] += p[i] * (g[i] - dot);
  });
}

/// -log softmax(logits)[label], computed from logits with max-subtraction.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::size_t label) {
  const auto& z = logits.value();
  if (z.size() < 2 || label >= z.size()) {
    throw ShapeError("cross_entropy: label " + std::to_string(label) + " invalid for logits " + shape_string(z.shape()));
  }
  const T zmax = *std::max_element(z.data().begin(), z.data().end());
  double total = 0.0;
  for (T v : z.data()) total += std::exp(static_cast<double>(v - zmax));
  const T loss = static_cast<T>(std::log(total) - static_cast<double>(z[label] - zmax));
  return logits.tape().record(BasicTensor<T>::scalar(loss), {logits}, [logits, label](Tape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    auto p = softmax_values(logits.value());
    auto gz = tape.grad_of(logits);
    for (std::size_t i = 0; i < p.size(); ++i) gz[i] += g[0] * (p[i] - (i == label ? T{1} : T{0}));
  });
}

/// Euclidean norm with a zero subgradient at the origin.
template <class T>
Var<T> l2_norm(const Var<T>& a) {
  double acc = 0.0;
  for (T v : a.value().data()) acc += static_cast<double>(v) * v;
  const T norm = static_cast<T>(std::sqrt(acc));
  return a.tape().record(BasicTensor<T>::scalar(norm), {a}, [a, norm](Tape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    if (norm == T{0}) return;
    const auto& av = a.value();
    auto ga = tape.grad_of(a);
    for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g[0] * av[i] / norm;
  });
}

}  // namespace fuseguard::ops

namespace fuseguard {

// Operators live beside Var so argument-dependent lookup finds them.
template <class T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return ops::add(a, b); }
template <class T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return ops::sub(a, b); }
template <class T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return ops::mul(a, b); }
template <class T>
Var<T> operator/(const Var<T>& a, const Var<T>& b) { return ops::div(a, b); }

}  // namespace fuseguard

#endif  // FUSEGUARD_OPS_HPP
