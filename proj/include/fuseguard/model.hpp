#ifndef FUSEGUARD_MODEL_HPP
#define FUSEGUARD_MODEL_HPP

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fuseguard/autodiff.hpp"
#include "fuseguard/ops.hpp"
#include "fuseguard/random.hpp"
#include "fuseguard/tensor.hpp"
#include "json.hpp"

namespace fuseguard {

enum class Variant { rgbd, rgb, depth };

std::string to_string(Variant v);
Variant parse_variant(std::string_view name);

/// Shape hyperparameters of the two-stream network.
struct Architecture {
  std::size_t image_size = 32;
  std::size_t in_channels = 3;
  std::vector<std::size_t> stage_channels{8, 16, 16};
  std::size_t projection_channels = 16;
  std::size_t projection_dim = 32;  // p
  std::size_t hidden = 16;          // a, size of the RGB-D feature
  std::size_t classes = 5;          // c
  Variant variant = Variant::rgbd;

  std::size_t stages() const { return stage_channels.size(); }
  bool uses_rgb() const { return variant != Variant::depth; }
  bool uses_depth() const { return variant != Variant::rgb; }
  std::size_t gru_input() const { return variant == Variant::rgbd ? 2 * projection_dim : projection_dim; }
  Shape input_shape() const { return {in_channels, image_size, image_size}; }
  /// Output shape of each conv stage (3x3, stride 2, pad 1).
  std::vector<Shape> stage_shapes() const;
  void validate() const;

  nlohmann::json to_json() const;
  static Architecture from_json(const nlohmann::json& j);
};

// Parameter containers are templated on the storage type so that the same
// layout holds plain tensors (BasicTensor<T>) and tape handles (Var<T>).

template <class P>
struct ConvStage {
  P weight;  // [Cout×Cin×3×3]
  P bias;    // [Cout]
};

/// Projection block: 1x1 conv to a fixed channel count, global average
/// pooling, dense map to the projection dimension.
template <class P>
struct ProjectionBlock {
  P reduce_weight;  // [q×C×1×1]
  P reduce_bias;    // [q]
  P dense_weight;   // [p×q]
  P dense_bias;     // [p]
};

template <class P>
struct StreamParams {
  std::vector<ConvStage<P>> stages;
  std::vector<ProjectionBlock<P>> projections;
};

template <class P>
struct GruParams {
  P w_z, u_z, b_z;  // update gate
  P w_r, u_r, b_r;  // reset gate
  P w_h, u_h, b_h;  // candidate
};

template <class P>
struct DenseParams {
  P weight;  // [out×in]
  P bias;    // [out]
};

template <class P>
struct FusionParams {
  StreamParams<P> rgb;    // empty for the depth-only variant
  StreamParams<P> depth;  // empty for the RGB-only variant
  GruParams<P> gru;
  DenseParams<P> head;
};

namespace detail {

template <class P, class F>
void visit_stream(const std::string& prefix, StreamParams<P>& s, F& f) {
  for (std::size_t i = 0; i < s.stages.size(); ++i) {
    const std::string base = prefix + ".stage" + std::to_string(i);
    f(base + ".weight", s.stages[i].weight);
    f(base + ".bias", s.stages[i].bias);
  }
  for (std::size_t i = 0; i < s.projections.size(); ++i) {
    const std::string base = prefix + ".proj" + std::to_string(i);
    f(base + ".reduce_weight", s.projections[i].reduce_weight);
    f(base + ".reduce_bias", s.projections[i].reduce_bias);
    f(base + ".dense_weight", s.projections[i].dense_weight);
    f(base + ".dense_bias", s.projections[i].dense_bias);
  }
}

}  // namespace detail

/// Calls f(name, param) for every parameter in a fixed, documented order.
template <class P, class F>
void for_each_param(FusionParams<P>& p, F&& f) {
  detail::visit_stream("rgb", p.rgb, f);
  detail::visit_stream("depth", p.depth, f);
  f("gru.w_z", p.gru.w_z);
  f("gru.u_z", p.gru.u_z);
  f("gru.b_z", p.gru.b_z);
  f("gru.w_r", p.gru.w_r);
  f("gru.u_r", p.gru.u_r);
  f("gru.b_r", p.gru.b_r);
  f("gru.w_h", p.gru.w_h);
  f("gru.u_h", p.gru.u_h);
  f("gru.b_h", p.gru.b_h);
  f("head.weight", p.head.weight);
  f("head.bias", p.head.bias);
}

template <class P, class F>
void for_each_param(const FusionParams<P>& p, F&& f) {
  for_each_param(const_cast<FusionParams<P>&>(p), [&f](const std::string& name, P& v) { f(name, std::as_const(v)); });
}

/// Same layout as `src` with a different storage type; values left default.
template <class Q, class P>
FusionParams<Q> like(const FusionParams<P>& src) {
  FusionParams<Q> out;
  out.rgb.stages.resize(src.rgb.stages.size());
  out.rgb.projections.resize(src.rgb.projections.size());
  out.depth.stages.resize(src.depth.stages.size());
  out.depth.projections.resize(src.depth.projections.size());
  return out;
}

/// Applies fn(name, const P&) -> Q to every parameter.
template <class Q, class P, class Fn>
FusionParams<Q> transform_params(const FusionParams<P>& src, Fn&& fn) {
  FusionParams<Q> out = like<Q>(src);
  std::vector<const P*> from;
  for_each_param(src, [&](const std::string&, const P& v) { from.push_back(&v); });
  std::size_t i = 0;
  for_each_param(out, [&](const std::string& name, Q& v) { v = fn(name, *from[i++]); });
  return out;
}

template <class T>
struct FusionNet {
  Architecture arch;
  FusionParams<BasicTensor<T>> params;

  template <class U>
  FusionNet<U> cast() const {
    return FusionNet<U>{arch, transform_params<BasicTensor<U>>(params, [](const std::string&, const BasicTensor<T>& t) {
                          return t.template cast<U>();
                        })};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_param(params, [&n](const std::string&, const BasicTensor<T>& t) { n += t.size(); });
    return n;
  }
};

/// Random initialization: He-normal convolution and projection weights,
/// uniform(±1/sqrt(a)) recurrent and head weights, zero biases.
FusionNet<float> init_fusion_net(const Architecture& arch, std::uint64_t seed);

template <class T>
using BoundParams = FusionParams<Var<T>>;

/// Puts every parameter on the tape, as trainable variables or as constants.
template <class T>
BoundParams<T> bind(Tape<T>& tape, const FusionNet<T>& net, bool trainable) {
  return transform_params<Var<T>>(net.params, [&](const std::string&, const BasicTensor<T>& t) {
    return trainable ? tape.variable(t) : tape.constant(t);
  });
}

enum class ProjectionMode { rectified, linear };

template <class T>
Var<T> project(const Var<T>& volume, const ProjectionBlock<Var<T>>& block, ProjectionMode mode = ProjectionMode::rectified) {
  auto reduced = ops::bias_add(ops::conv2d(volume, block.reduce_weight, 1, 0), block.reduce_bias);
  if (mode == ProjectionMode::rectified) reduced = ops::relu(reduced);
  auto pooled = ops::global_avg_pool(reduced);
  auto out = ops::add(ops::matvec(block.dense_weight, pooled), block.dense_bias);
  return mode == ProjectionMode::rectified ? ops::relu(out) : out;
}

/// One GRU step: z and r gates, candidate state, h' = (1-z)∘h + z∘h̃.
template <class T>
Var<T> gru_cell(const Var<T>& input, const Var<T>& h_prev, const GruParams<Var<T>>& p) {
  const std::size_t a = h_prev.size();
  const auto& wz = p.w_z.value();
  if (wz.rank() != 2 || wz.dim(0) != a || wz.dim(1) != input.size() || p.u_z.value().dim(1) != a) {
    throw ShapeError("gru_cell: parameters " + shape_string(wz.shape()) + " do not match input " +
                     shape_string(input.shape()) + " and state " + shape_string(h_prev.shape()));
  }
  using namespace ops;
  auto z = sigmoid(matvec(p.w_z, input) + matvec(p.u_z, h_prev) + p.b_z);
  auto r = sigmoid(matvec(p.w_r, input) + matvec(p.u_r, h_prev) + p.b_r);
  auto candidate = tanh(matvec(p.w_h, input) + matvec(p.u_h, r * h_prev) + p.b_h);
  return h_prev + z * (candidate - h_prev);
}

template <class T>
struct ForwardRecord {
  std::vector<Var<T>> rgb_stages;       // R_i, rgb stream
  std::vector<Var<T>> depth_stages;     // R_i, depth stream
  std::vector<Var<T>> rgb_projected;    // T_i
  std::vector<Var<T>> depth_projected;  // T_i
  std::vector<Var<T>> fused;            // S_i, GRU inputs in order
  Var<T> feature;                       // R(x), final GRU state [a]
  Var<T> logits;                        // [c]
  Var<T> scores;                        // softmax(logits) [c]
};

struct ForwardOptions {
  ProjectionMode projection = ProjectionMode::rectified;
};

template <class T>
ForwardRecord<T> forward(const Architecture& arch, const BoundParams<T>& p, const Var<T>& x_rgb, const Var<T>& x_depth,
                         ForwardOptions options = {}) {
  const Shape expected = arch.input_shape();
  if ((arch.uses_rgb() && x_rgb.shape() != expected) || (arch.uses_depth() && x_depth.shape() != expected)) {
    throw ShapeError("forward: inputs " + shape_string(x_rgb.shape()) + " / " + shape_string(x_depth.shape()) +
                     " do not match network input " + shape_string(expected));
  }
  ForwardRecord<T> rec;
  auto run_stream = [&](const StreamParams<Var<T>>& s, const Var<T>& x, std::vector<Var<T>>& stages,
                        std::vector<Var<T>>& projected) {
    Var<T> h = x;
    for (std::size_t i = 0; i < s.stages.size(); ++i) {
      h = ops::relu(ops::bias_add(ops::conv2d(h, s.stages[i].weight, 2, 1), s.stages[i].bias));
      stages.push_back(h);
      projected.push_back(project(h, s.projections[i], options.projection));
    }
  };
  if (arch.uses_rgb()) run_stream(p.rgb, x_rgb, rec.rgb_stages, rec.rgb_projected);
  if (arch.uses_depth()) run_stream(p.depth, x_depth, rec.depth_stages, rec.depth_projected);

  Tape<T>& tape = arch.uses_rgb() ? x_rgb.tape() : x_depth.tape();
  Var<T> h = tape.constant(BasicTensor<T>(Shape{arch.hidden}));
  for (std::size_t i = 0; i < arch.stages(); ++i) {
    Var<T> s;
    switch (arch.variant) {
      case Variant::rgbd: s = ops::concat(rec.rgb_projected[i], rec.depth_projected[i]); break;
      case Variant::rgb: s = rec.rgb_projected[i]; break;
      case Variant::depth: s = rec.depth_projected[i]; break;
    }
    rec.fused.push_back(s);
    h = gru_cell(s, h, p.gru);
  }
  rec.feature = h;
  rec.logits = ops::add(ops::matvec(p.head.weight, h), p.head.bias);
  rec.scores = ops::softmax(rec.logits);
  return rec;
}

/// Index of the largest entry; ties go to the lowest index.
template <class T>
std::size_t argmax(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

/// Constant-only forward pass; values detached from any tape.
template <class T>
struct Evaluation {
  std::vector<BasicTensor<T>> rgb_stages;
  std::vector<BasicTensor<T>> depth_stages;
  BasicTensor<T> feature;
  BasicTensor<T> scores;
  std::size_t label = 0;
};

template <class T>
Evaluation<T> evaluate(const FusionNet<T>& net, const BasicTensor<T>& x_rgb, const BasicTensor<T>& x_depth) {
  Tape<T> tape;
  auto bound = bind(tape, net, false);
  auto rec = forward(net.arch, bound, tape.constant(x_rgb), tape.constant(x_depth));
  Evaluation<T> ev;
  for (const auto& v : rec.rgb_stages) ev.rgb_stages.push_back(v.value());
  for (const auto& v : rec.depth_stages) ev.depth_stages.push_back(v.value());
  ev.feature = rec.feature.value();
  ev.scores = rec.scores.value();
  ev.label = argmax<T>(ev.scores.data());
  return ev;
}

struct Prediction {
  std::size_t label = 0;
  Tensor scores;
};

Prediction predict(const FusionNet<float>& net, const Tensor& x_rgb, const Tensor& x_depth);

}  // namespace fuseguard

#endif  // FUSEGUARD_MODEL_HPP
