#include <gtest/gtest.h>

#include "fuseguard/model.hpp"
#include "support.hpp"

using namespace fuseguard;
using namespace fuseguard::testing;

namespace {

// Hand-written GRU step in plain doubles.
std::vector<double> reference_gru(const FusionParams<DTensor>& p, const std::vector<double>& x, const std::vector<double>& h) {
  const std::size_t a = h.size(), n = x.size();
  auto lin = [&](const DTensor& w, const DTensor& u, const DTensor& b, const std::vector<double>& hh, std::size_t i) {
    double s = b[i];
    for (std::size_t j = 0; j < n; ++j) s += w[i * n + j] * x[j];
    for (std::size_t j = 0; j < a; ++j) s += u[i * a + j] * hh[j];
    return s;
  };
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  std::vector<double> z(a), r(a), rh(a), out(a);
  for (std::size_t i = 0; i < a; ++i) {
    z[i] = sig(lin(p.gru.w_z, p.gru.u_z, p.gru.b_z, h, i));
    r[i] = sig(lin(p.gru.w_r, p.gru.u_r, p.gru.b_r, h, i));
    rh[i] = r[i] * h[i];
  }
  for (std::size_t i = 0; i < a; ++i) {
    const double cand = std::tanh(lin(p.gru.w_h, p.gru.u_h, p.gru.b_h, rh, i));
    out[i] = (1.0 - z[i]) * h[i] + z[i] * cand;
  }
  return out;
}

FusionNet<double> random_double_net(const Architecture& arch, std::uint64_t seed) {
  auto net = init_fusion_net(arch, seed).cast<double>();
  // Nonzero biases so every code path carries signal.
  std::uint64_t k = 0;
  for_each_param(net.params, [&](const std::string& name, DTensor& t) {
    if (name.find("bias") != std::string::npos || name.find(".b_") != std::string::npos) {
      t = random_tensor(t.shape(), derive_seed(seed, ++k), -0.2, 0.2);
    }
  });
  return net;
}

}  // namespace

TEST(Architecture, StageShapesHalveTheImage) {
  Architecture a;
  const auto s = a.stage_shapes();
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0], (Shape{8, 16, 16}));
  EXPECT_EQ(s[1], (Shape{16, 8, 8}));
  EXPECT_EQ(s[2], (Shape{16, 4, 4}));
  EXPECT_EQ(a.gru_input(), 64u);
  a.variant = Variant::rgb;
  EXPECT_EQ(a.gru_input(), 32u);
}

TEST(Architecture, JsonRoundTripAndValidation) {
  Architecture a = small_arch(Variant::depth);
  const Architecture b = Architecture::from_json(a.to_json());
  EXPECT_EQ(b.to_json(), a.to_json());
  a.classes = 1;
  EXPECT_THROW(a.validate(), std::invalid_argument);
  EXPECT_THROW(parse_variant("rgbx"), std::invalid_argument);
}

TEST(Model, InitIsDeterministicPerSeed) {
  const auto a = init_fusion_net(small_arch(), 3);
  const auto b = init_fusion_net(small_arch(), 3);
  const auto c = init_fusion_net(small_arch(), 4);
  bool same = true, differs = false;
  for_each_param(a.params, [&](const std::string& name, const Tensor& t) {
    for_each_param(b.params, [&](const std::string& n2, const Tensor& u) { if (n2 == name) same = same && t == u; });
    for_each_param(c.params, [&](const std::string& n2, const Tensor& u) { if (n2 == name) differs = differs || !(t == u); });
  });
  EXPECT_TRUE(same);
  EXPECT_TRUE(differs);
}

TEST(Model, SingleStreamVariantsHaveNoOtherStreamParameters) {
  const auto rgb = init_fusion_net(small_arch(Variant::rgb), 0);
  EXPECT_TRUE(rgb.params.depth.stages.empty());
  EXPECT_EQ(rgb.params.gru.w_z.dim(1), small_arch().projection_dim);
  const auto both = init_fusion_net(small_arch(), 0);
  EXPECT_EQ(both.params.gru.w_z.dim(1), 2 * small_arch().projection_dim);
}

TEST(Model, FeatureHasHiddenSizeAndScoresSumToOne) {
  for (Variant v : {Variant::rgbd, Variant::rgb, Variant::depth}) {
    const auto net = init_fusion_net(small_arch(v), 1);
    const auto ev = evaluate(net, random_float_tensor({3, 8, 8}, 2), random_float_tensor({3, 8, 8}, 3));
    EXPECT_EQ(ev.feature.shape(), (Shape{3}));
    float total = 0.0f;
    for (float s : ev.scores.data()) total += s;
    EXPECT_NEAR(total, 1.0f, 1e-6f);
  }
}

TEST(Model, WrongInputShapeThrows) {
  const auto net = init_fusion_net(small_arch(), 1);
  EXPECT_THROW(evaluate(net, random_float_tensor({3, 9, 8}, 2), random_float_tensor({3, 8, 8}, 3)), ShapeError);
}

TEST(Model, GruCellMatchesHandWrittenStep) {
  const auto net = random_double_net(small_arch(), 5);
  const DTensor x = random_tensor({8}, 6), h = random_tensor({3}, 7);
  Tape<double> tape;
  auto bound = bind(tape, net, false);
  const auto got = gru_cell(tape.constant(x), tape.constant(h), bound.gru).value();
  const auto want = reference_gru(net.params, x.values(), h.values());
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Model, IgnoredStreamDoesNotAffectOutput) {
  const auto net = init_fusion_net(small_arch(Variant::rgb), 1);
  const Tensor r = random_float_tensor({3, 8, 8}, 2);
  const auto a = evaluate(net, r, random_float_tensor({3, 8, 8}, 3));
  const auto b = evaluate(net, r, random_float_tensor({3, 8, 8}, 4));
  EXPECT_EQ(a.scores, b.scores);
}

TEST(Model, PredictAgreesWithForwardArgmax) {
  const auto net = init_fusion_net(small_arch(), 8);
  for (std::uint64_t i = 0; i < 100; ++i) {
    const Tensor r = random_float_tensor({3, 8, 8}, 2 * i), d = random_float_tensor({3, 8, 8}, 2 * i + 1);
    const auto p = predict(net, r, d);
    const auto ev = evaluate(net, r, d);
    EXPECT_EQ(p.label, argmax<float>(ev.scores.data()));
    EXPECT_EQ(p.scores, ev.scores);
  }
}

TEST(Model, ArgmaxTiesGoToLowestIndex) {
  const std::vector<float> v{0.2f, 0.4f, 0.4f};
  EXPECT_EQ(argmax<float>(v), 1u);
}

class NetGradient : public ::testing::TestWithParam<Variant> {};

TEST_P(NetGradient, ParametersAndInputsMatchFiniteDifferences) {
  const auto net = random_double_net(small_arch(GetParam()), 11);
  const auto rep = net_gradient_check(net, random_tensor({3, 8, 8}, 12), random_tensor({3, 8, 8}, 13), 1, 40, 20, 14);
  EXPECT_LT(rep.worst_param, 1e-4);
  EXPECT_LT(rep.worst_input, 1e-4);
}

TEST_P(NetGradient, LinearProjectionModeAlsoDifferentiates) {
  const auto net = random_double_net(small_arch(GetParam()), 21);
  const DTensor r = random_tensor({3, 8, 8}, 22), d = random_tensor({3, 8, 8}, 23);
  auto loss = [&](Tape<double>& t, const Var<double>& x) {
    auto bound = bind(t, net, false);
    return ops::cross_entropy(forward(net.arch, bound, x, t.constant(d), {ProjectionMode::linear}).logits, 0);
  };
  EXPECT_LT(gradient_error(loss, r), 1e-5);
}

INSTANTIATE_TEST_SUITE_P(Variants, NetGradient, ::testing::Values(Variant::rgbd, Variant::rgb, Variant::depth),
                         [](const ::testing::TestParamInfo<Variant>& info) { return to_string(info.param); });

TEST(Model, InputGradientsReachBothStreams) {
  const auto net = random_double_net(small_arch(), 31);
  Tape<double> tape;
  auto bound = bind(tape, net, false);
  auto r = tape.variable(random_tensor({3, 8, 8}, 32));
  auto d = tape.variable(random_tensor({3, 8, 8}, 33));
  tape.backward(ops::cross_entropy(forward(net.arch, bound, r, d).logits, 2));
  EXPECT_GT(max_abs<double>(tape.grad(r).data()), 0.0);
  EXPECT_GT(max_abs<double>(tape.grad(d).data()), 0.0);
}
