#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "fuseguard/ops.hpp"
#include "fuseguard/tensor.hpp"
#include "support.hpp"

using namespace fuseguard;
using namespace fuseguard::testing;

namespace {

// Direct loop cross-correlation used as the conv oracle.
DTensor naive_conv(const DTensor& x, const DTensor& k, std::size_t stride, std::size_t pad) {
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = k.dim(0), ks = k.dim(2);
  const std::size_t ho = (h + 2 * pad - ks) / stride + 1, wo = (w + 2 * pad - ks) / stride + 1;
  DTensor out({cout, ho, wo});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t u = 0; u < ks; ++u)
            for (std::size_t v = 0; v < ks; ++v) {
              const long y = static_cast<long>(i * stride + u) - static_cast<long>(pad);
              const long xx = static_cast<long>(j * stride + v) - static_cast<long>(pad);
              if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
              acc += x.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)) *
                     k[((o * cin + c) * ks + u) * ks + v];
            }
        out.at(o, i, j) = acc;
      }
  return out;
}

}  // namespace

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  Tensor t({2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_THROW(t.item(), ShapeError);
  EXPECT_THROW(t.reshaped({4}), ShapeError);
  EXPECT_EQ(t.reshaped({3, 2}).shape(), (Shape{3, 2}));
}

TEST(Tensor, Fgt1RoundTripIsExact) {
  Tensor t = random_float_tensor({3, 4, 5}, 1);
  t[7] = -0.0f;
  t[8] = 1e-38f;
  std::stringstream ss;
  write_fgt1(ss, t);
  const Tensor back = read_fgt1(ss);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(std::memcmp(back.data().data(), t.data().data(), t.size() * sizeof(float)), 0);
}

TEST(Tensor, Fgt1RejectsGarbage) {
  std::stringstream ss("NOPE and more bytes");
  EXPECT_THROW(read_fgt1(ss), std::runtime_error);
  std::stringstream truncated;
  write_fgt1(truncated, random_float_tensor({4, 4}, 2));
  std::string bytes = truncated.str();
  bytes.resize(bytes.size() - 3);
  std::stringstream cut(bytes);
  EXPECT_THROW(read_fgt1(cut), std::runtime_error);
}

TEST(Tensor, MissingFileNamesThePath) {
  try {
    load_tensor("/nonexistent/dir/w.fgt");
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/w.fgt"), std::string::npos);
  }
}

TEST(Ops, BroadcastOnlyEqualShapesOrSingleElement) {
  Tape<double> tape;
  auto a = tape.constant(random_tensor({2, 3}, 1));
  auto b = tape.constant(random_tensor({3}, 2));
  auto s = tape.constant(DTensor::scalar(2.0));
  EXPECT_THROW(ops::add(a, b), ShapeError);
  const auto r = ops::mul(a, s).value();
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_DOUBLE_EQ(r[i], 2.0 * a.value()[i]);
  EXPECT_EQ(ops::add(s, a).shape(), (Shape{2, 3}));
}

TEST(Ops, ConvMatchesNaiveLoops) {
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u}) {
      const DTensor x = random_tensor({3, 7, 6}, 10 + stride + pad);
      const DTensor k = random_tensor({4, 3, 3, 3}, 20 + stride + pad);
      Tape<double> tape;
      const auto y = ops::conv2d(tape.constant(x), tape.constant(k), stride, pad).value();
      const DTensor ref = naive_conv(x, k, stride, pad);
      ASSERT_EQ(y.shape(), ref.shape());
      for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
    }
  }
}

TEST(Ops, SoftmaxAndCrossEntropyAgree) {
  Tape<double> tape;
  const DTensor z({4}, std::vector<double>{1000.0, 999.0, -3.0, 0.5});
  auto zv = tape.constant(z);
  const auto p = ops::softmax(zv).value();
  double total = 0.0;
  for (double v : p.data()) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(ops::cross_entropy(zv, 1).value().item(), -std::log(p[1]), 1e-10);
  EXPECT_THROW(ops::cross_entropy(zv, 4), ShapeError);
}

TEST(Ops, L2NormHasZeroSubgradientAtOrigin) {
  Tape<double> tape;
  auto x = tape.variable(DTensor({3}));
  auto n = ops::l2_norm(x);
  tape.backward(n);
  for (double g : tape.grad(x).data()) EXPECT_EQ(g, 0.0);
}

TEST(Tape, MisuseIsReported) {
  Tape<double> tape, other;
  auto a = tape.variable(random_tensor({3}, 1));
  auto b = other.variable(random_tensor({3}, 2));
  EXPECT_THROW(ops::add(a, b), std::logic_error);
  EXPECT_THROW(tape.backward(a), ShapeError);
  auto s = ops::sum(a);
  EXPECT_THROW(tape.grad(a), std::logic_error);
  tape.backward(s);
  EXPECT_THROW(tape.backward(s), std::logic_error);
  EXPECT_THROW(tape.variable(DTensor({1})), std::logic_error);
}

TEST(Tape, GradientsAccumulateOverReuse) {
  Tape<double> tape;
  auto x = tape.variable(DTensor({2}, std::vector<double>{1.5, -2.0}));
  auto y = ops::sum(ops::mul(x, x) + x);  // d/dx = 2x + 1
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 4.0);
  EXPECT_DOUBLE_EQ(tape.grad(x)[1], -3.0);
}

// Central-difference checks for every primitive, in double precision.
struct OpCase {
  const char* name;
  Shape shape;
  ScalarFn fn;
  double lo = -1.0, hi = 1.0;
};

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const auto& c = GetParam();
  const DTensor x = random_tensor(c.shape, 1234, c.lo, c.hi);
  EXPECT_LT(gradient_error(c.fn, x), 1e-6) << c.name;
}

namespace {

Var<double> k(Tape<double>& t, Shape s, std::uint64_t seed) { return t.constant(random_tensor(std::move(s), seed)); }

const OpCase kCases[] = {
    {"add", {5}, [](Tape<double>& t, const Var<double>& x) { return probe(t, x + k(t, {5}, 1)); }},
    {"sub_rhs", {5}, [](Tape<double>& t, const Var<double>& x) { return probe(t, k(t, {5}, 1) - x); }},
    {"mul", {5}, [](Tape<double>& t, const Var<double>& x) { return probe(t, x * k(t, {5}, 1)); }},
    {"div_denominator", {5}, [](Tape<double>& t, const Var<double>& x) { return probe(t, k(t, {5}, 1) / x); }, 0.5, 2.0},
    {"div_numerator", {5}, [](Tape<double>& t, const Var<double>& x) { return probe(t, x / t.constant(DTensor::scalar(1.7))); }},
    {"scalar_broadcast", {1}, [](Tape<double>& t, const Var<double>& x) { return probe(t, k(t, {4}, 1) * x); }},
    {"add_scalar", {4}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::add(x, 0.3)); }},
    {"rsub", {4}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::rsub(1.0, x)); }},
    {"neg", {4}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::neg(x)); }},
    {"exp", {4}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::exp(x)); }},
    {"log", {4}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::log(x)); }, 0.2, 3.0},
    {"tanh", {4}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::tanh(x)); }},
    {"sigmoid", {4}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::sigmoid(x)); }, -6.0, 6.0},
    {"square", {4}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::square(x)); }},
    {"relu", {6}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::relu(ops::add(x, 0.01))); }},
    {"clamp", {6}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::clamp(x, -0.52, 0.47)); }},
    {"mean", {3, 2}, [](Tape<double>&, const Var<double>& x) { return ops::square(ops::mean(x)); }},
    {"reshape", {2, 3}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::reshape(x, {3, 2})); }},
    {"concat", {3}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::concat(x, ops::exp(x))); }},
    {"element", {4}, [](Tape<double>&, const Var<double>& x) { return ops::square(ops::element(x, 2)); }},
    {"matmul_left", {2, 3}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::matmul(x, k(t, {3, 4}, 1))); }},
    {"matmul_right", {3, 4}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::matmul(k(t, {2, 3}, 1), x)); }},
    {"matvec_matrix", {3, 4}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::matvec(x, k(t, {4}, 1))); }},
    {"matvec_vector", {4}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::matvec(k(t, {3, 4}, 1), x)); }},
    {"conv_input", {2, 6, 5}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::conv2d(x, k(t, {3, 2, 3, 3}, 1), 2, 1)); }},
    {"conv_kernel", {3, 2, 3, 3}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::conv2d(k(t, {2, 6, 5}, 1), x, 2, 1)); }},
    {"conv_1x1", {2, 4, 4}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::conv2d(x, k(t, {3, 2, 1, 1}, 1), 1, 0)); }},
    {"bias_add_input", {2, 3, 3}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::bias_add(x, k(t, {2}, 1))); }},
    {"bias_add_bias", {2}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::bias_add(k(t, {2, 3, 3}, 1), x)); }},
    {"global_avg_pool", {3, 4, 2}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::global_avg_pool(x)); }},
    {"softmax", {5}, [](Tape<double>& t, const Var<double>& x) { return probe(t, ops::softmax(x)); }, -3.0, 3.0},
    {"cross_entropy", {5}, [](Tape<double>&, const Var<double>& x) { return ops::cross_entropy(x, 3); }, -3.0, 3.0},
    {"l2_norm", {5}, [](Tape<double>&, const Var<double>& x) { return ops::l2_norm(x); }},
};

}  // namespace

INSTANTIATE_TEST_SUITE_P(AllPrimitives, OpGradient, ::testing::ValuesIn(kCases),
                         [](const ::testing::TestParamInfo<OpCase>& info) { return std::string(info.param.name); });
