#include <gtest/gtest.h>

#include <algorithm>

#include "fuseguard/detector.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace fuseguard;
using namespace fuseguard::testing;

namespace {

// Literal grid scan without skipping, for small grids.
double linear_scan(const std::vector<double>& scores, double r, double rho, std::uint64_t steps) {
  for (std::uint64_t i = 1; i <= steps; ++i) {
    const double beta = rho * static_cast<double>(i);
    if (exceedance_rate(scores, beta) <= r) return beta;
  }
  return -1.0;
}

DetectorState make_detector(std::vector<Tensor> centroids, double beta, double lambda = 30.0) {
  DetectorState d;
  d.centroids = std::move(centroids);
  d.beta = beta;
  d.lambda = lambda;
  return d;
}

std::vector<LabeledInput> random_inputs(std::size_t n, std::uint64_t seed) {
  std::vector<LabeledInput> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({i, i % 3,
                   {random_float_tensor({3, 8, 8}, derive_seed(seed, 2 * i)), random_float_tensor({3, 8, 8}, derive_seed(seed, 2 * i + 1))}});
  }
  return out;
}

}  // namespace

TEST(Threshold, DocumentedExamples) {
  const std::vector<double> tenths{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  EXPECT_NEAR(calibrate_threshold(tenths, 0.1, 1e-5), 0.9, 1e-5);
  EXPECT_DOUBLE_EQ(calibrate_threshold(tenths, 0.1, 1e-5), order_statistic_oracle(tenths, 0.1, 1e-5));
  EXPECT_DOUBLE_EQ(calibrate_threshold(tenths, 1.0, 1e-5), 1e-5);
  EXPECT_DOUBLE_EQ(calibrate_threshold(std::vector<double>(7, 0.0), 0.1, 1e-5), 1e-5);
}

TEST(Threshold, MatchesOrderStatisticOracleOnRandomSets) {
  Rng rng(2024);
  const double rhos[] = {1e-5, 1e-3, 0.01, 0.05};
  const double rates[] = {0.01, 0.05, 0.1, 0.2, 0.5, 1.0};
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    std::vector<double> s(n);
    const double scale = rng.uniform(0.01, 3.0);
    for (auto& v : s) v = rng.below(10) == 0 ? 0.0 : scale * rng.uniform();
    if (n > 3) s[1] = s[2];  // ties
    const double rho = rhos[rng.below(4)];
    const double r = rng.below(2) ? rates[rng.below(6)] : rng.uniform(0.001, 1.0);
    const double beta = calibrate_threshold(s, r, rho);
    ASSERT_DOUBLE_EQ(beta, order_statistic_oracle(s, r, rho)) << "trial " << trial;
    EXPECT_LE(exceedance_rate(s, beta), r);
    if (beta > rho) {
      EXPECT_GT(exceedance_rate(s, beta - rho), r) << "trial " << trial;
    }
  }
}

TEST(Threshold, SkippingAgreesWithLiteralScan) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(1 + rng.below(40));
    for (auto& v : s) v = rng.uniform(0.0, 2.0);
    const double r = rng.uniform(0.0, 0.6) + 0.01;
    EXPECT_DOUBLE_EQ(calibrate_threshold(s, r, 0.01, 1000), linear_scan(s, r, 0.01, 1000));
  }
}

TEST(Threshold, UnreachableTargetReportsGridLimitAndResidual) {
  const std::vector<double> s{5.0, 5.0, 1.0, 0.5};
  try {
    calibrate_threshold(s, 0.25, 1.0, 2);
    FAIL();
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2"), std::string::npos);
    EXPECT_NE(msg.find("0.5"), std::string::npos);  // residual FPR: two of four above 2
  }
  EXPECT_THROW(calibrate_threshold({}, 0.1, 1e-5), std::invalid_argument);
  EXPECT_THROW(calibrate_threshold(s, 0.0, 1e-5), std::invalid_argument);
  EXPECT_THROW(calibrate_threshold(s, 0.1, 0.0), std::invalid_argument);
}

TEST(Centroids, MatchHandSummedMeans) {
  std::vector<Tensor> f;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 9; ++i) {
    f.push_back(random_float_tensor({4}, i));
    labels.push_back(i % 3);
  }
  const auto c = compute_centroids(f, labels, 3);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 4; ++j) {
      const double want = (static_cast<double>(f[k][j]) + f[k + 3][j] + f[k + 6][j]) / 3.0;
      EXPECT_NEAR(c[k][j], want, 1e-6);
    }
  // Duplicating every sample leaves the means unchanged.
  auto f2 = f;
  auto l2 = labels;
  f2.insert(f2.end(), f.begin(), f.end());
  l2.insert(l2.end(), labels.begin(), labels.end());
  const auto c2 = compute_centroids(f2, l2, 3);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(c2[k][j], c[k][j], 1e-6);
}

TEST(Centroids, SingleSampleClassAndEmptyClass) {
  const std::vector<Tensor> f{random_float_tensor({3}, 1), random_float_tensor({3}, 2)};
  const auto c = compute_centroids(f, {0, 1}, 2);
  EXPECT_EQ(c[0], f[0]);
  try {
    compute_centroids(f, {0, 0}, 2);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos);
  }
}

TEST(Anomaly, DistanceToPredictedCentroid) {
  const std::vector<Tensor> cent{Tensor({2}, std::vector<float>{0, 0}), Tensor({2}, std::vector<float>{3, 4})};
  EXPECT_DOUBLE_EQ(anomaly_score(cent[1], 1, cent), 0.0);
  EXPECT_DOUBLE_EQ(anomaly_score(Tensor({2}, std::vector<float>{0, 0}), 1, cent), 5.0);
  EXPECT_THROW(anomaly_score(cent[0], 2, cent), std::invalid_argument);

  const auto net = init_fusion_net(small_arch(), 4);
  const auto data = random_inputs(12, 5);
  const DetectorState det = make_detector(compute_centroids(net, data), 1.0);
  for (const auto& s : data) {
    const auto ev = evaluate(net, s.input.rgb, s.input.depth);
    double acc = 0.0;
    for (std::size_t i = 0; i < ev.feature.size(); ++i) {
      const double d = static_cast<double>(ev.feature[i]) - det.centroids[ev.label][i];
      acc += d * d;
    }
    EXPECT_NEAR(anomaly_score(net, det, s.input.rgb, s.input.depth), std::sqrt(acc), 1e-6);
  }
}

TEST(Anomaly, InvariantToConsistentClassRelabeling) {
  auto net = init_fusion_net(small_arch(), 6);
  const auto data = random_inputs(9, 7);
  const auto cent = compute_centroids(net, data);
  const std::size_t perm[] = {2, 0, 1};  // new index of old class k
  auto permuted = net;
  const std::size_t a = net.arch.hidden;
  std::vector<Tensor> pcent(3);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t j = 0; j < a; ++j) permuted.params.head.weight[perm[k] * a + j] = net.params.head.weight[k * a + j];
    permuted.params.head.bias[perm[k]] = net.params.head.bias[k];
    pcent[perm[k]] = cent[k];
  }
  const auto d1 = make_detector(cent, 1.0), d2 = make_detector(pcent, 1.0);
  for (const auto& s : data) {
    EXPECT_NEAR(anomaly_score(net, d1, s.input.rgb, s.input.depth), anomaly_score(permuted, d2, s.input.rgb, s.input.depth), 1e-6);
  }
}

TEST(Defend, HardMode) {
  const auto det = make_detector({Tensor({2}), Tensor({2}), Tensor({2})}, 0.5);
  const Tensor s({3}, std::vector<float>{0.2f, 0.5f, 0.3f});
  const auto rej = defend(s, 0.51, det, RejectMode::hard);
  EXPECT_EQ(rej.scores, Tensor({4}, std::vector<float>{0, 0, 0, 1}));
  EXPECT_EQ(rej.label, 3u);
  EXPECT_TRUE(rej.rejected);
  const auto acc = defend(s, 0.5, det, RejectMode::hard);
  EXPECT_EQ(acc.label, 1u);
  EXPECT_FALSE(acc.rejected);
  EXPECT_FLOAT_EQ(acc.scores[3], 0.0f);
}

TEST(Defend, SoftModeAtThresholdHalvesScores) {
  const auto det = make_detector({Tensor({2}), Tensor({2}), Tensor({2})}, 0.5);
  const Tensor s({3}, std::vector<float>{0.2f, 0.5f, 0.3f});
  const auto d = defend(s, 0.5, det, RejectMode::soft);
  EXPECT_FLOAT_EQ(d.scores[3], 0.5f);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_FLOAT_EQ(d.scores[i], 0.5f * s[i]);
  EXPECT_DOUBLE_EQ(soft_reject_score(0.5, 0.5, 30), 0.5);
}

TEST(Defend, ScoresFormADistributionAndModesAgreeWhenSaturated) {
  const auto det = make_detector({Tensor({2}), Tensor({2}), Tensor({2})}, 0.4, 30.0);
  Rng rng(9);
  for (int t = 0; t < 500; ++t) {
    Tensor s({3});
    double total = 0.0;
    for (auto& v : s.data()) total += v = static_cast<float>(rng.uniform(0.01, 1.0));
    for (auto& v : s.data()) v = static_cast<float>(v / total);
    const double e = rng.uniform(0.0, 1.0);
    for (RejectMode m : {RejectMode::hard, RejectMode::soft}) {
      const auto d = defend(s, e, det, m);
      double sum = 0.0;
      for (float v : d.scores.data()) {
        EXPECT_GE(v, 0.0f);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
    if (std::abs(e - det.beta) > 10.0 / det.lambda) {
      EXPECT_EQ(defend(s, e, det, RejectMode::hard).label, defend(s, e, det, RejectMode::soft).label);
    }
  }
}

TEST(Defend, RequiresCalibration) {
  DetectorState d;
  EXPECT_FALSE(d.calibrated());
  EXPECT_THROW(defend(Tensor({3}), 0.0, d, RejectMode::hard), std::logic_error);
}

TEST(Calibrate, AchievedFprWithinTargetAndStateRoundTrips) {
  const auto net = init_fusion_net(small_arch(), 11);
  const auto data = random_inputs(60, 12);
  CalibrationOptions opts;
  opts.fpr = 0.1;
  const auto det = calibrate(net, data, data, opts);
  EXPECT_TRUE(det.calibrated());
  EXPECT_EQ(det.reject_label(), 3u);
  EXPECT_LE(det.achieved_fpr, 0.1);
  EXPECT_EQ(det.calibration_samples, 60u);

  const auto path = temp_dir("detector") / "det.json";
  save_detector(path, det, {{"seed", 3}});
  const auto back = load_detector(path);
  EXPECT_EQ(back.beta, det.beta);
  EXPECT_EQ(back.achieved_fpr, det.achieved_fpr);
  ASSERT_EQ(back.centroids.size(), det.centroids.size());
  for (std::size_t k = 0; k < det.centroids.size(); ++k) EXPECT_EQ(back.centroids[k], det.centroids[k]);
  EXPECT_THROW(load_detector(path.parent_path() / "missing.json"), std::runtime_error);
}
