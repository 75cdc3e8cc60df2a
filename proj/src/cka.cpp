#include "fuseguard/cka.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace fuseguard {

std::string to_string(Kernel k) { return k == Kernel::linear ? "linear" : "rbf"; }

Kernel parse_kernel(std::string_view s) {
  if (s == "linear") return Kernel::linear;
  if (s == "rbf") return Kernel::rbf;
  throw std::invalid_argument("unknown kernel '" + std::string(s) + "' (expected linear|rbf)");
}

namespace {

void check_activations(const Matrix& x) {
  if (x.rows() < 4) throw std::invalid_argument("CKA needs at least 4 samples, got " + std::to_string(x.rows()));
  if (x.cols() < 1) throw std::invalid_argument("CKA needs at least one feature");
  if (!x.allFinite()) throw std::invalid_argument("activation matrix has non-finite entries");
}

}  // namespace

double median_pairwise_distance(const Matrix& x) {
  const Eigen::Index m = x.rows();
  if (m < 2) throw std::invalid_argument("median distance needs at least two rows");
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(m * (m - 1) / 2));
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) d.push_back((x.row(i) - x.row(j)).norm());
  }
  const std::size_t mid = (d.size() - 1) / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  return d[mid];
}

Matrix gram(const Matrix& x, Kernel kernel, double sigma_fraction) {
  if (kernel == Kernel::linear) return x * x.transpose();
  if (!(sigma_fraction > 0.0)) throw std::invalid_argument("rbf kernel needs a positive sigma fraction");
  const double median = median_pairwise_distance(x);
  if (!(median > 0.0)) {
    throw std::invalid_argument("rbf kernel: median pairwise distance is zero (rows are mostly identical)");
  }
  const double sigma = sigma_fraction * median;
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Matrix d2 = (sq.replicate(1, x.rows()) + sq.transpose().replicate(x.rows(), 1)) - 2.0 * x * x.transpose();
  Matrix k = (-d2.cwiseMax(0.0) / (2.0 * sigma * sigma)).array().exp().matrix();
  k.diagonal().setOnes();
  return k;
}

double hsic(const Matrix& k, const Matrix& l) {
  if (k.rows() != k.cols() || l.rows() != l.cols() || k.rows() != l.rows()) {
    throw std::invalid_argument("hsic: kernel matrices must be square and equal in size (" + std::to_string(k.rows()) +
                                "x" + std::to_string(k.cols()) + " vs " + std::to_string(l.rows()) + "x" +
                                std::to_string(l.cols()) + ")");
  }
  const Eigen::Index n = k.rows();
  if (n < 2) throw std::invalid_argument("hsic needs n >= 2");
  // K H is K with column means removed; H L H likewise on both sides.
  const Matrix kc = k.rowwise() - k.colwise().mean();
  const Matrix lc = l.rowwise() - l.colwise().mean();
  const double nm1 = static_cast<double>(n - 1);
  return (kc.cwiseProduct(lc.transpose())).sum() / (nm1 * nm1);
}

double cka_from_grams(const Matrix& k, const Matrix& l) {
  const double kl = hsic(k, l);
  const double kk = hsic(k, k);
  const double ll = hsic(l, l);
  if (!(kk > 0.0) || !(ll > 0.0)) throw std::invalid_argument("cka: zero self-HSIC (constant activations)");
  return kl / std::sqrt(kk * ll);
}

double cka(const Matrix& x, const Matrix& z, Kernel kernel, double sigma_fraction) {
  check_activations(x);
  check_activations(z);
  if (x.rows() != z.rows()) throw std::invalid_argument("cka: sample counts differ");
  return cka_from_grams(gram(x, kernel, sigma_fraction), gram(z, kernel, sigma_fraction));
}

Matrix activation_matrix(const std::vector<Tensor>& per_sample) {
  if (per_sample.empty()) throw std::invalid_argument("activation_matrix: no samples");
  const std::size_t p = per_sample.front().size();
  Matrix x(static_cast<Eigen::Index>(per_sample.size()), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < per_sample.size(); ++i) {
    if (per_sample[i].size() != p) throw ShapeError("activation_matrix: samples differ in size");
    for (std::size_t j = 0; j < p; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = per_sample[i][j];
  }
  return x;
}

SimilarityHeatmap heatmap(const std::vector<Matrix>& layers, const std::vector<std::string>& names, Kernel kernel,
                          double sigma_fraction) {
  if (layers.empty()) throw std::invalid_argument("heatmap: no layers");
  if (names.size() != layers.size()) throw std::invalid_argument("heatmap: one name per layer required");
  std::vector<Matrix> grams;
  std::vector<double> self;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    try {
      check_activations(layers[i]);
      grams.push_back(gram(layers[i], kernel, sigma_fraction));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("layer " + names[i] + ": " + e.what());
    }
    self.push_back(hsic(grams.back(), grams.back()));
    if (!(self.back() > 0.0)) throw std::invalid_argument("layer " + names[i] + ": constant activations");
  }
  const auto n = static_cast<Eigen::Index>(layers.size());
  SimilarityHeatmap hm;
  hm.values = Matrix::Identity(n, n);
  hm.kernel = kernel;
  hm.samples = static_cast<std::size_t>(layers.front().rows());
  hm.layers = names;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = hsic(grams[i], grams[j]) / std::sqrt(self[i] * self[j]);
      hm.values(i, j) = v;
      hm.values(j, i) = v;
    }
  }
  return hm;
}

SimilarityHeatmap stream_heatmap(const FusionNet<float>& net, Modality stream, const std::vector<LabeledInput>& samples,
                                 Kernel kernel, double sigma_fraction) {
  if (stream == Modality::rgb && !net.arch.uses_rgb()) throw std::invalid_argument("network has no rgb stream");
  if (stream == Modality::depth && !net.arch.uses_depth()) throw std::invalid_argument("network has no depth stream");
  const std::size_t m = net.arch.stages();
  std::vector<std::vector<Tensor>> acts(m);
  for (const auto& s : samples) {
    auto ev = evaluate(net, s.input.rgb, s.input.depth);
    auto& stages = stream == Modality::rgb ? ev.rgb_stages : ev.depth_stages;
    for (std::size_t i = 0; i < m; ++i) acts[i].push_back(std::move(stages[i]));
  }
  std::vector<Matrix> layers;
  std::vector<std::string> names;
  const std::string prefix = stream == Modality::rgb ? "rgb.stage" : "depth.stage";
  for (std::size_t i = 0; i < m; ++i) {
    layers.push_back(activation_matrix(acts[i]));
    names.push_back(prefix + std::to_string(i));
  }
  return heatmap(layers, names, kernel, sigma_fraction);
}

std::vector<double> off_diagonal(const SimilarityHeatmap& hm) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < hm.values.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < hm.values.cols(); ++j) out.push_back(hm.values(i, j));
  }
  return out;
}

double redundancy_score(const SimilarityHeatmap& hm) {
  if (hm.values.rows() < 2) throw std::invalid_argument("redundancy_score: heatmap has no off-diagonal entries");
  const auto v = off_diagonal(hm);
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: need two equal-length series of length >= 2");
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw std::invalid_argument("pearson: constant series");
  return sab / std::sqrt(saa * sbb);
}

void write_heatmap_csv(const std::filesystem::path& path, const SimilarityHeatmap& hm) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write heatmap to " + path.string());
  os << "layer_i,layer_j,cka\n";
  char buf[64];
  for (Eigen::Index i = 0; i < hm.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < hm.values.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", hm.values(i, j));
      os << hm.layers[static_cast<std::size_t>(i)] << ',' << hm.layers[static_cast<std::size_t>(j)] << ',' << buf << '\n';
    }
  }
}

}  // namespace fuseguard
