#ifndef FUSEGUARD_CKA_HPP
#define FUSEGUARD_CKA_HPP

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "fuseguard/dataset.hpp"
#include "fuseguard/model.hpp"

namespace fuseguard {

enum class Kernel { linear, rbf };

std::string to_string(Kernel k);
Kernel parse_kernel(std::string_view s);

using Matrix = Eigen::MatrixXd;

/// Median over all m(m−1)/2 pairwise row distances; for an even count the
/// lower of the two middle values.
double median_pairwise_distance(const Matrix& x);

/// linear: XXᵀ. rbf: exp(−‖xi−xj‖²/(2σ²)), σ = sigma_fraction · median distance.
Matrix gram(const Matrix& x, Kernel kernel, double sigma_fraction = 0.5);

/// tr(K H L H)/(n−1)² with H = I − 11ᵀ/n.
double hsic(const Matrix& k, const Matrix& l);

double cka_from_grams(const Matrix& k, const Matrix& l);
double cka(const Matrix& x, const Matrix& z, Kernel kernel, double sigma_fraction = 0.5);

struct SimilarityHeatmap {
  Matrix values;  // symmetric, unit diagonal
  Kernel kernel = Kernel::linear;
  std::size_t samples = 0;
  std::vector<std::string> layers;
};

/// Rows are samples, columns the flattened activation.
Matrix activation_matrix(const std::vector<Tensor>& per_sample);

SimilarityHeatmap heatmap(const std::vector<Matrix>& layers, const std::vector<std::string>& names, Kernel kernel,
                          double sigma_fraction = 0.5);

/// Pairwise CKA over the conv stage outputs of one stream.
SimilarityHeatmap stream_heatmap(const FusionNet<float>& net, Modality stream, const std::vector<LabeledInput>& samples,
                                 Kernel kernel, double sigma_fraction = 0.5);

/// Mean of the off-diagonal entries.
double redundancy_score(const SimilarityHeatmap& hm);

/// Off-diagonal upper-triangle entries, row-major.
std::vector<double> off_diagonal(const SimilarityHeatmap& hm);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

/// CSV with header layer_i,layer_j,cka; one row per cell.
void write_heatmap_csv(const std::filesystem::path& path, const SimilarityHeatmap& hm);

}  // namespace fuseguard

#endif  // FUSEGUARD_CKA_HPP
