#ifndef FUSEGUARD_DATASET_HPP
#define FUSEGUARD_DATASET_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fuseguard/tensor.hpp"
#include "json.hpp"

namespace fuseguard {

enum class DepthNormalization {
  per_image,  // min-max over each depth map
  global,     // fixed scene depth bounds shared by all images
};

struct DatasetSpec {
  std::size_t num_classes = 5;
  std::size_t samples_per_class = 50;
  std::size_t image_size = 32;
  // Samples of instance (instances_per_class - 1) form the test split.
  std::size_t instances_per_class = 5;
  std::uint64_t seed = 0;
  DepthNormalization normalization = DepthNormalization::per_image;
  // Normalized depth spans [0, depth_gain] in pixel units before colorization.
  double depth_gain = 16.0;
  double depth_noise = 0.0;  // stddev of additive Gaussian sensor noise

  void validate() const;
  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
};

/// Names of the synthetic object classes, in label order.
std::vector<std::string> class_names(std::size_t num_classes);
constexpr std::size_t kMaxClasses = 6;

struct RgbdSample {
  std::size_t id = 0;
  std::size_t label = 0;
  std::size_t instance = 0;
  Tensor rgb;              // [3×H×W] in [0,1]
  Tensor depth_raw;        // [H×W], nonnegative
  Tensor depth_colorized;  // [3×H×W] in [0,1]
};

struct Dataset {
  std::vector<RgbdSample> samples;
  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

struct DatasetSplit {
  DatasetSpec spec;
  Dataset train;
  Dataset test;
};

DatasetSplit generate(const DatasetSpec& spec);

/// Surface-normal colorization: n = normalize(-dd/dx, -dd/dy, 1) from central
/// differences (one-sided at borders), channels (n + 1) / 2.
Tensor colorize_depth(const Tensor& depth_raw);

/// Depth rescaling applied before colorization.
Tensor normalize_depth(const Tensor& depth_raw, const DatasetSpec& spec);

/// Full depth pipeline used by the generator: normalize, then colorize.
Tensor depth_to_model_space(const Tensor& depth_raw, const DatasetSpec& spec);

struct ModelInput {
  Tensor rgb;
  Tensor depth;
};

struct ChannelMeans {
  std::array<float, 3> rgb{};
  std::array<float, 3> depth{};
};

/// Per-channel box of valid preprocessed values: [0 - mean, 1 - mean].
struct InputBounds {
  std::array<float, 3> rgb_lo{}, rgb_hi{}, depth_lo{}, depth_hi{};
};

enum class Modality { rgb, depth };

/// Mean-centering with per-channel statistics of the training split.
class Preprocessor {
 public:
  Preprocessor() = default;
  explicit Preprocessor(ChannelMeans means) : means_(means) {}

  static Preprocessor fit(const Dataset& train);

  bool fitted() const { return means_.has_value(); }
  const ChannelMeans& means() const;
  InputBounds bounds() const;

  ModelInput preprocess(const RgbdSample& sample) const;
  Tensor preprocess(const Tensor& image, Modality m) const;
  Tensor inverse_preprocess(const Tensor& x, Modality m) const;
  /// Image filled with the channel means of one modality.
  Tensor mean_image(Modality m, std::size_t size) const;

 private:
  std::optional<ChannelMeans> means_;
};

struct LabeledInput {
  std::size_t id = 0;
  std::size_t label = 0;
  ModelInput input;
};

std::vector<LabeledInput> preprocess_all(const Dataset& data, const Preprocessor& pre);

// On-disk layout: meta.json, {train,test}/labels.csv and one FGT1 tensor per
// sample per modality under {train,test}/{rgb,depth_raw,depth}/<id>.fgt.
void save_dataset(const std::filesystem::path& dir, const DatasetSplit& split, const Preprocessor& pre,
                  const nlohmann::json& run_config = nlohmann::json::object());

struct LoadedDataset {
  DatasetSplit split;
  Preprocessor preprocessor;
};

LoadedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace fuseguard

#endif  // FUSEGUARD_DATASET_HPP
