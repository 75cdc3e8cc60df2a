#ifndef FUSEGUARD_TRAIN_HPP
#define FUSEGUARD_TRAIN_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fuseguard/dataset.hpp"
#include "fuseguard/model.hpp"
#include "json.hpp"

namespace fuseguard {

enum class OptimizerKind { rmsprop, sgd };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::rmsprop;
  double learning_rate = 1e-3;
  double alpha = 0.9;     // RMSprop squared-gradient decay
  double momentum = 0.9;  // RMSprop momentum, or SGD momentum
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainResult {
  FusionNet<float> net;
  double initial_loss = 0.0;        // mean cross-entropy over the set before any update
  std::vector<double> epoch_loss;   // mean minibatch loss seen during each epoch
  double final_train_accuracy = 0.0;
};

// Rewrites a minibatch before the gradient step (adversarial training plugs in
// here). Receives the weights the batch will be trained against.
using BatchTransform = std::function<std::vector<LabeledInput>(
    const FusionNet<float>& net, const std::vector<LabeledInput>& batch, std::size_t epoch, std::size_t batch_index)>;

TrainResult train(FusionNet<float> net, const std::vector<LabeledInput>& data, const TrainConfig& cfg,
                  const BatchTransform& transform = {});

/// Mean cross-entropy of the net over a set.
double mean_loss(const FusionNet<float>& net, const std::vector<LabeledInput>& data);
double accuracy(const FusionNet<float>& net, const std::vector<LabeledInput>& data);

// Checkpoint: directory with one FGT1 tensor per named parameter plus
// arch.json (architecture, stage shapes, and whatever metadata is passed in).
void save_checkpoint(const std::filesystem::path& dir, const FusionNet<float>& net,
                     const nlohmann::json& metadata = nlohmann::json::object());
FusionNet<float> load_checkpoint(const std::filesystem::path& dir);
nlohmann::json load_checkpoint_metadata(const std::filesystem::path& dir);

}  // namespace fuseguard

#endif  // FUSEGUARD_TRAIN_HPP
