#include "fuseguard/train.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace fuseguard {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "rmsprop"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "rmsprop") return OptimizerKind::rmsprop;
  if (name == "sgd") return OptimizerKind::sgd;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "' (expected rmsprop|sgd)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (alpha < 0.0 || alpha >= 1.0) throw std::invalid_argument("alpha must be in [0, 1)");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be nonnegative");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"optimizer", to_string(optimizer)}, {"learning_rate", learning_rate}, {"alpha", alpha},
          {"momentum", momentum},             {"epsilon", epsilon},             {"weight_decay", weight_decay},
          {"batch_size", batch_size},         {"epochs", epochs},               {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  c.learning_rate = j.at("learning_rate").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

namespace {

// Cross-entropy of one sample; adds its parameter gradients into `grads`.
double accumulate_gradient(const FusionNet<float>& net, const LabeledInput& s, std::vector<Tensor>& grads) {
  Tape<float> tape;
  auto bound = bind(tape, net, true);
  auto rec = forward(net.arch, bound, tape.constant(s.input.rgb), tape.constant(s.input.depth));
  auto loss = ops::cross_entropy(rec.logits, s.label);
  tape.backward(loss);
  std::size_t i = 0;
  for_each_param(bound, [&](const std::string&, const Var<float>& v) {
    const auto& g = tape.grad(v);
    auto& acc = grads[i++];
    for (std::size_t k = 0; k < g.size(); ++k) acc[k] += g[k];
  });
  return loss.value().item();
}

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const FusionNet<float>& net) : cfg_(cfg) {
    for_each_param(net.params, [&](const std::string&, const Tensor& t) {
      square_avg_.emplace_back(t.shape());
      momentum_.emplace_back(t.shape());
    });
  }

  void step(FusionNet<float>& net, const std::vector<Tensor>& grads, float scale) {
    std::size_t i = 0;
    const float lr = static_cast<float>(cfg_.learning_rate);
    const float wd = static_cast<float>(cfg_.weight_decay);
    const float mu = static_cast<float>(cfg_.momentum);
    const float alpha = static_cast<float>(cfg_.alpha);
    const float eps = static_cast<float>(cfg_.epsilon);
    for_each_param(net.params, [&](const std::string&, Tensor& w) {
      const auto& g = grads[i];
      auto& v = square_avg_[i];
      auto& buf = momentum_[i];
      ++i;
      for (std::size_t k = 0; k < w.size(); ++k) {
        const float gk = g[k] * scale + wd * w[k];
        if (cfg_.optimizer == OptimizerKind::rmsprop) {
          v[k] = alpha * v[k] + (1.0f - alpha) * gk * gk;
          buf[k] = mu * buf[k] + gk / (std::sqrt(v[k]) + eps);
        } else {
          buf[k] = mu * buf[k] + gk;
        }
        w[k] -= lr * buf[k];
      }
    });
  }

 private:
  TrainConfig cfg_;
  std::vector<Tensor> square_avg_;
  std::vector<Tensor> momentum_;
};

std::vector<Tensor> zero_grads(const FusionNet<float>& net) {
  std::vector<Tensor> g;
  for_each_param(net.params, [&](const std::string&, const Tensor& t) { g.emplace_back(t.shape()); });
  return g;
}

}  // namespace

double mean_loss(const FusionNet<float>& net, const std::vector<LabeledInput>& data) {
  if (data.empty()) throw std::invalid_argument("mean_loss on an empty set");
  double total = 0.0;
  for (const auto& s : data) {
    Tape<float> tape;
    auto bound = bind(tape, net, false);
    auto rec = forward(net.arch, bound, tape.constant(s.input.rgb), tape.constant(s.input.depth));
    total += ops::cross_entropy(rec.logits, s.label).value().item();
  }
  return total / static_cast<double>(data.size());
}

double accuracy(const FusionNet<float>& net, const std::vector<LabeledInput>& data) {
  if (data.empty()) throw std::invalid_argument("accuracy on an empty set");
  std::size_t correct = 0;
  for (const auto& s : data) correct += predict(net, s.input.rgb, s.input.depth).label == s.label;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train(FusionNet<float> net, const std::vector<LabeledInput>& data, const TrainConfig& cfg,
                  const BatchTransform& transform) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("cannot train on an empty dataset");
  TrainResult result;
  result.initial_loss = mean_loss(net, data);
  Optimizer opt(cfg, net);
  std::vector<std::size_t> order(data.size());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double epoch_total = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
      std::vector<LabeledInput> batch;
      for (std::size_t k = start; k < std::min(start + cfg.batch_size, order.size()); ++k) batch.push_back(data[order[k]]);
      if (transform) batch = transform(net, batch, epoch, b);
      if (batch.empty()) continue;

      auto grads = zero_grads(net);
      double batch_total = 0.0;
      for (const auto& s : batch) batch_total += accumulate_gradient(net, s, grads);
      if (!std::isfinite(batch_total)) {
        throw std::runtime_error("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(b) + "; lower the learning rate");
      }
      opt.step(net, grads, 1.0f / static_cast<float>(batch.size()));
      epoch_total += batch_total;
      epoch_count += batch.size();
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(epoch_count));
  }
  result.final_train_accuracy = accuracy(net, data);
  result.net = std::move(net);
  return result;
}

void save_checkpoint(const std::filesystem::path& dir, const FusionNet<float>& net, const nlohmann::json& metadata) {
  std::filesystem::create_directories(dir);
  nlohmann::json params = nlohmann::json::array();
  for_each_param(net.params, [&](const std::string& name, const Tensor& t) {
    save_tensor(dir / (name + ".fgt"), t);
    params.push_back(name);
  });
  nlohmann::json j = net.arch.to_json();
  j["parameters"] = params;
  j["metadata"] = metadata;
  std::ofstream os(dir / "arch.json");
  if (!os) throw std::runtime_error("cannot write " + (dir / "arch.json").string());
  os << j.dump(2) << '\n';
}

namespace {

nlohmann::json read_arch_json(const std::filesystem::path& dir) {
  const auto path = dir / "arch.json";
  std::ifstream is(path);
  if (!is) throw std::runtime_error("checkpoint " + dir.string() + " has no arch.json (looked for " + path.string() + ")");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace

FusionNet<float> load_checkpoint(const std::filesystem::path& dir) {
  const auto j = read_arch_json(dir);
  FusionNet<float> net = init_fusion_net(Architecture::from_json(j), 0);
  for_each_param(net.params, [&](const std::string& name, Tensor& t) {
    Tensor loaded = load_tensor(dir / (name + ".fgt"));
    if (loaded.shape() != t.shape()) {
      throw std::runtime_error((dir / (name + ".fgt")).string() + ": shape " + shape_string(loaded.shape()) +
                               " does not match architecture " + shape_string(t.shape()));
    }
    t = std::move(loaded);
  });
  return net;
}

nlohmann::json load_checkpoint_metadata(const std::filesystem::path& dir) {
  const auto j = read_arch_json(dir);
  return j.contains("metadata") ? j.at("metadata") : nlohmann::json::object();
}

}  // namespace fuseguard
