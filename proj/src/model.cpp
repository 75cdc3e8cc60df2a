#include "fuseguard/model.hpp"

#include <stdexcept>

namespace fuseguard {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::rgbd: return "rgbd";
    case Variant::rgb: return "rgb";
    case Variant::depth: return "depth";
  }
  return "rgbd";
}

Variant parse_variant(std::string_view name) {
  if (name == "rgbd") return Variant::rgbd;
  if (name == "rgb") return Variant::rgb;
  if (name == "depth") return Variant::depth;
  throw std::invalid_argument("unknown variant '" + std::string(name) + "' (expected rgbd|rgb|depth)");
}

std::vector<Shape> Architecture::stage_shapes() const {
  std::vector<Shape> shapes;
  std::size_t side = image_size;
  for (std::size_t c : stage_channels) {
    side = (side + 2 - 3) / 2 + 1;
    shapes.push_back({c, side, side});
  }
  return shapes;
}

void Architecture::validate() const {
  if (stage_channels.empty()) throw std::invalid_argument("architecture needs at least one stage");
  if (classes < 2) throw std::invalid_argument("architecture needs at least two classes");
  if (image_size < 3 || in_channels == 0 || projection_channels == 0 || projection_dim == 0 || hidden == 0) {
    throw std::invalid_argument("architecture has a zero-sized dimension");
  }
  for (std::size_t c : stage_channels) {
    if (c == 0) throw std::invalid_argument("architecture has a zero-channel stage");
  }
}

nlohmann::json Architecture::to_json() const {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& s : stage_shapes()) shapes.push_back(s);
  return {{"M", stages()},
          {"p", projection_dim},
          {"a", hidden},
          {"c", classes},
          {"image_size", image_size},
          {"in_channels", in_channels},
          {"stage_channels", stage_channels},
          {"projection_channels", projection_channels},
          {"variant", to_string(variant)},
          {"stage_shapes", shapes}};
}

Architecture Architecture::from_json(const nlohmann::json& j) {
  Architecture a;
  a.image_size = j.at("image_size").get<std::size_t>();
  a.in_channels = j.at("in_channels").get<std::size_t>();
  a.stage_channels = j.at("stage_channels").get<std::vector<std::size_t>>();
  a.projection_channels = j.at("projection_channels").get<std::size_t>();
  a.projection_dim = j.at("p").get<std::size_t>();
  a.hidden = j.at("a").get<std::size_t>();
  a.classes = j.at("c").get<std::size_t>();
  a.variant = parse_variant(j.at("variant").get<std::string>());
  if (j.at("M").get<std::size_t>() != a.stages()) throw std::runtime_error("arch.json: M disagrees with stage_channels");
  a.validate();
  return a;
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(stddev * rng.normal());
  return t;
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

StreamParams<Tensor> init_stream(const Architecture& arch, Rng& rng) {
  StreamParams<Tensor> s;
  std::size_t cin = arch.in_channels;
  for (std::size_t cout : arch.stage_channels) {
    s.stages.push_back({normal_tensor({cout, cin, 3, 3}, std::sqrt(2.0 / (9.0 * cin)), rng), Tensor({cout})});
    const std::size_t q = arch.projection_channels;
    s.projections.push_back({normal_tensor({q, cout, 1, 1}, std::sqrt(2.0 / cout), rng), Tensor({q}),
                             normal_tensor({arch.projection_dim, q}, std::sqrt(2.0 / q), rng),
                             Tensor({arch.projection_dim})});
    cin = cout;
  }
  return s;
}

}  // namespace

FusionNet<float> init_fusion_net(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  FusionNet<float> net{arch, {}};
  Rng rgb_rng(derive_seed(seed, 1));
  Rng depth_rng(derive_seed(seed, 2));
  Rng gru_rng(derive_seed(seed, 3));
  if (arch.uses_rgb()) net.params.rgb = init_stream(arch, rgb_rng);
  if (arch.uses_depth()) net.params.depth = init_stream(arch, depth_rng);
  const std::size_t a = arch.hidden, d = arch.gru_input();
  const double bound = 1.0 / std::sqrt(static_cast<double>(a));
  auto& g = net.params.gru;
  g.w_z = uniform_tensor({a, d}, bound, gru_rng);
  g.u_z = uniform_tensor({a, a}, bound, gru_rng);
  g.b_z = Tensor({a});
  g.w_r = uniform_tensor({a, d}, bound, gru_rng);
  g.u_r = uniform_tensor({a, a}, bound, gru_rng);
  g.b_r = Tensor({a});
  g.w_h = uniform_tensor({a, d}, bound, gru_rng);
  g.u_h = uniform_tensor({a, a}, bound, gru_rng);
  g.b_h = Tensor({a});
  net.params.head.weight = uniform_tensor({arch.classes, a}, bound, gru_rng);
  net.params.head.bias = Tensor({arch.classes});
  return net;
}

Prediction predict(const FusionNet<float>& net, const Tensor& x_rgb, const Tensor& x_depth) {
  auto ev = evaluate(net, x_rgb, x_depth);
  return {ev.label, std::move(ev.scores)};
}

}  // namespace fuseguard
