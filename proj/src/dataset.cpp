#include "fuseguard/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fuseguard/random.hpp"

namespace fuseguard {

namespace {

enum class ShapeFamily { sphere, box, pyramid, ring, cylinder };

struct ClassInfo {
  const char* name;
  ShapeFamily family;
  std::array<double, 3> color;
};

constexpr std::array<double, 3> kRed{0.85, 0.20, 0.15};
constexpr std::array<double, 3> kOrange{0.95, 0.55, 0.10};
constexpr std::array<double, 3> kBlue{0.20, 0.35, 0.85};
constexpr std::array<double, 3> kGreen{0.20, 0.70, 0.30};
constexpr std::array<double, 3> kYellow{0.90, 0.85, 0.20};

// Two classes share a shape and two share a color, so neither modality alone
// carries every distinction.
constexpr std::array<ClassInfo, kMaxClasses> kClasses{{
    {"ball", ShapeFamily::sphere, kRed},
    {"orange", ShapeFamily::sphere, kOrange},
    {"box", ShapeFamily::box, kBlue},
    {"pyramid", ShapeFamily::pyramid, kGreen},
    {"ring", ShapeFamily::ring, kRed},
    {"can", ShapeFamily::cylinder, kYellow},
}};

constexpr double kSceneDepthRange = 25.0;

struct InstanceStyle {
  double size;
  double aspect;
  std::array<double, 3> color;
  double stripe_frequency;
  double stripe_amplitude;
};

InstanceStyle instance_style(const DatasetSpec& spec, std::size_t label, std::size_t instance) {
  Rng rng(derive_seed(spec.seed ^ 0x51a7e5ULL, label * spec.instances_per_class + instance));
  InstanceStyle s{};
  s.size = rng.uniform(8.0, 9.5) * static_cast<double>(spec.image_size) / 32.0;
  s.aspect = rng.uniform(0.9, 1.1);
  for (std::size_t c = 0; c < 3; ++c) {
    s.color[c] = std::clamp(kClasses[label].color[c] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
  }
  s.stripe_frequency = rng.uniform(0.2, 0.3);
  s.stripe_amplitude = rng.uniform(0.15, 0.2);
  return s;
}

// Height above the background plane at offset (u, v) from the object center,
// in the object's rotated frame. Zero outside the footprint.
double height(ShapeFamily family, double u, double v, double size, double aspect) {
  const double r = std::hypot(u, v);
  switch (family) {
    case ShapeFamily::sphere:
      return r < size ? std::sqrt(size * size - r * r) : 0.0;
    case ShapeFamily::box: {
      const double hx = 0.8 * size * aspect, hy = 0.8 * size / aspect;
      return (std::abs(u) <= hx && std::abs(v) <= hy) ? 0.8 * size : 0.0;
    }
    case ShapeFamily::pyramid: {
      const double m = std::max(std::abs(u) / aspect, std::abs(v) * aspect);
      return m < size ? size - m : 0.0;
    }
    case ShapeFamily::ring: {
      const double major = 0.68 * size, minor = 0.32 * size;
      const double d = r - major;
      return std::abs(d) < minor ? std::sqrt(minor * minor - d * d) : 0.0;
    }
    case ShapeFamily::cylinder:
      return r < 0.8 * size ? size : 0.0;
  }
  return 0.0;
}

RgbdSample render(const DatasetSpec& spec, std::size_t label, std::size_t index) {
  const std::size_t n = spec.image_size;
  const std::size_t instance = index % spec.instances_per_class;
  const InstanceStyle style = instance_style(spec, label, instance);
  Rng rng(derive_seed(spec.seed, label * spec.samples_per_class + index));

  const double half = static_cast<double>(n) / 2.0;
  const double cx = half + rng.uniform(-3.0, 3.0) * n / 32.0;
  const double cy = half + rng.uniform(-3.0, 3.0) * n / 32.0;
  // Per-sample jitter on top of the instance style.
  const double size = style.size * rng.uniform(0.85, 1.15);
  const double aspect = style.aspect * rng.uniform(0.9, 1.1);
  const double frequency = style.stripe_frequency * rng.uniform(0.8, 1.2);
  std::array<double, 3> object_color{};
  for (std::size_t c = 0; c < 3; ++c) object_color[c] = std::clamp(style.color[c] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
  const double theta = rng.uniform(0.0, 1.5707963267948966);
  const double background = rng.uniform(18.0, 22.0);
  const double tilt_x = rng.uniform(-0.03, 0.03), tilt_y = rng.uniform(-0.03, 0.03);
  const double gray = rng.uniform(0.25, 0.75);
  std::array<double, 3> bg_color{};
  for (auto& c : bg_color) c = std::clamp(gray + rng.uniform(-0.05, 0.05), 0.0, 1.0);
  const double light_angle = rng.uniform(0.0, 6.283185307179586);
  const std::array<double, 3> light{0.4 * std::cos(light_angle), 0.4 * std::sin(light_angle), 0.9165};
  const double stripe_angle = rng.uniform(0.0, 3.141592653589793);
  const double stripe_phase = rng.uniform(0.0, 6.283185307179586);

  const ShapeFamily family = kClasses[label].family;
  Tensor depth({n, n});
  Tensor object_height({n, n});
  const double cs = std::cos(theta), sn = std::sin(theta);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
      const double u = cs * dx + sn * dy, v = -sn * dx + cs * dy;
      const double h = height(family, u, v, size, aspect);
      object_height[y * n + x] = static_cast<float>(h);
      double d = background + tilt_x * dx + tilt_y * dy - h;
      if (spec.depth_noise > 0.0) d += spec.depth_noise * rng.normal();
      depth[y * n + x] = static_cast<float>(std::max(d, 0.0));
    }
  }

  // Shading uses the normals of the unnormalized surface.
  const Tensor shade_normals = colorize_depth(depth);
  Tensor rgb({3, n, n});
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const std::size_t p = y * n + x;
      std::array<double, 3> color{};
      if (object_height[p] > 0.0f) {
        double lambert = 0.0;
        for (std::size_t c = 0; c < 3; ++c) lambert += (2.0 * shade_normals[c * n * n + p] - 1.0) * light[c];
        const double shade = 0.55 + 0.45 * std::max(0.0, lambert);
        const double t = static_cast<double>(x) * std::cos(stripe_angle) + static_cast<double>(y) * std::sin(stripe_angle);
        const double stripe = 1.0 + style.stripe_amplitude * std::sin(6.283185307179586 * frequency * t + stripe_phase);
        for (std::size_t c = 0; c < 3; ++c) color[c] = object_color[c] * shade * stripe;
      } else {
        color = bg_color;
      }
      for (std::size_t c = 0; c < 3; ++c) {
        rgb[c * n * n + p] = static_cast<float>(std::clamp(color[c] + 0.03 * rng.normal(), 0.0, 1.0));
      }
    }
  }

  RgbdSample s;
  s.label = label;
  s.instance = instance;
  s.rgb = std::move(rgb);
  s.depth_colorized = depth_to_model_space(depth, spec);
  s.depth_raw = std::move(depth);
  return s;
}

std::string sample_file(std::size_t id) {
  std::ostringstream os;
  os.width(6);
  os.fill('0');
  os << id;
  return os.str() + ".fgt";
}

std::array<float, 3> to_array3(const nlohmann::json& j) {
  auto v = j.get<std::vector<float>>();
  if (v.size() != 3) throw std::runtime_error("meta.json: channel means must have 3 entries");
  return {v[0], v[1], v[2]};
}

void save_split(const std::filesystem::path& dir, const Dataset& data) {
  namespace fs = std::filesystem;
  for (const char* sub : {"rgb", "depth_raw", "depth"}) fs::create_directories(dir / sub);
  std::ofstream labels(dir / "labels.csv");
  if (!labels) throw std::runtime_error("cannot write " + (dir / "labels.csv").string());
  labels << "sample_id,label\n";
  for (const auto& s : data.samples) {
    labels << s.id << ',' << s.label << '\n';
    save_tensor(dir / "rgb" / sample_file(s.id), s.rgb);
    save_tensor(dir / "depth_raw" / sample_file(s.id), s.depth_raw);
    save_tensor(dir / "depth" / sample_file(s.id), s.depth_colorized);
  }
}

Dataset load_split(const std::filesystem::path& dir, const DatasetSpec& spec) {
  std::ifstream labels(dir / "labels.csv");
  if (!labels) throw std::runtime_error("cannot open " + (dir / "labels.csv").string());
  std::string line;
  std::getline(labels, line);
  if (line != "sample_id,label") throw std::runtime_error((dir / "labels.csv").string() + ": bad header");
  Dataset data;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("labels.csv: malformed row '" + line + "'");
    RgbdSample s;
    s.id = std::stoul(line.substr(0, comma));
    s.label = std::stoul(line.substr(comma + 1));
    if (s.label >= spec.num_classes) throw std::runtime_error("labels.csv: label out of range in '" + line + "'");
    s.rgb = load_tensor(dir / "rgb" / sample_file(s.id));
    s.depth_raw = load_tensor(dir / "depth_raw" / sample_file(s.id));
    s.depth_colorized = load_tensor(dir / "depth" / sample_file(s.id));
    data.samples.push_back(std::move(s));
  }
  return data;
}

}  // namespace

void DatasetSpec::validate() const {
  if (num_classes < 3 || num_classes > kMaxClasses) {
    throw std::invalid_argument("num_classes must be in [3, " + std::to_string(kMaxClasses) + "], got " +
                                std::to_string(num_classes));
  }
  if (instances_per_class < 2) throw std::invalid_argument("instances_per_class must be at least 2");
  if (samples_per_class < instances_per_class) {
    throw std::invalid_argument("samples_per_class (" + std::to_string(samples_per_class) +
                                ") must be at least instances_per_class (" + std::to_string(instances_per_class) + ")");
  }
  if (image_size < 8) throw std::invalid_argument("image_size must be at least 8");
  if (!(depth_gain > 0.0)) throw std::invalid_argument("depth_gain must be positive");
  if (depth_noise < 0.0) throw std::invalid_argument("depth_noise must be nonnegative");
}

nlohmann::json DatasetSpec::to_json() const {
  return {{"num_classes", num_classes},
          {"samples_per_class", samples_per_class},
          {"image_size", image_size},
          {"instances_per_class", instances_per_class},
          {"seed", seed},
          {"normalization", normalization == DepthNormalization::per_image ? "per-image" : "global"},
          {"depth_gain", depth_gain},
          {"depth_noise", depth_noise}};
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
  DatasetSpec s;
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.samples_per_class = j.at("samples_per_class").get<std::size_t>();
  s.image_size = j.at("image_size").get<std::size_t>();
  s.instances_per_class = j.at("instances_per_class").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  const auto norm = j.at("normalization").get<std::string>();
  if (norm == "per-image") s.normalization = DepthNormalization::per_image;
  else if (norm == "global") s.normalization = DepthNormalization::global;
  else throw std::runtime_error("unknown depth normalization '" + norm + "'");
  s.depth_gain = j.at("depth_gain").get<double>();
  s.depth_noise = j.at("depth_noise").get<double>();
  s.validate();
  return s;
}

std::vector<std::string> class_names(std::size_t num_classes) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < std::min(num_classes, kMaxClasses); ++i) names.emplace_back(kClasses[i].name);
  return names;
}

DatasetSplit generate(const DatasetSpec& spec) {
  spec.validate();
  DatasetSplit split;
  split.spec = spec;
  for (std::size_t label = 0; label < spec.num_classes; ++label) {
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      RgbdSample s = render(spec, label, i);
      Dataset& target = s.instance + 1 == spec.instances_per_class ? split.test : split.train;
      s.id = target.samples.size();
      target.samples.push_back(std::move(s));
    }
  }
  return split;
}

Tensor colorize_depth(const Tensor& depth_raw) {
  if (depth_raw.rank() != 2) throw ShapeError("colorize_depth expects H×W, got " + shape_string(depth_raw.shape()));
  for (float v : depth_raw.data()) {
    if (!std::isfinite(v)) throw std::invalid_argument("colorize_depth: non-finite depth value");
  }
  const std::size_t h = depth_raw.dim(0), w = depth_raw.dim(1);
  auto d = [&](std::size_t y, std::size_t x) { return static_cast<double>(depth_raw[y * w + x]); };
  auto derivative = [](double prev, double next, double span) { return (next - prev) / span; };
  Tensor out({3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double gx = 0.0, gy = 0.0;
      if (w > 1) {
        const std::size_t x0 = x == 0 ? 0 : x - 1, x1 = x + 1 == w ? x : x + 1;
        gx = derivative(d(y, x0), d(y, x1), static_cast<double>(x1 - x0));
      }
      if (h > 1) {
        const std::size_t y0 = y == 0 ? 0 : y - 1, y1 = y + 1 == h ? y : y + 1;
        gy = derivative(d(y0, x), d(y1, x), static_cast<double>(y1 - y0));
      }
      const double norm = std::sqrt(gx * gx + gy * gy + 1.0);
      const std::array<double, 3> n{-gx / norm, -gy / norm, 1.0 / norm};
      for (std::size_t c = 0; c < 3; ++c) out[(c * h + y) * w + x] = static_cast<float>((n[c] + 1.0) / 2.0);
    }
  }
  return out;
}

Tensor normalize_depth(const Tensor& depth_raw, const DatasetSpec& spec) {
  Tensor out(depth_raw.shape());
  if (spec.normalization == DepthNormalization::global) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<float>(depth_raw[i] / kSceneDepthRange * spec.depth_gain);
    }
    return out;
  }
  const auto [lo, hi] = std::minmax_element(depth_raw.data().begin(), depth_raw.data().end());
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  if (range <= 0.0) return out;  // flat map: all zeros
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>((depth_raw[i] - *lo) / range * spec.depth_gain);
  }
  return out;
}

Tensor depth_to_model_space(const Tensor& depth_raw, const DatasetSpec& spec) {
  return colorize_depth(normalize_depth(depth_raw, spec));
}

Preprocessor Preprocessor::fit(const Dataset& train) {
  if (train.empty()) throw std::invalid_argument("cannot fit channel means on an empty split");
  std::array<double, 3> rgb{}, depth{};
  std::size_t pixels = 0;
  for (const auto& s : train.samples) {
    const std::size_t hw = s.rgb.dim(1) * s.rgb.dim(2);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < hw; ++i) {
        rgb[c] += s.rgb[c * hw + i];
        depth[c] += s.depth_colorized[c * hw + i];
      }
    }
    pixels += hw;
  }
  ChannelMeans m;
  for (std::size_t c = 0; c < 3; ++c) {
    m.rgb[c] = static_cast<float>(rgb[c] / static_cast<double>(pixels));
    m.depth[c] = static_cast<float>(depth[c] / static_cast<double>(pixels));
  }
  return Preprocessor(m);
}

const ChannelMeans& Preprocessor::means() const {
  if (!means_) {
    throw std::logic_error("preprocessor has no channel means; fit it on the training split first");
  }
  return *means_;
}

InputBounds Preprocessor::bounds() const {
  const auto& m = means();
  InputBounds b;
  for (std::size_t c = 0; c < 3; ++c) {
    b.rgb_lo[c] = 0.0f - m.rgb[c];
    b.rgb_hi[c] = 1.0f - m.rgb[c];
    b.depth_lo[c] = 0.0f - m.depth[c];
    b.depth_hi[c] = 1.0f - m.depth[c];
  }
  return b;
}

Tensor Preprocessor::preprocess(const Tensor& image, Modality m) const {
  const auto& mean = m == Modality::rgb ? means().rgb : means().depth;
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("preprocess expects 3×H×W, got " + shape_string(image.shape()));
  Tensor out(image);
  const std::size_t hw = image.dim(1) * image.dim(2);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] -= mean[c];
  }
  return out;
}

Tensor Preprocessor::inverse_preprocess(const Tensor& x, Modality m) const {
  const auto& mean = m == Modality::rgb ? means().rgb : means().depth;
  if (x.rank() != 3 || x.dim(0) != 3) throw ShapeError("inverse_preprocess expects 3×H×W, got " + shape_string(x.shape()));
  Tensor out(x);
  const std::size_t hw = x.dim(1) * x.dim(2);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] += mean[c];
  }
  return out;
}

ModelInput Preprocessor::preprocess(const RgbdSample& sample) const {
  return {preprocess(sample.rgb, Modality::rgb), preprocess(sample.depth_colorized, Modality::depth)};
}

Tensor Preprocessor::mean_image(Modality m, std::size_t size) const {
  const auto& mean = m == Modality::rgb ? means().rgb : means().depth;
  Tensor out({3, size, size});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < size * size; ++i) out[c * size * size + i] = mean[c];
  }
  return out;
}

std::vector<LabeledInput> preprocess_all(const Dataset& data, const Preprocessor& pre) {
  std::vector<LabeledInput> out;
  out.reserve(data.size());
  for (const auto& s : data.samples) out.push_back({s.id, s.label, pre.preprocess(s)});
  return out;
}

void save_dataset(const std::filesystem::path& dir, const DatasetSplit& split, const Preprocessor& pre,
                  const nlohmann::json& run_config) {
  std::filesystem::create_directories(dir);
  save_split(dir / "train", split.train);
  save_split(dir / "test", split.test);
  const auto& m = pre.means();
  nlohmann::json meta{{"spec", split.spec.to_json()},
                      {"class_names", class_names(split.spec.num_classes)},
                      {"splits", {{"train", split.train.size()}, {"test", split.test.size()}}},
                      {"channel_means", {{"rgb", m.rgb}, {"depth", m.depth}}},
                      {"config", run_config}};
  std::ofstream os(dir / "meta.json");
  if (!os) throw std::runtime_error("cannot write " + (dir / "meta.json").string());
  os << meta.dump(2) << '\n';
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "meta.json");
  if (!is) throw std::runtime_error("dataset directory " + dir.string() + " has no meta.json");
  const auto meta = nlohmann::json::parse(is);
  LoadedDataset out;
  out.split.spec = DatasetSpec::from_json(meta.at("spec"));
  out.split.train = load_split(dir / "train", out.split.spec);
  out.split.test = load_split(dir / "test", out.split.spec);
  ChannelMeans m;
  m.rgb = to_array3(meta.at("channel_means").at("rgb"));
  m.depth = to_array3(meta.at("channel_means").at("depth"));
  out.preprocessor = Preprocessor(m);
  return out;
}

}  // namespace fuseguard
