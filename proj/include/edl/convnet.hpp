#pragma once

// Small convolutional classifier (conv-relu-maxpool blocks, one hidden
// dense layer, K logits), Grad-CAM saliency from a chosen conv block, and
// the binary checkpoint format.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "edl/autodiff.hpp"
#include "edl/io.hpp"
#include "edl/ops.hpp"

namespace edl {

struct ConvBlockConfig {
  std::size_t filters = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool pool = true;

  friend bool operator==(const ConvBlockConfig&, const ConvBlockConfig&) = default;
};

struct ModelConfig {
  std::size_t input_size = 64;  // square images
  std::size_t channels = 3;
  std::vector<ConvBlockConfig> conv_blocks{{16}, {32}, {64}};
  std::size_t dense_width = 64;
  std::size_t classes = 2;
  std::uint64_t seed = 0;

  /// Spatial size of each block's conv output, before pooling.
  std::vector<std::size_t> conv_output_sizes() const {
    std::vector<std::size_t> sizes;
    std::size_t s = input_size;
    for (const auto& b : conv_blocks) {
      const std::size_t pad = b.kernel / 2;
      if (b.stride == 0 || s + 2 * pad < b.kernel) {
        throw ConfigurationError("conv block does not fit its input");
      }
      s = (s + 2 * pad - b.kernel) / b.stride + 1;
      sizes.push_back(s);
      if (b.pool) {
        if (s < 2) throw ConfigurationError("pooling needs at least a 2x2 map");
        s = (s - 2) / 2 + 1;
      }
    }
    return sizes;
  }

  std::size_t final_size() const {
    std::size_t s = conv_output_sizes().back();
    return conv_blocks.back().pool ? (s - 2) / 2 + 1 : s;
  }

  std::size_t flat_features() const {
    const std::size_t s = final_size();
    return conv_blocks.back().filters * s * s;
  }

  void validate() const {
    if (classes < 2) throw ConfigurationError("need at least two classes");
    if (conv_blocks.empty()) throw ConfigurationError("model needs at least one conv block");
    if (channels == 0 || dense_width == 0 || input_size == 0) {
      throw ConfigurationError("channels, dense width and input size must be positive");
    }
    for (const auto& b : conv_blocks) {
      if (b.filters == 0 || b.kernel == 0) throw ConfigurationError("empty conv block");
    }
    if (conv_output_sizes().back() < 4) {
      throw ConfigurationError("last conv map is smaller than 4x4; saliency needs spatial resolution");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct NamedParameter {
  std::string name;
  Tensor value;
};

class Model {
 public:
  /// He-normal weights from config.seed, zero biases.
  explicit Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    allocate();
    std::mt19937_64 rng(config_.seed);
    for (auto& p : params_) {
      if (p.value.ndim() == 1) continue;
      const Shape& s = p.value.shape();
      const double fan_in = static_cast<double>(p.value.size() / (s.size() == 4 ? s[0] : s[1]));
      const double gain = p.name == "logits.weight" ? 1.0 : 2.0;
      std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
      for (double& v : p.value.data()) v = dist(rng);
    }
  }

  static Model zeros(ModelConfig config) {
    Model m(std::move(config));
    for (auto& p : m.params_) p.value.fill(0.0);
    return m;
  }

  const ModelConfig& config() const { return config_; }
  std::vector<NamedParameter>& parameters() { return params_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }

  std::size_t conv_layer_count() const { return config_.conv_blocks.size(); }

  static std::string conv_layer_name(std::size_t block) { return "conv" + std::to_string(block + 1); }

  /// Block index for "conv1".."convN"; empty selects the last block.
  std::size_t conv_layer_index(std::string_view name) const {
    if (conv_layer_count() == 0) throw ConfigurationError("model has no conv layer");
    if (name.empty()) return conv_layer_count() - 1;
    for (std::size_t i = 0; i < conv_layer_count(); ++i) {
      if (conv_layer_name(i) == name) return i;
    }
    throw ConfigurationError("unknown conv layer '" + std::string(name) + "'");
  }

  /// Puts every parameter on the tape, as trainable leaves or constants.
  std::vector<Var> bind(Tape& tape, bool trainable) const {
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) vars.push_back(tape.leaf(p.value, trainable));
    return vars;
  }

  struct Pass {
    Var logits;
    std::vector<Var> activations;  // post-ReLU conv output of each block
  };

  Pass forward(Tape& tape, const std::vector<Var>& params, const Tensor& images) const {
    check_images(images);
    Pass pass;
    Var x = tape.constant(images);
    for (std::size_t b = 0; b < conv_layer_count(); ++b) {
      Var a = conv_stage(x, b, params);
      pass.activations.push_back(a);
      x = config_.conv_blocks[b].pool ? ops::max_pool2d(a) : a;
    }
    pass.logits = head(x, params);
    return pass;
  }

  /// Continues a forward pass from the post-ReLU activation of `block`.
  Var forward_from(std::size_t block, Var activation, const std::vector<Var>& params) const {
    Var x = config_.conv_blocks.at(block).pool ? ops::max_pool2d(activation) : activation;
    for (std::size_t b = block + 1; b < conv_layer_count(); ++b) {
      Var a = conv_stage(x, b, params);
      x = config_.conv_blocks[b].pool ? ops::max_pool2d(a) : a;
    }
    return head(x, params);
  }

  /// Logits for N images, evaluated in chunks without gradient tracking.
  Tensor predict_logits(const Tensor& images, std::size_t chunk = 64) const {
    check_images(images);
    const std::size_t n = images.dim(0);
    const std::size_t per_image = images.size() / n;
    Tensor out({n, config_.classes});
    for (std::size_t start = 0; start < n; start += chunk) {
      const std::size_t count = std::min(chunk, n - start);
      Shape s = images.shape();
      s[0] = count;
      Tensor part(s, std::vector<double>(images.data().begin() + start * per_image,
                                         images.data().begin() + (start + count) * per_image));
      Tape tape;
      const Tensor& logits = forward(tape, bind(tape, false), part).logits.value();
      std::copy(logits.data().begin(), logits.data().end(),
                out.data().begin() + start * config_.classes);
    }
    return out;
  }

 private:
  void allocate() {
    std::size_t in_ch = config_.channels;
    for (std::size_t b = 0; b < conv_layer_count(); ++b) {
      const auto& blk = config_.conv_blocks[b];
      params_.push_back({conv_layer_name(b) + ".weight", Tensor({blk.filters, in_ch, blk.kernel, blk.kernel})});
      params_.push_back({conv_layer_name(b) + ".bias", Tensor({blk.filters})});
      in_ch = blk.filters;
    }
    params_.push_back({"dense.weight", Tensor({config_.flat_features(), config_.dense_width})});
    params_.push_back({"dense.bias", Tensor({config_.dense_width})});
    params_.push_back({"logits.weight", Tensor({config_.dense_width, config_.classes})});
    params_.push_back({"logits.bias", Tensor({config_.classes})});
  }

  void check_images(const Tensor& images) const {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != config_.channels || s[2] != config_.input_size ||
        s[3] != config_.input_size) {
      throw DimensionError("model expects N x " + std::to_string(config_.channels) + " x " +
                           std::to_string(config_.input_size) + " x " +
                           std::to_string(config_.input_size) + " images, got " + shape_string(s));
    }
  }

  Var conv_stage(Var x, std::size_t b, const std::vector<Var>& params) const {
    const auto& blk = config_.conv_blocks[b];
    return ops::relu(ops::conv2d(x, params[2 * b], params[2 * b + 1], blk.stride, blk.kernel / 2));
  }

  Var head(Var x, const std::vector<Var>& params) const {
    const std::size_t d = 2 * conv_layer_count();
    Var h = ops::relu(ops::dense(ops::flatten(x), params[d], params[d + 1]));
    return ops::dense(h, params[d + 2], params[d + 3]);
  }

  ModelConfig config_;
  std::vector<NamedParameter> params_;
};

// ---------------------------------------------------------------------------
// Grad-CAM

struct SaliencyMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // row-major, in [0, 1]
  std::string source_layer;

  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
};

/// Intermediate quantities of one Grad-CAM evaluation at feature resolution.
struct CamComponents {
  Tensor activation;             // C×h×w feature maps of the chosen block
  Tensor gradient;               // d logit_k / d activation, C×h×w
  std::vector<double> weights;   // spatial mean of gradient per channel
  std::vector<double> weighted;  // Σ_c w_c A_c, h×w, before ReLU
  std::string layer;
};

namespace detail {
inline Tensor as_batch(const Tensor& image) {
  if (image.ndim() == 3) {
    return image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  }
  if (image.ndim() == 4 && image.dim(0) == 1) return image;
  throw DimensionError("expected a single C×H×W image, got " + shape_string(image.shape()));
}
}  // namespace detail

inline CamComponents grad_cam_components(const Model& model, const Tensor& image,
                                         std::size_t target_class, std::string_view layer = {}) {
  const std::size_t block = model.conv_layer_index(layer);
  if (target_class >= model.config().classes) throw ArgumentError("target class out of range");
  const Tensor batch = detail::as_batch(image);

  Tape tape;
  const auto params = model.bind(tape, false);
  const Tensor features = model.forward(tape, params, batch).activations[block].value();
  // Re-enter the network from the feature maps as a differentiable leaf.
  Var a = tape.leaf(features, true);
  Var logits = model.forward_from(block, a, params);
  Tensor pick(logits.shape(), 0.0);
  pick[target_class] = 1.0;
  tape.backward(ops::sum(ops::mul(logits, tape.constant(pick))));

  const std::size_t c = features.dim(1), h = features.dim(2), w = features.dim(3);
  CamComponents out;
  out.layer = Model::conv_layer_name(block);
  out.activation = features.reshaped({c, h, w});
  out.gradient = a.grad().reshaped({c, h, w});
  out.weights.assign(c, 0.0);
  out.weighted.assign(h * w, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t p = 0; p < h * w; ++p) acc += out.gradient[ch * h * w + p];
    out.weights[ch] = acc / static_cast<double>(h * w);
  }
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < h * w; ++p)
      out.weighted[p] += out.weights[ch] * out.activation[ch * h * w + p];
  return out;
}

/// Bilinear upsampling whose sample grid passes through every source node
/// when out/in is an integer s: source node i lands on output pixel
/// i*s + floor((s-1)/2), inside its own s-pixel footprint. The maximum of the
/// source map is therefore sampled exactly.
inline std::vector<double> bilinear_resize(const std::vector<double>& src, std::size_t h, std::size_t w,
                                           std::size_t out_h, std::size_t out_w) {
  auto axis = [](std::size_t out, std::size_t in, std::size_t i) {
    const double s = static_cast<double>(out) / static_cast<double>(in);
    const double offset = std::floor((s - 1.0) / 2.0);
    return std::clamp((static_cast<double>(i) - std::max(offset, 0.0)) / s, 0.0,
                      static_cast<double>(in - 1));
  };
  std::vector<double> out(out_h * out_w);
  for (std::size_t r = 0; r < out_h; ++r) {
    const double y = axis(out_h, h, r);
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < out_w; ++c) {
      const double x = axis(out_w, w, c);
      const auto x0 = static_cast<std::size_t>(x);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = src[y0 * w + x0] * (1 - fx) + src[y0 * w + x1] * fx;
      const double bottom = src[y1 * w + x0] * (1 - fx) + src[y1 * w + x1] * fx;
      out[r * out_w + c] = top * (1 - fy) + bottom * fy;
    }
  }
  return out;
}

namespace detail {
inline void normalize_by_max(std::vector<double>& v) {
  const double m = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  if (m > 0.0) {
    for (double& x : v) x = std::min(1.0, x / m);
  } else {
    std::fill(v.begin(), v.end(), 0.0);
  }
}
}  // namespace detail

/// ReLU of the weighted map, scaled to max 1, upsampled to out_h×out_w and
/// rescaled so the upsampled maximum is exactly 1. An all-zero map stays
/// all zero.
inline SaliencyMap saliency_from_weighted(std::vector<double> weighted, std::size_t h, std::size_t w,
                                          std::size_t out_h, std::size_t out_w, std::string layer) {
  for (double& v : weighted) v = std::max(v, 0.0);
  detail::normalize_by_max(weighted);
  SaliencyMap map{out_h, out_w, bilinear_resize(weighted, h, w, out_h, out_w), std::move(layer)};
  detail::normalize_by_max(map.values);
  return map;
}

/// Grad-CAM for `target_class` from conv block `layer` (default: last).
inline SaliencyMap grad_cam(const Model& model, const Tensor& image, std::size_t target_class,
                            std::string_view layer = {}) {
  const auto parts = grad_cam_components(model, image, target_class, layer);
  const Tensor batch = detail::as_batch(image);
  return saliency_from_weighted(parts.weighted, parts.activation.dim(1), parts.activation.dim(2),
                                batch.dim(2), batch.dim(3), parts.layer);
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Little-endian. Header: "EDLC", u32 version, u32 tensor count. Per tensor:
// u16 name length, name bytes, u8 ndim, u32 dims[ndim], f32 values
// row-major. A tensor named "config" carries the architecture.

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'E', 'D', 'L', 'C'};

namespace detail {

class ByteWriter {
 public:
  void bytes(std::string_view s) { out_ += s; }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::string_view bytes(std::size_t n, const std::string& field) {
    if (data_.size() - pos_ < n) throw CorruptCheckpointError(field, "file truncated");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(const std::string& field) { return static_cast<std::uint8_t>(bytes(1, field)[0]); }
  std::uint16_t u16(const std::string& field) {
    auto b = bytes(2, field);
    return static_cast<std::uint16_t>(static_cast<std::uint8_t>(b[0]) |
                                      (static_cast<std::uint8_t>(b[1]) << 8));
  }
  std::uint32_t u32(const std::string& field) {
    auto b = bytes(4, field);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[i]);
    return v;
  }
  float f32(const std::string& field) { return std::bit_cast<float>(u32(field)); }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline Tensor config_tensor(const ModelConfig& c) {
  std::vector<double> v{static_cast<double>(c.input_size), static_cast<double>(c.channels),
                        static_cast<double>(c.conv_blocks.size())};
  for (const auto& b : c.conv_blocks) {
    v.insert(v.end(), {static_cast<double>(b.filters), static_cast<double>(b.kernel),
                       static_cast<double>(b.stride), b.pool ? 1.0 : 0.0});
  }
  v.push_back(static_cast<double>(c.dense_width));
  v.push_back(static_cast<double>(c.classes));
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

inline ModelConfig config_from_tensor(const Tensor& t) {
  auto get = [&](std::size_t i) -> std::size_t {
    if (i >= t.size()) throw CorruptCheckpointError("config", "too short");
    const double v = t[i];
    if (!(v >= 0.0) || v != std::floor(v) || v > 1e7) {
      throw CorruptCheckpointError("config", "entry " + std::to_string(i) + " is not a count");
    }
    return static_cast<std::size_t>(v);
  };
  ModelConfig c;
  c.input_size = get(0);
  c.channels = get(1);
  const std::size_t blocks = get(2);
  c.conv_blocks.clear();
  for (std::size_t b = 0; b < blocks; ++b) {
    c.conv_blocks.push_back({get(3 + 4 * b), get(4 + 4 * b), get(5 + 4 * b), get(6 + 4 * b) != 0});
  }
  c.dense_width = get(3 + 4 * blocks);
  c.classes = get(4 + 4 * blocks);
  if (t.size() != 5 + 4 * blocks) throw CorruptCheckpointError("config", "unexpected length");
  try {
    c.validate();
  } catch (const ConfigurationError& e) {
    throw CorruptCheckpointError("config", e.what());
  }
  return c;
}

inline void write_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name);
  w.u8(static_cast<std::uint8_t>(t.ndim()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.data()) w.f32(static_cast<float>(v));
}

}  // namespace detail

inline std::string serialize_checkpoint(const Model& model) {
  detail::ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(model.parameters().size() + 1));
  detail::write_tensor(w, "config", detail::config_tensor(model.config()));
  for (const auto& p : model.parameters()) detail::write_tensor(w, p.name, p.value);
  return w.str();
}

/// Parses and validates a whole checkpoint; nothing is returned unless
/// every field checks out.
inline Model deserialize_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.bytes(4, "magic") != std::string_view(kCheckpointMagic, 4)) {
    throw CorruptCheckpointError("magic", "expected \"EDLC\"");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw UnsupportedVersionError("version", "unsupported format version " + std::to_string(version) +
                                                 " (reader supports " +
                                                 std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = r.u32("tensor count");
  std::vector<NamedParameter> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string field = "tensor " + std::to_string(i);
    const std::uint16_t len = r.u16(field + " name length");
    std::string name(r.bytes(len, field + " name"));
    const std::uint8_t ndim = r.u8(field + " ndim");
    if (ndim == 0 || ndim > 8) throw CorruptCheckpointError(field + " ndim", "out of range");
    Shape shape;
    std::size_t total = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const std::uint32_t dim = r.u32(field + " dims");
      if (dim == 0) throw CorruptCheckpointError(field + " dims", "zero dimension");
      total *= dim;
      if (total > (std::size_t{1} << 32)) throw CorruptCheckpointError(field + " dims", "too large");
      shape.push_back(dim);
    }
    std::vector<double> values(total);
    for (double& v : values) v = r.f32(field + " data");
    tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  if (!r.done()) throw CorruptCheckpointError("trailing data", "bytes after last tensor");

  auto find = [&](const std::string& name) -> const Tensor* {
    for (const auto& t : tensors)
      if (t.name == name) return &t.value;
    return nullptr;
  };
  const Tensor* cfg = find("config");
  if (!cfg) throw CorruptCheckpointError("config", "missing");
  Model model = Model::zeros(detail::config_from_tensor(*cfg));
  if (tensors.size() != model.parameters().size() + 1) {
    throw CorruptCheckpointError("shape table", "expected " + std::to_string(model.parameters().size() + 1) +
                                                    " tensors, found " + std::to_string(tensors.size()));
  }
  for (auto& p : model.parameters()) {
    const Tensor* t = find(p.name);
    if (!t) throw CorruptCheckpointError("shape table", "missing tensor " + p.name);
    if (t->shape() != p.value.shape()) {
      throw CorruptCheckpointError("shape table", p.name + " has shape " + shape_string(t->shape()) +
                                                      ", architecture needs " +
                                                      shape_string(p.value.shape()));
    }
    p.value = *t;
  }
  return model;
}

inline void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_checkpoint(model));
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = io::read_file(path);
  } catch (const DatasetError& e) {
    throw CorruptCheckpointError("file", e.what());
  }
  return deserialize_checkpoint(bytes);
}

/// Rounds every parameter to 32-bit precision in place, matching what a
/// checkpoint round trip would produce.
inline void round_to_storage_precision(Model& model) {
  for (auto& p : model.parameters())
    for (double& v : p.value.data()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace edl
