#include "robustlens/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "robustlens/rng.hpp"

namespace robustlens {
namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

[[noreturn]] void layer_fail(std::size_t index, const std::string& what) {
  throw ShapeError("layer " + std::to_string(index) + ": " + what);
}

std::size_t fan_in(const Shape& weight_shape) {
  std::size_t f = 1;
  for (std::size_t i = 1; i < weight_shape.size(); ++i) f *= weight_shape[i];
  return f;
}

// Parameter shapes (weight, bias) of layer i, given its per-sample input shape.
std::optional<std::pair<Shape, Shape>> param_shapes(const LayerSpec& layer, const Shape& in) {
  if (const auto* c = std::get_if<ConvSpec>(&layer)) {
    return std::pair<Shape, Shape>{{c->out_channels, in[0], c->kernel, c->kernel}, {c->out_channels}};
  }
  if (const auto* d = std::get_if<DenseSpec>(&layer)) {
    return std::pair<Shape, Shape>{{d->width, in[0]}, {d->width}};
  }
  return std::nullopt;
}

}  // namespace

std::vector<Shape> shape_check(const ModelConfig& config) {
  if (config.num_classes == 0) throw ShapeError("model: num_classes must be positive");
  for (std::size_t d : config.input) {
    if (d == 0) throw ShapeError("model: input extents must be positive");
  }
  if (config.layers.empty()) throw ShapeError("model: no layers");

  std::vector<Shape> shapes;
  Shape cur{config.input[0], config.input[1], config.input[2]};
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    cur = std::visit(
        Overloaded{
            [&](const ConvSpec& c) -> Shape {
              if (cur.size() != 3) layer_fail(i, "conv needs a C x H x W input, got " + shape_str(cur));
              if (c.out_channels == 0 || c.kernel == 0 || c.stride == 0) {
                layer_fail(i, "conv out_channels, kernel and stride must be positive");
              }
              if (cur[1] + 2 * c.pad < c.kernel || cur[2] + 2 * c.pad < c.kernel) {
                layer_fail(i, "conv kernel " + std::to_string(c.kernel) + " exceeds padded input " +
                                  shape_str(cur));
              }
              return {c.out_channels, (cur[1] + 2 * c.pad - c.kernel) / c.stride + 1,
                      (cur[2] + 2 * c.pad - c.kernel) / c.stride + 1};
            },
            [&](const MaxPoolSpec& p) -> Shape {
              if (cur.size() != 3) layer_fail(i, "maxpool needs a C x H x W input, got " + shape_str(cur));
              if (p.window == 0 || cur[1] < p.window || cur[2] < p.window) {
                layer_fail(i, "maxpool window " + std::to_string(p.window) + " invalid for " +
                                  shape_str(cur));
              }
              return {cur[0], cur[1] / p.window, cur[2] / p.window};
            },
            [&](const DenseSpec& d) -> Shape {
              if (cur.size() != 1) layer_fail(i, "dense needs a flat input, got " + shape_str(cur));
              if (d.width == 0) layer_fail(i, "dense width must be positive");
              return {d.width};
            },
            [&](const ReluSpec&) -> Shape { return cur; },
            [&](const FlattenSpec&) -> Shape { return {shape_numel(cur)}; },
        },
        config.layers[i]);
    shapes.push_back(cur);
  }
  const std::size_t last = config.layers.size() - 1;
  if (!std::holds_alternative<DenseSpec>(config.layers[last]) || cur != Shape{config.num_classes}) {
    layer_fail(last, "final layer must be dense with " + std::to_string(config.num_classes) +
                         " outputs, got " + shape_str(cur));
  }
  return shapes;
}

ModelConfig tiny_config(std::size_t height, std::size_t width, std::size_t channels,
                        std::size_t num_classes) {
  ModelConfig c;
  c.name = "tiny";
  c.input = {channels, height, width};
  c.num_classes = num_classes;
  c.layers = {ConvSpec{8, 3, 1, 1}, ReluSpec{}, MaxPoolSpec{2},
              ConvSpec{16, 3, 1, 1}, ReluSpec{}, MaxPoolSpec{2},
              FlattenSpec{}, DenseSpec{num_classes}};
  return c;
}

ModelConfig vgg_mini_config(std::size_t height, std::size_t width, std::size_t channels,
                            std::size_t num_classes) {
  ModelConfig c;
  c.name = "vgg-mini";
  c.input = {channels, height, width};
  c.num_classes = num_classes;
  for (std::size_t ch : {8, 16, 32, 32}) {
    c.layers.insert(c.layers.end(), {ConvSpec{ch, 3, 1, 1}, ReluSpec{}, ConvSpec{ch, 3, 1, 1},
                                     ReluSpec{}, MaxPoolSpec{2}});
  }
  c.layers.insert(c.layers.end(), {FlattenSpec{}, DenseSpec{64}, ReluSpec{}, DenseSpec{num_classes}});
  return c;
}

ModelConfig preset_config(const std::string& name, std::size_t height, std::size_t width,
                          std::size_t channels, std::size_t num_classes) {
  if (name == "tiny") return tiny_config(height, width, channels, num_classes);
  if (name == "vgg-mini") return vgg_mini_config(height, width, channels, num_classes);
  throw ConfigError("unknown model preset '" + name + "' (expected tiny or vgg-mini)");
}

nlohmann::json to_json(const ModelConfig& config) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& l : config.layers) {
    layers.push_back(std::visit(
        Overloaded{
            [](const ConvSpec& c) {
              return nlohmann::json{{"type", "conv"}, {"out_channels", c.out_channels},
                                    {"kernel", c.kernel}, {"stride", c.stride}, {"pad", c.pad}};
            },
            [](const MaxPoolSpec& p) { return nlohmann::json{{"type", "maxpool"}, {"window", p.window}}; },
            [](const DenseSpec& d) { return nlohmann::json{{"type", "dense"}, {"width", d.width}}; },
            [](const ReluSpec&) { return nlohmann::json{{"type", "relu"}}; },
            [](const FlattenSpec&) { return nlohmann::json{{"type", "flatten"}}; },
        },
        l));
  }
  return nlohmann::json{{"name", config.name},
                        {"input", config.input},
                        {"layers", layers},
                        {"num_classes", config.num_classes},
                        {"seed", config.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.name = j.value("name", std::string("custom"));
    c.input = j.at("input").get<std::array<std::size_t, 3>>();
    c.num_classes = j.value("num_classes", std::size_t{3});
    c.seed = j.value("seed", std::uint64_t{0});
    for (const auto& l : j.at("layers")) {
      const std::string type = l.at("type").get<std::string>();
      if (type == "conv") {
        c.layers.push_back(ConvSpec{l.at("out_channels").get<std::size_t>(), l.value("kernel", std::size_t{3}),
                                    l.value("stride", std::size_t{1}), l.value("pad", std::size_t{0})});
      } else if (type == "maxpool") {
        c.layers.push_back(MaxPoolSpec{l.value("window", std::size_t{2})});
      } else if (type == "dense") {
        c.layers.push_back(DenseSpec{l.at("width").get<std::size_t>()});
      } else if (type == "relu") {
        c.layers.push_back(ReluSpec{});
      } else if (type == "flatten") {
        c.layers.push_back(FlattenSpec{});
      } else {
        throw ConfigError("model config: unknown layer type '" + type + "'");
      }
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

std::vector<std::string> conv_layer_ids(const ModelConfig& config) {
  std::vector<std::string> ids;
  for (const LayerSpec& l : config.layers) {
    if (std::holds_alternative<ConvSpec>(l)) ids.push_back("conv" + std::to_string(ids.size() + 1));
  }
  return ids;
}

std::optional<std::size_t> conv_layer_index(const ModelConfig& config, const std::string& id) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    if (!std::holds_alternative<ConvSpec>(config.layers[i])) continue;
    ++k;
    if (id == "conv" + std::to_string(k)) return i;
  }
  return std::nullopt;
}

template <class T>
Tensor<T>& ModelParams<T>::get(std::size_t layer, ParamRole role) {
  for (auto& e : entries) {
    if (e.layer == layer && e.role == role) return e.tensor;
  }
  throw ShapeError("model: no parameter for layer " + std::to_string(layer));
}

template <class T>
const Tensor<T>& ModelParams<T>::get(std::size_t layer, ParamRole role) const {
  return const_cast<ModelParams*>(this)->get(layer, role);
}

template <class T>
std::size_t ModelParams<T>::count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.tensor.numel();
  return n;
}

template <class T>
bool ModelParams<T>::all_finite() const {
  return std::all_of(entries.begin(), entries.end(),
                     [](const auto& e) { return e.tensor.all_finite(); });
}

template struct ModelParams<float>;
template struct ModelParams<double>;

ModelParams<float> build(const ModelConfig& config) {
  const std::vector<Shape> shapes = shape_check(config);
  ModelParams<float> params;
  Shape in{config.input[0], config.input[1], config.input[2]};
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    if (auto ps = param_shapes(config.layers[i], in)) {
      Tensor<float> w(ps->first);
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in(ps->first)));
      Rng rng(derive_seed(config.seed, i));
      for (float& v : w.data()) v = static_cast<float>(rng.uniform(-bound, bound));
      params.entries.push_back({i, ParamRole::kWeight, std::move(w)});
      params.entries.push_back({i, ParamRole::kBias, Tensor<float>(ps->second)});
    }
    in = shapes[i];
  }
  return params;
}

std::size_t parameter_count(const ModelConfig& config) {
  const std::vector<Shape> shapes = shape_check(config);
  std::size_t total = 0;
  Shape in{config.input[0], config.input[1], config.input[2]};
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    if (auto ps = param_shapes(config.layers[i], in)) {
      total += shape_numel(ps->first) + shape_numel(ps->second);
    }
    in = shapes[i];
  }
  return total;
}

namespace {

template <class T, class Params, class LeafFn>
ForwardPass<T> forward_impl(Graph<T>&, const ModelConfig& config, Params& params, Var<T> input,
                            LeafFn&& leaf) {
  const Shape& xs = input.shape();
  if (xs.size() != 4 || xs[1] != config.input[0] || xs[2] != config.input[1] ||
      xs[3] != config.input[2]) {
    throw ShapeError("predict: batch " + shape_str(xs) + " does not match model input N x " +
                     std::to_string(config.input[0]) + "x" + std::to_string(config.input[1]) + "x" +
                     std::to_string(config.input[2]));
  }
  ForwardPass<T> pass;
  Var<T> cur = input;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& l = config.layers[i];
    if (const auto* c = std::get_if<ConvSpec>(&l)) {
      cur = conv2d(cur, leaf(params.get(i, ParamRole::kWeight)), Conv2dAttrs{c->stride, c->pad});
      cur = add_bias(cur, leaf(params.get(i, ParamRole::kBias)));
    } else if (const auto* p = std::get_if<MaxPoolSpec>(&l)) {
      cur = maxpool2d(cur, p->window);
    } else if (std::holds_alternative<DenseSpec>(l)) {
      cur = matmul(cur, leaf(params.get(i, ParamRole::kWeight)), /*transpose_b=*/true);
      cur = add_bias(cur, leaf(params.get(i, ParamRole::kBias)));
    } else if (std::holds_alternative<ReluSpec>(l)) {
      cur = relu(cur);
    } else {
      cur = flatten(cur);
    }
    pass.layer_outputs.push_back(cur);
  }
  pass.logits = cur;
  return pass;
}

}  // namespace

template <class T>
ForwardPass<T> forward(Graph<T>& g, const ModelConfig& config, ModelParams<T>& params, Var<T> input) {
  return forward_impl(g, config, params, input, [&](Tensor<T>& t) { return g.leaf(t); });
}

template <class T>
ForwardPass<T> forward(Graph<T>& g, const ModelConfig& config, const ModelParams<T>& params,
                       Var<T> input) {
  return forward_impl(g, config, params, input,
                      [&](const Tensor<T>& t) { return g.constant_ref(t); });
}

template ForwardPass<float> forward<float>(Graph<float>&, const ModelConfig&, ModelParams<float>&,
                                           Var<float>);
template ForwardPass<double> forward<double>(Graph<double>&, const ModelConfig&,
                                             ModelParams<double>&, Var<double>);
template ForwardPass<float> forward<float>(Graph<float>&, const ModelConfig&,
                                           const ModelParams<float>&, Var<float>);
template ForwardPass<double> forward<double>(Graph<double>&, const ModelConfig&,
                                             const ModelParams<double>&, Var<double>);

Tensor<float> predict(const Model& model, const Tensor<float>& batch) {
  Graph<float> g;
  const ForwardPass<float> pass = forward(g, model.config, model.params, g.constant_ref(batch));
  Tensor<float> logits = pass.logits.value();
  return logits;
}

std::vector<int> argmax_rows(const Tensor<float>& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax: expected N x K logits, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

// Checkpoint I/O ----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'L', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& e : ckpt.params.entries) {
    tensors.push_back({{"name", e.name()},
                       {"layer", e.layer},
                       {"role", e.role == ParamRole::kWeight ? "weight" : "bias"},
                       {"shape", e.tensor.shape()},
                       {"offset", offset}});
    offset += e.tensor.numel() * sizeof(float);
  }
  nlohmann::json meta{{"epoch", ckpt.metadata.epoch}, {"seed", ckpt.metadata.seed}};
  if (std::isfinite(ckpt.metadata.best_val_loss)) {
    meta["best_val_loss"] = ckpt.metadata.best_val_loss;
  } else {
    meta["best_val_loss"] = nullptr;
  }
  const nlohmann::json header{{"config", to_json(ckpt.config)},
                              {"metadata", meta},
                              {"payload_bytes", offset},
                              {"tensors", tensors}};
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put_u32(out, ckpt.version);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& e : ckpt.params.entries) {
    for (const float v : e.tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12) throw FormatError("checkpoint: truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("checkpoint: corrupt header (bad magic)");
  Checkpoint ckpt;
  ckpt.version = get_u32(bytes, 4);
  if (ckpt.version != Checkpoint::kVersion) {
    throw FormatError("checkpoint: version mismatch (file " + std::to_string(ckpt.version) +
                      ", supported " + std::to_string(Checkpoint::kVersion) + ")");
  }
  const std::size_t header_len = get_u32(bytes, 8);
  if (bytes.size() < 12 + header_len) throw FormatError("checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
    ckpt.config = model_config_from_json(header.at("config"));
    const auto& meta = header.at("metadata");
    ckpt.metadata.epoch = meta.at("epoch").get<std::uint64_t>();
    ckpt.metadata.seed = meta.at("seed").get<std::uint64_t>();
    ckpt.metadata.best_val_loss = meta.at("best_val_loss").is_null()
                                      ? std::numeric_limits<double>::infinity()
                                      : meta.at("best_val_loss").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: corrupt header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: corrupt header: ") + e.what());
  }

  try {
    ckpt.params = build(ckpt.config);
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint: invalid model config: ") + e.what());
  }
  const std::size_t expected = ckpt.params.count() * sizeof(float);
  const std::size_t payload = bytes.size() - 12 - header_len;
  if (header.value("payload_bytes", std::size_t{0}) != expected) {
    throw FormatError("checkpoint: corrupt header (payload size disagrees with config)");
  }
  if (payload < expected) {
    throw FormatError("checkpoint: truncated payload (" + std::to_string(payload) + " of " +
                      std::to_string(expected) + " bytes)");
  }
  if (payload > expected) throw FormatError("checkpoint: trailing bytes after payload");

  std::size_t pos = 12 + header_len;
  const auto& tensors = header.at("tensors");
  if (tensors.size() != ckpt.params.entries.size()) throw FormatError("checkpoint: tensor table mismatch");
  for (std::size_t t = 0; t < ckpt.params.entries.size(); ++t) {
    auto& e = ckpt.params.entries[t];
    if (tensors[t].value("shape", Shape{}) != e.tensor.shape()) {
      throw FormatError("checkpoint: tensor " + e.name() + " shape disagrees with config");
    }
    for (float& v : e.tensor.data()) {
      v = std::bit_cast<float>(get_u32(bytes, pos));
      pos += 4;
    }
  }
  if (!ckpt.params.all_finite()) throw FormatError("checkpoint: non-finite parameter values");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot open '" + path + "' for writing");
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace robustlens
