#include "scp/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace scp {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

class BlobWriter {
 public:
  explicit BlobWriter(std::filesystem::path dir) : dir_(std::move(dir)) {}

  json put(std::span<const float> values, const Shape& shape) {
    char name[32];
    std::snprintf(name, sizeof name, "tensor_%03zu.bin", next_++);
    std::vector<char> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(values[i]);
      for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("cannot write " + (dir_ / name).string());
    return {{"file", name}, {"shape", shape}};
  }

 private:
  std::filesystem::path dir_;
  std::size_t next_ = 0;
};

Tensor read_blob(const std::filesystem::path& dir, const json& ref) {
  const auto file = ref.at("file").get<std::string>();
  const auto shape = ref.at("shape").get<Shape>();
  std::ifstream in(dir / file, std::ios::binary);
  if (!in) throw CheckpointError("missing tensor file " + (dir / file).string());
  std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const std::size_t n = shape_numel(shape);
  if (bytes.size() != 4 * n) {
    throw CheckpointError(file + ": " + std::to_string(bytes.size()) + " bytes for " + std::to_string(n) + " floats");
  }
  std::vector<float> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t{static_cast<unsigned char>(bytes[4 * i + b])} << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
  return Tensor(shape, std::move(values));
}

std::vector<float> as_vector(const Tensor& t) { return t.storage(); }

const char* variant_name(MaskVariant v) { return v == MaskVariant::with_relu ? "with_relu" : "no_relu"; }

MaskVariant parse_variant(const std::string& s) {
  if (s == "with_relu") return MaskVariant::with_relu;
  if (s == "no_relu") return MaskVariant::no_relu;
  throw CheckpointError("unknown mask variant '" + s + "'");
}

// json stores doubles as shortest round-trip text, so these survive exactly.
json hyper_json(const Model& m) {
  return {{"delta", m.hyper.delta},
          {"c", m.hyper.c},
          {"k", m.hyper.k},
          {"tau", m.hyper.tau},
          {"variant", variant_name(m.criterion.variant)},
          {"delta_new", m.criterion.delta_new}};
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir) {
  const Model& model = checkpoint.model;
  model.validate();
  std::filesystem::create_directories(dir);
  BlobWriter blobs(dir);
  json layers = json::array();
  for (const auto& layer : model.layers) {
    json entry;
    if (auto* conv = std::get_if<Conv2dLayer<float>>(&layer)) {
      entry = {{"type", "conv"},
               {"stride", conv->stride},
               {"padding", conv->padding},
               {"weight", blobs.put(conv->weight.data(), conv->weight.shape())}};
    } else if (auto* bn = std::get_if<BatchNormLayer<float>>(&layer)) {
      const Shape shape{bn->channels()};
      entry = {{"type", "bn"},
               {"masked", bn->masked},
               {"eps", bn->eps},
               {"beta", blobs.put(bn->beta.data(), shape)},
               {"gamma", blobs.put(bn->gamma.data(), shape)},
               {"running_mean", blobs.put(bn->running_mean, shape)},
               {"running_var", blobs.put(bn->running_var, shape)}};
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      entry = {{"type", "relu"}};
    } else if (auto* pool = std::get_if<AvgPoolLayer>(&layer)) {
      entry = {{"type", "avgpool"}, {"kernel", pool->kernel}};
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
      entry = {{"type", "flatten"}};
    } else if (auto* dense = std::get_if<DenseLayer<float>>(&layer)) {
      entry = {{"type", "dense"},
               {"weight", blobs.put(dense->weight.data(), dense->weight.shape())},
               {"bias", blobs.put(dense->bias.data(), dense->bias.shape())}};
    }
    layers.push_back(std::move(entry));
  }
  json manifest = {{"format_version", kFormatVersion},
                   {"architecture", model.architecture},
                   {"input_shape", model.input_shape},
                   {"num_classes", model.num_classes},
                   {"mask", hyper_json(model)},
                   {"layers", std::move(layers)},
                   {"epoch", checkpoint.meta.epoch},
                   {"config_hash", checkpoint.meta.config_hash},
                   {"config", checkpoint.meta.config_text}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << "\n";
  if (!out) throw CheckpointError("cannot write " + (dir / "manifest.json").string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw CheckpointError("no checkpoint manifest at " + manifest_path.string());
  Checkpoint ck;
  try {
    const json manifest = json::parse(in);
    if (manifest.at("format_version").get<int>() != kFormatVersion) {
      throw CheckpointError("unsupported checkpoint format_version");
    }
    Model& m = ck.model;
    m.architecture = manifest.at("architecture").get<std::string>();
    m.input_shape = manifest.at("input_shape").get<Shape>();
    m.num_classes = manifest.at("num_classes").get<std::size_t>();
    const auto& mask = manifest.at("mask");
    m.hyper = {mask.at("delta").get<double>(), mask.at("c").get<double>(), mask.at("k").get<double>(),
               mask.at("tau").get<double>()};
    m.criterion = {parse_variant(mask.at("variant").get<std::string>()), mask.at("delta_new").get<double>()};
    for (const auto& entry : manifest.at("layers")) {
      const auto type = entry.at("type").get<std::string>();
      if (type == "conv") {
        m.layers.push_back(Conv2dLayer<float>{read_blob(dir, entry.at("weight")), entry.at("stride").get<std::size_t>(),
                                              entry.at("padding").get<std::size_t>()});
      } else if (type == "bn") {
        BatchNormLayer<float> bn;
        bn.beta = read_blob(dir, entry.at("beta"));
        bn.gamma = read_blob(dir, entry.at("gamma"));
        bn.running_mean = as_vector(read_blob(dir, entry.at("running_mean")));
        bn.running_var = as_vector(read_blob(dir, entry.at("running_var")));
        bn.eps = entry.at("eps").get<float>();
        bn.masked = entry.at("masked").get<bool>();
        m.layers.push_back(std::move(bn));
      } else if (type == "relu") {
        m.layers.push_back(ReluLayer{});
      } else if (type == "avgpool") {
        m.layers.push_back(AvgPoolLayer{entry.at("kernel").get<std::size_t>()});
      } else if (type == "flatten") {
        m.layers.push_back(FlattenLayer{});
      } else if (type == "dense") {
        m.layers.push_back(DenseLayer<float>{read_blob(dir, entry.at("weight")), read_blob(dir, entry.at("bias"))});
      } else {
        throw CheckpointError("unknown layer type '" + type + "'");
      }
    }
    ck.meta.epoch = manifest.at("epoch").get<std::size_t>();
    ck.meta.config_hash = manifest.at("config_hash").get<std::string>();
    ck.meta.config_text = manifest.at("config").get<std::string>();
  } catch (const json::exception& e) {
    throw CheckpointError(manifest_path.string() + ": " + e.what());
  }
  try {
    ck.model.validate();
  } catch (const std::exception& e) {
    throw CheckpointError(manifest_path.string() + ": " + e.what());
  }
  return ck;
}

}  // namespace scp
