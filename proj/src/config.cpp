#include "scp/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace scp {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  for (char ch : key) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '_' ||
                    ch == '.';
    if (!ok) return false;
  }
  return true;
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  }
}

std::uint64_t to_uint(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + value + "'");
  }
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::vector<float> to_float_list(const std::string& key, const std::string& value) {
  std::vector<float> out;
  for (double v : parse_number_list(value)) out.push_back(static_cast<float>(v));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[40];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::stod(buf) == v) break;
  }
  return buf;
}

template <typename Seq>
std::string join(const Seq& values) {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += ",";
    out += num(static_cast<double>(v));
  }
  return out;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "dataset.format",      "dataset.train_images", "dataset.train_labels", "dataset.test_images",
      "dataset.test_labels", "dataset.train_path",   "dataset.test_path",    "dataset.train_size",
      "dataset.test_size",   "dataset.mean",         "dataset.std",          "dataset.flip",
      "model.architecture",  "mask.delta",           "mask.c",               "mask.k",
      "mask.tau",            "sparsity.lambda",      "sparsity.s",           "sparsity.delta_new",
      "sparsity.variant",    "sparsity.target_ratio", "optim.lr",            "optim.momentum",
      "optim.weight_decay",  "optim.decay_epochs",   "optim.decay_factor",   "train.epochs",
      "train.batch_size",    "train.seed",           "output.dir"};
  return keys;
}

}  // namespace

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(to_double("list", item));
  }
  return out;
}

KeyValueDoc KeyValueDoc::parse(const std::string& text, const std::string& source) {
  KeyValueDoc doc;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!valid_key(key)) throw ConfigError(source + ":" + std::to_string(line_no) + ": invalid key '" + key + "'");
    doc.entries_[key] = trim(line.substr(eq + 1));
  }
  return doc;
}

KeyValueDoc KeyValueDoc::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

std::optional<std::string> KeyValueDoc::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

ExperimentConfig ExperimentConfig::from_doc(const KeyValueDoc& doc, const std::filesystem::path& base_dir) {
  for (const auto& [key, value] : doc.entries()) {
    if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  ExperimentConfig cfg;
  auto str = [&](const char* key, auto& field) {
    if (auto v = doc.get(key)) field = *v;
  };
  auto path = [&](const char* key, std::filesystem::path& field) {
    if (auto v = doc.get(key)) {
      std::filesystem::path p(*v);
      field = (p.is_relative() && !base_dir.empty()) ? base_dir / p : p;
    }
  };
  auto dbl = [&](const char* key, double& field) {
    if (auto v = doc.get(key)) field = to_double(key, *v);
  };
  auto size = [&](const char* key, std::size_t& field) {
    if (auto v = doc.get(key)) field = static_cast<std::size_t>(to_uint(key, *v));
  };

  auto& ds = cfg.dataset;
  str("dataset.format", ds.format);
  path("dataset.train_images", ds.train_images);
  path("dataset.train_labels", ds.train_labels);
  path("dataset.test_images", ds.test_images);
  path("dataset.test_labels", ds.test_labels);
  path("dataset.train_path", ds.train_path);
  path("dataset.test_path", ds.test_path);
  size("dataset.train_size", ds.train_size);
  size("dataset.test_size", ds.test_size);
  if (auto v = doc.get("dataset.mean")) ds.mean = to_float_list("dataset.mean", *v);
  if (auto v = doc.get("dataset.std")) ds.std = to_float_list("dataset.std", *v);
  if (auto v = doc.get("dataset.flip")) ds.flip = to_bool("dataset.flip", *v);

  str("model.architecture", cfg.architecture);
  dbl("mask.delta", cfg.mask.delta);
  dbl("mask.c", cfg.mask.c);
  dbl("mask.k", cfg.mask.k);
  dbl("mask.tau", cfg.mask.tau);
  dbl("sparsity.lambda", cfg.sparsity.lambda);
  dbl("sparsity.s", cfg.sparsity.s);
  dbl("sparsity.delta_new", cfg.sparsity.delta_new);
  if (auto v = doc.get("sparsity.variant")) {
    if (*v == "with_relu") cfg.sparsity.variant = MaskVariant::with_relu;
    else if (*v == "no_relu") cfg.sparsity.variant = MaskVariant::no_relu;
    else throw ConfigError("config key 'sparsity.variant': expected with_relu or no_relu, got '" + *v + "'");
  }
  if (auto v = doc.get("sparsity.target_ratio")) {
    if (*v == "none" || v->empty()) cfg.sparsity.target_ratio.reset();
    else cfg.sparsity.target_ratio = to_double("sparsity.target_ratio", *v);
  }
  dbl("optim.lr", cfg.schedule.initial);
  dbl("optim.momentum", cfg.momentum);
  dbl("optim.weight_decay", cfg.weight_decay);
  dbl("optim.decay_factor", cfg.schedule.factor);
  if (auto v = doc.get("optim.decay_epochs")) {
    cfg.schedule.decay_epochs.clear();
    for (double e : parse_number_list(*v)) {
      if (e < 0 || e != static_cast<double>(static_cast<std::size_t>(e))) {
        throw ConfigError("config key 'optim.decay_epochs': epochs must be non-negative integers");
      }
      cfg.schedule.decay_epochs.push_back(static_cast<std::size_t>(e));
    }
  }
  size("train.epochs", cfg.epochs);
  size("train.batch_size", cfg.batch_size);
  if (auto v = doc.get("train.seed")) cfg.seed = to_uint("train.seed", *v);
  path("output.dir", cfg.output_dir);
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path,
                                        const std::map<std::string, std::string>& overrides) {
  auto doc = KeyValueDoc::load(path);
  for (const auto& [key, value] : overrides) doc.set(key, value);
  return from_doc(doc, path.parent_path());
}

void ExperimentConfig::validate() const {
  if (dataset.format != "idx" && dataset.format != "cifar") {
    throw ConfigError("dataset.format must be idx or cifar, got '" + dataset.format + "'");
  }
  if (dataset.mean.size() != dataset.std.size()) throw ConfigError("dataset.mean and dataset.std differ in length");
  if (architecture != "convnet-s" && architecture != "vgg-mini") {
    throw ConfigError("model.architecture must be convnet-s or vgg-mini, got '" + architecture + "'");
  }
  try {
    mask.validate();
    sparsity.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(schedule.initial > 0.0)) throw ConfigError("optim.lr must be positive");
  if (!(schedule.factor > 0.0)) throw ConfigError("optim.decay_factor must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("optim.momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("optim.weight_decay must be non-negative");
  if (batch_size < 2) throw ConfigError("train.batch_size must be at least 2 (batch variance)");
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
}

void ExperimentConfig::check_paths() const {
  const std::vector<std::filesystem::path> paths =
      dataset.format == "idx"
          ? std::vector<std::filesystem::path>{dataset.train_images, dataset.train_labels, dataset.test_images,
                                               dataset.test_labels}
          : std::vector<std::filesystem::path>{dataset.train_path, dataset.test_path};
  for (const auto& p : paths) {
    if (p.empty() || !std::filesystem::exists(p)) throw ConfigError("dataset file not found: '" + p.string() + "'");
  }
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream out;
  out << "dataset.format = " << dataset.format << "\n";
  if (dataset.format == "idx") {
    out << "dataset.train_images = " << dataset.train_images.string() << "\n";
    out << "dataset.train_labels = " << dataset.train_labels.string() << "\n";
    out << "dataset.test_images = " << dataset.test_images.string() << "\n";
    out << "dataset.test_labels = " << dataset.test_labels.string() << "\n";
  } else {
    out << "dataset.train_path = " << dataset.train_path.string() << "\n";
    out << "dataset.test_path = " << dataset.test_path.string() << "\n";
  }
  out << "dataset.train_size = " << dataset.train_size << "\n";
  out << "dataset.test_size = " << dataset.test_size << "\n";
  out << "dataset.mean = " << join(dataset.mean) << "\n";
  out << "dataset.std = " << join(dataset.std) << "\n";
  out << "dataset.flip = " << (dataset.flip ? "true" : "false") << "\n";
  out << "model.architecture = " << architecture << "\n";
  out << "mask.delta = " << num(mask.delta) << "\n";
  out << "mask.c = " << num(mask.c) << "\n";
  out << "mask.k = " << num(mask.k) << "\n";
  out << "mask.tau = " << num(mask.tau) << "\n";
  out << "sparsity.lambda = " << num(sparsity.lambda) << "\n";
  out << "sparsity.s = " << num(sparsity.s) << "\n";
  out << "sparsity.delta_new = " << num(sparsity.delta_new) << "\n";
  out << "sparsity.variant = " << (sparsity.variant == MaskVariant::with_relu ? "with_relu" : "no_relu") << "\n";
  out << "sparsity.target_ratio = " << (sparsity.target_ratio ? num(*sparsity.target_ratio) : "none") << "\n";
  out << "optim.lr = " << num(schedule.initial) << "\n";
  out << "optim.momentum = " << num(momentum) << "\n";
  out << "optim.weight_decay = " << num(weight_decay) << "\n";
  out << "optim.decay_epochs = " << join(schedule.decay_epochs) << "\n";
  out << "optim.decay_factor = " << num(schedule.factor) << "\n";
  out << "train.epochs = " << epochs << "\n";
  out << "train.batch_size = " << batch_size << "\n";
  out << "train.seed = " << seed << "\n";
  out << "output.dir = " << output_dir.string() << "\n";
  return out.str();
}

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_text()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Normalization normalization_of(const DatasetSpec& spec) { return {spec.mean, spec.std}; }

DatasetPair load_datasets(const DatasetSpec& spec) {
  const auto norm = normalization_of(spec);
  if (spec.format == "idx") {
    return {load_idx(spec.train_images, spec.train_labels, norm, spec.train_size),
            load_idx(spec.test_images, spec.test_labels, norm, spec.test_size)};
  }
  return {load_cifar_binary(spec.train_path, norm, spec.train_size),
          load_cifar_binary(spec.test_path, norm, spec.test_size)};
}

}  // namespace scp
