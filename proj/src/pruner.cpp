#include "scp/pruner.hpp"

#include <algorithm>
#include <cstdio>
#include <optional>
#include <sstream>
#include <stdexcept>

namespace scp {

MaskExtraction extract_masks(const Model& model) { return extract_masks(model, model.hyper, model.criterion); }

MaskExtraction extract_masks(const Model& model, const MaskHyperParams& hyper, const MaskCriterion& criterion) {
  const auto bn_layers = model.bn_layer_indices();
  if (bn_layers.empty()) throw std::invalid_argument("extract_masks: model has no BN layer");
  MaskExtraction out;
  for (auto index : bn_layers) {
    const auto& bn = std::get<BatchNormLayer<float>>(model.layers[index]);
    std::vector<int> mask(bn.channels(), 1);
    if (bn.masked) {
      std::vector<double> phi(bn.channels());
      for (std::size_t c = 0; c < bn.channels(); ++c) {
        const auto prob = mask_probability<double>(bn.beta[c], bn.gamma[c], hyper, criterion);
        phi[c] = prob.value;
        mask[c] = prob.value >= hyper.c ? 0 : 1;
      }
      if (std::none_of(mask.begin(), mask.end(), [](int m) { return m == 1; })) {
        const auto keep = static_cast<std::size_t>(std::min_element(phi.begin(), phi.end()) - phi.begin());
        mask[keep] = 1;
        out.warnings.push_back("layer " + std::to_string(index) + ": every channel met the prune threshold; keeping channel " +
                               std::to_string(keep) + " (lowest mask probability)");
      }
    }
    out.masks.push_back(std::move(mask));
  }
  return out;
}

namespace {

std::vector<std::size_t> kept_indices(const std::vector<int>& mask) {
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) kept.push_back(i);
  }
  return kept;
}

Tensor slice_conv(const Tensor& weight, const std::vector<std::size_t>* out_keep,
                  const std::vector<std::size_t>* in_keep) {
  const std::size_t c_out = weight.dim(0), c_in = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  std::vector<std::size_t> rows(c_out), cols(c_in);
  for (std::size_t i = 0; i < c_out; ++i) rows[i] = i;
  for (std::size_t i = 0; i < c_in; ++i) cols[i] = i;
  if (out_keep) rows = *out_keep;
  if (in_keep) cols = *in_keep;
  Tensor out({rows.size(), cols.size(), kh, kw});
  for (std::size_t o = 0; o < rows.size(); ++o)
    for (std::size_t i = 0; i < cols.size(); ++i)
      for (std::size_t y = 0; y < kh; ++y)
        for (std::size_t x = 0; x < kw; ++x) out.at(o, i, y, x) = weight.at(rows[o], cols[i], y, x);
  return out;
}

template <typename V>
V pick(const V& values, const std::vector<std::size_t>& keep) {
  V out;
  for (auto i : keep) out.push_back(values[i]);
  return out;
}

Tensor pick_tensor(const Tensor& t, const std::vector<std::size_t>& keep) {
  return Tensor({keep.size()}, pick(t.storage(), keep));
}

}  // namespace

Model surgery(const Model& model, const ChannelMasks& masks) {
  model.validate();
  const auto bn_layers = model.bn_layer_indices();
  if (masks.size() != bn_layers.size()) {
    throw std::invalid_argument("surgery: " + std::to_string(masks.size()) + " masks for " +
                                std::to_string(bn_layers.size()) + " BN layers");
  }
  std::vector<std::optional<std::size_t>> mask_of(model.layers.size());
  for (std::size_t b = 0; b < bn_layers.size(); ++b) {
    const auto& bn = std::get<BatchNormLayer<float>>(model.layers[bn_layers[b]]);
    if (masks[b].size() != bn.channels()) {
      throw std::invalid_argument("surgery: mask " + std::to_string(b) + " has " + std::to_string(masks[b].size()) +
                                  " entries for " + std::to_string(bn.channels()) + " channels");
    }
    if (std::none_of(masks[b].begin(), masks[b].end(), [](int m) { return m != 0; })) {
      throw std::invalid_argument("surgery: mask " + std::to_string(b) + " removes every channel");
    }
    mask_of[bn_layers[b]] = b;
  }

  Model out = model;
  // Kept channel indices of the tensor flowing between layers; nullopt = all.
  std::optional<std::vector<std::size_t>> live;
  std::size_t h = model.input_shape[1], w = model.input_shape[2];
  std::size_t flat_plane = 0;
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    auto& layer = out.layers[i];
    if (auto* conv = std::get_if<Conv2dLayer<float>>(&layer)) {
      std::optional<std::vector<std::size_t>> produced;
      if (i + 1 < out.layers.size() && mask_of[i + 1]) produced = kept_indices(masks[*mask_of[i + 1]]);
      conv->weight = slice_conv(conv->weight, produced ? &*produced : nullptr, live ? &*live : nullptr);
      h = (h + 2 * conv->padding - conv->weight.dim(2)) / conv->stride + 1;
      w = (w + 2 * conv->padding - conv->weight.dim(3)) / conv->stride + 1;
      live = std::move(produced);
    } else if (auto* bn = std::get_if<BatchNormLayer<float>>(&layer)) {
      const auto keep = kept_indices(masks[*mask_of[i]]);
      const bool preceded_by_conv = i > 0 && std::holds_alternative<Conv2dLayer<float>>(model.layers[i - 1]);
      if (keep.size() != bn->channels() && !preceded_by_conv) {
        throw std::invalid_argument("surgery: BN layer " + std::to_string(i) +
                                    " is not fed by a conv, so its channels cannot be removed");
      }
      bn->beta = pick_tensor(bn->beta, keep);
      bn->gamma = pick_tensor(bn->gamma, keep);
      bn->running_mean = pick(bn->running_mean, keep);
      bn->running_var = pick(bn->running_var, keep);
      bn->masked = false;
    } else if (auto* pool = std::get_if<AvgPoolLayer>(&layer)) {
      h /= pool->kernel;
      w /= pool->kernel;
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
      flat_plane = h * w;
    } else if (auto* dense = std::get_if<DenseLayer<float>>(&layer)) {
      if (live) {
        // Flatten lays channels out as contiguous H*W blocks.
        const std::size_t d_out = dense->weight.dim(0), d_in = dense->weight.dim(1);
        Tensor weight({d_out, live->size() * flat_plane});
        for (std::size_t o = 0; o < d_out; ++o) {
          std::size_t col = 0;
          for (auto c : *live)
            for (std::size_t p = 0; p < flat_plane; ++p) weight[o * weight.dim(1) + col++] = dense->weight[o * d_in + c * flat_plane + p];
        }
        dense->weight = std::move(weight);
        live.reset();
      }
    }
  }
  out.validate();
  return out;
}

std::uint64_t count_params(const Model& model) {
  std::uint64_t total = 0;
  for (const auto& layer : model.layers) {
    if (auto* conv = std::get_if<Conv2dLayer<float>>(&layer)) total += conv->weight.size();
    if (auto* bn = std::get_if<BatchNormLayer<float>>(&layer)) total += bn->beta.size() + bn->gamma.size();
    if (auto* dense = std::get_if<DenseLayer<float>>(&layer)) total += dense->weight.size() + dense->bias.size();
  }
  return total;
}

std::uint64_t count_flops(const Model& model, const Shape& input_shape) {
  if (input_shape.size() != 3) throw std::invalid_argument("count_flops: input shape must be [C,H,W]");
  std::uint64_t h = input_shape[1], w = input_shape[2];
  std::uint64_t total = 0;
  for (const auto& layer : model.layers) {
    if (auto* conv = std::get_if<Conv2dLayer<float>>(&layer)) {
      const std::uint64_t kh = conv->weight.dim(2), kw = conv->weight.dim(3);
      if (h + 2 * conv->padding < kh || w + 2 * conv->padding < kw) {
        throw std::invalid_argument("count_flops: input too small for conv kernel");
      }
      h = (h + 2 * conv->padding - kh) / conv->stride + 1;
      w = (w + 2 * conv->padding - kw) / conv->stride + 1;
      total += 2 * h * w * conv->weight.dim(0) * conv->weight.dim(1) * kh * kw;
    } else if (auto* pool = std::get_if<AvgPoolLayer>(&layer)) {
      h /= pool->kernel;
      w /= pool->kernel;
    } else if (auto* dense = std::get_if<DenseLayer<float>>(&layer)) {
      total += 2 * static_cast<std::uint64_t>(dense->weight.dim(0)) * dense->weight.dim(1);
    }
  }
  return total;
}

double reduction_pct(std::uint64_t before, std::uint64_t after) {
  if (before == 0) return 0.0;
  return 100.0 * (1.0 - static_cast<double>(after) / static_cast<double>(before));
}

double PruneReport::channel_reduction_pct() const { return reduction_pct(channels_before, channels_after); }
double PruneReport::param_reduction_pct() const { return reduction_pct(params_before, params_after); }
double PruneReport::flops_reduction_pct() const { return reduction_pct(flops_before, flops_after); }

PruneReport make_report(const Model& before, const Model& after, const Shape& input_shape) {
  const auto bn_before = before.bn_layer_indices();
  const auto bn_after = after.bn_layer_indices();
  if (bn_before.size() != bn_after.size()) {
    throw std::invalid_argument("make_report: models have different BN layer counts");
  }
  PruneReport report;
  for (std::size_t b = 0; b < bn_before.size(); ++b) {
    const auto total = std::get<BatchNormLayer<float>>(before.layers[bn_before[b]]).channels();
    const auto kept = std::get<BatchNormLayer<float>>(after.layers[bn_after[b]]).channels();
    report.layers.push_back({bn_before[b], kept, total});
    report.channels_before += total;
    report.channels_after += kept;
  }
  report.params_before = count_params(before);
  report.params_after = count_params(after);
  report.flops_before = count_flops(before, input_shape);
  report.flops_after = count_flops(after, input_shape);
  return report;
}

std::string format_report(const PruneReport& report) {
  std::ostringstream out;
  auto pct = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  out << "# prune report: reductions are 100 * (1 - after / before)\n";
  for (std::size_t i = 0; i < report.layers.size(); ++i) {
    const auto& l = report.layers[i];
    out << "bn." << i << ".layer = " << l.layer_index << "\n";
    out << "bn." << i << ".kept = " << l.kept << "\n";
    out << "bn." << i << ".total = " << l.total << "\n";
  }
  out << "channels.before = " << report.channels_before << "\n";
  out << "channels.after = " << report.channels_after << "\n";
  out << "channels.reduction_pct = " << pct(report.channel_reduction_pct()) << "\n";
  out << "params.before = " << report.params_before << "\n";
  out << "params.after = " << report.params_after << "\n";
  out << "params.reduction_pct = " << pct(report.param_reduction_pct()) << "\n";
  out << "flops.before = " << report.flops_before << "\n";
  out << "flops.after = " << report.flops_after << "\n";
  out << "flops.reduction_pct = " << pct(report.flops_reduction_pct()) << "\n";
  return out.str();
}

}  // namespace scp
