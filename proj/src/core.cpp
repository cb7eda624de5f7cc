#include "l2pf/core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace l2pf {

WeightTensor::WeightTensor(int num_filters, int in_channels, int kernel_size,
                           std::vector<double> values)
    : num_filters_(num_filters),
      in_channels_(in_channels),
      kernel_size_(kernel_size),
      values_(std::move(values)) {
  if (num_filters < 1 || in_channels < 1 || kernel_size < 1) {
    throw std::invalid_argument("WeightTensor: dimensions must be >= 1");
  }
  if (values_.size() != num_filters_ * filter_size()) {
    throw std::invalid_argument("WeightTensor: expected " +
                                std::to_string(num_filters_ * filter_size()) +
                                " values, got " +
                                std::to_string(values_.size()));
  }
  for (double v : values_) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("WeightTensor: non-finite value");
    }
  }
}

WeightTensor WeightTensor::zeros(int num_filters, int in_channels,
                                 int kernel_size) {
  const std::size_t n = static_cast<std::size_t>(std::max(num_filters, 0)) *
                        std::max(in_channels, 0) * kernel_size * kernel_size;
  return WeightTensor(num_filters, in_channels, kernel_size,
                      std::vector<double>(n, 0.0));
}

std::span<const double> WeightTensor::filter(int i) const {
  if (i < 0 || i >= num_filters_) throw std::out_of_range("filter index");
  return std::span<const double>(values_).subspan(i * filter_size(),
                                                  filter_size());
}

std::span<double> WeightTensor::filter(int i) {
  if (i < 0 || i >= num_filters_) throw std::out_of_range("filter index");
  return std::span<double>(values_).subspan(i * filter_size(), filter_size());
}

void WeightTensor::zero_filter(int i) {
  auto f = filter(i);
  std::fill(f.begin(), f.end(), 0.0);
}

void WeightTensor::zero_input_channel(int j) {
  if (j < 0 || j >= in_channels_) throw std::out_of_range("channel index");
  const std::size_t kk = static_cast<std::size_t>(kernel_size_) * kernel_size_;
  for (int i = 0; i < num_filters_; ++i) {
    auto f = filter(i).subspan(j * kk, kk);
    std::fill(f.begin(), f.end(), 0.0);
  }
}

PruneMask::PruneMask(int layer_index, std::vector<std::uint8_t> bits)
    : layer_index_(layer_index), bits_(std::move(bits)) {
  if (layer_index_ < 0) throw std::invalid_argument("PruneMask: negative layer");
  if (bits_.empty()) throw std::invalid_argument("PruneMask: empty mask");
  for (auto b : bits_) {
    if (b > 1) throw std::invalid_argument("PruneMask: bits must be 0 or 1");
  }
}

PruneMask PruneMask::keep_all(int layer_index, int num_filters) {
  return PruneMask(layer_index, std::vector<std::uint8_t>(num_filters, 1));
}

int PruneMask::pruned_count() const {
  return static_cast<int>(std::count(bits_.begin(), bits_.end(), 0));
}

std::string PruneMask::bitstring() const {
  std::string s(bits_.size(), '0');
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i]) s[i] = '1';
  }
  return s;
}

std::string PruneMask::to_string() const {
  return std::to_string(layer_index_) + ":" + bitstring();
}

PruneMask PruneMask::from_bitstring(int layer_index, std::string_view text) {
  std::vector<std::uint8_t> bits;
  bits.reserve(text.size());
  for (char ch : text) {
    if (ch == '1') {
      bits.push_back(1);
    } else if (ch == '0') {
      bits.push_back(0);
    } else {
      throw std::invalid_argument("PruneMask: invalid bit character '" +
                                  std::string(1, ch) + "'");
    }
  }
  return PruneMask(layer_index, std::move(bits));
}

PruneMask PruneMask::parse(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos || colon == 0) {
    throw std::invalid_argument("PruneMask: expected 'layer:bits', got '" +
                                std::string(text) + "'");
  }
  int layer = 0;
  for (char ch : text.substr(0, colon)) {
    if (ch < '0' || ch > '9') {
      throw std::invalid_argument("PruneMask: bad layer index in '" +
                                  std::string(text) + "'");
    }
    layer = layer * 10 + (ch - '0');
  }
  return from_bitstring(layer, text.substr(colon + 1));
}

int ActionSet::total_filters() const {
  int n = 0;
  for (const auto& m : prune_masks) n += m.size();
  return n;
}

int ActionSet::total_pruned() const {
  int n = 0;
  for (const auto& m : prune_masks) n += m.pruned_count();
  return n;
}

ModelTopology::ModelTopology(std::vector<LayerSpec> layers)
    : layers_(std::move(layers)) {
  std::map<int, int> block_sizes;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.layer_index != static_cast<int>(i)) {
      throw std::invalid_argument(
          "ModelTopology: layer indices must be 0..L-1 in order");
    }
    if (l.num_filters < 1 || l.in_channels < 1 || l.kernel_size < 1) {
      throw std::invalid_argument("ModelTopology: layer " + std::to_string(i) +
                                  " has a zero dimension");
    }
    if (l.block_id && l.prunable) ++block_sizes[*l.block_id];
  }
  for (const auto& [block, count] : block_sizes) {
    if (count != 2) {
      throw std::invalid_argument("ModelTopology: block " +
                                  std::to_string(block) + " has " +
                                  std::to_string(count) +
                                  " prunable layers, expected 2");
    }
  }
}

const LayerSpec& ModelTopology::layer(int layer_index) const {
  if (layer_index < 0 || layer_index >= size()) {
    throw std::out_of_range("unknown layer index " +
                            std::to_string(layer_index));
  }
  return layers_[layer_index];
}

const PruneMask* ModelTopology::committed_mask(int layer_index) const {
  auto it = masks_.find(layer_index);
  return it == masks_.end() ? nullptr : &it->second;
}

void ModelTopology::commit(const PruneMask& mask) {
  const auto& l = layer(mask.layer_index());
  if (!l.prunable) {
    throw std::invalid_argument("commit: layer " +
                                std::to_string(l.layer_index) +
                                " is not prunable");
  }
  if (mask.size() != l.num_filters) {
    throw std::invalid_argument("commit: mask length " +
                                std::to_string(mask.size()) + " != N=" +
                                std::to_string(l.num_filters));
  }
  masks_.insert_or_assign(mask.layer_index(), mask);
}

std::optional<int> ModelTopology::next_prunable(int layer_index) const {
  for (int j = layer_index + 1; j < size(); ++j) {
    if (layers_[j].prunable) return j;
  }
  return std::nullopt;
}

std::optional<int> ModelTopology::previous_prunable(int layer_index) const {
  for (int j = layer_index - 1; j >= 0; --j) {
    if (layers_[j].prunable) return j;
  }
  return std::nullopt;
}

namespace {

// Pruned filter count of the layer feeding kernel propagation into
// layer_index, validated against its input channel count.
const PruneMask* upstream_mask(const ModelTopology& topology, int layer_index) {
  const auto prev = topology.previous_prunable(layer_index);
  if (!prev) return nullptr;
  const PruneMask* mask = topology.committed_mask(*prev);
  if (!mask) return nullptr;
  const auto& l = topology.layer(layer_index);
  if (mask->pruned_count() > l.in_channels) {
    throw std::invalid_argument(
        "topology mismatch: upstream layer " + std::to_string(*prev) +
        " pruned " + std::to_string(mask->pruned_count()) +
        " filters but layer " + std::to_string(layer_index) + " has c=" +
        std::to_string(l.in_channels));
  }
  if (mask->size() != l.in_channels) {
    throw std::invalid_argument(
        "topology mismatch: layer " + std::to_string(layer_index) + " has c=" +
        std::to_string(l.in_channels) + " but upstream layer " +
        std::to_string(*prev) + " has N=" + std::to_string(mask->size()));
  }
  return mask;
}

}  // namespace

double layer_cr(const ModelTopology& topology, int layer_index) {
  const auto& l = topology.layer(layer_index);
  const PruneMask* up = upstream_mask(topology, layer_index);
  const int n_up = up ? up->pruned_count() : 0;
  return static_cast<double>(l.in_channels - n_up) / l.in_channels;
}

std::size_t surviving_weights(const ModelTopology& topology, int layer_index) {
  const auto& l = topology.layer(layer_index);
  const PruneMask* own = topology.committed_mask(layer_index);
  const PruneMask* up = upstream_mask(topology, layer_index);
  const std::size_t kept_filters = own ? own->kept_count() : l.num_filters;
  const std::size_t kept_channels = up ? up->kept_count() : l.in_channels;
  return kept_filters * kept_channels * l.kernel_size * l.kernel_size;
}

double model_cr(const ModelTopology& topology) {
  if (topology.size() == 0) {
    throw std::invalid_argument("model_cr: topology has no layers");
  }
  std::size_t total = 0;
  std::size_t surviving = 0;
  for (const auto& l : topology.layers()) {
    total += l.weight_count();
    surviving += surviving_weights(topology, l.layer_index);
  }
  if (surviving == 0) {
    throw std::invalid_argument("model_cr: no surviving weights");
  }
  return static_cast<double>(total) / static_cast<double>(surviving);
}

}  // namespace l2pf
