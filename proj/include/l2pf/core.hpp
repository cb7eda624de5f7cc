#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace l2pf {

// One convolutional layer of the model being pruned: N filters of shape
// c x k x k.
struct LayerSpec {
  int layer_index = 0;
  int num_filters = 1;
  int in_channels = 1;
  int kernel_size = 1;
  std::optional<int> block_id;
  bool prunable = true;

  std::size_t filter_size() const {
    return static_cast<std::size_t>(in_channels) * kernel_size * kernel_size;
  }
  std::size_t weight_count() const { return num_filters * filter_size(); }

  bool operator==(const LayerSpec&) const = default;
};

// Dense N x c x k x k weight tensor, row-major with the filter index outermost.
class WeightTensor {
 public:
  WeightTensor() = default;
  WeightTensor(int num_filters, int in_channels, int kernel_size,
               std::vector<double> values);
  static WeightTensor zeros(int num_filters, int in_channels, int kernel_size);

  int num_filters() const { return num_filters_; }
  int in_channels() const { return in_channels_; }
  int kernel_size() const { return kernel_size_; }
  std::size_t filter_size() const {
    return static_cast<std::size_t>(in_channels_) * kernel_size_ * kernel_size_;
  }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  std::span<const double> filter(int i) const;
  std::span<double> filter(int i);

  // Zeroes filter i (an output channel).
  void zero_filter(int i);
  // Zeroes input channel j of every filter.
  void zero_input_channel(int j);

  bool operator==(const WeightTensor&) const = default;

 private:
  int num_filters_ = 0;
  int in_channels_ = 0;
  int kernel_size_ = 0;
  std::vector<double> values_;
};

// Keep/prune decision for every filter of one layer. bit 1 = keep, 0 = prune.
class PruneMask {
 public:
  PruneMask() = default;
  PruneMask(int layer_index, std::vector<std::uint8_t> bits);
  static PruneMask keep_all(int layer_index, int num_filters);

  int layer_index() const { return layer_index_; }
  int size() const { return static_cast<int>(bits_.size()); }
  bool keeps(int i) const { return bits_.at(i) != 0; }
  std::span<const std::uint8_t> bits() const { return bits_; }

  int pruned_count() const;
  int kept_count() const { return size() - pruned_count(); }

  // Bitstring only, e.g. "1101".
  std::string bitstring() const;
  // Text form "7:1101".
  std::string to_string() const;
  static PruneMask parse(std::string_view text);
  static PruneMask from_bitstring(int layer_index, std::string_view bits);

  bool operator==(const PruneMask&) const = default;

 private:
  int layer_index_ = 0;
  std::vector<std::uint8_t> bits_;
};

// One sampled joint action. The epoch action is stored exactly as drawn.
struct ActionSet {
  std::vector<PruneMask> prune_masks;
  double epoch_action_raw = 0.0;
  int sample_index = 0;

  int total_filters() const;
  int total_pruned() const;
};

// The model being pruned: ordered layers plus the masks committed so far.
class ModelTopology {
 public:
  ModelTopology() = default;
  explicit ModelTopology(std::vector<LayerSpec> layers);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(int layer_index) const;
  int size() const { return static_cast<int>(layers_.size()); }

  const std::map<int, PruneMask>& committed_masks() const { return masks_; }
  const PruneMask* committed_mask(int layer_index) const;
  void commit(const PruneMask& mask);

  // Next prunable layer after layer_index (receives kernel propagation).
  std::optional<int> next_prunable(int layer_index) const;
  // Closest prunable layer before layer_index.
  std::optional<int> previous_prunable(int layer_index) const;

 private:
  std::vector<LayerSpec> layers_;
  std::map<int, PruneMask> masks_;
};

// (c - n_upstream) / c where n_upstream is the pruned count of the preceding
// prunable layer's committed mask.
double layer_cr(const ModelTopology& topology, int layer_index);

// Original weight count divided by the count of weights surviving filter
// zeroing and next-layer kernel propagation.
double model_cr(const ModelTopology& topology);

// Weights of one layer left after its own filter mask and the upstream
// layer's kernel propagation.
std::size_t surviving_weights(const ModelTopology& topology, int layer_index);

}  // namespace l2pf
