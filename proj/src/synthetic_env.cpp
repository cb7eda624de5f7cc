#include "l2pf/synthetic_env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "l2pf/rng.hpp"

namespace l2pf::env {

void SyntheticEnvConfig::validate() const {
  if (layers.empty()) throw std::invalid_argument("synthetic: no layers");
  if (!(recovery_saturation > 0.0)) {
    throw std::invalid_argument("synthetic: recovery_saturation must be > 0");
  }
  if (!(damage_scale >= 0.0)) {
    throw std::invalid_argument("synthetic: damage_scale must be >= 0");
  }
  if (!(residual() >= 0.0)) {
    throw std::invalid_argument("synthetic: residual_scale must be >= 0");
  }
  if (interaction != "additive") {
    throw std::invalid_argument("synthetic: unsupported interaction '" +
                                interaction + "'");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.num_filters < 1 || layer.in_channels < 1 || layer.kernel_size < 1) {
      throw std::invalid_argument("synthetic: layer " + std::to_string(l) +
                                  " has a zero dimension");
    }
    if (static_cast<int>(layer.importance.size()) != layer.num_filters) {
      throw std::invalid_argument("synthetic: layer " + std::to_string(l) +
                                  " needs " + std::to_string(layer.num_filters) +
                                  " importance values");
    }
    for (double s : layer.importance) {
      if (!(s >= 0.0) || !std::isfinite(s)) {
        throw std::invalid_argument("synthetic: importance must be finite and >= 0");
      }
    }
  }
}

std::vector<LayerSpec> SyntheticEnvConfig::layer_specs() const {
  std::vector<LayerSpec> specs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& c = layers[l];
    specs.push_back(LayerSpec{static_cast<int>(l), c.num_filters, c.in_channels,
                              c.kernel_size, c.block_id, c.prunable});
  }
  return specs;
}

double synthetic_damage(const SyntheticEnvConfig& cfg,
                        std::span<const PruneMask> masks, double epochs,
                        const ModelTopology* committed) {
  double importance = 0.0;
  for (const auto& mask : masks) {
    const int l = mask.layer_index();
    if (l < 0 || l >= static_cast<int>(cfg.layers.size())) {
      throw std::invalid_argument("synthetic: unknown layer " + std::to_string(l));
    }
    const auto& layer = cfg.layers[l];
    if (mask.size() != layer.num_filters) {
      throw std::invalid_argument("synthetic: mask for layer " + std::to_string(l) +
                                  " has " + std::to_string(mask.size()) +
                                  " bits, expected " +
                                  std::to_string(layer.num_filters));
    }
    const PruneMask* prior = committed ? committed->committed_mask(l) : nullptr;
    for (int i = 0; i < mask.size(); ++i) {
      if (mask.keeps(i)) continue;
      if (prior && !prior->keeps(i)) continue;
      importance += layer.importance[i];
    }
  }
  const double unrecovered = std::max(0.0, 1.0 - epochs / cfg.recovery_saturation);
  return cfg.damage_scale * importance * unrecovered + cfg.residual() * importance;
}

SyntheticEnvironment::SyntheticEnvironment(SyntheticEnvConfig cfg)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  topology_ = ModelTopology(cfg_.layer_specs());
  committed_acc_ = cfg_.acc_base;

  // Filter norms proportional to importance, random direction.
  Rng rng = make_stream(cfg_.seed, "synthetic-weights");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& layer : cfg_.layers) {
    WeightTensor w = WeightTensor::zeros(layer.num_filters, layer.in_channels,
                                         layer.kernel_size);
    for (int i = 0; i < layer.num_filters; ++i) {
      auto f = w.filter(i);
      double norm = 0.0;
      for (double& v : f) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      const double scale = norm > 0.0 ? layer.importance[i] / norm : 0.0;
      for (double& v : f) v *= scale;
    }
    weights_.push_back(std::move(w));
  }
}

void SyntheticEnvironment::check_masks(std::span<const PruneMask> masks) const {
  if (masks.empty()) throw std::invalid_argument("synthetic: no masks given");
  for (const auto& m : masks) {
    const auto& spec = topology_.layer(m.layer_index());
    if (!spec.prunable) {
      throw std::invalid_argument("synthetic: layer " +
                                  std::to_string(m.layer_index()) +
                                  " is not prunable");
    }
  }
}

WeightTensor SyntheticEnvironment::state_of(int layer_index) {
  topology_.layer(layer_index);
  return weights_[layer_index];
}

double SyntheticEnvironment::evaluate(std::span<const PruneMask> masks,
                                      double epochs, int /*sample*/) {
  check_masks(masks);
  return committed_acc_ - synthetic_damage(cfg_, masks, epochs, &topology_);
}

CommitResult SyntheticEnvironment::commit(std::span<const PruneMask> masks,
                                          double final_epochs) {
  check_masks(masks);
  const double damage = synthetic_damage(cfg_, masks, final_epochs, &topology_);
  for (const auto& m : masks) {
    // Pruning is permanent: union with anything committed earlier.
    std::vector<std::uint8_t> bits(m.bits().begin(), m.bits().end());
    if (const PruneMask* prior = topology_.committed_mask(m.layer_index())) {
      for (int i = 0; i < prior->size(); ++i) bits[i] &= prior->bits()[i];
    }
    PruneMask merged(m.layer_index(), std::move(bits));
    topology_.commit(merged);
    auto& w = weights_[m.layer_index()];
    const auto next = topology_.next_prunable(m.layer_index());
    for (int i = 0; i < merged.size(); ++i) {
      if (merged.keeps(i)) continue;
      w.zero_filter(i);
      if (next && weights_[*next].in_channels() == merged.size()) {
        weights_[*next].zero_input_channel(i);
      }
    }
  }
  committed_acc_ -= damage;
  return CommitResult{committed_acc_, std::nullopt};
}

}  // namespace l2pf::env
