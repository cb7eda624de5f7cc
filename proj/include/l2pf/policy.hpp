#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "l2pf/core.hpp"
#include "l2pf/rng.hpp"

namespace l2pf::policy {

// Agent architecture. Every filter of the observed layer is flattened to a
// 1-channel sequence of length c*k*k and encoded by a shared stack of 1-D
// convolutions followed by global average pooling. The prune head maps each
// filter embedding to a keep probability; the epoch head maps the mean
// embedding to the epoch mean mu. Parameter count does not depend on N or c*k*k.
inline constexpr int kConvStages = 4;
inline constexpr std::array<int, kConvStages + 1> kConvChannels{1, 8, 16, 32,
                                                               32};
inline constexpr int kConvKernel = 3;
inline constexpr int kConvStride = 2;
inline constexpr int kConvPad = 1;
inline constexpr int kEmbedDim = 32;
inline constexpr int kHiddenDim = 16;
inline constexpr double kProbEps = 1e-4;
inline constexpr double kStandardizeEps = 1e-8;

struct Slot {
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct HeadLayout {
  Slot w1, b1, w2, b2;  // kEmbedDim -> kHiddenDim -> 1
};

struct ParamLayout {
  std::array<Slot, kConvStages> conv_w;  // [out][in][kernel]
  std::array<Slot, kConvStages> conv_b;
  HeadLayout prune;
  HeadLayout epoch;
  std::size_t total = 0;
};

const ParamLayout& layout();
inline std::size_t param_count() { return layout().total; }

// Output length of one convolution stage.
constexpr int conv_output_length(int input_length) {
  return (input_length + 2 * kConvPad - kConvKernel) / kConvStride + 1;
}

struct PolicyParams {
  std::vector<double> values;

  static PolicyParams zeros();
  // Fan-in scaled symmetric uniform init. With zero_final_layers the last
  // layer of both heads starts at zero, so p_i = mu = 0.5 initially.
  static PolicyParams initialize(Rng& rng, bool zero_final_layers = true);

  std::span<double> slot(const Slot& s) {
    return std::span<double>(values).subspan(s.offset, s.size);
  }
  std::span<const double> slot(const Slot& s) const {
    return std::span<const double>(values).subspan(s.offset, s.size);
  }

  std::uint64_t fingerprint() const;
  bool all_finite() const;
};

struct ParamGradient {
  std::vector<double> values;

  static ParamGradient zeros();
  ParamGradient& operator+=(const ParamGradient& other);
  ParamGradient& operator*=(double s);
  double norm() const;
  bool all_finite() const;
};

// Activations kept from the forward pass for backpropagation.
struct FilterCache {
  // acts[0] is the standardized input; acts[s + 1] the rectified output of
  // conv stage s, laid out [channel][position].
  std::array<std::vector<double>, kConvStages + 1> acts;
  std::array<int, kConvStages + 1> lengths{};
  std::vector<double> embedding;
  std::vector<double> hidden;  // rectified prune-head hidden layer
  double p_raw = 0.5;          // before clamping
};

struct ForwardCache {
  std::vector<FilterCache> filters;
  std::vector<double> mean_embedding;
  std::vector<double> epoch_hidden;
  std::uint64_t params_fingerprint = 0;
};

struct PolicyOutput {
  std::vector<double> keep_probs;  // one per filter, all segments concatenated
  double epoch_mu = 0.5;
  std::vector<int> segment_sizes;  // N of each observed layer
  ForwardCache cache;
};

// Observes one layer, or both layers of a residual block. Each tensor is
// standardized over all of its values before encoding.
PolicyOutput policy_forward(const PolicyParams& params,
                            std::span<const WeightTensor> states);
PolicyOutput policy_forward(const PolicyParams& params,
                            const WeightTensor& state);

// Exact gradient of sum_i prune_coeffs[i] * p_i + mu_coeff * mu.
ParamGradient policy_backward(const PolicyParams& params,
                              const PolicyOutput& out,
                              std::span<const double> prune_coeffs,
                              double mu_coeff);

// Exploration width of the epoch action. sigma is not learned; it tracks an
// exponential moving average of |R_retrain|, clamped to [sigma_min, sigma_max].
// The ceiling matters: |R_retrain| grows with |a|, which grows with sigma, so
// without it large accuracy drops make sigma grow geometrically.
struct SigmaSchedule {
  double sigma = 0.3;
  double sigma_min = 0.05;
  double sigma_max = 1.0;
  double c_sigma = 0.5;
  double running_abs_retrain_reward = 0.6;
  double ema_decay = 0.9;

  static SigmaSchedule make(double initial_sigma, double sigma_min,
                            double c_sigma, double ema_decay,
                            double sigma_max = 1.0);
};

SigmaSchedule update_sigma(const SigmaSchedule& schedule,
                           std::span<const double> retrain_rewards);

// Draws M joint actions: a Bernoulli(p_i) keep bit per filter and an epoch
// action from Normal(mu, sigma^2), stored untruncated. layer_indices names the
// layer of each output segment.
std::vector<ActionSet> sample_actions(const PolicyOutput& out, double sigma,
                                      int num_samples, Rng& rng,
                                      std::span<const int> layer_indices);
std::vector<ActionSet> sample_actions(const PolicyOutput& out, double sigma,
                                      int num_samples, std::uint64_t seed,
                                      std::span<const int> layer_indices);

// Text checkpoint; see README for the format.
void save_checkpoint(const PolicyParams& params, std::ostream& os);
PolicyParams load_checkpoint(std::istream& is);

}  // namespace l2pf::policy
