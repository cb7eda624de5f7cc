#include "l2pf/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "l2pf/errors.hpp"

namespace l2pf::policy {
namespace {

ParamLayout build_layout() {
  ParamLayout l;
  std::size_t off = 0;
  auto take = [&off](std::size_t n) {
    Slot s{off, n};
    off += n;
    return s;
  };
  for (int s = 0; s < kConvStages; ++s) {
    const std::size_t in = kConvChannels[s];
    const std::size_t out = kConvChannels[s + 1];
    l.conv_w[s] = take(out * in * kConvKernel);
    l.conv_b[s] = take(out);
  }
  for (HeadLayout* h : {&l.prune, &l.epoch}) {
    h->w1 = take(static_cast<std::size_t>(kHiddenDim) * kEmbedDim);
    h->b1 = take(kHiddenDim);
    h->w2 = take(kHiddenDim);
    h->b2 = take(1);
  }
  l.total = off;
  return l;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// out[o][t] = relu(b[o] + sum_{ci,k} w[o][ci][k] * in[ci][t*S + k - P]),
// computed as dot products against an im2col buffer.
double dot(const double* a, const double* b, int n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void conv_forward(const double* w, const double* b, const double* in, int cin,
                  int lin, double* out, int cout, int lout) {
  const int cols = cin * kConvKernel;
  static thread_local std::vector<double> patch;
  patch.assign(static_cast<std::size_t>(lout) * cols, 0.0);
  for (int t = 0; t < lout; ++t) {
    double* row = patch.data() + static_cast<std::size_t>(t) * cols;
    for (int ci = 0; ci < cin; ++ci) {
      for (int k = 0; k < kConvKernel; ++k) {
        const int pos = t * kConvStride - kConvPad + k;
        if (pos >= 0 && pos < lin) row[ci * kConvKernel + k] = in[ci * lin + pos];
      }
    }
  }
  for (int o = 0; o < cout; ++o) {
    const double* wrow = w + static_cast<std::size_t>(o) * cols;
    double* orow = out + static_cast<std::size_t>(o) * lout;
    for (int t = 0; t < lout; ++t) {
      orow[t] = std::max(0.0, b[o] + dot(wrow, patch.data() + static_cast<std::size_t>(t) * cols, cols));
    }
  }
}

// dz holds d(loss)/d(pre-activation). Accumulates dw, db and, when din is
// non-null, the gradient with respect to the stage input.
void conv_backward(const double* w, const double* in, int cin, int lin,
                   const double* dz, int cout, int lout, double* dw, double* db,
                   double* din) {
  for (int o = 0; o < cout; ++o) {
    const double* drow = dz + static_cast<std::size_t>(o) * lout;
    double bsum = 0.0;
    for (int t = 0; t < lout; ++t) bsum += drow[t];
    db[o] += bsum;
    for (int ci = 0; ci < cin; ++ci) {
      const double* irow = in + static_cast<std::size_t>(ci) * lin;
      const std::size_t widx = (static_cast<std::size_t>(o) * cin + ci) * kConvKernel;
      double* dirow = din ? din + static_cast<std::size_t>(ci) * lin : nullptr;
      for (int t = 0; t < lout; ++t) {
        const double g = drow[t];
        if (g == 0.0) continue;
        const int base = t * kConvStride - kConvPad;
        for (int k = 0; k < kConvKernel; ++k) {
          const int pos = base + k;
          if (pos < 0 || pos >= lin) continue;
          dw[widx + k] += g * irow[pos];
          if (dirow) dirow[pos] += g * w[widx + k];
        }
      }
    }
  }
}

// hidden = relu(W1 x + b1); returns w2 . hidden + b2
double head_forward(const PolicyParams& params, const HeadLayout& h,
                    std::span<const double> x, std::vector<double>& hidden) {
  const auto w1 = params.slot(h.w1);
  const auto b1 = params.slot(h.b1);
  const auto w2 = params.slot(h.w2);
  hidden.assign(kHiddenDim, 0.0);
  double logit = params.slot(h.b2)[0];
  for (int j = 0; j < kHiddenDim; ++j) {
    double acc = b1[j];
    for (int i = 0; i < kEmbedDim; ++i) acc += w1[j * kEmbedDim + i] * x[i];
    hidden[j] = std::max(0.0, acc);
    logit += w2[j] * hidden[j];
  }
  return logit;
}

// Backprop of d(loss)/d(logit) through a head; accumulates into grad and dx.
void head_backward(const PolicyParams& params, const HeadLayout& h,
                   std::span<const double> x, const std::vector<double>& hidden,
                   double dlogit, ParamGradient& grad, std::span<double> dx) {
  const auto w1 = params.slot(h.w1);
  const auto w2 = params.slot(h.w2);
  double* gw1 = grad.values.data() + h.w1.offset;
  double* gb1 = grad.values.data() + h.b1.offset;
  double* gw2 = grad.values.data() + h.w2.offset;
  grad.values[h.b2.offset] += dlogit;
  for (int j = 0; j < kHiddenDim; ++j) {
    gw2[j] += dlogit * hidden[j];
    if (hidden[j] <= 0.0) continue;
    const double dh = dlogit * w2[j];
    gb1[j] += dh;
    for (int i = 0; i < kEmbedDim; ++i) {
      gw1[j * kEmbedDim + i] += dh * x[i];
      dx[i] += dh * w1[j * kEmbedDim + i];
    }
  }
}

void encode_filter(const PolicyParams& params, std::span<const double> input,
                   FilterCache& fc) {
  const auto& lay = layout();
  fc.lengths[0] = static_cast<int>(input.size());
  fc.acts[0].assign(input.begin(), input.end());
  for (int s = 0; s < kConvStages; ++s) {
    const int lin = fc.lengths[s];
    const int lout = conv_output_length(lin);
    fc.lengths[s + 1] = lout;
    fc.acts[s + 1].assign(static_cast<std::size_t>(kConvChannels[s + 1]) * lout,
                          0.0);
    conv_forward(params.slot(lay.conv_w[s]).data(),
                 params.slot(lay.conv_b[s]).data(), fc.acts[s].data(),
                 kConvChannels[s], lin, fc.acts[s + 1].data(),
                 kConvChannels[s + 1], lout);
  }
  const int last = fc.lengths[kConvStages];
  fc.embedding.assign(kEmbedDim, 0.0);
  const auto& top = fc.acts[kConvStages];
  for (int c = 0; c < kEmbedDim; ++c) {
    double acc = 0.0;
    for (int t = 0; t < last; ++t) acc += top[static_cast<std::size_t>(c) * last + t];
    fc.embedding[c] = acc / last;
  }
}

void check_fingerprint(const PolicyParams& params, const PolicyOutput& out) {
  if (params.values.size() != param_count()) {
    throw std::invalid_argument("policy: parameter vector has wrong size");
  }
  if (out.cache.params_fingerprint != params.fingerprint() ||
      out.cache.filters.size() != out.keep_probs.size()) {
    throw std::invalid_argument(
        "policy_backward: forward cache does not match parameters");
  }
}

}  // namespace

const ParamLayout& layout() {
  static const ParamLayout l = build_layout();
  return l;
}

PolicyParams PolicyParams::zeros() {
  return PolicyParams{std::vector<double>(param_count(), 0.0)};
}

PolicyParams PolicyParams::initialize(Rng& rng, bool zero_final_layers) {
  PolicyParams p = zeros();
  const auto& lay = layout();
  auto fill = [&](const Slot& s, int fan_in) {
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : p.slot(s)) v = u(rng);
  };
  for (int s = 0; s < kConvStages; ++s) {
    fill(lay.conv_w[s], kConvChannels[s] * kConvKernel);
  }
  for (const HeadLayout* h : {&lay.prune, &lay.epoch}) {
    fill(h->w1, kEmbedDim);
    if (!zero_final_layers) {
      fill(h->w2, kHiddenDim);
      fill(h->b2, kHiddenDim);
    }
  }
  return p;
}

std::uint64_t PolicyParams::fingerprint() const {
  // FNV-1a over four interleaved lanes, folded at the end.
  constexpr std::uint64_t prime = 1099511628211ull;
  std::uint64_t lane[4] = {1469598103934665603ull, 0x9e3779b97f4a7c15ull,
                           0xbf58476d1ce4e5b9ull, 0x94d049bb133111ebull};
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &values[i], sizeof bits);
    lane[i % 4] = (lane[i % 4] ^ bits) * prime;
  }
  std::uint64_t h = lane[0];
  for (int k = 1; k < 4; ++k) h = (h ^ lane[k]) * prime;
  return h;
}

bool PolicyParams::all_finite() const {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

ParamGradient ParamGradient::zeros() {
  return ParamGradient{std::vector<double>(param_count(), 0.0)};
}

ParamGradient& ParamGradient::operator+=(const ParamGradient& other) {
  if (other.values.size() != values.size()) {
    throw std::invalid_argument("ParamGradient: size mismatch");
  }
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += other.values[i];
  return *this;
}

ParamGradient& ParamGradient::operator*=(double s) {
  for (double& v : values) v *= s;
  return *this;
}

double ParamGradient::norm() const {
  double acc = 0.0;
  for (double v : values) acc += v * v;
  return std::sqrt(acc);
}

bool ParamGradient::all_finite() const {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

PolicyOutput policy_forward(const PolicyParams& params,
                            std::span<const WeightTensor> states) {
  if (params.values.size() != param_count()) {
    throw std::invalid_argument("policy_forward: parameter vector has wrong size");
  }
  if (!params.all_finite()) {
    throw std::invalid_argument("policy_forward: non-finite parameter");
  }
  if (states.empty()) {
    throw std::invalid_argument("policy_forward: no state tensors");
  }
  const auto& lay = layout();
  PolicyOutput out;
  out.cache.params_fingerprint = params.fingerprint();
  out.cache.mean_embedding.assign(kEmbedDim, 0.0);

  std::vector<double> standardized;
  for (const auto& state : states) {
    if (state.num_filters() < 1) {
      throw std::invalid_argument("policy_forward: state has no filters");
    }
    const auto vals = state.values();
    double mean = 0.0;
    for (double v : vals) {
      if (!std::isfinite(v)) {
        throw std::invalid_argument("policy_forward: non-finite state value");
      }
      mean += v;
    }
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(vals.size()));
    standardized.resize(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) {
      standardized[i] = (vals[i] - mean) / (sd + kStandardizeEps);
    }

    out.segment_sizes.push_back(state.num_filters());
    const std::size_t fs = state.filter_size();
    for (int i = 0; i < state.num_filters(); ++i) {
      FilterCache fc;
      encode_filter(params,
                    std::span<const double>(standardized).subspan(i * fs, fs),
                    fc);
      const double logit = head_forward(params, lay.prune, fc.embedding, fc.hidden);
      fc.p_raw = sigmoid(logit);
      out.keep_probs.push_back(std::clamp(fc.p_raw, kProbEps, 1.0 - kProbEps));
      for (int c = 0; c < kEmbedDim; ++c) {
        out.cache.mean_embedding[c] += fc.embedding[c];
      }
      out.cache.filters.push_back(std::move(fc));
    }
  }
  const double n = static_cast<double>(out.keep_probs.size());
  for (double& v : out.cache.mean_embedding) v /= n;
  out.epoch_mu = sigmoid(head_forward(params, lay.epoch,
                                      out.cache.mean_embedding,
                                      out.cache.epoch_hidden));
  return out;
}

PolicyOutput policy_forward(const PolicyParams& params,
                            const WeightTensor& state) {
  return policy_forward(params, std::span<const WeightTensor>(&state, 1));
}

ParamGradient policy_backward(const PolicyParams& params,
                              const PolicyOutput& out,
                              std::span<const double> prune_coeffs,
                              double mu_coeff) {
  check_fingerprint(params, out);
  if (prune_coeffs.size() != out.keep_probs.size()) {
    throw std::invalid_argument("policy_backward: expected " +
                                std::to_string(out.keep_probs.size()) +
                                " prune coefficients");
  }
  const auto& lay = layout();
  ParamGradient grad = ParamGradient::zeros();
  const std::size_t n = out.cache.filters.size();

  // Epoch head: gradient arrives at the mean embedding and is shared 1/N by
  // every filter.
  std::vector<double> d_mean(kEmbedDim, 0.0);
  if (mu_coeff != 0.0) {
    const double mu = out.epoch_mu;
    head_backward(params, lay.epoch, out.cache.mean_embedding,
                  out.cache.epoch_hidden, mu_coeff * mu * (1.0 - mu), grad,
                  d_mean);
  }

  std::vector<double> d_embed(kEmbedDim);
  std::array<std::vector<double>, kConvStages + 1> d_acts;
  for (std::size_t i = 0; i < n; ++i) {
    const FilterCache& fc = out.cache.filters[i];
    for (int c = 0; c < kEmbedDim; ++c) d_embed[c] = d_mean[c] / static_cast<double>(n);

    // The clamp has zero derivative outside [eps, 1 - eps].
    const double p = fc.p_raw;
    if (prune_coeffs[i] != 0.0 && p > kProbEps && p < 1.0 - kProbEps) {
      head_backward(params, lay.prune, fc.embedding, fc.hidden,
                    prune_coeffs[i] * p * (1.0 - p), grad, d_embed);
    }
    if (std::all_of(d_embed.begin(), d_embed.end(),
                    [](double v) { return v == 0.0; })) {
      continue;
    }

    // Global average pooling.
    const int last = fc.lengths[kConvStages];
    auto& dtop = d_acts[kConvStages];
    dtop.assign(static_cast<std::size_t>(kEmbedDim) * last, 0.0);
    for (int c = 0; c < kEmbedDim; ++c) {
      for (int t = 0; t < last; ++t) {
        dtop[static_cast<std::size_t>(c) * last + t] = d_embed[c] / last;
      }
    }
    for (int s = kConvStages - 1; s >= 0; --s) {
      auto& dz = d_acts[s + 1];
      const auto& act = fc.acts[s + 1];
      for (std::size_t j = 0; j < dz.size(); ++j) {
        if (act[j] <= 0.0) dz[j] = 0.0;
      }
      double* din = nullptr;
      if (s > 0) {
        d_acts[s].assign(static_cast<std::size_t>(kConvChannels[s]) * fc.lengths[s], 0.0);
        din = d_acts[s].data();
      }
      conv_backward(params.slot(lay.conv_w[s]).data(), fc.acts[s].data(),
                    kConvChannels[s], fc.lengths[s], dz.data(),
                    kConvChannels[s + 1], fc.lengths[s + 1],
                    grad.values.data() + lay.conv_w[s].offset,
                    grad.values.data() + lay.conv_b[s].offset, din);
    }
  }
  return grad;
}

SigmaSchedule SigmaSchedule::make(double initial_sigma, double sigma_min,
                                  double c_sigma, double ema_decay,
                                  double sigma_max) {
  if (!(sigma_min > 0.0) || !(c_sigma > 0.0) || !(initial_sigma > 0.0)) {
    throw std::invalid_argument("sigma schedule constants must be > 0");
  }
  if (!(sigma_max >= sigma_min)) {
    throw std::invalid_argument("sigma_max must be >= sigma_min");
  }
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) {
    throw std::invalid_argument("sigma EMA decay must lie in [0, 1)");
  }
  SigmaSchedule s;
  s.sigma_min = sigma_min;
  s.sigma_max = sigma_max;
  s.c_sigma = c_sigma;
  s.ema_decay = ema_decay;
  s.running_abs_retrain_reward = initial_sigma / c_sigma;
  s.sigma = std::clamp(initial_sigma, sigma_min, sigma_max);
  return s;
}

SigmaSchedule update_sigma(const SigmaSchedule& schedule,
                           std::span<const double> retrain_rewards) {
  if (retrain_rewards.empty()) {
    throw std::invalid_argument("update_sigma: no rewards");
  }
  double mean_abs = 0.0;
  for (double r : retrain_rewards) mean_abs += std::abs(r);
  mean_abs /= static_cast<double>(retrain_rewards.size());
  SigmaSchedule next = schedule;
  next.running_abs_retrain_reward =
      schedule.ema_decay * schedule.running_abs_retrain_reward +
      (1.0 - schedule.ema_decay) * mean_abs;
  next.sigma = std::clamp(next.c_sigma * next.running_abs_retrain_reward,
                          next.sigma_min, next.sigma_max);
  return next;
}

std::vector<ActionSet> sample_actions(const PolicyOutput& out, double sigma,
                                      int num_samples, Rng& rng,
                                      std::span<const int> layer_indices) {
  if (num_samples < 1) throw std::invalid_argument("sample_actions: M must be >= 1");
  if (!(sigma > 0.0)) throw std::invalid_argument("sample_actions: sigma must be > 0");
  if (layer_indices.size() != out.segment_sizes.size()) {
    throw std::invalid_argument("sample_actions: one layer index per segment");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(out.epoch_mu, sigma);
  std::vector<ActionSet> actions;
  actions.reserve(num_samples);
  for (int j = 0; j < num_samples; ++j) {
    ActionSet a;
    a.sample_index = j;
    std::size_t offset = 0;
    for (std::size_t s = 0; s < out.segment_sizes.size(); ++s) {
      std::vector<std::uint8_t> bits(out.segment_sizes[s]);
      for (auto& b : bits) {
        b = unit(rng) < out.keep_probs[offset++] ? 1 : 0;
      }
      a.prune_masks.emplace_back(layer_indices[s], std::move(bits));
    }
    a.epoch_action_raw = normal(rng);
    actions.push_back(std::move(a));
  }
  return actions;
}

std::vector<ActionSet> sample_actions(const PolicyOutput& out, double sigma,
                                      int num_samples, std::uint64_t seed,
                                      std::span<const int> layer_indices) {
  Rng rng(seed);
  return sample_actions(out, sigma, num_samples, rng, layer_indices);
}

namespace {
constexpr const char* kCheckpointMagic = "l2pf-policy";
constexpr int kCheckpointVersion = 1;

std::vector<std::string> architecture_lines() {
  std::vector<std::string> lines;
  for (int s = 0; s < kConvStages; ++s) {
    lines.push_back("conv1d " + std::to_string(kConvChannels[s]) + " " +
                    std::to_string(kConvChannels[s + 1]) + " " +
                    std::to_string(kConvKernel) + " " +
                    std::to_string(kConvStride) + " " +
                    std::to_string(kConvPad));
  }
  for (const char* head : {"prune", "epoch"}) {
    lines.push_back(std::string("dense ") + head + " " +
                    std::to_string(kEmbedDim) + " " + std::to_string(kHiddenDim));
    lines.push_back(std::string("dense ") + head + " " +
                    std::to_string(kHiddenDim) + " 1");
  }
  return lines;
}
}  // namespace

void save_checkpoint(const PolicyParams& params, std::ostream& os) {
  if (params.values.size() != param_count()) {
    throw std::invalid_argument("save_checkpoint: parameter vector has wrong size");
  }
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  for (const auto& line : architecture_lines()) os << line << '\n';
  os << "params " << params.values.size() << '\n';
  os << std::setprecision(17);
  for (double v : params.values) os << v << '\n';
  if (!os) throw std::runtime_error("save_checkpoint: write failed");
}

PolicyParams load_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) ||
      line != std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion)) {
    throw std::runtime_error("load_checkpoint: bad header '" + line + "'");
  }
  for (const auto& expected : architecture_lines()) {
    if (!std::getline(is, line) || line != expected) {
      throw std::runtime_error("load_checkpoint: architecture mismatch, expected '" +
                               expected + "', got '" + line + "'");
    }
  }
  if (!std::getline(is, line) ||
      line != "params " + std::to_string(param_count())) {
    throw std::runtime_error("load_checkpoint: bad parameter count line '" +
                             line + "'");
  }
  PolicyParams p = PolicyParams::zeros();
  for (double& v : p.values) {
    if (!std::getline(is, line)) {
      throw std::runtime_error("load_checkpoint: truncated parameter list");
    }
    std::size_t used = 0;
    v = std::stod(line, &used);
    if (used != line.size() || !std::isfinite(v)) {
      throw std::runtime_error("load_checkpoint: bad value '" + line + "'");
    }
  }
  return p;
}

}  // namespace l2pf::policy
