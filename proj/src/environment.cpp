#include "l2pf/environment.hpp"

#include <algorithm>
#include <future>

namespace l2pf::env {

std::vector<double> Environment::evaluate_batch(
    std::span<const EvalRequest> requests, int parallelism) {
  std::vector<double> acc(requests.size());
  const int width = std::max(1, std::min(parallelism, max_parallel_evaluations()));
  if (width == 1) {
    for (std::size_t j = 0; j < requests.size(); ++j) {
      acc[j] = evaluate(requests[j].masks, requests[j].epochs, requests[j].sample);
    }
    return acc;
  }
  for (std::size_t start = 0; start < requests.size(); start += width) {
    const std::size_t stop = std::min(requests.size(), start + width);
    std::vector<std::future<double>> pending;
    for (std::size_t j = start; j < stop; ++j) {
      pending.push_back(std::async(std::launch::async, [this, &requests, j] {
        return evaluate(requests[j].masks, requests[j].epochs, requests[j].sample);
      }));
    }
    for (std::size_t j = start; j < stop; ++j) acc[j] = pending[j - start].get();
  }
  return acc;
}

}  // namespace l2pf::env
