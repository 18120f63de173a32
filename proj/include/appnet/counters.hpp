#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

namespace appnet {

/// Multiply-accumulate and live-float tally for one named step.
struct StepCost {
  std::string step;
  std::size_t macs = 0;
  std::size_t floats = 0;

  bool operator==(const StepCost&) const = default;
};

/// Per-invocation cost record. MACs count one per weight-input (or
/// elementwise weighting) product; normalization and activations are free.
struct CostReport {
  std::vector<StepCost> steps;

  void add(const std::string& step, std::size_t macs, std::size_t floats) {
    for (auto& s : steps)
      if (s.step == step) {
        s.macs += macs;
        s.floats += floats;
        return;
      }
    steps.push_back({step, macs, floats});
  }

  std::size_t macs(const std::string& step) const {
    for (const auto& s : steps)
      if (s.step == step) return s.macs;
    return 0;
  }

  std::size_t floats(const std::string& step) const {
    for (const auto& s : steps)
      if (s.step == step) return s.floats;
    return 0;
  }

  std::size_t total_macs() const {
    std::size_t t = 0;
    for (const auto& s : steps) t += s.macs;
    return t;
  }

  std::size_t peak_floats() const {
    std::size_t p = 0;
    for (const auto& s : steps) p = std::max(p, s.floats);
    return p;
  }
};

}  // namespace appnet
