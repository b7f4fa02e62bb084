#pragma once

#include <string>
#include <vector>

#include "leal/tensor.hpp"

namespace leal {

/// A trainable tensor and the dotted path it is stored under in checkpoints.
struct Param {
  std::string name;
  Tensor value;
};

using ParamList = std::vector<Param>;

inline void zero_grads(const ParamList& params) {
  for (const auto& p : params) p.value.impl()->grad.clear();
}

inline std::size_t count_scalars(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

/// Value snapshot used for best-checkpoint restore.
std::vector<std::vector<double>> snapshot(const ParamList& params);
void restore(const ParamList& params, const std::vector<std::vector<double>>& values);

}  // namespace leal
