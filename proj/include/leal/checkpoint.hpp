#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "leal/params.hpp"
#include "leal/tensor.hpp"

namespace leal {

inline constexpr int kCheckpointVersion = 1;

struct StoredTensor {
  Shape shape;
  std::vector<double> values;
};

/// Versioned JSON container: config echo, every parameter tensor (shape + row-major
/// values) and arbitrary metadata such as normalization statistics. Doubles are written
/// in shortest round-trip form, so save/load is bit-exact.
struct Checkpoint {
  nlohmann::json config;
  nlohmann::json metadata;
  std::map<std::string, StoredTensor> tensors;

  static Checkpoint capture(const ParamList& params, nlohmann::json config, nlohmann::json metadata = {});
  /// Copies stored values into `params`; every parameter must be present with the same shape.
  void apply(const ParamList& params) const;

  nlohmann::json to_json() const;
  static Checkpoint from_json(const nlohmann::json& j);
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace leal
