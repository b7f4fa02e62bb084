#include "leal/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace leal {

Checkpoint Checkpoint::capture(const ParamList& params, nlohmann::json config, nlohmann::json metadata) {
  Checkpoint c;
  c.config = std::move(config);
  c.metadata = std::move(metadata);
  for (const auto& p : params) {
    if (!c.tensors.emplace(p.name, StoredTensor{p.value.shape(), p.value.values()}).second)
      throw std::invalid_argument("checkpoint: duplicate parameter name '" + p.name + "'");
  }
  return c;
}

void Checkpoint::apply(const ParamList& params) const {
  for (const auto& p : params) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) throw std::invalid_argument("checkpoint: missing parameter '" + p.name + "'");
    if (it->second.shape != p.value.shape())
      throw DimensionError("checkpoint: parameter '" + p.name + "' stored as " + shape_str(it->second.shape) +
                           " but the model expects " + shape_str(p.value.shape()));
    auto dst = Tensor(p.value).mutable_data();
    std::copy(it->second.values.begin(), it->second.values.end(), dst.begin());
  }
}

nlohmann::json Checkpoint::to_json() const {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, t] : tensors) params[name] = {{"shape", t.shape}, {"values", t.values}};
  return {{"format", "leal-checkpoint"},
          {"version", kCheckpointVersion},
          {"config", config},
          {"metadata", metadata},
          {"params", params}};
}

Checkpoint Checkpoint::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "leal-checkpoint") throw std::invalid_argument("not a leal checkpoint");
  const int version = j.value("version", 0);
  if (version != kCheckpointVersion)
    throw std::invalid_argument("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config = j.at("config");
  c.metadata = j.value("metadata", nlohmann::json::object());
  for (const auto& [name, t] : j.at("params").items()) {
    StoredTensor s{t.at("shape").get<Shape>(), t.at("values").get<std::vector<double>>()};
    if (shape_numel(s.shape) != s.values.size())
      throw std::invalid_argument("checkpoint: parameter '" + name + "' has " + std::to_string(s.values.size()) +
                                  " values for shape " + shape_str(s.shape));
    c.tensors.emplace(name, std::move(s));
  }
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out << checkpoint.to_json().dump() << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return Checkpoint::from_json(nlohmann::json::parse(in));
}

}  // namespace leal
