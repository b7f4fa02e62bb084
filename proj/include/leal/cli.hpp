#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "leal/data.hpp"
#include "leal/training.hpp"

namespace leal::cli {

/// Where records come from: one CSV split by features, an explicit table pair, or the
/// letter-style generator.
struct DataSpec {
  std::string input;
  std::string primary, secondary;
  std::string label;
  std::string task = "classification";
  std::vector<std::string> categorical;
  std::size_t letter_rows = 0;
  std::size_t subsample = 0;  // 0 keeps every row
  bool shuffle_secondary = true;
  std::uint64_t seed = 0;  // generator and subsample seed, shared by every run

  bool empty() const { return input.empty() && primary.empty() && letter_rows == 0; }
};

struct TheorySpec {
  std::size_t n = 200;
  std::size_t mp = 3, ms = 3;
  std::vector<double> sigmas{0.0, 0.1};  // instance i uses sigmas[i % size]
  std::size_t perms = 200;
  std::string normalization = "centered";
  std::size_t motivation_n = 5000;
  std::size_t approx_steps = 5000;
};

struct SweepGrid {
  std::vector<std::size_t> k{5}, clusters{5}, depth{1};
};

/// Fully resolved settings of one command. Every field has a default, so an empty JSON
/// document is valid; unknown keys are rejected with their dotted path.
struct ExperimentConfig {
  DataSpec data;
  LealConfig leal;
  std::vector<std::uint64_t> seeds{0};
  std::string out = "leal_out";
  bool baseline = false;
  std::vector<std::size_t> solo_hidden{800, 400, 400};
  TheorySpec theory;
  std::vector<std::size_t> ablation_ks{1, 5, 10, 20};
  SweepGrid sweep;
  std::vector<std::size_t> timing_ks{5, 10, 20};
  std::size_t timing_epochs = 3;
  std::string checkpoint;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

/// Builds the bundle of one run. The feature partition, row shuffle and split follow `seed`.
DatasetBundle load_bundle(const DataSpec& spec, std::uint64_t seed);

/// `leal <subcommand> [--config FILE] [--key value ...]`. Returns 0 on success, 2 on a bad
/// command line or configuration (nothing written) and 1 on a runtime failure. Failures
/// print one JSON line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace leal::cli
