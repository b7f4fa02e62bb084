#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "leal/alignment_model.hpp"
#include "leal/checkpoint.hpp"
#include "leal/cluster_sampler.hpp"
#include "leal/data.hpp"
#include "leal/nn.hpp"

namespace leal {

/// Hyperparameters of the two training stages. Defaults follow the evaluation protocol:
/// AdamW lr 1e-3, batch 128, up to 150 epochs, d = 100.
struct LealConfig {
  std::size_t k = 5;
  std::size_t clusters = 5;
  std::size_t dim = 100;
  std::size_t depth = 1;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 0;  // 0 means dim
  double gamma = 1.0;
  std::size_t combiner_hidden = 16;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 150;
  std::size_t patience = 10;
  std::size_t ae_depth = 2;
  std::size_t ae_epochs = 100;
  double ae_lr = 1e-3;
  bool straight_through = true;
  bool tie_secondary_encoder = false;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  /// Strict: unknown keys and out-of-range values throw ConfigError naming the field,
  /// prefixed with `path`.
  static LealConfig from_json(const nlohmann::json& j, const std::string& path = "");
  void validate(const std::string& path = "") const;

  SamplerConfig sampler_config() const;
  AlignmentConfig alignment_config() const;
};

struct EpochRecord {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::string model;   // "leal", "solo_mlp" or "leal_ground_truth"
  std::string metric;  // "accuracy" or "rmse"
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
  double test_metric = 0.0;
  double test_loss = 0.0;
  double pretrain_loss = 0.0;
  /// Ground-truth ablation only: mean last-block attention weight on the true record.
  std::optional<double> val_lambda_true, test_lambda_true;
  LealConfig config;

  double mean_epoch_seconds(std::size_t skip_first = 0) const;
  /// Everything except wall-clock times, which go under "timing" when requested.
  nlohmann::json to_json(bool include_timing = true) const;
};

/// True iff none of the last `patience` values improves strictly on the best earlier value.
bool early_stop_check(const std::vector<double>& val_history, std::size_t patience);

struct LealModel {
  ClusterSamplerState sampler;
  AlignmentModelState model;
  LealConfig config;

  ParamList params() const;
  Checkpoint checkpoint(const DatasetBundle& bundle) const;
};

struct LealRun {
  LealModel state;
  TrainReport report;
};

/// Full training run: random init, autoencoder pretraining, k-means centroids, then the
/// supervised epoch loop with per-batch sampling and joint AdamW updates. The parameters of
/// the epoch with the lowest validation loss are restored before the test metric is taken.
LealRun train_leal(const DatasetBundle& bundle, const LealConfig& config);

/// Network structure for `bundle` with untrained weights (used before loading a checkpoint).
LealModel leal_skeleton(const DatasetBundle& bundle, const LealConfig& config);

struct Inference {
  std::vector<double> predictions;  // class index or value
  Tensor outputs;                   // raw logits / values [n x outputs]
  std::vector<std::size_t> candidates;
  Tensor lambda;  // last block, [n x K]
};

/// Deterministic top-K inference for the given primary rows; no parameters change.
Inference infer(const LealModel& state, const EncodedMatrix& primary, const EncodedMatrix& secondary,
                const std::vector<std::size_t>& rows, nn::Task task);

struct SoloRun {
  nn::Mlp mlp;
  TrainReport report;
};

/// Primary-only baseline: 800-400-400 ReLU MLP, same optimizer, split and early stopping.
SoloRun train_solo_mlp(const DatasetBundle& bundle, const LealConfig& config,
                       const std::vector<std::size_t>& hidden = {800, 400, 400});

/// Ground-truth-candidate ablation: every primary record sees its true secondary record
/// plus K-1 distinct uniformly drawn others; the cluster sampler is bypassed.
LealRun ablation_ground_truth(const DatasetBundle& bundle, const LealConfig& config);

}  // namespace leal
