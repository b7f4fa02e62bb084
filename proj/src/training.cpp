#include "leal/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "leal/analysis.hpp"
#include "leal/errors.hpp"

namespace leal {
namespace {

constexpr std::uint64_t kModelInitTag = 0x71;
constexpr std::uint64_t kSoloInitTag = 0x72;
constexpr std::uint64_t kEpochShuffleTag = 0x73;
constexpr std::uint64_t kEvalCandidatesTag = 0x74;
constexpr std::size_t kEvalBatch = 256;

using Rows = std::vector<std::size_t>;

/// How one model family produces outputs for a set of primary rows.
struct FitTarget {
  ParamList params;
  std::function<Tensor(const Rows& rows, const RngStream& stream)> train_output;
  std::function<Tensor(const Rows& rows)> eval_output;
};

Tensor gather_targets(const Labels& labels, const Rows& rows) {
  std::vector<double> v(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) v[i] = labels.values[rows[i]];
  return Tensor::from({rows.size()}, std::move(v));
}

std::vector<double> to_predictions(const Tensor& outputs, nn::Task task) {
  const std::size_t n = outputs.dim(0), w = outputs.dim(1);
  std::vector<double> pred(n);
  const auto v = outputs.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (task == nn::Task::regression) {
      pred[i] = v[i * w];
    } else {
      const auto row = v.subspan(i * w, w);
      pred[i] = static_cast<double>(std::max_element(row.begin(), row.end()) - row.begin());
    }
  }
  return pred;
}

struct Evaluation {
  double loss = 0.0;
  double metric = 0.0;
};

Tensor eval_in_batches(const FitTarget& target, const Rows& rows) {
  std::vector<double> values;
  std::size_t width = 0;
  for (std::size_t start = 0; start < rows.size(); start += kEvalBatch) {
    Rows chunk(rows.begin() + start, rows.begin() + std::min(rows.size(), start + kEvalBatch));
    const Tensor out = target.eval_output(chunk);
    width = out.dim(1);
    values.insert(values.end(), out.data().begin(), out.data().end());
  }
  return Tensor::from({rows.size(), width}, std::move(values));
}

Evaluation evaluate(const FitTarget& target, const DatasetBundle& bundle, const Rows& rows) {
  const Tensor out = eval_in_batches(target, rows);
  const Tensor y = gather_targets(bundle.labels, rows);
  Evaluation e;
  e.loss = nn::compute_loss(bundle.task(), out, y).item();
  e.metric = eval_metrics(to_predictions(out, bundle.task()), y.values(), bundle.task());
  return e;
}

TrainReport fit(const DatasetBundle& bundle, const LealConfig& config, const FitTarget& target, std::string name) {
  if (bundle.split.train.empty() || bundle.split.val.empty() || bundle.split.test.empty())
    throw std::invalid_argument("training needs non-empty train, validation and test splits");

  TrainReport report;
  report.model = std::move(name);
  report.metric = bundle.task() == nn::Task::classification ? "accuracy" : "rmse";
  report.config = config;

  nn::AdamW opt(target.params, {.lr = config.lr, .weight_decay = config.weight_decay});
  const auto shuffle = RngStream(config.seed, StreamLabel::shuffle).fork(kEpochShuffleTag);
  const RngStream sample(config.seed, StreamLabel::sample);
  const Rows& train = bundle.split.train;

  std::vector<double> history;
  std::vector<std::vector<double>> best_values;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const auto order = shuffle.fork(epoch).permutation(train.size());
    const auto epoch_stream = sample.fork(epoch);
    double total = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < train.size(); start += config.batch_size, ++batch_index) {
      Rows rows;
      for (std::size_t i = start; i < std::min(train.size(), start + config.batch_size); ++i)
        rows.push_back(train[order[i]]);
      Tape tape;
      Tensor loss;
      {
        auto scope = tape.record();
        const Tensor out = target.train_output(rows, epoch_stream.fork(batch_index));
        loss = nn::compute_loss(bundle.task(), out, gather_targets(bundle.labels, rows));
      }
      if (!std::isfinite(loss.item())) {
        std::ostringstream msg;
        msg << report.model << ": non-finite training loss at epoch " << epoch << ", batch " << batch_index
            << " (lr " << config.lr << ")";
        throw NumericError(msg.str());
      }
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      total += loss.item() * static_cast<double>(rows.size());
    }

    EpochRecord rec;
    rec.train_loss = total / static_cast<double>(train.size());
    const auto val = evaluate(target, bundle, bundle.split.val);
    if (!std::isfinite(val.loss))
      throw NumericError(report.model + ": non-finite validation loss at epoch " + std::to_string(epoch));
    rec.val_loss = val.loss;
    rec.val_metric = val.metric;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    report.epochs.push_back(rec);
    history.push_back(val.loss);

    if (val.loss < best) {
      best = val.loss;
      report.best_epoch = epoch;
      best_values = snapshot(target.params);
    }
    if (early_stop_check(history, config.patience)) {
      report.stopped_early = epoch + 1 < config.max_epochs;
      break;
    }
  }
  restore(target.params, best_values);
  report.best_val_loss = best;
  const auto test = evaluate(target, bundle, bundle.split.test);
  report.test_metric = test.metric;
  report.test_loss = test.loss;
  return report;
}

std::size_t outputs_for(const DatasetBundle& bundle) {
  return bundle.task() == nn::Task::classification ? bundle.num_classes() : 1;
}

void check_bundle(const DatasetBundle& bundle, const LealConfig& config) {
  config.validate();
  if (bundle.labels.n() != bundle.primary.rows())
    throw std::invalid_argument("bundle labels do not match the primary table");
  if (bundle.task() == nn::Task::classification && bundle.num_classes() < 2)
    throw std::invalid_argument("classification needs at least two classes");
}

// K-1 distinct records other than `truth`, plus `truth` at a random position.
Rows planted_candidates(std::size_t truth, std::size_t n, std::size_t k, RngStream stream, std::size_t& position) {
  k = std::min(k, n);
  std::set<std::size_t> used{truth};
  Rows out;
  while (out.size() + 1 < k) {
    const std::size_t c = stream.below(n);
    if (used.insert(c).second) out.push_back(c);
  }
  position = stream.below(k);
  out.insert(out.begin() + static_cast<std::ptrdiff_t>(position), truth);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

nlohmann::json LealConfig::to_json() const {
  return {{"k", k},
          {"clusters", clusters},
          {"dim", dim},
          {"depth", depth},
          {"heads", heads},
          {"ffn_hidden", ffn_hidden},
          {"gamma", gamma},
          {"combiner_hidden", combiner_hidden},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"ae_depth", ae_depth},
          {"ae_epochs", ae_epochs},
          {"ae_lr", ae_lr},
          {"straight_through", straight_through},
          {"tie_secondary_encoder", tie_secondary_encoder},
          {"seed", seed}};
}

LealConfig LealConfig::from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "config" : path, "expected an object");
  LealConfig c;
  auto field = [&](const std::string& key) { return path.empty() ? key : path + "." + key; };
  auto count = [&](const nlohmann::json& v, const std::string& key) -> std::uint64_t {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw ConfigError(field(key), "expected a non-negative integer");
  };
  auto real = [&](const nlohmann::json& v, const std::string& key) {
    if (!v.is_number()) throw ConfigError(field(key), "expected a number");
    return v.get<double>();
  };
  auto flag = [&](const nlohmann::json& v, const std::string& key) {
    if (!v.is_boolean()) throw ConfigError(field(key), "expected true or false");
    return v.get<bool>();
  };
  for (const auto& [key, v] : j.items()) {
    if (key == "k") c.k = count(v, key);
    else if (key == "clusters") c.clusters = count(v, key);
    else if (key == "dim") c.dim = count(v, key);
    else if (key == "depth") c.depth = count(v, key);
    else if (key == "heads") c.heads = count(v, key);
    else if (key == "ffn_hidden") c.ffn_hidden = count(v, key);
    else if (key == "gamma") c.gamma = real(v, key);
    else if (key == "combiner_hidden") c.combiner_hidden = count(v, key);
    else if (key == "lr") c.lr = real(v, key);
    else if (key == "weight_decay") c.weight_decay = real(v, key);
    else if (key == "batch_size") c.batch_size = count(v, key);
    else if (key == "max_epochs") c.max_epochs = count(v, key);
    else if (key == "patience") c.patience = count(v, key);
    else if (key == "ae_depth") c.ae_depth = count(v, key);
    else if (key == "ae_epochs") c.ae_epochs = count(v, key);
    else if (key == "ae_lr") c.ae_lr = real(v, key);
    else if (key == "straight_through") c.straight_through = flag(v, key);
    else if (key == "tie_secondary_encoder") c.tie_secondary_encoder = flag(v, key);
    else if (key == "seed") c.seed = count(v, key);
    else throw ConfigError(field(key), "unknown key");
  }
  c.validate(path);
  return c;
}

void LealConfig::validate(const std::string& path) const {
  auto field = [&](const std::string& key) { return path.empty() ? key : path + "." + key; };
  auto at_least_one = [&](std::size_t v, const char* key) {
    if (v < 1) throw ConfigError(field(key), "must be at least 1");
  };
  at_least_one(k, "k");
  at_least_one(clusters, "clusters");
  at_least_one(dim, "dim");
  at_least_one(depth, "depth");
  at_least_one(heads, "heads");
  at_least_one(combiner_hidden, "combiner_hidden");
  at_least_one(batch_size, "batch_size");
  at_least_one(max_epochs, "max_epochs");
  at_least_one(patience, "patience");
  at_least_one(ae_depth, "ae_depth");
  if (dim % heads != 0)
    throw ConfigError(field("heads"), "dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError(field("gamma"), "must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError(field("lr"), "must be finite and >= 0");
  if (!(ae_lr >= 0.0) || !std::isfinite(ae_lr)) throw ConfigError(field("ae_lr"), "must be finite and >= 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
    throw ConfigError(field("weight_decay"), "must be finite and >= 0");
}

SamplerConfig LealConfig::sampler_config() const {
  SamplerConfig s;
  s.clusters = clusters;
  s.dim = dim;
  s.gamma = gamma;
  s.combiner_hidden = combiner_hidden;
  s.autoencoder = {.depth = ae_depth, .dim = dim, .epochs = ae_epochs, .lr = ae_lr, .batch_size = batch_size,
                   .weight_decay = weight_decay};
  return s;
}

AlignmentConfig LealConfig::alignment_config() const {
  return {.dim = dim, .heads = heads, .depth = depth, .ffn_hidden = ffn_hidden,
          .tie_secondary_encoder = tie_secondary_encoder};
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

double TrainReport::mean_epoch_seconds(std::size_t skip_first) const {
  if (epochs.size() <= skip_first) return 0.0;
  double s = 0.0;
  for (std::size_t i = skip_first; i < epochs.size(); ++i) s += epochs[i].seconds;
  return s / static_cast<double>(epochs.size() - skip_first);
}

nlohmann::json TrainReport::to_json(bool include_timing) const {
  nlohmann::json j;
  j["model"] = model;
  j["metric"] = metric;
  j["test_metric"] = test_metric;
  j["test_loss"] = test_loss;
  j["best_epoch"] = best_epoch;
  j["best_val_loss"] = best_val_loss;
  j["stopped_early"] = stopped_early;
  j["epochs_run"] = epochs.size();
  j["pretrain_loss"] = pretrain_loss;
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& e : epochs)
    hist.push_back({{"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_metric", e.val_metric}});
  j["history"] = hist;
  if (val_lambda_true) j["val_lambda_true"] = *val_lambda_true;
  if (test_lambda_true) j["test_lambda_true"] = *test_lambda_true;
  j["config"] = config.to_json();
  j["seed"] = config.seed;
  if (include_timing) {
    std::vector<double> secs;
    for (const auto& e : epochs) secs.push_back(e.seconds);
    j["timing"] = {{"epoch_seconds", secs}, {"mean_epoch_seconds", mean_epoch_seconds()}};
  }
  return j;
}

bool early_stop_check(const std::vector<double>& history, std::size_t patience) {
  if (history.empty()) throw std::invalid_argument("early_stop_check: empty history");
  if (patience >= history.size()) return false;
  const auto split = history.end() - static_cast<std::ptrdiff_t>(patience);
  const double before = *std::min_element(history.begin(), split);
  const double recent = *std::min_element(split, history.end());
  return !(recent < before);
}

// ---------------------------------------------------------------------------
// Leal
// ---------------------------------------------------------------------------

ParamList LealModel::params() const {
  ParamList p;
  sampler.collect(p);
  model.collect(p);
  return p;
}

Checkpoint LealModel::checkpoint(const DatasetBundle& bundle) const {
  nlohmann::json meta;
  meta["normalization"] = {{"primary", {{"mean", bundle.primary.mean}, {"std", bundle.primary.stddev}}},
                           {"secondary", {{"mean", bundle.secondary.mean}, {"std", bundle.secondary.stddev}}}};
  meta["bundle"] = bundle_manifest(bundle);
  meta["gamma"] = sampler.gamma;
  return Checkpoint::capture(params(), config.to_json(), meta);
}

LealModel leal_skeleton(const DatasetBundle& bundle, const LealConfig& config) {
  check_bundle(bundle, config);
  LealModel m;
  m.config = config;
  m.sampler = sampler_skeleton(bundle.secondary.width(), bundle.primary.width(), config.sampler_config(), config.seed);
  auto init = RngStream(config.seed, StreamLabel::init).fork(kModelInitTag);
  m.model = init_alignment_model(bundle.primary.width(), bundle.secondary.width(), outputs_for(bundle),
                                 config.alignment_config(), init);
  return m;
}

LealRun train_leal(const DatasetBundle& bundle, const LealConfig& config) {
  check_bundle(bundle, config);
  LealRun run;
  run.state = leal_skeleton(bundle, config);
  // Unsupervised stage: autoencoder on the secondary table, then k-means centroids.
  run.state.sampler = init_sampler(bundle.secondary.values, bundle.primary.width(), config.sampler_config(), config.seed);

  const Tensor& xp = bundle.primary.values;
  const Tensor& xs = bundle.secondary.values;
  const auto& state = run.state;
  FitTarget target;
  target.params = state.params();
  target.train_output = [&](const Rows& rows, const RngStream& stream) {
    ForwardOptions opts{.mode = SampleMode::train, .k = config.k, .straight_through = config.straight_through};
    return model_forward(index_rows(xp, rows), xs, state.sampler, state.model, opts, stream).prediction;
  };
  target.eval_output = [&](const Rows& rows) {
    ForwardOptions opts{.mode = SampleMode::infer, .k = config.k};
    return model_forward(index_rows(xp, rows), xs, state.sampler, state.model, opts, RngStream(0, StreamLabel::sample))
        .prediction;
  };
  run.report = fit(bundle, config, target, "leal");
  run.report.pretrain_loss = state.sampler.pretrain_loss;
  return run;
}

Inference infer(const LealModel& state, const EncodedMatrix& primary, const EncodedMatrix& secondary, const Rows& rows,
                nn::Task task) {
  if (primary.width() != state.model.primary_encoder.in_features())
    throw DimensionError("infer: primary width " + std::to_string(primary.width()) + " but the model was trained on " +
                         std::to_string(state.model.primary_encoder.in_features()));
  if (secondary.width() != state.sampler.encoder.in_features())
    throw DimensionError("infer: secondary width " + std::to_string(secondary.width()) +
                         " but the model was trained on " + std::to_string(state.sampler.encoder.in_features()));
  Inference out;
  std::vector<double> values, lambda;
  std::size_t width = 0, k = 0;
  for (std::size_t start = 0; start < rows.size(); start += kEvalBatch) {
    Rows chunk(rows.begin() + start, rows.begin() + std::min(rows.size(), start + kEvalBatch));
    ForwardOptions opts{.mode = SampleMode::infer, .k = state.config.k};
    auto r = model_forward(index_rows(primary.values, chunk), secondary.values, state.sampler, state.model, opts,
                           RngStream(0, StreamLabel::sample));
    width = r.prediction.dim(1);
    k = r.k;
    values.insert(values.end(), r.prediction.data().begin(), r.prediction.data().end());
    lambda.insert(lambda.end(), r.lambda.back().data().begin(), r.lambda.back().data().end());
    out.candidates.insert(out.candidates.end(), r.candidates.begin(), r.candidates.end());
  }
  out.outputs = Tensor::from({rows.size(), width}, std::move(values));
  out.lambda = Tensor::from({rows.size(), k}, std::move(lambda));
  out.predictions = to_predictions(out.outputs, task);
  return out;
}

// ---------------------------------------------------------------------------
// Baseline and ablation
// ---------------------------------------------------------------------------

SoloRun train_solo_mlp(const DatasetBundle& bundle, const LealConfig& config, const std::vector<std::size_t>& hidden) {
  check_bundle(bundle, config);
  std::vector<std::size_t> widths{bundle.primary.width()};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(outputs_for(bundle));
  auto init = RngStream(config.seed, StreamLabel::init).fork(kSoloInitTag);
  SoloRun run;
  run.mlp = nn::Mlp::init({widths, false}, init);
  const Tensor& xp = bundle.primary.values;
  FitTarget target;
  run.mlp.collect("solo", target.params);
  target.train_output = [&](const Rows& rows, const RngStream&) { return mlp_forward(run.mlp, index_rows(xp, rows)); };
  target.eval_output = [&](const Rows& rows) { return mlp_forward(run.mlp, index_rows(xp, rows)); };
  run.report = fit(bundle, config, target, "solo_mlp");
  return run;
}

LealRun ablation_ground_truth(const DatasetBundle& bundle, const LealConfig& config) {
  check_bundle(bundle, config);
  if (!bundle.ground_truth) throw std::invalid_argument("ground-truth ablation needs a bundle with a known alignment");
  if (config.tie_secondary_encoder)
    throw ConfigError("tie_secondary_encoder", "the ground-truth ablation has no sampler encoder to tie to");
  LealRun run;
  run.state = leal_skeleton(bundle, config);
  const auto& truth = *bundle.ground_truth;
  const Tensor& xp = bundle.primary.values;
  const Tensor& xs = bundle.secondary.values;
  const std::size_t n_s = xs.dim(0);
  const auto& model = run.state.model;
  const auto eval_stream = RngStream(config.seed, StreamLabel::sample).fork(kEvalCandidatesTag);

  // Candidates for evaluation rows are fixed per row so every epoch scores the same task.
  auto candidates = [&](const Rows& rows, const RngStream* stream, std::vector<std::size_t>* positions) {
    Rows all;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::size_t pos = 0;
      auto s = stream ? stream->fork(i) : eval_stream.fork(rows[i]);
      auto c = planted_candidates(truth[rows[i]], n_s, config.k, s, pos);
      all.insert(all.end(), c.begin(), c.end());
      if (positions) positions->push_back(pos);
    }
    return all;
  };
  const std::size_t k = std::min(config.k, n_s);
  FitTarget target;
  target.params = run.state.params();
  // Only the alignment model is trained; sampler tensors stay untouched (no gradient reaches them).
  target.params.erase(std::remove_if(target.params.begin(), target.params.end(),
                                     [](const Param& p) { return p.name.rfind("sampler.", 0) == 0; }),
                      target.params.end());
  target.train_output = [&](const Rows& rows, const RngStream& stream) {
    return align_candidates(model, nullptr, index_rows(xp, rows), index_rows(xs, candidates(rows, &stream, nullptr)), k)
        .prediction;
  };
  target.eval_output = [&](const Rows& rows) {
    return align_candidates(model, nullptr, index_rows(xp, rows), index_rows(xs, candidates(rows, nullptr, nullptr)), k)
        .prediction;
  };
  run.report = fit(bundle, config, target, "leal_ground_truth");

  auto lambda_on_truth = [&](const Rows& rows) {
    double total = 0.0;
    for (std::size_t start = 0; start < rows.size(); start += kEvalBatch) {
      Rows chunk(rows.begin() + start, rows.begin() + std::min(rows.size(), start + kEvalBatch));
      std::vector<std::size_t> pos;
      auto cand = candidates(chunk, nullptr, &pos);
      auto out = align_candidates(model, nullptr, index_rows(xp, chunk), index_rows(xs, cand), k);
      for (std::size_t i = 0; i < chunk.size(); ++i) total += out.lambda.back().at({i, pos[i]});
    }
    return total / static_cast<double>(rows.size());
  };
  run.report.val_lambda_true = lambda_on_truth(bundle.split.val);
  run.report.test_lambda_true = lambda_on_truth(bundle.split.test);
  return run;
}

}  // namespace leal
