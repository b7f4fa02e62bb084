#include "leal/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "leal/analysis.hpp"
#include "leal/errors.hpp"

#ifndef LEAL_VERSION
#define LEAL_VERSION "dev"
#endif

namespace leal::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Strict JSON reading
// ---------------------------------------------------------------------------

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "config" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const std::string& key) const { return j_.at(key); }

  void size(const std::string& key, std::size_t& dst) {
    if (has(key)) dst = as_size(at(key), field(key));
  }
  void u64(const std::string& key, std::uint64_t& dst) {
    if (has(key)) dst = as_size(at(key), field(key));
  }
  void real(const std::string& key, double& dst) {
    if (!has(key)) return;
    if (!at(key).is_number()) throw ConfigError(field(key), "expected a number");
    dst = at(key).get<double>();
  }
  void flag(const std::string& key, bool& dst) {
    if (!has(key)) return;
    if (!at(key).is_boolean()) throw ConfigError(field(key), "expected true or false");
    dst = at(key).get<bool>();
  }
  void text(const std::string& key, std::string& dst) {
    if (!has(key)) return;
    if (!at(key).is_string()) throw ConfigError(field(key), "expected a string");
    dst = at(key).get<std::string>();
  }
  void sizes(const std::string& key, std::vector<std::size_t>& dst) {
    if (!has(key)) return;
    dst.clear();
    for (const auto& v : array(key)) dst.push_back(as_size(v, field(key)));
  }
  void reals(const std::string& key, std::vector<double>& dst) {
    if (!has(key)) return;
    dst.clear();
    for (const auto& v : array(key)) {
      if (!v.is_number()) throw ConfigError(field(key), "expected numbers");
      dst.push_back(v.get<double>());
    }
  }
  void texts(const std::string& key, std::vector<std::string>& dst) {
    if (!has(key)) return;
    dst.clear();
    for (const auto& v : array(key)) {
      if (!v.is_string()) throw ConfigError(field(key), "expected strings");
      dst.push_back(v.get<std::string>());
    }
  }

  void finish() const {
    for (const auto& [key, v] : j_.items())
      if (!seen_.count(key)) throw ConfigError(field(key), "unknown key");
  }

  static std::uint64_t as_size(const json& v, const std::string& where) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw ConfigError(where, "expected a non-negative integer");
  }

 private:
  const json& array(const std::string& key) const {
    if (!at(key).is_array()) throw ConfigError(field(key), "expected a list");
    return at(key);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed while writing " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

struct Summary {
  double mean = 0.0, std = 0.0;
  std::size_t n = 0;
};

Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return s;
}

json to_json(const Summary& s) { return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}}; }

std::string num(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

std::size_t worker_count(std::size_t tasks) {
  std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LEAL_THREADS")) {
    try {
      cap = std::max<std::size_t>(1, std::stoul(env));
    } catch (const std::exception&) {
      throw ConfigError("LEAL_THREADS", std::string("expected a positive integer, got '") + env + "'");
    }
  }
  return std::max<std::size_t>(1, std::min(cap, tasks));
}

/// Runs fn(0..tasks-1) on a pool of workers; each task owns its outputs.
void parallel_for(std::size_t tasks, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = worker_count(tasks);
  if (workers <= 1) {
    for (std::size_t i = 0; i < tasks; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < tasks; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

json manifest(const std::string& command, const ExperimentConfig& config, const json& data) {
  return {{"command", command}, {"version", LEAL_VERSION}, {"config", config.to_json()},
          {"seeds", config.seeds}, {"data", data}};
}

LealConfig with_seed(LealConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

std::vector<DatasetBundle> load_bundles(const ExperimentConfig& c) {
  std::vector<DatasetBundle> out;
  for (auto seed : c.seeds) out.push_back(load_bundle(c.data, seed));
  return out;
}

json bundle_manifests(const std::vector<DatasetBundle>& bundles) {
  json j = json::array();
  for (const auto& b : bundles) j.push_back(bundle_manifest(b));
  return j;
}

void cmd_synth(const ExperimentConfig& c, std::ostream& out) {
  const auto bundle = load_bundle(c.data, c.seeds.front());
  const fs::path dir = c.out;
  Table primary = bundle.primary_table;
  Column label;
  label.name = c.data.label.empty() ? "label" : c.data.label;
  if (bundle.task() == nn::Task::classification) {
    label.kind = ColumnKind::categorical;
    label.categories = bundle.labels.class_names;
    for (double v : bundle.labels.values) label.codes.push_back(static_cast<std::size_t>(v));
  } else {
    label.numbers = bundle.labels.values;
  }
  primary.columns.push_back(std::move(label));

  std::ostringstream p, s;
  write_csv(p, primary);
  write_csv(s, bundle.secondary_table);
  write_text(dir / "primary.csv", p.str());
  write_text(dir / "secondary.csv", s.str());
  if (bundle.ground_truth) {
    std::ostringstream a;
    a << "primary_row,secondary_row\n";
    for (std::size_t i = 0; i < bundle.ground_truth->size(); ++i) a << i << ',' << (*bundle.ground_truth)[i] << '\n';
    write_text(dir / "alignment.csv", a.str());
  }
  const json m = bundle_manifest(bundle);
  write_json(dir / "manifest.json", manifest("synth", c, json::array({m})));
  write_json(dir / "metrics.json", {{"command", "synth"}, {"bundle", m}});
  out << "wrote " << (dir / "primary.csv").string() << " and " << (dir / "secondary.csv").string() << "\n";
}

void cmd_train(const ExperimentConfig& c, std::ostream& out) {
  const auto bundles = load_bundles(c);
  const std::size_t n = c.seeds.size();
  std::vector<LealRun> leal(n);
  std::vector<std::optional<SoloRun>> solo(n);
  parallel_for(n, [&](std::size_t i) {
    const auto cfg = with_seed(c.leal, c.seeds[i]);
    leal[i] = train_leal(bundles[i], cfg);
    if (c.baseline) solo[i] = train_solo_mlp(bundles[i], cfg, c.solo_hidden);
  });

  const fs::path dir = c.out;
  json runs = json::array();
  std::vector<double> leal_scores, solo_scores;
  std::ostringstream csv;
  csv << "seed,model,metric,test_metric,test_loss,best_epoch,epochs_run,stopped_early\n";
  auto row = [&](std::uint64_t seed, const TrainReport& r) {
    csv << seed << ',' << r.model << ',' << r.metric << ',' << num(r.test_metric) << ',' << num(r.test_loss) << ','
        << r.best_epoch << ',' << r.epochs.size() << ',' << (r.stopped_early ? "true" : "false") << '\n';
    runs.push_back(r.to_json(true));
  };
  fs::create_directories(dir / "checkpoints");
  for (std::size_t i = 0; i < n; ++i) {
    row(c.seeds[i], leal[i].report);
    leal_scores.push_back(leal[i].report.test_metric);
    save_checkpoint((dir / "checkpoints" / ("leal_seed" + std::to_string(c.seeds[i]) + ".json")).string(),
                    leal[i].state.checkpoint(bundles[i]));
    if (solo[i]) {
      row(c.seeds[i], solo[i]->report);
      solo_scores.push_back(solo[i]->report.test_metric);
    }
  }
  json summary = {{"leal", to_json(summarize(leal_scores))}};
  if (c.baseline) summary["solo_mlp"] = to_json(summarize(solo_scores));
  write_text(dir / "report.csv", csv.str());
  write_json(dir / "metrics.json", {{"command", "train"}, {"metric", leal.front().report.metric},
                                    {"summary", summary}, {"runs", runs}});
  write_json(dir / "manifest.json", manifest("train", c, bundle_manifests(bundles)));
  out << "leal " << leal.front().report.metric << " " << summarize(leal_scores).mean;
  if (c.baseline) out << ", solo_mlp " << summarize(solo_scores).mean;
  out << " (" << n << " seed" << (n == 1 ? "" : "s") << ")\n";
}

void cmd_eval(const ExperimentConfig& c, std::ostream& out) {
  const auto ckpt = load_checkpoint(c.checkpoint);
  const auto cfg = LealConfig::from_json(ckpt.config, "checkpoint.config");
  const auto bundle = load_bundle(c.data, cfg.seed);
  if (ckpt.metadata.contains("bundle") && bundle_manifest(bundle) != ckpt.metadata.at("bundle"))
    throw std::runtime_error("data does not match the checkpoint (different rows, columns, split or seed)");
  auto state = leal_skeleton(bundle, cfg);
  state.sampler.gamma = ckpt.metadata.value("gamma", cfg.gamma);
  ckpt.apply(state.params());

  const auto& rows = bundle.split.test;
  const auto inf = infer(state, bundle.primary, bundle.secondary, rows, bundle.task());
  std::vector<double> targets;
  for (auto r : rows) targets.push_back(bundle.labels.values[r]);
  const double metric = eval_metrics(inf.predictions, targets, bundle.task());
  const std::string metric_name = bundle.task() == nn::Task::classification ? "accuracy" : "rmse";

  std::ostringstream csv;
  csv << "row,prediction,target,candidates\n";
  const std::size_t k = inf.lambda.dim(1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    csv << rows[i] << ',' << num(inf.predictions[i]) << ',' << num(targets[i]) << ',';
    for (std::size_t j = 0; j < k; ++j) csv << (j ? ";" : "") << inf.candidates[i * k + j];
    csv << '\n';
  }
  const fs::path dir = c.out;
  write_text(dir / "predictions.csv", csv.str());
  write_text(dir / "report.csv", "split,metric,value,rows\ntest," + metric_name + "," + num(metric) + "," +
                                     std::to_string(rows.size()) + "\n");
  write_json(dir / "metrics.json", {{"command", "eval"}, {"metric", metric_name}, {"test_metric", metric},
                                    {"rows", rows.size()}, {"checkpoint_config", ckpt.config}});
  write_json(dir / "manifest.json", manifest("eval", c, json::array({bundle_manifest(bundle)})));
  out << metric_name << " " << metric << " on " << rows.size() << " test rows\n";
}

void cmd_ablate(const ExperimentConfig& c, std::ostream& out) {
  const auto bundles = load_bundles(c);
  for (const auto& b : bundles)
    if (!b.ground_truth) throw std::runtime_error("the ground-truth ablation needs data with a known alignment");
  const std::size_t n = c.seeds.size(), nk = c.ablation_ks.size();
  std::vector<TrainReport> gt(n * nk), solo(n);
  parallel_for(n * (nk + 1), [&](std::size_t t) {
    const std::size_t seed_index = t % n, ki = t / n;
    auto cfg = with_seed(c.leal, c.seeds[seed_index]);
    if (ki == nk) {
      solo[seed_index] = train_solo_mlp(bundles[seed_index], cfg, c.solo_hidden).report;
    } else {
      cfg.k = c.ablation_ks[ki];
      gt[ki * n + seed_index] = ablation_ground_truth(bundles[seed_index], cfg).report;
    }
  });

  std::ostringstream runs_csv, summary_csv;
  runs_csv << "model,k,seed,test_metric,val_lambda_true,test_lambda_true\n";
  summary_csv << "model,k,runs,mean,std,lambda_true_mean,uniform_lambda\n";
  json points = json::array();
  for (std::size_t ki = 0; ki < nk; ++ki) {
    std::vector<double> scores, lambdas;
    for (std::size_t s = 0; s < n; ++s) {
      const auto& r = gt[ki * n + s];
      scores.push_back(r.test_metric);
      lambdas.push_back(r.test_lambda_true.value_or(0.0));
      runs_csv << "leal_ground_truth," << c.ablation_ks[ki] << ',' << c.seeds[s] << ',' << num(r.test_metric) << ','
               << num(r.val_lambda_true.value_or(0.0)) << ',' << num(r.test_lambda_true.value_or(0.0)) << '\n';
    }
    const auto sm = summarize(scores), lm = summarize(lambdas);
    const std::size_t k_eff = std::min(c.ablation_ks[ki], bundles.front().secondary.rows());
    summary_csv << "leal_ground_truth," << c.ablation_ks[ki] << ',' << n << ',' << num(sm.mean) << ',' << num(sm.std)
                << ',' << num(lm.mean) << ',' << num(1.0 / static_cast<double>(k_eff)) << '\n';
    points.push_back({{"k", c.ablation_ks[ki]}, {"test_metric", to_json(sm)}, {"lambda_true", to_json(lm)},
                      {"uniform_lambda", 1.0 / static_cast<double>(k_eff)}});
  }
  std::vector<double> solo_scores;
  for (std::size_t s = 0; s < n; ++s) {
    solo_scores.push_back(solo[s].test_metric);
    runs_csv << "solo_mlp,," << c.seeds[s] << ',' << num(solo[s].test_metric) << ",,\n";
  }
  const auto ss = summarize(solo_scores);
  summary_csv << "solo_mlp,," << n << ',' << num(ss.mean) << ',' << num(ss.std) << ",,\n";

  const fs::path dir = c.out;
  write_text(dir / "report.csv", runs_csv.str());
  write_text(dir / "ablation.csv", summary_csv.str());
  write_json(dir / "metrics.json", {{"command", "ablate"}, {"metric", solo.front().metric}, {"points", points},
                                    {"solo_mlp", to_json(ss)}});
  write_json(dir / "manifest.json", manifest("ablate", c, bundle_manifests(bundles)));
  for (const auto& p : points)
    out << "k=" << p["k"] << " " << p["test_metric"]["mean"] << " (lambda on truth " << p["lambda_true"]["mean"]
        << ")\n";
  out << "solo_mlp " << ss.mean << "\n";
}

void cmd_theory(const ExperimentConfig& c, std::ostream& out) {
  const auto& t = c.theory;
  const auto norm = normalization_from_string(t.normalization);
  json instances = json::array();
  std::size_t holds = 0, consistent = 0;
  for (std::size_t i = 0; i < c.seeds.size(); ++i) {
    const double sigma = t.sigmas[i % t.sigmas.size()];
    const auto inst = make_theorem_instance(t.n, t.mp, t.ms, sigma, c.seeds[i], norm);
    const auto r = verify_alignment_theorem(inst, t.perms, c.seeds[i]);
    holds += r.holds;
    consistent += r.mc_consistent;
    auto j = r.to_json();
    j["seed"] = c.seeds[i];
    j["sigma"] = sigma;
    instances.push_back(j);
  }
  const std::string holds_text = std::to_string(holds) + "/" + std::to_string(c.seeds.size());

  const auto mot = motivation_experiment(t.motivation_n, c.seeds.front());
  const auto approx = approximation_smoke_test(t.approx_steps, 1e-2, c.seeds.front());

  const fs::path dir = c.out;
  std::ostringstream csv;
  csv << "seed,sigma,mse_aligned,mse_misaligned_closed_form,mse_misaligned_mc,mc_standard_error,holds\n";
  for (const auto& j : instances)
    csv << j["seed"] << ',' << num(j["sigma"]) << ',' << num(j["mse_aligned"]) << ','
        << num(j["mse_misaligned_closed_form"]) << ',' << num(j["mse_misaligned_mc"]) << ','
        << num(j["mc_standard_error"]) << ',' << (j["holds"].get<bool>() ? "true" : "false") << '\n';
  write_text(dir / "report.csv", csv.str());
  write_text(dir / "motivation_loss.csv", motivation_loss_csv(mot));
  write_text(dir / "motivation_boundary.csv", motivation_boundary_csv(mot));
  std::ostringstream approx_csv;
  approx_csv << "step,mse\n";
  for (std::size_t i = 0; i < approx.curve.size(); ++i) approx_csv << (i + 1) * 100 << ',' << num(approx.curve[i]) << '\n';
  write_text(dir / "approximation.csv", approx_csv.str());

  json metrics = {
      {"command", "theory"},
      {"theorem",
       {{"holds", holds_text},
        {"holds_count", holds},
        {"instances", c.seeds.size()},
        {"mc_consistent", std::to_string(consistent) + "/" + std::to_string(c.seeds.size())},
        {"normalization", t.normalization},
        {"runs", instances}}},
      {"motivation",
       {{"n", t.motivation_n},
        {"aligned_mse", mot.aligned_mse},
        {"misaligned_mse", mot.misaligned_mse},
        {"relative_gap", (mot.misaligned_mse - mot.aligned_mse) / mot.misaligned_mse},
        {"aligned_coef", mot.aligned_coef},
        {"misaligned_coef", mot.misaligned_coef}}},
      {"approximation",
       {{"final_mse", approx.final_mse}, {"steps", approx.steps}, {"steps_to_threshold", approx.steps_to_threshold},
        {"threshold", 1e-2}}}};
  write_json(dir / "metrics.json", metrics);
  write_json(dir / "manifest.json", manifest("theory", c, json::array()));
  out << "alignment inequality holds " << holds_text << "; motivation mse " << mot.aligned_mse << " vs "
      << mot.misaligned_mse << "\n";
}

void cmd_timing(const ExperimentConfig& c, std::ostream& out) {
  const auto bundle = load_bundle(c.data, c.seeds.front());
  const auto report = timing_scaling(bundle, c.timing_ks, with_seed(c.leal, c.seeds.front()), c.timing_epochs);
  std::ostringstream csv;
  csv << "k,mean_epoch_seconds,std_epoch_seconds\n";
  for (std::size_t i = 0; i < report.ks.size(); ++i)
    csv << report.ks[i] << ',' << num(report.mean_seconds[i]) << ',' << num(report.std_seconds[i]) << '\n';
  const fs::path dir = c.out;
  write_text(dir / "report.csv", csv.str());
  write_json(dir / "metrics.json", {{"command", "timing"}, {"ks", c.timing_ks}, {"epochs", c.timing_epochs},
                                    {"timing", report.to_json()}});
  write_json(dir / "manifest.json", manifest("timing", c, json::array({bundle_manifest(bundle)})));
  out << "epoch time slope " << report.slope << " over K (increasing: " << (report.increasing ? "yes" : "no") << ")\n";
}

struct SweepPoint {
  std::size_t k, clusters, depth;
  std::string name() const {
    return "k" + std::to_string(k) + "_c" + std::to_string(clusters) + "_d" + std::to_string(depth);
  }
};

struct SweepResult {
  bool ok = false;
  double test_metric = 0.0;
  std::string trajectory;  // train-loss history, used to catch seeds that collapse onto one stream
  std::string error;
};

int cmd_sweep(const ExperimentConfig& c, bool resume, std::ostream& out, std::ostream& err) {
  std::vector<SweepPoint> points;
  for (auto k : c.sweep.k)
    for (auto cl : c.sweep.clusters)
      for (auto d : c.sweep.depth) points.push_back({k, cl, d});
  const auto bundles = load_bundles(c);
  const std::size_t n = c.seeds.size();
  const fs::path dir = c.out;
  std::vector<SweepResult> results(points.size() * n);

  parallel_for(results.size(), [&](std::size_t t) {
    const auto& p = points[t / n];
    const std::size_t s = t % n;
    const fs::path run_dir = dir / "runs" / p.name() / ("seed" + std::to_string(c.seeds[s]));
    auto& res = results[t];
    if (resume && fs::exists(run_dir / "metrics.json")) {
      try {
        const auto j = read_json(run_dir / "metrics.json");
        res.test_metric = j.at("test_metric").get<double>();
        res.trajectory = j.at("trajectory").get<std::string>();
        res.ok = true;
        return;
      } catch (const std::exception&) {
        // unreadable result: run the point again
      }
    }
    try {
      auto cfg = with_seed(c.leal, c.seeds[s]);
      cfg.k = p.k;
      cfg.clusters = p.clusters;
      cfg.depth = p.depth;
      const auto report = train_leal(bundles[s], cfg).report;
      std::ostringstream traj;
      for (const auto& e : report.epochs) traj << num(e.train_loss) << ';';
      res = {true, report.test_metric, traj.str(), ""};
      auto j = report.to_json(true);
      j["trajectory"] = res.trajectory;
      write_json(run_dir / "metrics.json", j);
    } catch (const std::exception& e) {
      res.ok = false;
      res.error = e.what();
      write_json(run_dir / "error.json", {{"error", e.what()}});
    }
  });

  std::ostringstream csv;
  csv << "k,clusters,depth,runs,failed,mean,std\n";
  json summary = json::array();
  std::vector<std::string> collisions;
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    std::vector<double> scores;
    std::vector<std::string> errors;
    std::map<std::string, std::uint64_t> seen;
    for (std::size_t s = 0; s < n; ++s) {
      const auto& r = results[pi * n + s];
      if (!r.ok) {
        errors.push_back("seed " + std::to_string(c.seeds[s]) + ": " + r.error);
        continue;
      }
      scores.push_back(r.test_metric);
      if (auto [it, fresh] = seen.emplace(r.trajectory, c.seeds[s]); !fresh)
        collisions.push_back(points[pi].name() + " seeds " + std::to_string(it->second) + " and " +
                             std::to_string(c.seeds[s]));
    }
    const auto sm = summarize(scores);
    const auto& p = points[pi];
    csv << p.k << ',' << p.clusters << ',' << p.depth << ',' << sm.n << ',' << errors.size() << ',' << num(sm.mean)
        << ',' << num(sm.std) << '\n';
    summary.push_back({{"k", p.k}, {"clusters", p.clusters}, {"depth", p.depth}, {"test_metric", to_json(sm)},
                       {"failed", errors}});
  }
  write_text(dir / "sweep.csv", csv.str());
  write_json(dir / "metrics.json", {{"command", "sweep"}, {"points", summary}, {"seed_collisions", collisions}});
  write_json(dir / "manifest.json", manifest("sweep", c, bundle_manifests(bundles)));
  out << points.size() << " points x " << n << " seeds written to " << (dir / "sweep.csv").string() << "\n";
  if (!collisions.empty()) {
    err << json{{"error", "runtime"}, {"message", "distinct seeds produced identical training trajectories"},
                {"points", collisions}}.dump()
        << "\n";
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

enum class Kind { size, u64, real, text, sizes, reals, texts, set_true, set_false, seed, seed_count };

struct FlagSpec {
  const char* flag;
  const char* pointer;  // JSON pointer into the config document
  Kind kind;
  const char* help;
  unsigned commands;
};

enum : unsigned {
  kSynth = 1,
  kTrain = 2,
  kEval = 4,
  kAblate = 8,
  kTheory = 16,
  kSweep = 32,
  kTiming = 64,
  kData = kSynth | kTrain | kEval | kAblate | kSweep | kTiming,
  kModel = kTrain | kAblate | kSweep | kTiming,
  kAll = 127,
};

const std::vector<FlagSpec>& flag_specs() {
  static const std::vector<FlagSpec> specs = {
      {"--out", "/out", Kind::text, "output directory", kAll},
      {"--seed", "/seeds", Kind::seed, "single run seed", kAll},
      {"--seeds", "/seeds", Kind::seed_count, "run seeds 0..N-1", kAll & ~kEval},
      {"--input", "/data/input", Kind::text, "CSV split by features into two tables", kData},
      {"--primary", "/data/primary", Kind::text, "primary table CSV", kData},
      {"--secondary", "/data/secondary", Kind::text, "secondary table CSV", kData},
      {"--label", "/data/label", Kind::text, "target column", kData},
      {"--task", "/data/task", Kind::text, "classification or regression", kData},
      {"--categorical", "/data/categorical", Kind::texts, "columns forced categorical", kData},
      {"--letter", "/data/letter_rows", Kind::size, "rows of letter-style synthetic data", kData},
      {"--subsample", "/data/subsample", Kind::size, "keep this many rows", kData},
      {"--no-shuffle", "/data/shuffle_secondary", Kind::set_false, "keep secondary rows aligned", kData},
      {"--data-seed", "/data/seed", Kind::u64, "generator and subsample seed", kData},
      {"--k", "/leal/k", Kind::size, "candidates per primary record", kModel},
      {"--clusters", "/leal/clusters", Kind::size, "sampler clusters", kModel},
      {"--dim", "/leal/dim", Kind::size, "hidden width", kModel},
      {"--depth", "/leal/depth", Kind::size, "alignment blocks", kModel},
      {"--heads", "/leal/heads", Kind::size, "attention heads", kModel},
      {"--ffn-hidden", "/leal/ffn_hidden", Kind::size, "feed-forward width (0: dim)", kModel},
      {"--gamma", "/leal/gamma", Kind::real, "Student's t degrees of freedom", kModel},
      {"--combiner-hidden", "/leal/combiner_hidden", Kind::size, "combiner width", kModel},
      {"--lr", "/leal/lr", Kind::real, "learning rate", kModel},
      {"--weight-decay", "/leal/weight_decay", Kind::real, "AdamW weight decay", kModel},
      {"--batch-size", "/leal/batch_size", Kind::size, "batch size", kModel},
      {"--max-epochs", "/leal/max_epochs", Kind::size, "epoch limit", kModel},
      {"--patience", "/leal/patience", Kind::size, "early-stopping patience", kModel},
      {"--ae-depth", "/leal/ae_depth", Kind::size, "autoencoder depth", kModel},
      {"--ae-epochs", "/leal/ae_epochs", Kind::size, "autoencoder epochs", kModel},
      {"--ae-lr", "/leal/ae_lr", Kind::real, "autoencoder learning rate", kModel},
      {"--no-straight-through", "/leal/straight_through", Kind::set_false, "drop the straight-through factor", kModel},
      {"--tie-encoder", "/leal/tie_secondary_encoder", Kind::set_true, "share the sampler encoder", kModel},
      {"--baseline", "/baseline", Kind::set_true, "also train the primary-only MLP", kTrain},
      {"--solo-hidden", "/solo_hidden", Kind::sizes, "baseline hidden widths", kTrain | kAblate},
      {"--checkpoint", "/checkpoint", Kind::text, "checkpoint to evaluate", kEval},
      {"--n", "/theory/n", Kind::size, "rows per theorem instance", kTheory},
      {"--mp", "/theory/mp", Kind::size, "primary columns", kTheory},
      {"--ms", "/theory/ms", Kind::size, "secondary columns", kTheory},
      {"--sigma", "/theory/sigmas", Kind::reals, "noise levels, cycled over instances", kTheory},
      {"--perms", "/theory/perms", Kind::size, "random misalignments per instance", kTheory},
      {"--normalization", "/theory/normalization", Kind::text, "centered, standardized or unit_norm", kTheory},
      {"--motivation-n", "/theory/motivation_n", Kind::size, "rows of the two-table motivation task", kTheory},
      {"--approx-steps", "/theory/approx_steps", Kind::size, "steps of the approximation smoke test", kTheory},
      {"--ks", "/ablation_ks", Kind::sizes, "candidate counts", kAblate},
      {"--grid-k", "/sweep/k", Kind::sizes, "K values", kSweep},
      {"--grid-clusters", "/sweep/clusters", Kind::sizes, "C values", kSweep},
      {"--grid-depth", "/sweep/depth", Kind::sizes, "depth values", kSweep},
      {"--timing-ks", "/timing_ks", Kind::sizes, "K values to time", kTiming},
      {"--epochs", "/timing_epochs", Kind::size, "measured epochs per K", kTiming},
  };
  return specs;
}

std::string dotted(const std::string& pointer) {
  std::string s = pointer.substr(1);
  std::replace(s.begin(), s.end(), '/', '.');
  return s;
}

std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> out;
  std::stringstream ss(raw);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::uint64_t parse_count(const std::string& raw, const std::string& field) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    if (raw.empty() || raw[0] == '-') throw std::invalid_argument(raw);
    v = std::stoull(raw, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != raw.size()) throw ConfigError(field, "expected a non-negative integer, got '" + raw + "'");
  return v;
}

double parse_real(const std::string& raw, const std::string& field) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(raw, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != raw.size()) throw ConfigError(field, "expected a number, got '" + raw + "'");
  return v;
}

json flag_value(const FlagSpec& spec, const std::string& raw) {
  const std::string field = dotted(spec.pointer);
  switch (spec.kind) {
    case Kind::size:
    case Kind::u64: return parse_count(raw, field);
    case Kind::real: return parse_real(raw, field);
    case Kind::text: return raw;
    case Kind::sizes: {
      json a = json::array();
      for (const auto& s : split_list(raw)) a.push_back(parse_count(s, field));
      return a;
    }
    case Kind::reals: {
      json a = json::array();
      for (const auto& s : split_list(raw)) a.push_back(parse_real(s, field));
      return a;
    }
    case Kind::texts: return split_list(raw);
    case Kind::set_true: return true;
    case Kind::set_false: return false;
    case Kind::seed: return json::array({parse_count(raw, field)});
    case Kind::seed_count: return parse_count(raw, field);
  }
  return nullptr;
}

bool needs_data(const std::string& command) { return command != "theory"; }

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

json ExperimentConfig::to_json() const {
  return {{"data",
           {{"input", data.input},
            {"primary", data.primary},
            {"secondary", data.secondary},
            {"label", data.label},
            {"task", data.task},
            {"categorical", data.categorical},
            {"letter_rows", data.letter_rows},
            {"subsample", data.subsample},
            {"shuffle_secondary", data.shuffle_secondary},
            {"seed", data.seed}}},
          {"leal", leal.to_json()},
          {"seeds", seeds},
          {"out", out},
          {"baseline", baseline},
          {"solo_hidden", solo_hidden},
          {"theory",
           {{"n", theory.n},
            {"mp", theory.mp},
            {"ms", theory.ms},
            {"sigmas", theory.sigmas},
            {"perms", theory.perms},
            {"normalization", theory.normalization},
            {"motivation_n", theory.motivation_n},
            {"approx_steps", theory.approx_steps}}},
          {"ablation_ks", ablation_ks},
          {"sweep", {{"k", sweep.k}, {"clusters", sweep.clusters}, {"depth", sweep.depth}}},
          {"timing_ks", timing_ks},
          {"timing_epochs", timing_epochs},
          {"checkpoint", checkpoint}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Reader r(j, "");
  if (r.has("data")) {
    Reader d(r.at("data"), "data");
    d.text("input", c.data.input);
    d.text("primary", c.data.primary);
    d.text("secondary", c.data.secondary);
    d.text("label", c.data.label);
    d.text("task", c.data.task);
    d.texts("categorical", c.data.categorical);
    d.size("letter_rows", c.data.letter_rows);
    d.size("subsample", c.data.subsample);
    d.flag("shuffle_secondary", c.data.shuffle_secondary);
    d.u64("seed", c.data.seed);
    d.finish();
  }
  if (r.has("leal")) c.leal = LealConfig::from_json(r.at("leal"), "leal");
  if (r.has("seeds")) {
    const auto& s = r.at("seeds");
    if (s.is_array()) {
      c.seeds.clear();
      for (const auto& v : s) c.seeds.push_back(Reader::as_size(v, "seeds"));
    } else {
      const auto count = Reader::as_size(s, "seeds");
      c.seeds.resize(count);
      std::iota(c.seeds.begin(), c.seeds.end(), 0);
    }
  }
  r.text("out", c.out);
  r.flag("baseline", c.baseline);
  r.sizes("solo_hidden", c.solo_hidden);
  if (r.has("theory")) {
    Reader t(r.at("theory"), "theory");
    t.size("n", c.theory.n);
    t.size("mp", c.theory.mp);
    t.size("ms", c.theory.ms);
    t.reals("sigmas", c.theory.sigmas);
    t.size("perms", c.theory.perms);
    t.text("normalization", c.theory.normalization);
    t.size("motivation_n", c.theory.motivation_n);
    t.size("approx_steps", c.theory.approx_steps);
    t.finish();
  }
  r.sizes("ablation_ks", c.ablation_ks);
  if (r.has("sweep")) {
    Reader s(r.at("sweep"), "sweep");
    s.sizes("k", c.sweep.k);
    s.sizes("clusters", c.sweep.clusters);
    s.sizes("depth", c.sweep.depth);
    s.finish();
  }
  r.sizes("timing_ks", c.timing_ks);
  r.size("timing_epochs", c.timing_epochs);
  r.text("checkpoint", c.checkpoint);
  r.finish();

  require(!c.seeds.empty(), "seeds", "needs at least one seed");
  require(!c.out.empty(), "out", "must not be empty");
  require(c.data.task == "classification" || c.data.task == "regression", "data.task",
          "expected classification or regression");
  require(c.data.input.empty() || c.data.primary.empty(), "data.input", "give either input or primary/secondary");
  require(c.data.primary.empty() == c.data.secondary.empty(), "data.secondary",
          "primary and secondary must be given together");
  require(c.data.letter_rows == 0 || (c.data.input.empty() && c.data.primary.empty()), "data.letter_rows",
          "cannot be combined with CSV input");
  require(c.data.letter_rows == 0 || c.data.letter_rows >= 10, "data.letter_rows", "needs at least 10 rows");
  require(c.data.letter_rows > 0 || c.data.empty() || !c.data.label.empty(), "data.label",
          "a CSV source needs the target column");
  for (auto w : c.solo_hidden) require(w > 0, "solo_hidden", "widths must be positive");
  require(c.theory.n > c.theory.mp + c.theory.ms, "theory.n", "must exceed mp + ms");
  require(!c.theory.sigmas.empty(), "theory.sigmas", "needs at least one value");
  for (double s : c.theory.sigmas) require(s >= 0.0 && std::isfinite(s), "theory.sigmas", "must be finite and >= 0");
  require(c.theory.perms >= 1, "theory.perms", "must be at least 1");
  normalization_from_string(c.theory.normalization);  // throws ConfigError on an unknown name
  require(c.theory.motivation_n >= 100, "theory.motivation_n", "must be at least 100");
  require(c.theory.approx_steps >= 1, "theory.approx_steps", "must be at least 1");
  require(!c.ablation_ks.empty(), "ablation_ks", "needs at least one K");
  for (auto k : c.ablation_ks) require(k >= 1, "ablation_ks", "K must be at least 1");
  for (const auto* grid : {&c.sweep.k, &c.sweep.clusters, &c.sweep.depth}) {
    require(!grid->empty(), "sweep", "grids must be non-empty");
    for (auto v : *grid) require(v >= 1, "sweep", "grid values must be at least 1");
  }
  require(c.timing_ks.size() >= 3, "timing_ks", "needs at least three K values");
  for (auto k : c.timing_ks) require(k >= 1, "timing_ks", "K must be at least 1");
  require(c.timing_epochs >= 1, "timing_epochs", "must be at least 1");
  return c;
}

DatasetBundle load_bundle(const DataSpec& spec, std::uint64_t seed) {
  const auto task = spec.task == "regression" ? nn::Task::regression : nn::Task::classification;
  const SyntheticOptions split{.shuffle_secondary = spec.shuffle_secondary};
  if (spec.letter_rows > 0) {
    LetterOptions options;
    options.n = spec.letter_rows;
    auto [table, labels] = make_letter_like(options, spec.seed);
    if (spec.subsample > 0) subsample(table, labels, spec.subsample, spec.seed);
    return synthetic_feature_split(table, labels, seed, split);
  }
  CsvOptions csv;
  csv.categorical.insert(spec.categorical.begin(), spec.categorical.end());
  if (!spec.input.empty()) {
    auto table = load_csv(spec.input, csv);
    auto labels = extract_labels(table, spec.label, task);
    if (spec.subsample > 0) subsample(table, labels, spec.subsample, spec.seed);
    return synthetic_feature_split(table, labels, seed, split);
  }
  if (spec.primary.empty()) throw ConfigError("data", "no data source: give input, primary/secondary or letter_rows");
  auto primary = load_csv(spec.primary, csv);
  auto labels = extract_labels(primary, spec.label, task);
  auto secondary = load_csv(spec.secondary, csv);
  if (spec.subsample > 0) subsample(primary, labels, spec.subsample, spec.seed);
  return make_bundle(fs::path(spec.primary).stem().string(), std::move(primary), std::move(secondary),
                     std::move(labels), seed);
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto fail = [&](int code, json line) {
    err << line.dump() << "\n";
    return code;
  };

  CLI::App app{"Latent alignment learning across tables without shared keys"};
  app.name("leal");
  app.require_subcommand(1, 1);
  const std::vector<std::pair<std::string, unsigned>> commands = {
      {"synth", kSynth}, {"train", kTrain},   {"eval", kEval},    {"ablate", kAblate},
      {"theory", kTheory}, {"sweep", kSweep}, {"timing", kTiming},
  };
  const std::map<std::string, std::string> descriptions = {
      {"synth", "split a table by features and write the two tables"},
      {"train", "train Leal (and optionally the primary-only baseline)"},
      {"eval", "score a checkpoint on the test split"},
      {"ablate", "ground-truth-candidate ablation over K"},
      {"theory", "alignment inequality, motivation task and approximation smoke test"},
      {"sweep", "grid over K, C and depth with several seeds"},
      {"timing", "epoch time as a function of K"},
  };
  std::map<std::string, std::string> raw;
  std::map<std::string, bool> switches;
  std::string config_path;
  bool resume = false;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, bit] : commands) {
    auto* sub = app.add_subcommand(name, descriptions.at(name));
    sub->add_option("--config", config_path, "JSON configuration; flags override it");
    for (const auto& spec : flag_specs()) {
      if (!(spec.commands & bit)) continue;
      if (spec.kind == Kind::set_true || spec.kind == Kind::set_false)
        sub->add_flag(spec.flag, switches[spec.flag], spec.help);
      else
        sub->add_option(spec.flag, raw[spec.flag], spec.help);
    }
    if (bit == kSweep) sub->add_flag("--resume", resume, "skip points that already have results");
    subs[name] = sub;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    for (auto* sub : app.get_subcommands()) out << sub->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail(2, {{"error", "usage"}, {"message", e.what()}});
  }

  auto* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  ExperimentConfig config;
  try {
    json doc = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("config", "cannot read " + config_path);
      try {
        doc = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ConfigError("config", std::string("invalid JSON: ") + e.what());
      }
    }
    const unsigned bit = std::find_if(commands.begin(), commands.end(), [&](const auto& c) {
                           return c.first == command;
                         })->second;
    json overrides = json::object();
    for (const auto& spec : flag_specs()) {
      if (!(spec.commands & bit) || sub->count(spec.flag) == 0) continue;
      overrides[json::json_pointer(spec.pointer)] = flag_value(spec, raw[spec.flag]);
    }
    doc.merge_patch(overrides);
    config = ExperimentConfig::from_json(doc);
    if (needs_data(command) && command != "eval" && config.data.empty())
      throw ConfigError("data", "no data source: give --input, --primary/--secondary or --letter");
    if (command == "eval") {
      if (config.checkpoint.empty()) throw ConfigError("checkpoint", "eval needs --checkpoint");
      if (config.data.empty()) throw ConfigError("data", "eval needs the data the checkpoint was trained on");
    }
    worker_count(1);  // validates LEAL_THREADS
  } catch (const ConfigError& e) {
    return fail(2, {{"error", "config"}, {"field", e.field()}, {"message", e.what()}});
  }

  try {
    if (command == "synth") cmd_synth(config, out);
    else if (command == "train") cmd_train(config, out);
    else if (command == "eval") cmd_eval(config, out);
    else if (command == "ablate") cmd_ablate(config, out);
    else if (command == "theory") cmd_theory(config, out);
    else if (command == "timing") cmd_timing(config, out);
    else if (command == "sweep") return cmd_sweep(config, resume, out, err);
  } catch (const ConfigError& e) {
    return fail(2, {{"error", "config"}, {"field", e.field()}, {"message", e.what()}});
  } catch (const std::exception& e) {
    return fail(1, {{"error", "runtime"}, {"command", command}, {"message", e.what()}});
  }
  return 0;
}

}  // namespace leal::cli
