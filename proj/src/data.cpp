#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "leal/data.hpp"

namespace leal {
namespace {

// Sub-stream tags; fixed so that adding a consumer never shifts another one's draws.
constexpr std::uint64_t kSplitTag = 0x51;
constexpr std::uint64_t kPartitionTag = 0x52;
constexpr std::uint64_t kRowShuffleTag = 0x53;
constexpr std::uint64_t kSubsampleTag = 0x54;
constexpr std::uint64_t kLetterTag = 0x55;

std::uint64_t fnv1a_bytes(const void* data, std::size_t len, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

Labels extract_labels(Table& table, const std::string& name, nn::Task task) {
  auto it = std::find_if(table.columns.begin(), table.columns.end(),
                         [&](const Column& c) { return c.name == name; });
  if (it == table.columns.end())
    throw std::invalid_argument("label column '" + name + "' not found in " + table.name);
  Column col = std::move(*it);
  table.columns.erase(it);

  Labels labels;
  labels.task = task;
  if (task == nn::Task::regression) {
    if (col.kind != ColumnKind::numeric)
      throw std::invalid_argument("regression label column '" + name + "' is not numeric");
    labels.values = col.numbers;
    return labels;
  }
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < col.size(); ++i) {
    auto [pos, inserted] = index.emplace(col.cell(i), labels.class_names.size());
    if (inserted) labels.class_names.push_back(pos->first);
    labels.values.push_back(static_cast<double>(pos->second));
  }
  return labels;
}

EncodedMatrix encode_and_normalize(const Table& table, const std::vector<std::size_t>& train_rows) {
  if (train_rows.empty()) throw std::invalid_argument("encode_and_normalize: train_rows is empty");
  for (auto r : train_rows)
    if (r >= table.n) throw std::out_of_range("encode_and_normalize: train row out of range");

  EncodedMatrix out;
  std::size_t width = 0;
  for (const auto& c : table.columns) {
    const std::size_t w = c.kind == ColumnKind::numeric ? 1 : c.categories.size();
    out.provenance.push_back({c.name, c.kind, width, width + w, c.categories});
    width += w;
  }
  out.mean.assign(width, 0.0);
  out.stddev.assign(width, 1.0);

  std::vector<double> values(table.n * width, 0.0);
  for (std::size_t j = 0; j < table.m(); ++j) {
    const auto& c = table.columns[j];
    const std::size_t begin = out.provenance[j].begin;
    if (c.kind == ColumnKind::categorical) {
      for (std::size_t i = 0; i < table.n; ++i) values[i * width + begin + c.codes[i]] = 1.0;
      continue;
    }
    double mean = 0.0;
    for (auto r : train_rows) mean += c.numbers[r];
    mean /= static_cast<double>(train_rows.size());
    double var = 0.0;
    for (auto r : train_rows) var += (c.numbers[r] - mean) * (c.numbers[r] - mean);
    double sd = std::sqrt(var / static_cast<double>(train_rows.size()));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) sd = 1.0;
    out.mean[begin] = mean;
    out.stddev[begin] = sd;
    for (std::size_t i = 0; i < table.n; ++i) values[i * width + begin] = (c.numbers[i] - mean) / sd;
  }
  out.values = Tensor::from({table.n, width}, std::move(values));
  return out;
}

std::vector<std::size_t> decode_one_hot(const EncodedMatrix& encoded, std::size_t column) {
  const auto& prov = encoded.provenance.at(column);
  if (prov.kind != ColumnKind::categorical)
    throw std::invalid_argument("column '" + prov.name + "' is not one-hot encoded");
  const auto v = encoded.values.data();
  const std::size_t w = encoded.width();
  std::vector<std::size_t> codes(encoded.rows());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const auto row = v.subspan(i * w + prov.begin, prov.end - prov.begin);
    codes[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return codes;
}

Split split_dataset(std::size_t n, RngStream& stream, std::array<std::size_t, 3> ratios) {
  if (n < 10) throw std::invalid_argument("split_dataset: need n >= 10, got " + std::to_string(n));
  const std::size_t total = ratios[0] + ratios[1] + ratios[2];
  if (total == 0) throw std::invalid_argument("split_dataset: ratios sum to zero");
  const std::size_t n_train = n * ratios[0] / total;
  const std::size_t n_val = n * ratios[1] / total;
  const auto perm = stream.permutation(n);
  Split s;
  s.train.assign(perm.begin(), perm.begin() + n_train);
  s.val.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
  s.test.assign(perm.begin() + n_train + n_val, perm.end());
  return s;
}

DatasetBundle make_bundle(std::string name, Table primary, Table secondary, Labels labels,
                          std::uint64_t seed) {
  if (labels.n() != primary.n)
    throw std::invalid_argument("labels have " + std::to_string(labels.n()) + " rows, primary table " +
                                std::to_string(primary.n));
  for (const auto& a : primary.columns)
    for (const auto& b : secondary.columns)
      if (a.name == b.name)
        throw std::invalid_argument("column '" + a.name + "' appears in both tables");
  if (secondary.n == 0) throw std::invalid_argument("secondary table is empty");

  DatasetBundle b;
  b.name = std::move(name);
  b.seed = seed;
  RngStream split_stream = RngStream(seed, StreamLabel::shuffle).fork(kSplitTag);
  b.split = split_dataset(primary.n, split_stream);
  std::vector<std::size_t> all_secondary(secondary.n);
  std::iota(all_secondary.begin(), all_secondary.end(), 0);
  b.primary = encode_and_normalize(primary, b.split.train);
  b.secondary = encode_and_normalize(secondary, all_secondary);
  b.primary_table = std::move(primary);
  b.secondary_table = std::move(secondary);
  b.labels = std::move(labels);
  return b;
}

DatasetBundle synthetic_feature_split(const Table& table, const Labels& labels, std::uint64_t seed,
                                      const SyntheticOptions& options) {
  if (table.m() < 2)
    throw std::invalid_argument("synthetic_feature_split: need at least 2 features, got " +
                                std::to_string(table.m()));
  const RngStream synth(seed, StreamLabel::synth);
  auto partition_stream = synth.fork(kPartitionTag);
  auto cols = partition_stream.permutation(table.m());
  const std::size_t m_primary = (table.m() + 1) / 2;
  std::vector<std::size_t> p_cols(cols.begin(), cols.begin() + m_primary);
  std::vector<std::size_t> s_cols(cols.begin() + m_primary, cols.end());
  std::sort(p_cols.begin(), p_cols.end());
  std::sort(s_cols.begin(), s_cols.end());

  Table primary{table.name + "_primary", {}, table.n};
  Table secondary{table.name + "_secondary", {}, table.n};
  for (auto j : p_cols) primary.columns.push_back(table.columns[j]);
  for (auto j : s_cols) secondary.columns.push_back(table.columns[j]);

  // secondary row j holds source record source[j]; the truth maps source row -> j.
  std::vector<std::size_t> source(table.n);
  std::iota(source.begin(), source.end(), 0);
  if (options.shuffle_secondary) {
    auto row_stream = synth.fork(kRowShuffleTag);
    source = row_stream.permutation(table.n);
    secondary = secondary.select_rows(source);
    secondary.name = table.name + "_secondary";
  }
  std::vector<std::size_t> truth(table.n);
  for (std::size_t j = 0; j < table.n; ++j) truth[source[j]] = j;

  auto b = make_bundle(table.name, std::move(primary), std::move(secondary), labels, seed);
  b.secondary_shuffled = options.shuffle_secondary;
  b.ground_truth = std::move(truth);
  for (const auto& c : b.primary_table.columns) b.primary_features.push_back(c.name);
  for (const auto& c : b.secondary_table.columns) b.secondary_features.push_back(c.name);
  return b;
}

void subsample(Table& table, Labels& labels, std::size_t count, std::uint64_t seed) {
  if (count >= table.n) return;
  auto stream = RngStream(seed, StreamLabel::synth).fork(kSubsampleTag);
  auto perm = stream.permutation(table.n);
  perm.resize(count);
  std::sort(perm.begin(), perm.end());
  table = table.select_rows(perm);
  std::vector<double> kept;
  for (auto r : perm) kept.push_back(labels.values[r]);
  labels.values = std::move(kept);
}

std::pair<Table, Labels> make_letter_like(const LetterOptions& o, std::uint64_t seed) {
  if (o.classes < 2 || o.features < 2 || o.n == 0)
    throw std::invalid_argument("make_letter_like: need n > 0, >= 2 classes and >= 2 features");
  static const char* kLetterNames[16] = {"x-box", "y-box", "width", "high",  "onpix", "x-bar",
                                         "y-bar", "x2bar", "y2bar", "xybar", "x2ybr", "xy2br",
                                         "x-ege", "xegvy", "y-ege", "yegvx"};
  auto rng = RngStream(seed, StreamLabel::synth).fork(kLetterTag);
  std::vector<double> proto(o.classes * o.features);
  for (auto& v : proto) v = std::clamp(7.5 + o.prototype_spread * rng.normal(), 0.0, 15.0);
  std::vector<double> loading(o.features);
  for (auto& l : loading) l = rng.uniform(-1.0, 1.0);

  Table table{"letter", {}, o.n};
  for (std::size_t j = 0; j < o.features; ++j) {
    Column c;
    c.name = o.features == 16 ? kLetterNames[j] : "f" + std::to_string(j);
    c.numbers.reserve(o.n);
    table.columns.push_back(std::move(c));
  }
  Labels labels;
  labels.task = nn::Task::classification;
  for (std::size_t k = 0; k < o.classes; ++k)
    labels.class_names.push_back(o.classes <= 26 ? std::string(1, static_cast<char>('A' + k))
                                                 : std::to_string(k));
  for (std::size_t i = 0; i < o.n; ++i) {
    const std::size_t k = rng.below(o.classes);
    const double style = rng.normal();
    labels.values.push_back(static_cast<double>(k));
    for (std::size_t j = 0; j < o.features; ++j) {
      const double v = proto[k * o.features + j] + o.style_scale * loading[j] * style + o.noise * rng.normal();
      table.columns[j].numbers.push_back(std::clamp(std::round(v), 0.0, 15.0));
    }
  }
  return {std::move(table), std::move(labels)};
}

std::uint64_t fnv1a(const std::vector<double>& values) {
  return fnv1a_bytes(values.data(), values.size() * sizeof(double), 0xcbf29ce484222325ULL);
}

nlohmann::json bundle_manifest(const DatasetBundle& b) {
  nlohmann::json j;
  j["name"] = b.name;
  j["seed"] = b.seed;
  j["task"] = b.task() == nn::Task::classification ? "classification" : "regression";
  j["num_classes"] = b.num_classes();
  auto table_json = [](const Table& t, const EncodedMatrix& e) {
    nlohmann::json columns = nlohmann::json::array();
    for (const auto& p : e.provenance)
      columns.push_back({{"name", p.name},
                         {"kind", p.kind == ColumnKind::numeric ? "numeric" : "categorical"},
                         {"encoded_width", p.end - p.begin}});
    return nlohmann::json{{"name", t.name},
                          {"rows", t.n},
                          {"features", t.m()},
                          {"encoded_width", e.width()},
                          {"columns", columns},
                          {"hash", hex(fnv1a(e.values.values()))}};
  };
  j["primary"] = table_json(b.primary_table, b.primary);
  j["secondary"] = table_json(b.secondary_table, b.secondary);
  j["split"] = {{"train", b.split.train.size()}, {"val", b.split.val.size()}, {"test", b.split.test.size()}};
  j["secondary_shuffled"] = b.secondary_shuffled;
  j["has_ground_truth"] = b.ground_truth.has_value();
  if (!b.primary_features.empty())
    j["feature_partition"] = {{"primary", b.primary_features}, {"secondary", b.secondary_features}};
  j["labels_hash"] = hex(fnv1a(b.labels.values));
  return j;
}

}  // namespace leal
