#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "leal/nn.hpp"
#include "leal/rng.hpp"
#include "leal/tensor.hpp"

namespace leal {

enum class ColumnKind { numeric, categorical };

struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
};

/// One column, stored by kind: `numbers` for numeric, `codes` into `categories` otherwise.
struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  std::vector<std::string> categories;  // first-appearance order
  std::vector<double> numbers;
  std::vector<std::size_t> codes;

  std::size_t size() const { return kind == ColumnKind::numeric ? numbers.size() : codes.size(); }
  /// Cell as text; numbers use the shortest round-trip form.
  std::string cell(std::size_t row) const;
};

struct Table {
  std::string name;
  std::vector<Column> columns;
  std::size_t n = 0;

  std::size_t m() const { return columns.size(); }
  const Column& column(const std::string& name) const;
  /// Rows `rows` of every column, in that order.
  Table select_rows(const std::vector<std::size_t>& rows) const;
};

struct CsvOptions {
  /// When non-empty the header must match these names exactly and kinds are taken from here.
  std::vector<ColumnSchema> schema;
  /// Columns forced categorical even if every value parses as a number.
  std::set<std::string> categorical;
};

/// Comma-separated, first row header. Kinds are inferred (numeric iff every value parses).
Table load_csv(const std::string& path, const CsvOptions& options = {});
Table parse_csv(std::istream& in, const std::string& name, const CsvOptions& options = {});
/// Header plus one line per row; fields containing commas, quotes or newlines are quoted.
void write_csv(std::ostream& out, const Table& table);

struct Labels {
  nn::Task task = nn::Task::classification;
  std::vector<double> values;            // class index or real value
  std::vector<std::string> class_names;  // classification only, first-appearance order

  std::size_t n() const { return values.size(); }
  std::size_t num_classes() const { return class_names.size(); }
  Tensor tensor() const { return Tensor::from({values.size()}, values); }
};

/// Removes column `name` from `table` and turns it into labels.
Labels extract_labels(Table& table, const std::string& name, nn::Task task);

struct EncodedColumn {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  std::size_t begin = 0, end = 0;  // encoded column range
  std::vector<std::string> categories;
};

struct EncodedMatrix {
  Tensor values;  // [n x m']
  std::vector<EncodedColumn> provenance;
  std::vector<double> mean, stddev;  // per encoded column; one-hot columns keep (0, 1)

  std::size_t rows() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
};

/// One-hot for categorical columns; numeric columns z-scored with statistics of `train_rows`
/// (population std, constant columns use std 1).
EncodedMatrix encode_and_normalize(const Table& table, const std::vector<std::size_t>& train_rows);

/// Category code of every row, recovered from the one-hot block of `column`.
std::vector<std::size_t> decode_one_hot(const EncodedMatrix& encoded, std::size_t column);

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Shuffled split with sizes floor(r0 n / R), floor(r1 n / R) and the remainder, R = r0 + r1 + r2.
Split split_dataset(std::size_t n, RngStream& stream, std::array<std::size_t, 3> ratios = {7, 1, 2});

struct DatasetBundle {
  std::string name;
  std::uint64_t seed = 0;
  Table primary_table, secondary_table;
  EncodedMatrix primary, secondary;
  Labels labels;
  Split split;
  bool secondary_shuffled = false;
  /// primary row -> secondary row holding the same record (synthetic bundles only).
  std::optional<std::vector<std::size_t>> ground_truth;
  /// Column names of the source table in each half (synthetic bundles only).
  std::vector<std::string> primary_features, secondary_features;

  nn::Task task() const { return labels.task; }
  std::size_t num_classes() const { return labels.num_classes(); }
};

/// Encodes an existing primary/secondary pair. The split comes from the shuffle stream of
/// `seed`; primary statistics use training rows, secondary statistics use every secondary
/// row, since the secondary table is not split.
DatasetBundle make_bundle(std::string name, Table primary, Table secondary, Labels labels,
                          std::uint64_t seed);

struct SyntheticOptions {
  bool shuffle_secondary = true;
};

/// Randomly partitions the features ceil(m/2) / floor(m/2) into primary and secondary
/// tables, permutes the secondary rows and records the true alignment.
/// The partition and permutation use the synth stream of `seed`.
DatasetBundle synthetic_feature_split(const Table& table, const Labels& labels, std::uint64_t seed,
                                      const SyntheticOptions& options = {});

/// Keeps `count` rows drawn without replacement from the synth stream (all rows if count >= n).
void subsample(Table& table, Labels& labels, std::size_t count, std::uint64_t seed);

struct LetterOptions {
  std::size_t n = 20000;
  std::size_t classes = 26;
  std::size_t features = 16;
  double prototype_spread = 3.0;  // std of class prototypes around 7.5
  double style_scale = 1.5;       // per-record latent factor shared by all features
  double noise = 1.6;
};

/// Letter-recognition-style table: integer features in 0..15 built from class prototypes,
/// a per-record style factor and independent noise. Labels are classes 0..classes-1.
std::pair<Table, Labels> make_letter_like(const LetterOptions& options, std::uint64_t seed);

/// 64-bit FNV-1a over the raw bytes of `values`.
std::uint64_t fnv1a(const std::vector<double>& values);

/// Reproducibility record: shapes, split sizes, seed, feature partition, data hashes.
nlohmann::json bundle_manifest(const DatasetBundle& bundle);

}  // namespace leal
