// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "pbp/data.hpp"
#include "pbp/error.hpp"
#include "pbp/tensor_io.hpp"

namespace pbp {

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Unassigned: return "none";
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "none";
}

namespace {

Split parse_split(std::string_view s) {
  for (Split v : {Split::Unassigned, Split::Train, Split::Val, Split::Test})
    if (split_name(v) == s) return v;
  throw ConfigError("labels.csv: unknown split '" + std::string(s) + "'");
}

}  // namespace

std::vector<std::size_t> LabeledDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

Tensor LabeledDataset::gather(std::span<const std::size_t> rows) const {
  Shape shape = sample_shape();
  const std::size_t stride = element_count(shape);
  shape.insert(shape.begin(), rows.size());
  Tensor out(std::move(shape));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= size()) throw ShapeError("dataset: row " + std::to_string(rows[r]) + " out of range");
    std::copy_n(features.raw() + rows[r] * stride, stride, out.raw() + r * stride);
  }
  return out;
}

std::vector<std::size_t> LabeledDataset::gather_labels(std::span<const std::size_t> rows) const {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(labels.at(r));
  return out;
}

void LabeledDataset::validate() const {
  if (features.rank() < 2 || features.dim(0) != labels.size()) {
    throw ConfigError("dataset: features " + shape_string(features.shape()) + " do not match " +
                      std::to_string(labels.size()) + " labels");
  }
  if (splits.size() != labels.size()) throw ConfigError("dataset: split assignment has the wrong length");
  if (class_names.size() < 2) throw ConfigError("dataset: need at least 2 classes");
  for (auto l : labels)
    if (l >= class_names.size()) throw ConfigError("dataset: label " + std::to_string(l) + " out of range");
}

LabeledDataset split(const LabeledDataset& data, SplitRatios ratios, std::uint64_t seed) {
  data.validate();
  const double sum = ratios.train + ratios.val + ratios.test;
  if (!(ratios.train > 0.0 && ratios.val > 0.0 && ratios.test > 0.0) || std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split: ratios must be positive and sum to 1");
  }
  const std::size_t n = data.size();
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios.train));
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios.val));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
    throw ConfigError("split: " + std::to_string(n) + " samples leave an empty split");
  }

  // Each class's shuffled members are spaced evenly over [0,1); merging by
  // position interleaves classes so every prefix is close to stratified.
  Rng rng(derive_seed(seed, stream::kSplit));
  std::vector<std::tuple<double, std::size_t, std::size_t>> order;  // (position, class, index)
  order.reserve(n);
  for (std::size_t c = 0; c < data.num_classes(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i)
      if (data.labels[i] == c) members.push_back(i);
    rng.shuffle(members);
    for (std::size_t j = 0; j < members.size(); ++j) {
      order.emplace_back((static_cast<double>(j) + 0.5) / static_cast<double>(members.size()), c, members[j]);
    }
  }
  std::sort(order.begin(), order.end());

  LabeledDataset out = data;
  for (std::size_t r = 0; r < n; ++r) {
    out.splits[std::get<2>(order[r])] = r < n_train ? Split::Train : r < n_train + n_val ? Split::Val : Split::Test;
  }
  return out;
}

void save_dataset(const LabeledDataset& data, const std::filesystem::path& dir) {
  data.validate();
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset: '" + dir.string() + "' is not a directory");

  nlohmann::json meta;
  meta["kind"] = data.kind;
  meta["seed"] = data.seed;
  meta["class_names"] = data.class_names;
  meta["num_samples"] = data.size();
  meta["feature_shape"] = data.sample_shape();
  meta["generator"] = data.generator.empty() ? nlohmann::json::object() : nlohmann::json::parse(data.generator);
  {
    std::ofstream f(dir / "meta.json", std::ios::trunc);
    if (!f) throw IoError("dataset: cannot write '" + (dir / "meta.json").string() + "'");
    f << meta.dump(2) << '\n';
    if (!f) throw IoError("dataset: write failed for meta.json");
  }

  const std::vector<NamedTensor> records{{"features", data.features, false}};
  write_tensor_file(dir / "features.bin", records);

  std::ofstream f(dir / "labels.csv", std::ios::trunc);
  if (!f) throw IoError("dataset: cannot write '" + (dir / "labels.csv").string() + "'");
  f << "index,label,split\n";
  for (std::size_t i = 0; i < data.size(); ++i) f << i << ',' << data.labels[i] << ',' << split_name(data.splits[i]) << '\n';
  if (!f) throw IoError("dataset: write failed for labels.csv");
}

LabeledDataset load_dataset(const std::filesystem::path& dir) {
  LabeledDataset ds;
  {
    std::ifstream f(dir / "meta.json");
    if (!f) throw IoError("dataset: cannot open '" + (dir / "meta.json").string() + "'");
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(f);
      ds.kind = meta.at("kind").get<std::string>();
      ds.seed = meta.at("seed").get<std::uint64_t>();
      ds.class_names = meta.at("class_names").get<std::vector<std::string>>();
      ds.generator = meta.value("generator", nlohmann::json::object()).dump();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("dataset: bad meta.json: ") + e.what());
    }
  }

  auto records = read_tensor_file(dir / "features.bin");
  if (records.size() != 1 || records[0].name != "features") throw ConfigError("dataset: features.bin must hold one 'features' tensor");
  ds.features = std::move(records[0].tensor);

  std::ifstream f(dir / "labels.csv");
  if (!f) throw IoError("dataset: cannot open '" + (dir / "labels.csv").string() + "'");
  std::string line;
  std::getline(f, line);
  if (line != "index,label,split") throw ConfigError("labels.csv: bad header");
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string index, label, which;
    if (!std::getline(row, index, ',') || !std::getline(row, label, ',') || !std::getline(row, which)) {
      throw ConfigError("labels.csv: malformed line " + std::to_string(lineno));
    }
    try {
      if (std::stoull(index) != ds.labels.size()) throw ConfigError("labels.csv: index out of order at line " + std::to_string(lineno));
      ds.labels.push_back(std::stoull(label));
    } catch (const std::logic_error&) {
      throw ConfigError("labels.csv: malformed line " + std::to_string(lineno));
    }
    ds.splits.push_back(parse_split(which));
  }
  ds.validate();
  return ds;
}

}  // namespace pbp
