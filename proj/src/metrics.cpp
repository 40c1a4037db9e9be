#include "longtail/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "longtail/error.hpp"

namespace longtail {

using nlohmann::json;

namespace {

json optional_to_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

void to_json(json& j, const MetricsReport& r) {
  json bins = json::array();
  for (const auto& b : r.acc_per_bin) bins.push_back(optional_to_json(b));
  json per_class = json::object();
  for (auto [c, acc] : r.per_class_acc) per_class[std::to_string(c)] = acc;
  j = json{{"method", r.method},
           {"overall_acc", r.overall_acc},
           {"acc_per_bin", bins},
           {"acc_bg", optional_to_json(r.acc_bg)},
           {"per_class_acc", per_class},
           {"weight_norms", r.weight_norms},
           {"pearson_norm_logcount", optional_to_json(r.pearson_norm_logcount)},
           {"bin_aggregation", r.bin_aggregation},
           {"config", r.config}};
}

void from_json(const json& j, MetricsReport& r) {
  r.method = j.at("method").get<std::string>();
  r.overall_acc = j.at("overall_acc").get<double>();
  const auto& bins = j.at("acc_per_bin");
  for (int b = 0; b < kNumBins; ++b) r.acc_per_bin[b] = optional_from_json(bins.at(b));
  r.acc_bg = optional_from_json(j.at("acc_bg"));
  r.per_class_acc.clear();
  for (const auto& [key, value] : j.at("per_class_acc").items()) {
    r.per_class_acc[std::stoi(key)] = value.get<double>();
  }
  r.weight_norms = j.at("weight_norms").get<std::vector<double>>();
  r.pearson_norm_logcount = optional_from_json(j.at("pearson_norm_logcount"));
  r.bin_aggregation = j.at("bin_aggregation").get<std::string>();
  r.config = j.at("config");
}

MetricsReport evaluate(const Predictor& predictor, const Split& eval, const ClassCatalog& catalog) {
  if (eval.size() == 0) throw DataError("eval split is empty");
  const int num_fg = catalog.num_foreground();
  std::vector<std::int64_t> total(num_fg + 1, 0);
  std::vector<std::int64_t> correct(num_fg + 1, 0);
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const int y = eval.labels[i];
    if (y < 0 || y > num_fg) throw DataError("eval label out of range");
    const int pred = predictor(eval.feature(i)).argmax();
    ++total[y];
    if (pred == y) ++correct[y];
  }

  MetricsReport report;
  std::int64_t hits = 0;
  for (int c = 0; c <= num_fg; ++c) hits += correct[c];
  report.overall_acc = static_cast<double>(hits) / static_cast<double>(eval.size());
  if (total[kBackground] > 0) {
    report.acc_bg = static_cast<double>(correct[kBackground]) / total[kBackground];
  }

  std::array<double, kNumBins> bin_sum{};
  std::array<int, kNumBins> bin_classes{};
  for (int c = 1; c <= num_fg; ++c) {
    if (total[c] == 0) continue;
    const double acc = static_cast<double>(correct[c]) / total[c];
    report.per_class_acc[c] = acc;
    const int b = bin_of(catalog.count(c)) - 1;
    bin_sum[b] += acc;
    ++bin_classes[b];
  }
  for (int b = 0; b < kNumBins; ++b) {
    if (bin_classes[b] > 0) report.acc_per_bin[b] = bin_sum[b] / bin_classes[b];
  }
  return report;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ConfigError("pearson needs two equally sized samples of at least 2 values");
  }
  auto constant = [](std::span<const double> v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *lo == *hi;
  };
  if (constant(x) || constant(y)) throw NumericalError("pearson correlation of a constant sample");
  const double n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericalError("pearson correlation of a constant sample");
  return sxy / std::sqrt(sxx * syy);
}

double norm_count_correlation(std::span<const double> norms, const ClassCatalog& catalog) {
  const int num_fg = catalog.num_foreground();
  if (static_cast<int>(norms.size()) != num_fg + 1) {
    throw ConfigError("expected one norm per category including background");
  }
  if (num_fg < 3) throw ConfigError("norm-count correlation needs at least 3 classes");
  std::vector<double> fg(norms.begin() + 1, norms.end());
  std::vector<double> log_count(num_fg);
  for (int j = 1; j <= num_fg; ++j) log_count[j - 1] = std::log1p(catalog.count(j));
  return pearson(fg, log_count);
}

std::optional<double> mean_norm_in_bin(std::span<const double> norms, const ClassCatalog& catalog,
                                       int bin) {
  double sum = 0.0;
  int n = 0;
  for (int j = 1; j <= catalog.num_foreground(); ++j) {
    if (bin_of(catalog.count(j)) != bin) continue;
    sum += norms[j];
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

std::vector<NormRow> norm_rows(std::span<const double> norms, const ClassCatalog& catalog) {
  if (static_cast<int>(norms.size()) != catalog.num_foreground() + 1) {
    throw ConfigError("expected one norm per category including background");
  }
  std::vector<NormRow> rows;
  for (int j = 1; j <= catalog.num_foreground(); ++j) {
    rows.push_back({j, catalog.count(j), norms[j]});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const NormRow& a, const NormRow& b) {
    return a.train_count > b.train_count;
  });
  return rows;
}

void export_norms(std::span<const double> norms, const ClassCatalog& catalog,
                  const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "category_id,train_count,weight_norm\n";
  char buf[64];
  for (const auto& row : norm_rows(norms, catalog)) {
    std::snprintf(buf, sizeof buf, "%.17g", row.weight_norm);
    out << row.category_id << ',' << row.train_count << ',' << buf << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<NormRow> read_norms_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "category_id,train_count,weight_norm") {
    throw DataError("unexpected norms CSV header in " + path.string());
  }
  std::vector<NormRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    NormRow row;
    char comma1 = 0;
    char comma2 = 0;
    if (!(fields >> row.category_id >> comma1 >> row.train_count >> comma2 >> row.weight_norm) ||
        comma1 != ',' || comma2 != ',') {
      throw DataError("malformed norms CSV row: " + line);
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace longtail
