#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "longtail/catalog.hpp"
#include "longtail/inference.hpp"
#include "longtail/synthdata.hpp"

namespace longtail {

struct MetricsReport {
  std::string method;
  double overall_acc = 0.0;                                 ///< micro over all eval records
  std::array<std::optional<double>, kNumBins> acc_per_bin;  ///< macro over classes; empty bins absent
  std::optional<double> acc_bg;
  std::map<int, double> per_class_acc;
  std::vector<double> weight_norms;  ///< by category id, background at 0; empty when not a linear head
  std::optional<double> pearson_norm_logcount;
  std::string bin_aggregation = "macro";
  nlohmann::json config = nlohmann::json::object();

  bool operator==(const MetricsReport&) const = default;
};

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

/// Argmax accuracy of `predictor` over the eval split.
MetricsReport evaluate(const Predictor& predictor, const Split& eval, const ClassCatalog& catalog);

/// Sample Pearson correlation. Throws NumericalError if either side has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

/// Pearson correlation between foreground norms (norms[1..C]) and log(1 + N(j)).
double norm_count_correlation(std::span<const double> norms, const ClassCatalog& catalog);

/// Mean foreground norm of the classes in `bin`; nullopt for an empty bin.
std::optional<double> mean_norm_in_bin(std::span<const double> norms, const ClassCatalog& catalog,
                                       int bin);

struct NormRow {
  int category_id = 0;
  std::int64_t train_count = 0;
  double weight_norm = 0.0;

  bool operator==(const NormRow&) const = default;
};

/// Foreground rows sorted by descending train count (ties by id).
std::vector<NormRow> norm_rows(std::span<const double> norms, const ClassCatalog& catalog);

/// CSV with header "category_id,train_count,weight_norm".
void export_norms(std::span<const double> norms, const ClassCatalog& catalog,
                  const std::filesystem::path& path);
std::vector<NormRow> read_norms_csv(const std::filesystem::path& path);

}  // namespace longtail
