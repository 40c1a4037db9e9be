#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "longtail/catalog.hpp"
#include "longtail/matrix.hpp"

namespace longtail {

/// Which column convention a head follows.
enum class HeadLayout {
  Plain,    ///< C + 1 columns indexed by category id
  Grouped,  ///< (C + 1) + (N + 1) columns in GroupPartition order
};

std::string to_string(HeadLayout layout);
HeadLayout head_layout_from_string(const std::string& name);

/// Final linear layer z = W^T h + b.
struct HeadParams {
  HeadLayout layout = HeadLayout::Plain;
  Matrix weights;             ///< feature_dim x logit_dim
  std::vector<double> bias;   ///< logit_dim

  std::size_t feature_dim() const { return weights.rows(); }
  std::size_t logit_dim() const { return weights.cols(); }

  /// Column j of W as a fresh vector.
  std::vector<double> column(std::size_t j) const;

  bool operator==(const HeadParams&) const = default;
};

/// W ~ N(0, 0.01^2) i.i.d., b = 0.
HeadParams init_head(HeadLayout layout, std::size_t feature_dim, std::size_t logit_dim,
                     std::uint64_t seed);

/// Logits for a single feature vector.
std::vector<double> forward(const HeadParams& params, std::span<const double> feature);
std::vector<double> forward(const HeadParams& params, std::span<const float> feature);

/// Row-wise forward over a feature matrix (rows x feature_dim).
Matrix forward_batch(const HeadParams& params, const Matrix& features);

/// Column norms of a head.
struct WeightNorms {
  std::vector<double> category;  ///< index 0..C: background and foreground columns
  std::vector<double> others;    ///< grouped heads only: index 0..N, others node of each group
};

/// Plain heads ignore `partition`; grouped heads need it.
WeightNorms weight_norms(const HeadParams& params, const GroupPartition* partition = nullptr);

/// Everything stored alongside the parameter blob in a checkpoint file.
struct CheckpointHeader {
  std::string method;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();  ///< boundaries, variant, config echo
};

/// One line of JSON ({layout, d, D, seed, method, ...}) followed by the
/// little-endian 64-bit W (row-major) and b.
void save_checkpoint(const HeadParams& params, const CheckpointHeader& header,
                     const std::filesystem::path& path);
HeadParams load_checkpoint(const std::filesystem::path& path, CheckpointHeader* header = nullptr);

}  // namespace longtail
