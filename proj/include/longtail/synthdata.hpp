#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"

#include "longtail/catalog.hpp"

namespace longtail {

/// Truncated power law for per-class training counts:
/// count(rank r) = clamp(round(max_count * r^-zipf_exponent), min_count, max_count).
struct CountLaw {
  double zipf_exponent = 1.5;
  std::int64_t min_count = 5;
  std::int64_t max_count = 5000;

  bool operator==(const CountLaw&) const = default;
};

struct SynthConfig {
  int num_foreground = 100;
  int feature_dim = 64;
  CountLaw count_law;
  double prototype_scale = 1.0;  ///< per-coordinate std of class prototypes
  double noise_sigma = 0.5;      ///< per-coordinate std of instance noise
  /// Shift shared by all prototypes along one random unit direction, in
  /// units of the background std sqrt(prototype_scale^2 + noise_sigma^2).
  double objectness = 0.0;
  int proposals_per_image = 16;
  double bg_fraction = 0.75;
  int eval_per_class = 20;
  std::uint64_t seed = 7;

  bool operator==(const SynthConfig&) const = default;
};

/// Throws ConfigError on an infeasible configuration.
void validate(const SynthConfig& config);

/// Per-class training counts produced by the count law, indexed by category - 1.
std::vector<std::int64_t> class_counts(const SynthConfig& config);

/// Number of background eval records: matches the train-side background share.
int eval_background_count(const SynthConfig& config);

/// Proposal records stored column-wise. Features are kept at 32-bit
/// precision, the on-disk format, and widened by callers.
struct Split {
  std::size_t feature_dim = 0;
  std::vector<float> features;  ///< row-major, size() * feature_dim
  std::vector<int> labels;
  std::vector<int> image_ids;

  std::size_t size() const { return labels.size(); }
  std::span<const float> feature(std::size_t i) const {
    return {features.data() + i * feature_dim, feature_dim};
  }
  void push_back(std::span<const float> feature, int label, int image_id);

  bool operator==(const Split&) const = default;
};

struct Dataset {
  SynthConfig config;
  ClassCatalog catalog{std::vector<std::int64_t>{1}};
  Split train;
  Split eval;
  /// Train record indices grouped by pseudo-image id.
  std::vector<std::vector<int>> images;

  int feature_dim() const { return static_cast<int>(train.feature_dim); }

  bool operator==(const Dataset&) const = default;
};

/// Builds the image index from train.image_ids (ids must be 0..M-1).
std::vector<std::vector<int>> group_images(const Split& train);

/// Deterministic synthetic long-tail dataset.
Dataset generate(const SynthConfig& config);

/// Writes manifest.json and features.bin into `dir`.
void serialize(const Dataset& dataset, const std::filesystem::path& dir);
/// Reads a dataset written by serialize(); throws DataError on corruption.
Dataset deserialize(const std::filesystem::path& dir);

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

}  // namespace longtail
