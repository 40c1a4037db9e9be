#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "longtail/catalog.hpp"
#include "longtail/losses.hpp"
#include "longtail/matrix.hpp"
#include "longtail/synthdata.hpp"

namespace testing {

using longtail::Matrix;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double scale = 2.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = g(rng);
  return m;
}

inline std::vector<int> random_labels(std::size_t n, int num_classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, num_classes);
  std::vector<int> out(n);
  for (auto& y : out) y = pick(rng);
  return out;
}

/// Central differences of a scalar function of the logits.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, Matrix z,
                               double step = 1e-5) {
  Matrix g(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.data().size(); ++i) {
    const double keep = z.data()[i];
    z.data()[i] = keep + step;
    const double up = f(z);
    z.data()[i] = keep - step;
    const double down = f(z);
    z.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * step);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const Matrix& a, const Matrix& b, double floor = 1e-8) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    diff += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
    na += a.data()[i] * a.data()[i];
    nb += b.data()[i] * b.data()[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// Random counts for C classes spread over several decades.
inline std::vector<std::int64_t> random_counts(int num_classes, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> e(0.0, 3.7);
  std::vector<std::int64_t> out(num_classes);
  for (auto& n : out) n = static_cast<std::int64_t>(std::pow(10.0, e(rng)));
  return out;
}

inline longtail::SynthConfig small_config(std::uint64_t seed = 3) {
  longtail::SynthConfig c;
  c.num_foreground = 12;
  c.feature_dim = 8;
  c.count_law = {1.2, 5, 400};
  c.prototype_scale = 4.0;
  c.noise_sigma = 0.2;
  c.objectness = 2.0;
  c.proposals_per_image = 8;
  c.bg_fraction = 0.5;
  c.eval_per_class = 4;
  c.seed = seed;
  return c;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("longtail_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing
