#include "longtail/head.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

#include "longtail/error.hpp"

namespace longtail {

using nlohmann::json;

std::string to_string(HeadLayout layout) {
  return layout == HeadLayout::Plain ? "plain" : "grouped";
}

HeadLayout head_layout_from_string(const std::string& name) {
  if (name == "plain") return HeadLayout::Plain;
  if (name == "grouped") return HeadLayout::Grouped;
  throw DataError("unknown head layout '" + name + "'");
}

std::vector<double> HeadParams::column(std::size_t j) const {
  std::vector<double> out(feature_dim());
  for (std::size_t i = 0; i < feature_dim(); ++i) out[i] = weights(i, j);
  return out;
}

HeadParams init_head(HeadLayout layout, std::size_t feature_dim, std::size_t logit_dim,
                     std::uint64_t seed) {
  if (feature_dim == 0 || logit_dim == 0) throw ConfigError("head dimensions must be positive");
  HeadParams p;
  p.layout = layout;
  p.weights = Matrix(feature_dim, logit_dim);
  p.bias.assign(logit_dim, 0.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.01);
  for (auto& w : p.weights.data()) w = gauss(rng);
  return p;
}

namespace {

template <typename T>
std::vector<double> forward_impl(const HeadParams& params, std::span<const T> feature) {
  if (feature.size() != params.feature_dim()) {
    throw ConfigError("feature dimension " + std::to_string(feature.size()) +
                      " does not match head input " + std::to_string(params.feature_dim()));
  }
  std::vector<double> z(params.bias);
  const std::size_t cols = params.logit_dim();
  for (std::size_t i = 0; i < feature.size(); ++i) {
    const double h = feature[i];
    const auto w = params.weights.row(i);
    for (std::size_t j = 0; j < cols; ++j) z[j] += h * w[j];
  }
  return z;
}

}  // namespace

std::vector<double> forward(const HeadParams& params, std::span<const double> feature) {
  return forward_impl(params, feature);
}

std::vector<double> forward(const HeadParams& params, std::span<const float> feature) {
  return forward_impl(params, feature);
}

Matrix forward_batch(const HeadParams& params, const Matrix& features) {
  if (features.cols() != params.feature_dim()) {
    throw ConfigError("feature dimension " + std::to_string(features.cols()) +
                      " does not match head input " + std::to_string(params.feature_dim()));
  }
  const std::size_t cols = params.logit_dim();
  Matrix out(features.rows(), cols);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    double* __restrict z = out.row(r).data();
    std::copy(params.bias.begin(), params.bias.end(), z);
    const double* __restrict h = features.row(r).data();
    for (std::size_t i = 0; i < features.cols(); ++i) {
      const double* __restrict w = params.weights.row(i).data();
      const double hi = h[i];
      for (std::size_t j = 0; j < cols; ++j) z[j] += hi * w[j];
    }
  }
  return out;
}

WeightNorms weight_norms(const HeadParams& params, const GroupPartition* partition) {
  const std::size_t d = params.feature_dim();
  std::vector<double> sq(params.logit_dim(), 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const auto w = params.weights.row(i);
    for (std::size_t j = 0; j < w.size(); ++j) sq[j] += w[j] * w[j];
  }

  WeightNorms out;
  if (params.layout == HeadLayout::Plain) {
    for (double s : sq) out.category.push_back(std::sqrt(s));
    return out;
  }
  if (partition == nullptr) throw ConfigError("grouped head needs a partition for weight norms");
  if (static_cast<int>(params.logit_dim()) != partition->logit_dim()) {
    throw ConfigError("head width does not match the group partition");
  }
  const int num_fg = partition->num_foreground();
  out.category.resize(num_fg + 1);
  for (int j = 0; j <= num_fg; ++j) out.category[j] = std::sqrt(sq[partition->index_of(j)]);
  for (int g = 0; g <= partition->num_groups(); ++g) {
    out.others.push_back(std::sqrt(sq[partition->others_index(g)]));
  }
  return out;
}

namespace {

void write_le64(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (char& b : bytes) {
    b = static_cast<char>(bits & 0xff);
    bits >>= 8;
  }
  out.write(bytes, 8);
}

double read_le64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int k = 7; k >= 0; --k) bits = (bits << 8) | p[k];
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const HeadParams& params, const CheckpointHeader& header,
                     const std::filesystem::path& path) {
  json j = header.extra;
  j["layout"] = to_string(params.layout);
  j["d"] = params.feature_dim();
  j["D"] = params.logit_dim();
  j["seed"] = header.seed;
  j["method"] = header.method;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
  for (double w : params.weights.data()) write_le64(out, w);
  for (double b : params.bias) write_le64(out, b);
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

HeadParams load_checkpoint(const std::filesystem::path& path, CheckpointHeader* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty checkpoint " + path.string());

  json j;
  HeadParams p;
  std::size_t d = 0;
  std::size_t cols = 0;
  try {
    j = json::parse(line);
    p.layout = head_layout_from_string(j.at("layout").get<std::string>());
    d = j.at("d").get<std::size_t>();
    cols = j.at("D").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DataError("corrupt checkpoint header: " + std::string(e.what()));
  }

  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  const std::size_t expected = (d * cols + cols) * 8;
  if (bytes.size() != expected) {
    throw DataError("checkpoint blob has " + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(expected));
  }
  p.weights = Matrix(d, cols);
  p.bias.resize(cols);
  std::size_t k = 0;
  for (auto& w : p.weights.data()) w = read_le64(bytes.data() + 8 * k++);
  for (auto& b : p.bias) b = read_le64(bytes.data() + 8 * k++);
  for (double w : p.weights.data()) {
    if (!std::isfinite(w)) throw DataError("checkpoint holds non-finite weights");
  }

  if (header != nullptr) {
    header->method = j.value("method", "");
    header->seed = j.value("seed", std::uint64_t{0});
    header->extra = j;
  }
  return p;
}

}  // namespace longtail
