#include "longtail/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "longtail/error.hpp"

namespace longtail {

namespace fs = std::filesystem;
using nlohmann::json;

void validate(const SynthConfig& c) {
  if (c.num_foreground < 1) throw ConfigError("num_foreground must be at least 1");
  if (c.feature_dim < 2) throw ConfigError("feature_dim must be at least 2");
  if (c.count_law.min_count < 1) throw ConfigError("count_law.min_count must be at least 1");
  if (c.count_law.max_count < c.count_law.min_count) {
    throw ConfigError("count_law.max_count must be >= min_count");
  }
  if (c.count_law.zipf_exponent < 0) throw ConfigError("zipf_exponent must be non-negative");
  if (!(c.bg_fraction >= 0.0 && c.bg_fraction < 1.0)) {
    throw ConfigError("bg_fraction must lie in [0, 1)");
  }
  if (c.eval_per_class < 1) throw ConfigError("eval_per_class must be at least 1");
  if (c.proposals_per_image < 1) throw ConfigError("proposals_per_image must be at least 1");
  if (!(c.prototype_scale >= 0.0) || !(c.noise_sigma >= 0.0) || !(c.objectness >= 0.0)) {
    throw ConfigError("prototype_scale, noise_sigma and objectness must be non-negative");
  }
}

std::vector<std::int64_t> class_counts(const SynthConfig& c) {
  std::vector<std::int64_t> counts(c.num_foreground);
  for (int r = 1; r <= c.num_foreground; ++r) {
    const double raw =
        static_cast<double>(c.count_law.max_count) * std::pow(r, -c.count_law.zipf_exponent);
    counts[r - 1] =
        std::clamp<std::int64_t>(std::llround(raw), c.count_law.min_count, c.count_law.max_count);
  }
  return counts;
}

namespace {

int foreground_per_image(const SynthConfig& c) {
  const auto bg = static_cast<int>(std::lround(c.bg_fraction * c.proposals_per_image));
  return std::max(1, c.proposals_per_image - bg);
}

}  // namespace

int eval_background_count(const SynthConfig& c) {
  const double total_fg = static_cast<double>(c.num_foreground) * c.eval_per_class;
  return static_cast<int>(std::lround(total_fg * c.bg_fraction / (1.0 - c.bg_fraction)));
}

void Split::push_back(std::span<const float> feature, int label, int image_id) {
  features.insert(features.end(), feature.begin(), feature.end());
  labels.push_back(label);
  image_ids.push_back(image_id);
}

std::vector<std::vector<int>> group_images(const Split& train) {
  std::vector<std::vector<int>> images;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const int id = train.image_ids[i];
    if (id < 0) throw DataError("train record without an image id");
    if (static_cast<std::size_t>(id) >= images.size()) images.resize(id + 1);
    images[id].push_back(static_cast<int>(i));
  }
  for (const auto& img : images) {
    if (img.empty()) throw DataError("image ids are not contiguous");
  }
  return images;
}

Dataset generate(const SynthConfig& config) {
  validate(config);
  const int num_fg = config.num_foreground;
  const auto d = static_cast<std::size_t>(config.feature_dim);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const auto counts = class_counts(config);

  const double bg_std =
      std::sqrt(config.prototype_scale * config.prototype_scale +
                config.noise_sigma * config.noise_sigma);
  std::vector<double> direction(d);
  double length = 0.0;
  for (auto& v : direction) {
    v = gauss(rng);
    length += v * v;
  }
  length = std::sqrt(length);
  std::vector<double> prototypes(num_fg * d);
  for (std::size_t i = 0; i < prototypes.size(); ++i) {
    prototypes[i] = config.prototype_scale * gauss(rng) +
                    config.objectness * bg_std * direction[i % d] / length;
  }

  // Category runs cut into pairs and shuffled: each image then holds a few
  // co-occurring categories.
  std::vector<std::vector<int>> pieces;
  for (int j = 1; j <= num_fg; ++j) {
    for (std::int64_t k = 0; k < counts[j - 1]; k += 2) {
      pieces.push_back(counts[j - 1] - k >= 2 ? std::vector<int>{j, j} : std::vector<int>{j});
    }
  }
  std::shuffle(pieces.begin(), pieces.end(), rng);
  std::vector<int> fg_labels;
  for (const auto& piece : pieces) fg_labels.insert(fg_labels.end(), piece.begin(), piece.end());

  const auto total_fg = static_cast<std::int64_t>(fg_labels.size());
  const std::int64_t fg_target = foreground_per_image(config);
  const std::int64_t num_images = (total_fg + fg_target - 1) / fg_target;

  std::vector<float> row(d);
  auto foreground_row = [&](int label) {
    const double* proto = prototypes.data() + (label - 1) * d;
    for (std::size_t k = 0; k < d; ++k) {
      row[k] = static_cast<float>(proto[k] + config.noise_sigma * gauss(rng));
    }
    return std::span<const float>(row);
  };
  auto background_row = [&]() {
    for (std::size_t k = 0; k < d; ++k) row[k] = static_cast<float>(bg_std * gauss(rng));
    return std::span<const float>(row);
  };

  Dataset ds;
  ds.config = config;
  ds.catalog = ClassCatalog(counts);
  ds.train.feature_dim = d;
  ds.eval.feature_dim = d;

  std::size_t next = 0;
  for (std::int64_t img = 0; img < num_images; ++img) {
    const std::int64_t fg_here = total_fg / num_images + (img < total_fg % num_images ? 1 : 0);
    const std::int64_t bg_here = std::max<std::int64_t>(0, config.proposals_per_image - fg_here);
    for (std::int64_t k = 0; k < fg_here; ++k) {
      const int label = fg_labels[next++];
      ds.train.push_back(foreground_row(label), label, static_cast<int>(img));
    }
    for (std::int64_t k = 0; k < bg_here; ++k) {
      ds.train.push_back(background_row(), kBackground, static_cast<int>(img));
    }
  }

  for (int j = 1; j <= num_fg; ++j) {
    for (int k = 0; k < config.eval_per_class; ++k) ds.eval.push_back(foreground_row(j), j, -1);
  }
  const int eval_bg = eval_background_count(config);
  for (int k = 0; k < eval_bg; ++k) ds.eval.push_back(background_row(), kBackground, -1);

  ds.images = group_images(ds.train);
  return ds;
}

void to_json(json& j, const SynthConfig& c) {
  j = json{{"num_foreground", c.num_foreground},
           {"feature_dim", c.feature_dim},
           {"count_law",
            {{"zipf_exponent", c.count_law.zipf_exponent},
             {"min_count", c.count_law.min_count},
             {"max_count", c.count_law.max_count}}},
           {"prototype_scale", c.prototype_scale},
           {"noise_sigma", c.noise_sigma},
           {"objectness", c.objectness},
           {"proposals_per_image", c.proposals_per_image},
           {"bg_fraction", c.bg_fraction},
           {"eval_per_class", c.eval_per_class},
           {"seed", c.seed}};
}

void from_json(const json& j, SynthConfig& c) {
  SynthConfig d;
  c.num_foreground = j.value("num_foreground", d.num_foreground);
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  if (j.contains("count_law")) {
    const auto& law = j.at("count_law");
    c.count_law.zipf_exponent = law.value("zipf_exponent", d.count_law.zipf_exponent);
    c.count_law.min_count = law.value("min_count", d.count_law.min_count);
    c.count_law.max_count = law.value("max_count", d.count_law.max_count);
  }
  c.prototype_scale = j.value("prototype_scale", d.prototype_scale);
  c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  c.objectness = j.value("objectness", d.objectness);
  c.proposals_per_image = j.value("proposals_per_image", d.proposals_per_image);
  c.bg_fraction = j.value("bg_fraction", d.bg_fraction);
  c.eval_per_class = j.value("eval_per_class", d.eval_per_class);
  c.seed = j.value("seed", d.seed);
}

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kFeatures = "features.bin";

void write_le32(std::ostream& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff),
                         static_cast<char>((bits >> 24) & 0xff)};
  out.write(bytes, 4);
}

float read_le32(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                             (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

}  // namespace

void serialize(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  json records = json::array();
  auto add = [&](const Split& split, const char* name) {
    for (std::size_t i = 0; i < split.size(); ++i) {
      records.push_back(json::array({split.labels[i], split.image_ids[i], name}));
    }
  };
  add(ds.train, "train");
  add(ds.eval, "eval");

  std::vector<std::int64_t> counts(ds.catalog.counts().begin(), ds.catalog.counts().end());
  json manifest = {{"format", "longtail-lab-dataset"},
                   {"version", 1},
                   {"config", ds.config},
                   {"feature_dim", ds.feature_dim()},
                   {"catalog", {{"num_foreground", ds.catalog.num_foreground()}, {"counts", counts}}},
                   {"records", std::move(records)}};
  {
    std::ofstream out(dir / kManifest, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / kManifest).string());
    out << manifest.dump(1) << '\n';
  }
  std::ofstream out(dir / kFeatures, std::ios::binary);
  if (!out) throw DataError("cannot write " + (dir / kFeatures).string());
  for (const Split* split : {&ds.train, &ds.eval}) {
    for (float v : split->features) write_le32(out, v);
  }
  if (!out) throw DataError("failed writing " + (dir / kFeatures).string());
}

Dataset deserialize(const fs::path& dir) {
  std::ifstream in(dir / kManifest, std::ios::binary);
  if (!in) throw DataError("cannot open " + (dir / kManifest).string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(std::string("corrupt manifest header: ") + e.what());
  }

  Dataset ds;
  std::size_t d = 0;
  int num_fg = 0;
  std::vector<std::int64_t> counts;
  try {
    if (manifest.value("format", "") != "longtail-lab-dataset") {
      throw DataError("corrupt manifest header: unknown format tag");
    }
    ds.config = manifest.at("config").get<SynthConfig>();
    d = manifest.at("feature_dim").get<std::size_t>();
    num_fg = manifest.at("catalog").at("num_foreground").get<int>();
    counts = manifest.at("catalog").at("counts").get<std::vector<std::int64_t>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("corrupt manifest header: ") + e.what());
  }
  if (d < 1) throw DataError("corrupt manifest header: feature_dim must be positive");
  if (num_fg < 1 || counts.size() != static_cast<std::size_t>(num_fg)) {
    throw DataError("corrupt manifest header: catalog counts do not match num_foreground");
  }
  ds.catalog = ClassCatalog(counts);
  ds.train.feature_dim = d;
  ds.eval.feature_dim = d;

  std::ifstream blob(dir / kFeatures, std::ios::binary);
  if (!blob) throw DataError("cannot open " + (dir / kFeatures).string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(blob)),
                                         std::istreambuf_iterator<char>());

  const auto& records = manifest.at("records");
  if (!records.is_array()) throw DataError("corrupt manifest header: records is not an array");
  const std::size_t expected = records.size() * d * 4;
  if (bytes.size() < expected) {
    throw DataError("truncated feature blob: expected " + std::to_string(expected) +
                    " bytes, found " + std::to_string(bytes.size()));
  }
  if (bytes.size() != expected) {
    throw DataError("dimension mismatch: feature blob holds " + std::to_string(bytes.size()) +
                    " bytes but the record table needs " + std::to_string(expected));
  }

  std::vector<float> row(d);
  std::vector<std::int64_t> seen(num_fg + 1, 0);
  for (std::size_t i = 0; i < records.size(); ++i) {
    int label = 0;
    int image_id = 0;
    std::string split;
    try {
      label = records[i].at(0).get<int>();
      image_id = records[i].at(1).get<int>();
      split = records[i].at(2).get<std::string>();
    } catch (const json::exception& e) {
      throw DataError("corrupt record " + std::to_string(i) + ": " + e.what());
    }
    if (label < 0 || label > num_fg) {
      throw DataError("record " + std::to_string(i) + " has out-of-range label");
    }
    for (std::size_t k = 0; k < d; ++k) {
      row[k] = read_le32(bytes.data() + (i * d + k) * 4);
      if (!std::isfinite(row[k])) {
        throw DataError("non-finite feature in record " + std::to_string(i));
      }
    }
    if (split == "train") {
      ds.train.push_back(row, label, image_id);
      ++seen[label];
    } else if (split == "eval") {
      ds.eval.push_back(row, label, image_id);
    } else {
      throw DataError("record " + std::to_string(i) + " has unknown split '" + split + "'");
    }
  }
  if (ds.train.size() == 0) throw DataError("dataset has an empty train split");
  for (int j = 1; j <= num_fg; ++j) {
    if (seen[j] != counts[j - 1]) {
      throw DataError("corrupt manifest header: catalog count of category " + std::to_string(j) +
                      " disagrees with the train records");
    }
  }
  ds.images = group_images(ds.train);
  return ds;
}

}  // namespace longtail
