#include "longtail/catalog.hpp"

#include <cmath>
#include <string>

#include "longtail/error.hpp"

namespace longtail {

ClassCatalog::ClassCatalog(std::vector<std::int64_t> counts) : counts_(std::move(counts)) {
  if (counts_.empty()) throw ConfigError("catalog needs at least one foreground category");
  for (auto n : counts_) {
    if (n < 0) throw ConfigError("catalog counts must be non-negative");
  }
}

std::int64_t ClassCatalog::count(int category) const {
  if (category < 1 || category > num_foreground()) {
    throw ConfigError("category id out of range: " + std::to_string(category));
  }
  return counts_[category - 1];
}

int bin_of(std::int64_t count) {
  if (count < 10) return 1;
  if (count < 100) return 2;
  if (count < 1000) return 3;
  return 4;
}

std::vector<CountRange> default_boundaries() {
  return {{0, 10}, {10, 100}, {100, 1000}, {1000, kUnbounded}};
}

std::vector<CountRange> decade_boundaries(int num_groups) {
  if (num_groups < 1) throw ConfigError("number of groups must be at least 1");
  std::vector<CountRange> out;
  std::int64_t low = 0;
  for (int i = 1; i < num_groups; ++i) {
    const double exponent = 3.0 * i / (num_groups - 1);
    auto edge = static_cast<std::int64_t>(std::llround(std::pow(10.0, exponent)));
    if (edge <= low) edge = low + 1;
    out.push_back({low, edge});
    low = edge;
  }
  out.push_back({low, kUnbounded});
  return out;
}

void validate_boundaries(std::span<const CountRange> boundaries) {
  if (boundaries.empty()) throw ConfigError("group boundaries are empty");
  if (boundaries.front().low != 0) throw ConfigError("first group must start at count 0");
  if (boundaries.back().high != kUnbounded) {
    throw ConfigError("last group must be unbounded above");
  }
  for (std::size_t n = 0; n < boundaries.size(); ++n) {
    if (boundaries[n].low >= boundaries[n].high) {
      throw ConfigError("group " + std::to_string(n + 1) + " has an empty count range");
    }
    if (n + 1 < boundaries.size() && boundaries[n + 1].low != boundaries[n].high) {
      throw ConfigError("group boundaries are not contiguous at group " + std::to_string(n + 1));
    }
  }
}

GroupPartition GroupPartition::assign(const ClassCatalog& catalog,
                                      std::span<const CountRange> boundaries) {
  validate_boundaries(boundaries);

  GroupPartition p;
  const int num_fg = catalog.num_foreground();
  const int num_groups = static_cast<int>(boundaries.size());
  p.boundaries_.assign(boundaries.begin(), boundaries.end());
  p.group_of_.assign(num_fg + 1, 0);
  p.slot_of_.assign(num_fg + 1, 0);
  p.members_.assign(num_groups + 1, {});

  for (int j = 1; j <= num_fg; ++j) {
    const auto n = catalog.count(j);
    for (int g = 0; g < num_groups; ++g) {
      if (boundaries[g].contains(n)) {
        p.group_of_[j] = g + 1;
        p.slot_of_[j] = static_cast<int>(p.members_[g + 1].size());
        p.members_[g + 1].push_back(j);
        break;
      }
    }
  }

  using Kind = LogitNode::Kind;
  p.flat_of_category_.assign(num_fg + 1, -1);
  p.offsets_.assign(num_groups + 1, 0);
  p.nodes_.push_back({Kind::Background, 0, kBackground});
  p.nodes_.push_back({Kind::Others, 0, -1});
  p.flat_of_category_[kBackground] = 0;
  for (int g = 1; g <= num_groups; ++g) {
    p.offsets_[g] = static_cast<int>(p.nodes_.size());
    for (int j : p.members_[g]) {
      p.flat_of_category_[j] = static_cast<int>(p.nodes_.size());
      p.nodes_.push_back({Kind::Foreground, g, j});
    }
    p.nodes_.push_back({Kind::Others, g, -1});
  }
  return p;
}

int GroupPartition::group_of(int category) const {
  if (category < 0 || category > num_foreground()) {
    throw ConfigError("category id out of range: " + std::to_string(category));
  }
  return group_of_[category];
}

int GroupPartition::slot_of(int category) const {
  if (category < 1 || category > num_foreground()) {
    throw ConfigError("category id out of range: " + std::to_string(category));
  }
  return slot_of_[category];
}

std::span<const int> GroupPartition::members(int group) const {
  if (group < 1 || group > num_groups()) throw ConfigError("group index out of range");
  return members_[group];
}

int GroupPartition::offset(int group) const {
  if (group < 0 || group > num_groups()) throw ConfigError("group index out of range");
  return offsets_[group];
}

int GroupPartition::size(int group) const {
  if (group == 0) return 2;
  return static_cast<int>(members(group).size()) + 1;
}

int GroupPartition::index_of(int category) const {
  if (category < 0 || category > num_foreground()) {
    throw ConfigError("category id out of range: " + std::to_string(category));
  }
  return flat_of_category_[category];
}

int GroupPartition::others_index(int group) const {
  return offset(group) + size(group) - 1;
}

const LogitNode& GroupPartition::node_at(int flat) const {
  if (flat < 0 || flat >= logit_dim()) throw ConfigError("logit index out of range");
  return nodes_[flat];
}

std::vector<LogitNode> logit_layout(const GroupPartition& partition) {
  std::vector<LogitNode> out;
  out.reserve(partition.logit_dim());
  for (int i = 0; i < partition.logit_dim(); ++i) out.push_back(partition.node_at(i));
  return out;
}

}  // namespace longtail
