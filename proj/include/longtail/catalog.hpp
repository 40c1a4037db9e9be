#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace longtail {

/// Category id reserved for background proposals.
inline constexpr int kBackground = 0;

/// Number of evaluation bins: [1,10), [10,100), [100,1000), [1000,inf).
inline constexpr int kNumBins = 4;

/// Upper bound sentinel for the last count range.
inline constexpr std::int64_t kUnbounded = std::numeric_limits<std::int64_t>::max();

/// Foreground categories 1..C with their training-instance counts.
class ClassCatalog {
 public:
  explicit ClassCatalog(std::vector<std::int64_t> counts);

  int num_foreground() const { return static_cast<int>(counts_.size()); }

  /// Training count of foreground category `category` (1-based).
  std::int64_t count(int category) const;

  /// Counts ordered by category id, index 0 holds category 1.
  std::span<const std::int64_t> counts() const { return counts_; }

  bool operator==(const ClassCatalog&) const = default;

 private:
  std::vector<std::int64_t> counts_;
};

/// Evaluation bin (1..4) of a category with `count` training instances.
/// Counts below 1 fall into bin 1; counts of 1000 and above into bin 4.
int bin_of(std::int64_t count);

/// Half-open instance-count interval [low, high).
struct CountRange {
  std::int64_t low = 0;
  std::int64_t high = kUnbounded;

  bool contains(std::int64_t n) const { return low <= n && n < high; }
  bool operator==(const CountRange&) const = default;
};

/// The four-group layout (0,10), (10,100), (100,1000), (1000,inf).
std::vector<CountRange> default_boundaries();

/// Log-spaced boundaries with `num_groups` groups. Interior edges sit at
/// 10^(3i/(num_groups-1)), so 4 groups reproduces default_boundaries().
std::vector<CountRange> decade_boundaries(int num_groups);

/// Throws ConfigError unless the ranges start at 0, end at kUnbounded, and
/// each range begins where the previous one ended.
void validate_boundaries(std::span<const CountRange> boundaries);

/// What a flat logit index stands for.
struct LogitNode {
  enum class Kind { Background, Foreground, Others };
  Kind kind = Kind::Background;
  int group = 0;     ///< 0 for the background group, 1..N otherwise
  int category = 0;  ///< category id for Foreground and Background nodes, -1 for Others

  bool operator==(const LogitNode&) const = default;
};

/// Count-based grouping of foreground categories plus the background group.
///
/// Flat logit layout: the background group's two nodes come first
/// (background, others), then each foreground group 1..N as its members in
/// ascending category id followed by that group's others node.
class GroupPartition {
 public:
  /// Assigns category j to the group whose range contains count(j).
  static GroupPartition assign(const ClassCatalog& catalog,
                               std::span<const CountRange> boundaries);

  int num_groups() const { return static_cast<int>(boundaries_.size()); }
  int num_foreground() const { return static_cast<int>(group_of_.size()) - 1; }
  const std::vector<CountRange>& boundaries() const { return boundaries_; }

  /// (C + 1) + (N + 1).
  int logit_dim() const { return static_cast<int>(nodes_.size()); }

  /// Group of a category; background maps to group 0.
  int group_of(int category) const;
  /// Position of a category within its group's member list.
  int slot_of(int category) const;
  /// Members of foreground group `group` in ascending id order.
  std::span<const int> members(int group) const;

  /// Index of the first logit of `group`; group 0 starts at 0.
  int offset(int group) const;
  /// Number of logits in `group` (members + others; 2 for group 0).
  int size(int group) const;

  /// Flat index of a category's node (background included).
  int index_of(int category) const;
  /// Flat index of the others node of `group` (group 0 included).
  int others_index(int group) const;
  /// Inverse of index_of / others_index.
  const LogitNode& node_at(int flat) const;

 private:
  GroupPartition() = default;

  std::vector<CountRange> boundaries_;
  std::vector<int> group_of_;
  std::vector<int> slot_of_;
  std::vector<std::vector<int>> members_;  // index 0 unused
  std::vector<int> offsets_;
  std::vector<int> flat_of_category_;
  std::vector<LogitNode> nodes_;
};

/// Flat-index → node table of a partition; a bijection over logit_dim().
std::vector<LogitNode> logit_layout(const GroupPartition& partition);

}  // namespace longtail
