#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace monet {

/// Reference to a stored signature graph.
struct GraphRef {
  std::string family_id;
  std::size_t ordinal = 0;

  auto operator<=>(const GraphRef&) const = default;
};

/// Append-only B+ tree mapping integer keys to lists of graph references.
///
/// `order` is the maximum number of children of an internal node and the
/// maximum number of keys in a leaf. Every non-root node holds at least
/// ceil(order/2) children (internal) or keys (leaf); all leaves sit at the
/// same depth and are chained left to right. Insert costs O(log_b n); a range
/// query costs O(log_b n + k) for k returned keys.
///
/// Nodes live in an arena addressed by index, so the tree is a regular value
/// type: copies are deep and independent.
class BplusIndex {
 public:
  using Key = std::int64_t;

  explicit BplusIndex(std::size_t order = 32);

  std::size_t order() const { return order_; }
  std::size_t key_count() const { return key_count_; }
  std::size_t value_count() const { return value_count_; }
  /// Levels from root to leaves; a lone leaf root has depth 1.
  std::size_t depth() const;

  void insert(Key key, GraphRef value);

  /// All values whose key lies in [lo, hi], ascending by key and in insertion
  /// order within a key.
  std::vector<GraphRef> range(Key lo, Key hi) const;

  /// Every (key, values) pair in key order, read off the leaf chain.
  std::vector<std::pair<Key, std::vector<GraphRef>>> entries() const;

  /// Checks every structural invariant. Returns an empty string when the
  /// tree is sound, else a description of the first violation.
  std::string audit() const;

  bool operator==(const BplusIndex& other) const { return entries() == other.entries(); }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  struct Node {
    bool leaf = true;
    std::vector<Key> keys;
    std::vector<std::size_t> children;         // internal only
    std::vector<std::vector<GraphRef>> values; // leaf only
    std::size_t next = kNone;                  // leaf chain
  };

  std::size_t find_leaf(Key key, std::vector<std::size_t>* path) const;
  void split_leaf(std::size_t leaf, std::vector<std::size_t>& path);
  void insert_into_parent(
      std::size_t left, Key separator, std::size_t right, std::vector<std::size_t>& path);
  std::string audit_node(
      std::size_t node,
      std::size_t level,
      std::size_t& leaf_level,
      const Key* lower,
      const Key* upper,
      std::vector<std::size_t>& leaves) const;

  std::size_t order_;
  std::vector<Node> nodes_;
  std::size_t root_ = 0;
  std::size_t key_count_ = 0;
  std::size_t value_count_ = 0;
};

} // namespace monet
