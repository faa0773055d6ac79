#include "monet/bplus_index.hpp"

#include <algorithm>
#include <stdexcept>

namespace monet {

namespace {

std::size_t ceil_half(std::size_t n) {
  return (n + 1) / 2;
}

} // namespace

BplusIndex::BplusIndex(std::size_t order) : order_(order) {
  if (order_ < 3) {
    throw std::invalid_argument("B+ tree order must be at least 3");
  }
  nodes_.push_back(Node{});
}

std::size_t BplusIndex::depth() const {
  std::size_t levels = 1;
  for (std::size_t n = root_; !nodes_[n].leaf; n = nodes_[n].children.front()) {
    ++levels;
  }
  return levels;
}

std::size_t BplusIndex::find_leaf(Key key, std::vector<std::size_t>* path) const {
  std::size_t n = root_;
  while (!nodes_[n].leaf) {
    if (path) {
      path->push_back(n);
    }
    const auto& keys = nodes_[n].keys;
    auto slot = static_cast<std::size_t>(
        std::upper_bound(keys.begin(), keys.end(), key) - keys.begin());
    n = nodes_[n].children[slot];
  }
  return n;
}

void BplusIndex::insert(Key key, GraphRef value) {
  std::vector<std::size_t> path;
  std::size_t leaf = find_leaf(key, &path);
  Node& node = nodes_[leaf];
  auto it = std::lower_bound(node.keys.begin(), node.keys.end(), key);
  auto slot = static_cast<std::size_t>(it - node.keys.begin());
  ++value_count_;
  if (it != node.keys.end() && *it == key) {
    node.values[slot].push_back(std::move(value));
    return;
  }
  node.keys.insert(it, key);
  node.values.insert(node.values.begin() + static_cast<std::ptrdiff_t>(slot), {std::move(value)});
  ++key_count_;
  if (node.keys.size() > order_) {
    split_leaf(leaf, path);
  }
}

void BplusIndex::split_leaf(std::size_t leaf, std::vector<std::size_t>& path) {
  std::size_t right = nodes_.size();
  nodes_.push_back(Node{});
  Node& l = nodes_[leaf];
  Node& r = nodes_[right];
  std::size_t keep = ceil_half(l.keys.size());
  r.keys.assign(l.keys.begin() + static_cast<std::ptrdiff_t>(keep), l.keys.end());
  r.values.assign(
      std::make_move_iterator(l.values.begin() + static_cast<std::ptrdiff_t>(keep)),
      std::make_move_iterator(l.values.end()));
  l.keys.resize(keep);
  l.values.resize(keep);
  r.next = l.next;
  l.next = right;
  Key separator = r.keys.front();
  insert_into_parent(leaf, separator, right, path);
}

void BplusIndex::insert_into_parent(
    std::size_t left, Key separator, std::size_t right, std::vector<std::size_t>& path) {
  if (path.empty()) {
    Node root;
    root.leaf = false;
    root.keys = {separator};
    root.children = {left, right};
    root_ = nodes_.size();
    nodes_.push_back(std::move(root));
    return;
  }
  std::size_t parent = path.back();
  path.pop_back();
  {
    Node& p = nodes_[parent];
    auto pos = std::find(p.children.begin(), p.children.end(), left) - p.children.begin();
    p.keys.insert(p.keys.begin() + pos, separator);
    p.children.insert(p.children.begin() + pos + 1, right);
    if (p.children.size() <= order_) {
      return;
    }
  }
  // Split an internal node with order+1 children; the middle key moves up.
  std::size_t sibling = nodes_.size();
  nodes_.push_back(Node{});
  Node& p = nodes_[parent];
  Node& s = nodes_[sibling];
  s.leaf = false;
  std::size_t keep = ceil_half(p.children.size());
  Key up = p.keys[keep - 1];
  s.children.assign(p.children.begin() + static_cast<std::ptrdiff_t>(keep), p.children.end());
  s.keys.assign(p.keys.begin() + static_cast<std::ptrdiff_t>(keep), p.keys.end());
  p.children.resize(keep);
  p.keys.resize(keep - 1);
  insert_into_parent(parent, up, sibling, path);
}

std::vector<GraphRef> BplusIndex::range(Key lo, Key hi) const {
  std::vector<GraphRef> out;
  if (lo > hi) {
    return out;
  }
  std::size_t n = find_leaf(lo, nullptr);
  const Node* leaf = &nodes_[n];
  auto slot = static_cast<std::size_t>(
      std::lower_bound(leaf->keys.begin(), leaf->keys.end(), lo) - leaf->keys.begin());
  while (true) {
    for (; slot < leaf->keys.size(); ++slot) {
      if (leaf->keys[slot] > hi) {
        return out;
      }
      out.insert(out.end(), leaf->values[slot].begin(), leaf->values[slot].end());
    }
    if (leaf->next == kNone) {
      return out;
    }
    leaf = &nodes_[leaf->next];
    slot = 0;
  }
}

std::vector<std::pair<BplusIndex::Key, std::vector<GraphRef>>> BplusIndex::entries() const {
  std::vector<std::pair<Key, std::vector<GraphRef>>> out;
  std::size_t n = root_;
  while (!nodes_[n].leaf) {
    n = nodes_[n].children.front();
  }
  for (; n != kNone; n = nodes_[n].next) {
    for (std::size_t i = 0; i < nodes_[n].keys.size(); ++i) {
      out.emplace_back(nodes_[n].keys[i], nodes_[n].values[i]);
    }
  }
  return out;
}

std::string BplusIndex::audit_node(
    std::size_t node,
    std::size_t level,
    std::size_t& leaf_level,
    const Key* lower,
    const Key* upper,
    std::vector<std::size_t>& leaves) const {
  const Node& n = nodes_[node];
  const bool is_root = node == root_;
  const std::string where = "node " + std::to_string(node) + ": ";

  if (!std::is_sorted(n.keys.begin(), n.keys.end()) ||
      std::adjacent_find(n.keys.begin(), n.keys.end()) != n.keys.end()) {
    return where + "keys not strictly increasing";
  }
  for (Key k : n.keys) {
    if ((lower && k < *lower) || (upper && k >= *upper)) {
      return where + "key outside the separator range of its parent";
    }
  }

  if (n.leaf) {
    if (n.values.size() != n.keys.size()) {
      return where + "leaf keys and value lists differ in length";
    }
    if (n.keys.size() > order_) {
      return where + "leaf overflow";
    }
    if (!is_root && n.keys.size() < ceil_half(order_)) {
      return where + "leaf underfull";
    }
    for (const auto& v : n.values) {
      if (v.empty()) {
        return where + "empty value list";
      }
    }
    if (leaf_level == 0) {
      leaf_level = level;
    } else if (leaf_level != level) {
      return where + "leaves at unequal depth";
    }
    leaves.push_back(node);
    return {};
  }

  if (n.children.size() != n.keys.size() + 1) {
    return where + "internal node key/child count mismatch";
  }
  if (n.children.size() > order_) {
    return where + "internal node overflow";
  }
  if (is_root ? n.children.size() < 2 : n.children.size() < ceil_half(order_)) {
    return where + "internal node underfull";
  }
  for (std::size_t i = 0; i < n.children.size(); ++i) {
    const Key* lo = i == 0 ? lower : &n.keys[i - 1];
    const Key* hi = i + 1 == n.children.size() ? upper : &n.keys[i];
    std::string err = audit_node(n.children[i], level + 1, leaf_level, lo, hi, leaves);
    if (!err.empty()) {
      return err;
    }
  }
  return {};
}

std::string BplusIndex::audit() const {
  std::size_t leaf_level = 0;
  std::vector<std::size_t> leaves;
  std::string err = audit_node(root_, 1, leaf_level, nullptr, nullptr, leaves);
  if (!err.empty()) {
    return err;
  }
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    std::size_t expected = i + 1 < leaves.size() ? leaves[i + 1] : kNone;
    if (nodes_[leaves[i]].next != expected) {
      return "leaf chain does not follow key order at leaf " + std::to_string(leaves[i]);
    }
  }
  std::size_t keys = 0;
  std::size_t values = 0;
  for (std::size_t leaf : leaves) {
    keys += nodes_[leaf].keys.size();
    for (const auto& v : nodes_[leaf].values) {
      values += v.size();
    }
  }
  if (keys != key_count_ || values != value_count_) {
    return "key/value counters disagree with the leaves";
  }
  return {};
}

} // namespace monet
