#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "monet/app_model.hpp"

namespace monet {

/// Per-method control flow graph with synthetic ENTRY (index 0) and EXIT
/// (index 1) nodes. Real blocks follow in method order; blocks unreachable
/// from the entry block are dropped and listed in `dropped_blocks`.
struct Cfg {
  static constexpr std::size_t kEntry = 0;
  static constexpr std::size_t kExit = 1;

  struct Node {
    std::string id; // "ENTRY" / "EXIT" for the synthetic nodes
    std::vector<Instruction> instructions;
    std::vector<std::size_t> succ;
    std::vector<std::size_t> pred;
  };

  std::vector<Node> nodes;
  std::vector<std::string> dropped_blocks;

  std::size_t size() const { return nodes.size(); }
  std::optional<std::size_t> index_of(std::string_view block_id) const;
  /// Real nodes (ENTRY/EXIT excluded) in reverse post-order from ENTRY.
  std::vector<std::size_t> reverse_post_order() const;
};

Cfg build_cfg(const MethodIR& method);

/// A definition site: instruction `index` of block `block` writes `var`.
struct Definition {
  std::string block;
  std::size_t index = 0;
  std::string var;

  auto operator<=>(const Definition&) const = default;
};

/// Fixed-width bit set over definition ids.
class DefSet {
 public:
  DefSet() = default;
  explicit DefSet(std::size_t bits) : words_((bits + 63) / 64, 0), bits_(bits) {}

  std::size_t bits() const { return bits_; }
  bool test(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1u; }
  void set(std::size_t i) { words_[i / 64] |= std::uint64_t{1} << (i % 64); }
  void reset(std::size_t i) { words_[i / 64] &= ~(std::uint64_t{1} << (i % 64)); }
  std::size_t count() const;
  std::vector<std::size_t> members() const;

  DefSet& operator|=(const DefSet& other);
  /// this ∖ other
  DefSet& subtract(const DefSet& other);

  bool operator==(const DefSet&) const = default;

 private:
  std::vector<std::uint64_t> words_;
  std::size_t bits_ = 0;
};

/// Reaching-definition solution. Vectors are indexed by Cfg node index.
struct DefSets {
  std::vector<Definition> definitions; // id -> definition
  std::vector<DefSet> gen;
  std::vector<DefSet> kill;
  std::vector<DefSet> in;
  std::vector<DefSet> out;
  std::size_t iterations = 0; // node visits until the worklist drained

  std::vector<Definition> named(const DefSet& set) const;
};

/// Enumerates definition sites of the retained blocks in node order.
std::vector<Definition> collect_definitions(const Cfg& cfg);

/// Worklist reaching-definitions solver seeded in reverse post-order.
/// Each visit is O(d/64) for d definitions; a node is revisited only when a
/// predecessor's OUT grows, so total visits are bounded by O(n * d), i.e.
/// O(n^2) in the number of blocks for the per-block-bounded IR used here.
DefSets reaching_definitions(const Cfg& cfg);

/// Definitions of `var` reaching the point just before instruction `index`
/// of node `node`.
std::vector<std::size_t> reaching_at(
    const Cfg& cfg,
    const DefSets& defs,
    std::size_t node,
    std::size_t index,
    const std::string& var);

enum class CallKind { start_activity, start_service, send_broadcast };

std::string_view to_string(CallKind kind);

struct IntentTarget {
  enum class Kind { explicit_class, implicit_action, unresolved };
  Kind kind = Kind::unresolved;
  std::string value; // class name or action string

  bool operator==(const IntentTarget&) const = default;
};

struct IntentCall {
  std::string caller_component;
  IntentTarget target;
  CallKind call_kind = CallKind::start_activity;
  std::string site_block;
  std::size_t site_index = 0;
  /// Def-use witness: the intent constructor followed by the definitions of
  /// its operands. Empty when the call is unresolved.
  std::vector<Definition> witness;

  bool operator==(const IntentCall&) const = default;
};

std::vector<IntentCall> extract_intent_calls(
    const ComponentDecl& component,
    const MethodIR& method,
    const Cfg& cfg,
    const DefSets& defs);

/// Runs build_cfg / reaching_definitions / extract_intent_calls over every
/// method of every component, in package order.
std::vector<IntentCall> analyze_package(const AppPackage& pkg);

/// Debug dump of a CFG together with its GEN/KILL/IN/OUT sets.
nlohmann::json dataflow_to_json(const Cfg& cfg, const DefSets& defs);

} // namespace monet
