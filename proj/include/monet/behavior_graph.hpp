#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "monet/app_model.hpp"
#include "monet/dataflow.hpp"

namespace monet {

struct TraceLog;

/// Canonical transaction codes for statically discovered intent edges.
/// start_activity follows the binder code observed for ActivityManager; the
/// service and broadcast codes are fixed conventions of this toolkit.
namespace intent_code {
inline constexpr int kStartActivity = 3;
inline constexpr int kStartService = 5;
inline constexpr int kSendBroadcast = 14;
} // namespace intent_code

int code_for(CallKind kind);

/// Node types, in canonical sort order.
enum class NodeType { app, system, action };

std::string_view to_string(NodeType type);

struct GraphNode {
  NodeType type = NodeType::app;
  std::string label;                 // class name, descriptor or action
  std::optional<ComponentKind> kind; // app nodes only

  bool operator==(const GraphNode&) const = default;
};

struct GraphEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  int code = 0;
  std::optional<std::string> content; // display only

  bool operator==(const GraphEdge&) const = default;
};

enum class Origin { static_analysis, runtime };

std::string_view to_string(Origin origin);

/// Directed labeled graph over app components, system components and
/// intent actions. Node identity within a graph is (type, label); edges are
/// unique per (src, dst, code) and keep the content of their first insert.
class BehaviorGraph {
 public:
  using NodeId = std::size_t;

  explicit BehaviorGraph(Origin origin = Origin::static_analysis) : origin_(origin) {}

  Origin origin() const { return origin_; }
  void set_origin(Origin origin) { origin_ = origin; }

  const std::vector<GraphNode>& nodes() const { return nodes_; }
  const std::vector<GraphEdge>& edges() const { return edges_; }
  const GraphNode& node(NodeId id) const { return nodes_.at(id); }

  /// Returns the existing node with the same (type, label) or inserts one.
  NodeId add_node(const GraphNode& node);
  NodeId add_app(std::string name, ComponentKind kind);
  NodeId add_system(std::string descriptor);
  NodeId add_action(std::string action);

  std::optional<NodeId> find(NodeType type, std::string_view label) const;

  /// Inserts (src, dst, code) unless present. Returns true when inserted.
  bool add_edge(NodeId src, NodeId dst, int code, std::optional<std::string> content = {});
  bool has_edge(NodeId src, NodeId dst, int code) const;

  /// Turns a system node into an app node in place, keeping its edges.
  void promote_to_app(NodeId id, ComponentKind kind);

  std::size_t app_component_count() const;
  /// Number of weakly connected components of the app-only subgraph.
  std::size_t app_cluster_count() const;

  /// Structural equality: same origin, node set and edge set, independent of
  /// insertion order.
  bool operator==(const BehaviorGraph& other) const;

 private:
  Origin origin_;
  std::vector<GraphNode> nodes_;
  std::vector<GraphEdge> edges_;
};

/// Canonical node order: type, then label. Returns old-id -> canonical-id.
std::vector<std::size_t> canonical_node_order(const BehaviorGraph& g);

nlohmann::json to_json(const BehaviorGraph& g);
/// Throws CorruptGraph on any schema or invariant violation.
BehaviorGraph graph_from_json(const nlohmann::json& j);
/// Canonical byte-stable text: sorted nodes/edges, two-space indent, LF.
std::string dump_graph(const BehaviorGraph& g);
BehaviorGraph parse_graph(std::string_view text);

BehaviorGraph build_sbg(const AppPackage& pkg, const std::vector<IntentCall>& calls);

/// Completes a static graph with the binder records of `trace`. `sbg` is
/// not modified. Throws UnknownCaller.
BehaviorGraph complete_rbg(const BehaviorGraph& sbg, const TraceLog& trace, const AppPackage& pkg);

/// Splits a runtime graph into one graph per weakly connected app cluster,
/// each with private copies of the system and action nodes it touches.
/// Ordered by descending app-component count, then smallest component name.
std::vector<BehaviorGraph> decouple(const BehaviorGraph& rbg);

} // namespace monet
