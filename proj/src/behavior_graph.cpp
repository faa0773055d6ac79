#include "monet/behavior_graph.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <tuple>

#include "monet/errors.hpp"
#include "monet/trace.hpp"

namespace monet {

using nlohmann::json;

int code_for(CallKind kind) {
  switch (kind) {
    case CallKind::start_activity:
      return intent_code::kStartActivity;
    case CallKind::start_service:
      return intent_code::kStartService;
    case CallKind::send_broadcast:
      return intent_code::kSendBroadcast;
  }
  return intent_code::kStartActivity;
}

std::string_view to_string(NodeType type) {
  switch (type) {
    case NodeType::app:
      return "app";
    case NodeType::system:
      return "system";
    case NodeType::action:
      return "action";
  }
  return "app";
}

std::string_view to_string(Origin origin) {
  return origin == Origin::runtime ? "runtime" : "static";
}

// ---------------------------------------------------------------------------
// BehaviorGraph

BehaviorGraph::NodeId BehaviorGraph::add_node(const GraphNode& node) {
  if (auto existing = find(node.type, node.label)) {
    return *existing;
  }
  nodes_.push_back(node);
  return nodes_.size() - 1;
}

BehaviorGraph::NodeId BehaviorGraph::add_app(std::string name, ComponentKind kind) {
  return add_node({NodeType::app, std::move(name), kind});
}

BehaviorGraph::NodeId BehaviorGraph::add_system(std::string descriptor) {
  return add_node({NodeType::system, std::move(descriptor), std::nullopt});
}

BehaviorGraph::NodeId BehaviorGraph::add_action(std::string action) {
  return add_node({NodeType::action, std::move(action), std::nullopt});
}

std::optional<BehaviorGraph::NodeId> BehaviorGraph::find(
    NodeType type, std::string_view label) const {
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].type == type && nodes_[i].label == label) {
      return i;
    }
  }
  return std::nullopt;
}

bool BehaviorGraph::add_edge(
    NodeId src, NodeId dst, int code, std::optional<std::string> content) {
  if (src >= nodes_.size() || dst >= nodes_.size()) {
    throw CorruptGraph("edge endpoint out of range");
  }
  if (has_edge(src, dst, code)) {
    return false;
  }
  edges_.push_back({src, dst, code, std::move(content)});
  return true;
}

bool BehaviorGraph::has_edge(NodeId src, NodeId dst, int code) const {
  return std::any_of(edges_.begin(), edges_.end(), [&](const GraphEdge& e) {
    return e.src == src && e.dst == dst && e.code == code;
  });
}

void BehaviorGraph::promote_to_app(NodeId id, ComponentKind kind) {
  GraphNode& n = nodes_.at(id);
  if (find(NodeType::app, n.label)) {
    throw CorruptGraph("cannot promote '" + n.label + "': app node already present");
  }
  n.type = NodeType::app;
  n.kind = kind;
}

std::size_t BehaviorGraph::app_component_count() const {
  return static_cast<std::size_t>(std::count_if(
      nodes_.begin(), nodes_.end(), [](const GraphNode& n) { return n.type == NodeType::app; }));
}

namespace {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) {
      parent_[std::max(a, b)] = std::min(a, b);
    }
  }

 private:
  std::vector<std::size_t> parent_;
};

// Cluster root per node (only meaningful for app nodes).
DisjointSets app_partition(const BehaviorGraph& g) {
  DisjointSets sets(g.nodes().size());
  for (const auto& e : g.edges()) {
    if (g.node(e.src).type == NodeType::app && g.node(e.dst).type == NodeType::app) {
      sets.unite(e.src, e.dst);
    }
  }
  return sets;
}

} // namespace

std::size_t BehaviorGraph::app_cluster_count() const {
  DisjointSets sets = app_partition(*this);
  std::size_t clusters = 0;
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].type == NodeType::app && sets.find(i) == i) {
      ++clusters;
    }
  }
  return clusters;
}

bool BehaviorGraph::operator==(const BehaviorGraph& other) const {
  return nodes_.size() == other.nodes_.size() && edges_.size() == other.edges_.size() &&
      to_json(*this) == to_json(other);
}

// ---------------------------------------------------------------------------
// JSON

std::vector<std::size_t> canonical_node_order(const BehaviorGraph& g) {
  std::vector<std::size_t> order(g.nodes().size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& na = g.node(a);
    const auto& nb = g.node(b);
    return std::tie(na.type, na.label) < std::tie(nb.type, nb.label);
  });
  std::vector<std::size_t> canonical(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    canonical[order[i]] = i;
  }
  return canonical;
}

json to_json(const BehaviorGraph& g) {
  std::vector<std::size_t> canonical = canonical_node_order(g);
  std::vector<json> nodes(g.nodes().size());
  for (std::size_t i = 0; i < g.nodes().size(); ++i) {
    const auto& n = g.node(i);
    json obj = {
        {"id", canonical[i]},
        {"type", to_string(n.type)},
        {"label", n.label},
    };
    if (n.kind) {
      obj["kind"] = to_string(*n.kind);
    }
    nodes[canonical[i]] = std::move(obj);
  }
  std::vector<GraphEdge> edges = g.edges();
  for (auto& e : edges) {
    e.src = canonical[e.src];
    e.dst = canonical[e.dst];
  }
  std::sort(edges.begin(), edges.end(), [](const GraphEdge& a, const GraphEdge& b) {
    return std::tie(a.src, a.dst, a.code) < std::tie(b.src, b.dst, b.code);
  });
  json edge_arr = json::array();
  for (const auto& e : edges) {
    json obj = {{"src", e.src}, {"dst", e.dst}, {"code", e.code}};
    if (e.content) {
      obj["content"] = *e.content;
    }
    edge_arr.push_back(std::move(obj));
  }
  return {
      {"origin", to_string(g.origin())},
      {"nodes", nodes},
      {"edges", edge_arr},
  };
}

BehaviorGraph graph_from_json(const json& j) {
  if (!j.is_object()) {
    throw CorruptGraph("graph must be a JSON object");
  }
  auto origin_it = j.find("origin");
  if (origin_it == j.end() || !origin_it->is_string()) {
    throw CorruptGraph("graph missing 'origin'");
  }
  Origin origin;
  if (*origin_it == "runtime") {
    origin = Origin::runtime;
  } else if (*origin_it == "static") {
    origin = Origin::static_analysis;
  } else {
    throw CorruptGraph("unknown origin " + origin_it->dump());
  }
  BehaviorGraph g(origin);

  auto nodes_it = j.find("nodes");
  auto edges_it = j.find("edges");
  if (nodes_it == j.end() || !nodes_it->is_array() || edges_it == j.end() ||
      !edges_it->is_array()) {
    throw CorruptGraph("graph requires 'nodes' and 'edges' arrays");
  }

  std::map<std::int64_t, BehaviorGraph::NodeId> by_id;
  for (const auto& n : *nodes_it) {
    if (!n.is_object() || !n.contains("id") || !n["id"].is_number_integer() ||
        !n.contains("type") || !n["type"].is_string() || !n.contains("label") ||
        !n["label"].is_string()) {
      throw CorruptGraph("malformed node " + n.dump());
    }
    GraphNode node;
    std::string type = n["type"];
    if (type == "app") {
      node.type = NodeType::app;
    } else if (type == "system") {
      node.type = NodeType::system;
    } else if (type == "action") {
      node.type = NodeType::action;
    } else {
      throw CorruptGraph("unknown node type '" + type + "'");
    }
    node.label = n["label"];
    if (node.label.empty()) {
      throw CorruptGraph("node with empty label");
    }
    auto kind_it = n.find("kind");
    if (node.type == NodeType::app) {
      if (kind_it == n.end() || !kind_it->is_string()) {
        throw CorruptGraph("app node '" + node.label + "' missing kind");
      }
      node.kind = component_kind_from_string(kind_it->get<std::string>());
      if (!node.kind) {
        throw CorruptGraph("app node '" + node.label + "' has unknown kind");
      }
    } else if (kind_it != n.end()) {
      throw CorruptGraph("non-app node '" + node.label + "' carries a kind");
    }
    if (g.find(node.type, node.label)) {
      throw CorruptGraph("duplicate node '" + node.label + "'");
    }
    std::int64_t id = n["id"];
    if (by_id.count(id)) {
      throw CorruptGraph("duplicate node id " + std::to_string(id));
    }
    by_id[id] = g.add_node(node);
  }

  for (const auto& e : *edges_it) {
    if (!e.is_object() || !e.contains("src") || !e["src"].is_number_integer() ||
        !e.contains("dst") || !e["dst"].is_number_integer() || !e.contains("code") ||
        !e["code"].is_number_integer()) {
      throw CorruptGraph("malformed edge " + e.dump());
    }
    auto src = by_id.find(e["src"].get<std::int64_t>());
    auto dst = by_id.find(e["dst"].get<std::int64_t>());
    if (src == by_id.end() || dst == by_id.end()) {
      throw CorruptGraph("edge references unknown node " + e.dump());
    }
    std::optional<std::string> content;
    if (auto c = e.find("content"); c != e.end()) {
      if (!c->is_string()) {
        throw CorruptGraph("edge content must be a string");
      }
      content = c->get<std::string>();
    }
    if (!g.add_edge(src->second, dst->second, e["code"].get<int>(), std::move(content))) {
      throw CorruptGraph("duplicate edge " + e.dump());
    }
  }
  return g;
}

std::string dump_graph(const BehaviorGraph& g) {
  return to_json(g).dump(2) + "\n";
}

BehaviorGraph parse_graph(std::string_view text) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) {
    throw CorruptGraph("graph is not valid JSON");
  }
  return graph_from_json(j);
}

// ---------------------------------------------------------------------------
// SBG / RBG

BehaviorGraph build_sbg(const AppPackage& pkg, const std::vector<IntentCall>& calls) {
  BehaviorGraph g(Origin::static_analysis);
  for (const auto& c : pkg.components) {
    g.add_app(c.name, c.kind);
  }
  for (const auto& call : calls) {
    if (call.target.kind == IntentTarget::Kind::unresolved) {
      continue;
    }
    const ComponentDecl* caller = pkg.find_component(call.caller_component);
    if (!caller) {
      throw UnknownComponentRef(call.caller_component);
    }
    auto src = g.add_app(caller->name, caller->kind);
    BehaviorGraph::NodeId dst;
    if (call.target.kind == IntentTarget::Kind::implicit_action) {
      dst = g.add_action(call.target.value);
    } else if (const ComponentDecl* target = pkg.find_component(call.target.value)) {
      dst = g.add_app(target->name, target->kind);
    } else {
      dst = g.add_system(call.target.value);
    }
    g.add_edge(src, dst, code_for(call.call_kind));
  }
  return g;
}

namespace {

std::optional<ComponentKind> kind_for_code(int code) {
  switch (code) {
    case intent_code::kStartActivity:
      return ComponentKind::activity;
    case intent_code::kStartService:
      return ComponentKind::service;
    case intent_code::kSendBroadcast:
      return ComponentKind::receiver;
    default:
      return std::nullopt;
  }
}

// Kind of an undeclared component, inferred from how it is started.
ComponentKind infer_kind(const BehaviorGraph& g, BehaviorGraph::NodeId node, int incoming_code) {
  if (auto k = kind_for_code(incoming_code)) {
    return *k;
  }
  for (const auto& e : g.edges()) {
    if (e.dst == node) {
      if (auto k = kind_for_code(e.code)) {
        return *k;
      }
    }
  }
  return ComponentKind::service;
}

// App node for an undeclared class: an existing app node, a promoted system
// node left behind by static analysis, or a fresh node.
BehaviorGraph::NodeId undeclared_component(
    BehaviorGraph& g, const std::string& name, int incoming_code) {
  if (auto app = g.find(NodeType::app, name)) {
    return *app;
  }
  if (auto sys = g.find(NodeType::system, name)) {
    g.promote_to_app(*sys, infer_kind(g, *sys, incoming_code));
    return *sys;
  }
  auto id = g.add_system(name);
  g.promote_to_app(id, infer_kind(g, id, incoming_code));
  return id;
}

} // namespace

BehaviorGraph complete_rbg(
    const BehaviorGraph& sbg, const TraceLog& trace, const AppPackage& pkg) {
  BehaviorGraph g = sbg;
  g.set_origin(Origin::runtime);
  for (const auto& r : trace.binder) {
    BehaviorGraph::NodeId caller;
    if (const ComponentDecl* decl = pkg.find_component(r.caller)) {
      caller = g.add_app(decl->name, decl->kind);
    } else if (r.dynamic_caller) {
      caller = undeclared_component(g, r.caller, -1);
    } else {
      throw UnknownCaller(r.seq, r.caller);
    }

    BehaviorGraph::NodeId target = 0;
    switch (r.target.type) {
      case BinderTarget::Type::component:
        if (const ComponentDecl* decl = pkg.find_component(r.target.value)) {
          target = g.add_app(decl->name, decl->kind);
        } else {
          target = undeclared_component(g, r.target.value, r.code);
        }
        break;
      case BinderTarget::Type::system:
        target = g.add_system(r.target.value);
        break;
      case BinderTarget::Type::action:
        target = g.add_action(r.target.value);
        break;
    }
    g.add_edge(caller, target, r.code, r.content);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Decoupling

std::vector<BehaviorGraph> decouple(const BehaviorGraph& rbg) {
  for (const auto& e : rbg.edges()) {
    if (rbg.node(e.src).type != NodeType::app && rbg.node(e.dst).type != NodeType::app) {
      throw CorruptGraph(
          "edge between non-app nodes '" + rbg.node(e.src).label + "' and '" +
          rbg.node(e.dst).label + "'");
    }
  }

  DisjointSets sets = app_partition(rbg);
  std::map<std::size_t, std::vector<BehaviorGraph::NodeId>> members;
  for (BehaviorGraph::NodeId i = 0; i < rbg.nodes().size(); ++i) {
    if (rbg.node(i).type == NodeType::app) {
      members[sets.find(i)].push_back(i);
    }
  }

  struct Cluster {
    std::size_t root;
    std::size_t size;
    std::string smallest;
  };
  std::vector<Cluster> clusters;
  for (const auto& [root, ids] : members) {
    std::string smallest = rbg.node(ids.front()).label;
    for (auto id : ids) {
      smallest = std::min(smallest, rbg.node(id).label);
    }
    clusters.push_back({root, ids.size(), std::move(smallest)});
  }
  std::sort(clusters.begin(), clusters.end(), [](const Cluster& a, const Cluster& b) {
    if (a.size != b.size) {
      return a.size > b.size;
    }
    return a.smallest < b.smallest;
  });

  std::vector<BehaviorGraph> out;
  for (const auto& cluster : clusters) {
    BehaviorGraph part(rbg.origin());
    std::map<BehaviorGraph::NodeId, BehaviorGraph::NodeId> copy;
    for (auto id : members[cluster.root]) {
      copy[id] = part.add_node(rbg.node(id));
    }
    auto in_cluster = [&](BehaviorGraph::NodeId id) {
      return rbg.node(id).type == NodeType::app && sets.find(id) == cluster.root;
    };
    for (const auto& e : rbg.edges()) {
      if (!in_cluster(e.src) && !in_cluster(e.dst)) {
        continue;
      }
      for (auto end : {e.src, e.dst}) {
        if (!copy.count(end)) {
          copy[end] = part.add_node(rbg.node(end));
        }
      }
      part.add_edge(copy[e.src], copy[e.dst], e.code, e.content);
    }
    out.push_back(std::move(part));
  }
  return out;
}

} // namespace monet
