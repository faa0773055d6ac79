#include "monet/dataflow.hpp"

#include <algorithm>
#include <bit>
#include <map>
#include <set>

namespace monet {

// ---------------------------------------------------------------------------
// CFG

std::optional<std::size_t> Cfg::index_of(std::string_view block_id) const {
  for (std::size_t i = 2; i < nodes.size(); ++i) {
    if (nodes[i].id == block_id) {
      return i;
    }
  }
  return std::nullopt;
}

std::vector<std::size_t> Cfg::reverse_post_order() const {
  std::vector<std::size_t> post;
  std::vector<bool> seen(nodes.size(), false);
  // Iterative DFS; each frame is (node, next successor slot).
  std::vector<std::pair<std::size_t, std::size_t>> stack{{kEntry, 0}};
  seen[kEntry] = true;
  while (!stack.empty()) {
    auto& [node, slot] = stack.back();
    if (slot < nodes[node].succ.size()) {
      std::size_t s = nodes[node].succ[slot++];
      if (!seen[s]) {
        seen[s] = true;
        stack.emplace_back(s, 0);
      }
      continue;
    }
    post.push_back(node);
    stack.pop_back();
  }
  std::vector<std::size_t> rpo;
  for (auto it = post.rbegin(); it != post.rend(); ++it) {
    if (*it != kEntry && *it != kExit) {
      rpo.push_back(*it);
    }
  }
  return rpo;
}

Cfg build_cfg(const MethodIR& method) {
  std::map<std::string_view, std::size_t> position;
  for (std::size_t i = 0; i < method.blocks.size(); ++i) {
    position.emplace(method.blocks[i].id, i);
  }
  std::vector<std::vector<std::size_t>> succ(method.blocks.size());
  for (const auto& [from, to] : method.edges) {
    auto& list = succ[position.at(from)];
    std::size_t target = position.at(to);
    if (std::find(list.begin(), list.end(), target) == list.end()) {
      list.push_back(target);
    }
  }

  std::vector<bool> reachable(method.blocks.size(), false);
  std::vector<std::size_t> work{position.at(method.entry)};
  reachable[work.front()] = true;
  while (!work.empty()) {
    std::size_t b = work.back();
    work.pop_back();
    for (std::size_t s : succ[b]) {
      if (!reachable[s]) {
        reachable[s] = true;
        work.push_back(s);
      }
    }
  }

  Cfg cfg;
  cfg.nodes.push_back({"ENTRY", {}, {}, {}});
  cfg.nodes.push_back({"EXIT", {}, {}, {}});
  std::vector<std::size_t> node_of(method.blocks.size(), 0);
  for (std::size_t i = 0; i < method.blocks.size(); ++i) {
    if (!reachable[i]) {
      cfg.dropped_blocks.push_back(method.blocks[i].id);
      continue;
    }
    node_of[i] = cfg.nodes.size();
    cfg.nodes.push_back({method.blocks[i].id, method.blocks[i].instructions, {}, {}});
  }

  auto link = [&cfg](std::size_t from, std::size_t to) {
    cfg.nodes[from].succ.push_back(to);
    cfg.nodes[to].pred.push_back(from);
  };
  link(Cfg::kEntry, node_of[position.at(method.entry)]);
  for (std::size_t i = 0; i < method.blocks.size(); ++i) {
    if (!reachable[i]) {
      continue;
    }
    if (succ[i].empty()) {
      link(node_of[i], Cfg::kExit);
    }
    for (std::size_t s : succ[i]) {
      link(node_of[i], node_of[s]);
    }
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// DefSet

std::size_t DefSet::count() const {
  std::size_t n = 0;
  for (auto w : words_) {
    n += static_cast<std::size_t>(std::popcount(w));
  }
  return n;
}

std::vector<std::size_t> DefSet::members() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bits_; ++i) {
    if (test(i)) {
      out.push_back(i);
    }
  }
  return out;
}

DefSet& DefSet::operator|=(const DefSet& other) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    words_[i] |= other.words_[i];
  }
  return *this;
}

DefSet& DefSet::subtract(const DefSet& other) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    words_[i] &= ~other.words_[i];
  }
  return *this;
}

std::vector<Definition> DefSets::named(const DefSet& set) const {
  std::vector<Definition> out;
  for (std::size_t id : set.members()) {
    out.push_back(definitions[id]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reaching definitions

std::vector<Definition> collect_definitions(const Cfg& cfg) {
  std::vector<Definition> defs;
  for (std::size_t n = 2; n < cfg.size(); ++n) {
    const auto& node = cfg.nodes[n];
    for (std::size_t i = 0; i < node.instructions.size(); ++i) {
      for (const auto& var : node.instructions[i].defs) {
        defs.push_back({node.id, i, var});
      }
    }
  }
  return defs;
}

DefSets reaching_definitions(const Cfg& cfg) {
  DefSets result;
  result.definitions = collect_definitions(cfg);
  const std::size_t n_defs = result.definitions.size();
  const std::size_t n_nodes = cfg.size();

  std::map<std::string_view, std::vector<std::size_t>> defs_of_var;
  for (std::size_t d = 0; d < n_defs; ++d) {
    defs_of_var[result.definitions[d].var].push_back(d);
  }

  result.gen.assign(n_nodes, DefSet(n_defs));
  result.kill.assign(n_nodes, DefSet(n_defs));
  result.in.assign(n_nodes, DefSet(n_defs));
  result.out.assign(n_nodes, DefSet(n_defs));

  // Definitions are numbered in node order, so each node owns a contiguous
  // id range starting at `cursor`.
  std::size_t cursor = 0;
  for (std::size_t n = 2; n < n_nodes; ++n) {
    std::map<std::string_view, std::size_t> last_def;
    for (const auto& ins : cfg.nodes[n].instructions) {
      for (const auto& var : ins.defs) {
        last_def[var] = cursor++;
      }
    }
    for (const auto& [var, id] : last_def) {
      result.gen[n].set(id);
      for (std::size_t other : defs_of_var[var]) {
        if (other != id) {
          result.kill[n].set(other);
        }
      }
    }
  }

  std::vector<std::size_t> order = cfg.reverse_post_order();
  if (!cfg.nodes[Cfg::kExit].pred.empty()) {
    order.push_back(Cfg::kExit);
  }
  std::vector<std::size_t> rank(n_nodes, 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    rank[order[i]] = i;
  }

  std::set<std::size_t> worklist; // ranks
  for (std::size_t i = 0; i < order.size(); ++i) {
    worklist.insert(i);
  }
  while (!worklist.empty()) {
    std::size_t b = order[*worklist.begin()];
    worklist.erase(worklist.begin());
    ++result.iterations;

    DefSet in(n_defs);
    for (std::size_t p : cfg.nodes[b].pred) {
      in |= result.out[p];
    }
    DefSet out = in;
    out.subtract(result.kill[b]);
    out |= result.gen[b];
    result.in[b] = std::move(in);
    if (out != result.out[b]) {
      result.out[b] = std::move(out);
      for (std::size_t s : cfg.nodes[b].succ) {
        worklist.insert(rank[s]);
      }
    }
  }
  return result;
}

namespace {

std::optional<std::size_t> def_id_at(
    const Cfg& cfg, const DefSets& defs, std::size_t node, std::size_t index) {
  const std::string& block = cfg.nodes[node].id;
  for (std::size_t d = 0; d < defs.definitions.size(); ++d) {
    if (defs.definitions[d].block == block && defs.definitions[d].index == index) {
      return d;
    }
  }
  return std::nullopt;
}

} // namespace

std::vector<std::size_t> reaching_at(
    const Cfg& cfg,
    const DefSets& defs,
    std::size_t node,
    std::size_t index,
    const std::string& var) {
  std::vector<std::size_t> current;
  for (std::size_t d : defs.in[node].members()) {
    if (defs.definitions[d].var == var) {
      current.push_back(d);
    }
  }
  const auto& instructions = cfg.nodes[node].instructions;
  for (std::size_t i = 0; i < index && i < instructions.size(); ++i) {
    const auto& written = instructions[i].defs;
    if (std::find(written.begin(), written.end(), var) != written.end()) {
      current = {*def_id_at(cfg, defs, node, i)};
    }
  }
  return current;
}

// ---------------------------------------------------------------------------
// Intent extraction

std::string_view to_string(CallKind kind) {
  switch (kind) {
    case CallKind::start_activity:
      return "start_activity";
    case CallKind::start_service:
      return "start_service";
    case CallKind::send_broadcast:
      return "send_broadcast";
  }
  return "start_activity";
}

namespace {

struct Site {
  std::size_t node;
  std::size_t index;
};

class ChainResolver {
 public:
  ChainResolver(const Cfg& cfg, const DefSets& defs) : cfg_(cfg), defs_(defs) {
    for (std::size_t n = 2; n < cfg.size(); ++n) {
      node_of_block_.emplace(cfg.nodes[n].id, n);
    }
  }

  // The unique definition of `var` reaching `site`, if there is exactly one.
  std::optional<std::size_t> unique_def(Site site, const std::string& var) const {
    auto ids = reaching_at(cfg_, defs_, site.node, site.index, var);
    if (ids.size() != 1) {
      return std::nullopt;
    }
    return ids.front();
  }

  Site site_of(std::size_t def) const {
    const auto& d = defs_.definitions[def];
    return {node_of_block_.at(d.block), d.index};
  }

  const Instruction& instruction_of(std::size_t def) const {
    Site s = site_of(def);
    return cfg_.nodes[s.node].instructions[s.index];
  }

  const Definition& definition(std::size_t def) const {
    return defs_.definitions[def];
  }

 private:
  const Cfg& cfg_;
  const DefSets& defs_;
  std::map<std::string, std::size_t> node_of_block_;
};

CallKind call_kind_of(OpCode op) {
  switch (op) {
    case OpCode::start_service:
      return CallKind::start_service;
    case OpCode::send_broadcast:
      return CallKind::send_broadcast;
    default:
      return CallKind::start_activity;
  }
}

IntentTarget resolve_target(
    const ChainResolver& chain,
    const ComponentDecl& component,
    std::size_t intent_def,
    std::vector<Definition>& witness) {
  const Instruction& ctor = chain.instruction_of(intent_def);
  Site at = chain.site_of(intent_def);
  witness.push_back(chain.definition(intent_def));

  if (ctor.op == OpCode::new_intent_explicit) {
    auto caller = chain.unique_def(at, ctor.uses[0]);
    auto target = chain.unique_def(at, ctor.uses[1]);
    if (!caller || !target) {
      return {};
    }
    const Instruction& caller_ins = chain.instruction_of(*caller);
    if (caller_ins.op != OpCode::assign_this && caller_ins.op != OpCode::assign_class) {
      return {};
    }
    const Instruction& target_ins = chain.instruction_of(*target);
    witness.push_back(chain.definition(*caller));
    witness.push_back(chain.definition(*target));
    if (target_ins.op == OpCode::assign_class) {
      return {IntentTarget::Kind::explicit_class, target_ins.operand};
    }
    if (target_ins.op == OpCode::assign_this) {
      return {IntentTarget::Kind::explicit_class, component.name};
    }
    return {};
  }
  if (ctor.op == OpCode::new_intent_action) {
    auto action = chain.unique_def(at, ctor.uses[0]);
    if (!action) {
      return {};
    }
    const Instruction& action_ins = chain.instruction_of(*action);
    if (action_ins.op != OpCode::assign_string) {
      return {};
    }
    witness.push_back(chain.definition(*action));
    return {IntentTarget::Kind::implicit_action, action_ins.operand};
  }
  return {};
}

} // namespace

std::vector<IntentCall> extract_intent_calls(
    const ComponentDecl& component,
    const MethodIR& /*method*/,
    const Cfg& cfg,
    const DefSets& defs) {
  ChainResolver chain(cfg, defs);
  std::vector<IntentCall> calls;
  for (std::size_t n = 2; n < cfg.size(); ++n) {
    const auto& node = cfg.nodes[n];
    for (std::size_t i = 0; i < node.instructions.size(); ++i) {
      const Instruction& ins = node.instructions[i];
      if (!ins.is_start_call()) {
        continue;
      }
      IntentCall call;
      call.caller_component = component.name;
      call.call_kind = call_kind_of(ins.op);
      call.site_block = node.id;
      call.site_index = i;
      if (auto intent_def = chain.unique_def({n, i}, ins.uses[0])) {
        call.target = resolve_target(chain, component, *intent_def, call.witness);
      }
      if (call.target.kind == IntentTarget::Kind::unresolved) {
        call.witness.clear();
      }
      calls.push_back(std::move(call));
    }
  }
  return calls;
}

std::vector<IntentCall> analyze_package(const AppPackage& pkg) {
  std::vector<IntentCall> calls;
  for (const auto& component : pkg.components) {
    auto it = pkg.methods.find(component.name);
    if (it == pkg.methods.end()) {
      continue;
    }
    for (const auto& method : it->second) {
      Cfg cfg = build_cfg(method);
      DefSets defs = reaching_definitions(cfg);
      auto found = extract_intent_calls(component, method, cfg, defs);
      calls.insert(calls.end(), found.begin(), found.end());
    }
  }
  return calls;
}

// ---------------------------------------------------------------------------
// Debug dump

nlohmann::json dataflow_to_json(const Cfg& cfg, const DefSets& defs) {
  using nlohmann::json;
  auto ids = [](const DefSet& set) {
    json arr = json::array();
    for (std::size_t id : set.members()) {
      arr.push_back(id);
    }
    return arr;
  };
  json nodes = json::array();
  for (std::size_t n = 0; n < cfg.size(); ++n) {
    const auto& node = cfg.nodes[n];
    json succ = json::array();
    json pred = json::array();
    for (std::size_t s : node.succ) {
      succ.push_back(cfg.nodes[s].id);
    }
    for (std::size_t p : node.pred) {
      pred.push_back(cfg.nodes[p].id);
    }
    json entry = {
        {"id", node.id},
        {"instructions", node.instructions.size()},
        {"succ", succ},
        {"pred", pred},
    };
    if (n < defs.gen.size()) {
      entry["gen"] = ids(defs.gen[n]);
      entry["kill"] = ids(defs.kill[n]);
      entry["in"] = ids(defs.in[n]);
      entry["out"] = ids(defs.out[n]);
    }
    nodes.push_back(std::move(entry));
  }
  json definitions = json::array();
  for (std::size_t d = 0; d < defs.definitions.size(); ++d) {
    const auto& def = defs.definitions[d];
    definitions.push_back({{"id", d}, {"block", def.block}, {"index", def.index}, {"var", def.var}});
  }
  return {
      {"nodes", nodes},
      {"definitions", definitions},
      {"dropped_blocks", cfg.dropped_blocks},
      {"iterations", defs.iterations},
  };
}

} // namespace monet
