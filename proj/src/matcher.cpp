#include "monet/matcher.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <tuple>

#include "monet/errors.hpp"

namespace monet {

using nlohmann::json;

namespace {

using Codes = std::vector<int>; // sorted, unique

std::size_t common(const Codes& a, const Codes& b) {
  std::size_t n = 0;
  for (auto i = a.begin(), j = b.begin(); i != a.end() && j != b.end();) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

int kind_key(const GraphNode& n) {
  return n.kind ? static_cast<int>(*n.kind) : -1;
}

std::map<int, std::size_t> code_histogram(const BehaviorGraph& g) {
  std::map<int, std::size_t> h;
  for (const auto& e : g.edges()) {
    ++h[e.code];
  }
  return h;
}

std::size_t code_cap(const BehaviorGraph& a, const BehaviorGraph& b) {
  auto ha = code_histogram(a);
  auto hb = code_histogram(b);
  std::size_t cap = 0;
  for (const auto& [code, n] : ha) {
    if (auto it = hb.find(code); it != hb.end()) {
      cap += std::min(n, it->second);
    }
  }
  return cap;
}

/// Non-app nodes matched by label plus the per-kind app-component minimum.
std::size_t max_vertex_matches(const BehaviorGraph& a, const BehaviorGraph& b) {
  std::size_t mv = 0;
  std::map<int, std::pair<std::size_t, std::size_t>> kinds;
  for (const auto& n : a.nodes()) {
    if (n.type == NodeType::app) {
      ++kinds[kind_key(n)].first;
    } else if (b.find(n.type, n.label)) {
      ++mv;
    }
  }
  for (const auto& n : b.nodes()) {
    if (n.type == NodeType::app) {
      ++kinds[kind_key(n)].second;
    }
  }
  for (const auto& [k, counts] : kinds) {
    mv += std::min(counts.first, counts.second);
  }
  return mv;
}

SimilarityScore make_score(
    const BehaviorGraph& a, const BehaviorGraph& b, std::size_t mv, std::size_t me, bool exact) {
  SimilarityScore s;
  s.matched_vertices = mv;
  s.matched_edges = me;
  s.exact = exact;
  s.max_ops = a.nodes().size() + b.nodes().size() + a.edges().size() + b.edges().size();
  s.edit_ops = s.max_ops - 2 * (mv + me);
  s.value = s.max_ops == 0
      ? 1.0
      : 1.0 - static_cast<double>(s.edit_ops) / static_cast<double>(s.max_ops);
  return s;
}

/// Maximum matched-edge search over injective kind-preserving maps from the
/// app components of L (the side with fewer of them) into those of R.
class EdgeMatcher {
 public:
  EdgeMatcher(const BehaviorGraph& l, const BehaviorGraph& r) : l_(l), r_(r) {
    index_apps(l_, l_apps_, l_pos_);
    index_apps(r_, r_apps_, r_pos_);
    nl_ = l_apps_.size();
    nr_ = r_apps_.size();
    ll_.assign(nl_, std::vector<Codes>(nl_));
    rr_.assign(nr_, std::vector<Codes>(nr_));
    fill_app_codes(r_, r_pos_, rr_);
    fill_app_codes(l_, l_pos_, ll_);

    // Non-app nodes pair up by label; edges between two of them are fixed.
    std::vector<std::optional<std::size_t>> fixed(l_.nodes().size());
    for (std::size_t id = 0; id < l_.nodes().size(); ++id) {
      const auto& n = l_.nodes()[id];
      if (n.type != NodeType::app) {
        fixed[id] = r_.find(n.type, n.label);
      }
    }
    std::map<std::pair<std::size_t, std::size_t>, Codes> r_codes;
    for (const auto& e : r_.edges()) {
      r_codes[{e.src, e.dst}].push_back(e.code);
    }
    for (auto& [k, c] : r_codes) {
      std::sort(c.begin(), c.end());
    }
    auto r_has = [&](std::size_t s, std::size_t d, int code) {
      auto it = r_codes.find({s, d});
      return it != r_codes.end() && std::binary_search(it->second.begin(), it->second.end(), code);
    };

    // S[u][v]: edges of u to fixed nodes and self-loops matched by u -> v.
    static_.assign(nl_, std::vector<long>(nr_, 0));
    compatible_.assign(nl_, {});
    for (std::size_t u = 0; u < nl_; ++u) {
      int ku = kind_key(l_.node(l_apps_[u]));
      for (std::size_t v = 0; v < nr_; ++v) {
        if (kind_key(r_.node(r_apps_[v])) == ku) {
          compatible_[u].push_back(v);
        }
      }
    }
    for (const auto& e : l_.edges()) {
      int su = l_pos_[e.src];
      int du = l_pos_[e.dst];
      if (su < 0 && du < 0) {
        if (fixed[e.src] && fixed[e.dst] && r_has(*fixed[e.src], *fixed[e.dst], e.code)) {
          ++fixed_edges_;
        }
        continue;
      }
      ++app_edges_;
      if (su >= 0 && du >= 0) {
        if (su == du) {
          for (std::size_t v : compatible_[su]) {
            if (r_has(r_apps_[v], r_apps_[v], e.code)) {
              ++static_[su][v];
            }
          }
        }
        continue;
      }
      int u = su >= 0 ? su : du;
      std::size_t other = su >= 0 ? e.dst : e.src;
      if (!fixed[other]) {
        continue;
      }
      for (std::size_t v : compatible_[u]) {
        bool hit = su >= 0 ? r_has(r_apps_[v], *fixed[other], e.code)
                           : r_has(*fixed[other], r_apps_[v], e.code);
        if (hit) {
          ++static_[u][v];
        }
      }
    }
    std::size_t r_app_edges = 0;
    for (const auto& e : r_.edges()) {
      if (r_pos_[e.src] >= 0 || r_pos_[e.dst] >= 0) {
        ++r_app_edges;
      }
    }
    cap_ = std::min({app_edges_, r_app_edges, code_cap(l_, r_) - fixed_edges_});

    std::map<int, long> slack;
    for (std::size_t u = 0; u < nl_; ++u) {
      ++slack[kind_key(l_.node(l_apps_[u]))];
    }
    for (std::size_t v = 0; v < nr_; ++v) {
      --slack[kind_key(r_.node(r_apps_[v]))];
    }
    for (auto& [k, s] : slack) {
      unmapped_allowance_[k] = std::max(0L, s);
    }
    order_nodes();
  }

  std::size_t fixed_edges() const { return fixed_edges_; }

  std::size_t solve_exact() {
    assign_.assign(nl_, kUnmapped);
    used_.assign(nr_, false);
    unmapped_used_.clear();
    dyn_.assign(nl_, std::vector<long>(nr_, 0));
    best_ = 0;
    search(0, 0);
    return static_cast<std::size_t>(best_);
  }

  std::size_t solve_beam() {
    struct State {
      std::vector<long> assign; // by order position; R canonical rank or kUnmapped
      std::vector<bool> used;
      std::map<int, long> unmapped;
      long me = 0;
    };
    // R candidates in canonical rank: degree descending, then label.
    std::vector<std::size_t> rank(nr_);
    std::vector<std::size_t> by_rank(nr_);
    for (std::size_t v = 0; v < nr_; ++v) {
      by_rank[v] = v;
    }
    std::vector<std::size_t> degree(nr_, 0);
    for (const auto& e : r_.edges()) {
      if (r_pos_[e.src] >= 0) {
        ++degree[static_cast<std::size_t>(r_pos_[e.src])];
      }
      if (r_pos_[e.dst] >= 0) {
        ++degree[static_cast<std::size_t>(r_pos_[e.dst])];
      }
    }
    std::sort(by_rank.begin(), by_rank.end(), [&](std::size_t a, std::size_t b) {
      if (degree[a] != degree[b]) {
        return degree[a] > degree[b];
      }
      return r_.node(r_apps_[a]).label < r_.node(r_apps_[b]).label;
    });
    for (std::size_t i = 0; i < nr_; ++i) {
      rank[by_rank[i]] = i;
    }

    std::vector<State> beam(1);
    beam[0].used.assign(nr_, false);
    for (std::size_t pos = 0; pos < nl_; ++pos) {
      std::size_t u = order_[pos];
      int ku = kind_key(l_.node(l_apps_[u]));
      std::vector<State> next;
      for (const auto& s : beam) {
        for (std::size_t v : compatible_[u]) {
          if (s.used[v]) {
            continue;
          }
          State c = s;
          long gain = static_[u][v];
          for (std::size_t p = 0; p < pos; ++p) {
            if (s.assign[p] == kUnmapped) {
              continue;
            }
            std::size_t w = order_[p];
            std::size_t x = by_rank[static_cast<std::size_t>(s.assign[p])];
            gain += static_cast<long>(common(ll_[u][w], rr_[v][x]) + common(ll_[w][u], rr_[x][v]));
          }
          c.assign.push_back(static_cast<long>(rank[v]));
          c.used[v] = true;
          c.me += gain;
          next.push_back(std::move(c));
        }
        if (s.unmapped.count(ku) ? s.unmapped.at(ku) < unmapped_allowance_[ku]
                                 : unmapped_allowance_[ku] > 0) {
          State c = s;
          c.assign.push_back(kUnmapped);
          ++c.unmapped[ku];
          next.push_back(std::move(c));
        }
      }
      std::sort(next.begin(), next.end(), [](const State& a, const State& b) {
        if (a.me != b.me) {
          return a.me > b.me;
        }
        return a.assign < b.assign;
      });
      if (next.size() > kBeamWidth) {
        next.resize(kBeamWidth);
      }
      beam = std::move(next);
    }
    long best = 0;
    for (const auto& s : beam) {
      best = std::max(best, s.me);
    }
    return static_cast<std::size_t>(best);
  }

 private:
  static constexpr long kUnmapped = std::numeric_limits<long>::max();

  static void index_apps(
      const BehaviorGraph& g, std::vector<std::size_t>& apps, std::vector<int>& pos) {
    pos.assign(g.nodes().size(), -1);
    for (std::size_t id = 0; id < g.nodes().size(); ++id) {
      if (g.nodes()[id].type == NodeType::app) {
        pos[id] = static_cast<int>(apps.size());
        apps.push_back(id);
      }
    }
  }

  static void fill_app_codes(
      const BehaviorGraph& g, const std::vector<int>& pos, std::vector<std::vector<Codes>>& m) {
    for (const auto& e : g.edges()) {
      if (pos[e.src] >= 0 && pos[e.dst] >= 0 && e.src != e.dst) {
        m[static_cast<std::size_t>(pos[e.src])][static_cast<std::size_t>(pos[e.dst])].push_back(
            e.code);
      }
    }
    for (auto& row : m) {
      for (auto& c : row) {
        std::sort(c.begin(), c.end());
      }
    }
  }

  /// Connectivity-first order: repeatedly take the node with the most edges
  /// into the ordered prefix, then the highest degree, then the smallest label.
  void order_nodes() {
    std::vector<std::size_t> degree(nl_, 0);
    for (std::size_t u = 0; u < nl_; ++u) {
      for (std::size_t w = 0; w < nl_; ++w) {
        degree[u] += ll_[u][w].size() + ll_[w][u].size();
      }
      for (long s : static_[u]) {
        degree[u] += static_cast<std::size_t>(s > 0);
      }
    }
    std::vector<bool> placed(nl_, false);
    std::vector<std::size_t> links(nl_, 0);
    for (std::size_t step = 0; step < nl_; ++step) {
      std::size_t pick = nl_;
      for (std::size_t u = 0; u < nl_; ++u) {
        if (placed[u]) {
          continue;
        }
        if (pick == nl_ || links[u] > links[pick] ||
            (links[u] == links[pick] &&
             (degree[u] > degree[pick] ||
              (degree[u] == degree[pick] &&
               l_.node(l_apps_[u]).label < l_.node(l_apps_[pick]).label)))) {
          pick = u;
        }
      }
      placed[pick] = true;
      order_.push_back(pick);
      for (std::size_t u = 0; u < nl_; ++u) {
        links[u] += ll_[u][pick].size() + ll_[pick][u].size();
      }
    }
    // later_edges_[p]: app-app edges (no self-loops) with both ends at order >= p.
    std::vector<std::size_t> at(nl_);
    for (std::size_t p = 0; p < nl_; ++p) {
      at[order_[p]] = p;
    }
    later_edges_.assign(nl_ + 1, 0);
    for (std::size_t u = 0; u < nl_; ++u) {
      for (std::size_t w = 0; w < nl_; ++w) {
        if (!ll_[u][w].empty()) {
          later_edges_[std::min(at[u], at[w])] += ll_[u][w].size();
        }
      }
    }
    for (std::size_t p = nl_; p-- > 0;) {
      later_edges_[p] += later_edges_[p + 1];
    }
  }

  long pair_gain(std::size_t u, std::size_t v, std::size_t w, std::size_t x) const {
    return static_cast<long>(common(ll_[u][w], rr_[v][x]) + common(ll_[w][u], rr_[x][v]));
  }

  void apply(std::size_t pos, std::size_t w, std::size_t x, long sign) {
    for (std::size_t p = pos + 1; p < nl_; ++p) {
      std::size_t u = order_[p];
      if (ll_[u][w].empty() && ll_[w][u].empty()) {
        continue;
      }
      for (std::size_t v : compatible_[u]) {
        dyn_[u][v] += sign * pair_gain(u, v, w, x);
      }
    }
  }

  bool may_leave_unmapped(int kind) {
    auto it = unmapped_allowance_.find(kind);
    return it != unmapped_allowance_.end() && unmapped_used_[kind] < it->second;
  }

  void search(std::size_t pos, long me) {
    if (pos == nl_) {
      best_ = std::max(best_, me);
      return;
    }
    if (best_ >= static_cast<long>(cap_)) {
      return;
    }
    long bound = me + static_cast<long>(later_edges_[pos]);
    for (std::size_t p = pos; p < nl_; ++p) {
      std::size_t u = order_[p];
      long m = 0;
      for (std::size_t v : compatible_[u]) {
        if (!used_[v]) {
          m = std::max(m, static_[u][v] + dyn_[u][v]);
        }
      }
      bound += m;
    }
    if (std::min(bound, static_cast<long>(cap_)) <= best_) {
      return;
    }

    std::size_t u = order_[pos];
    std::vector<std::pair<long, std::size_t>> options;
    for (std::size_t v : compatible_[u]) {
      if (!used_[v]) {
        options.emplace_back(static_[u][v] + dyn_[u][v], v);
      }
    }
    std::sort(options.begin(), options.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (const auto& [gain, v] : options) {
      used_[v] = true;
      assign_[u] = static_cast<long>(v);
      apply(pos, u, v, +1);
      search(pos + 1, me + gain);
      apply(pos, u, v, -1);
      assign_[u] = kUnmapped;
      used_[v] = false;
      if (best_ >= static_cast<long>(cap_)) {
        return;
      }
    }
    int ku = kind_key(l_.node(l_apps_[u]));
    if (may_leave_unmapped(ku)) {
      ++unmapped_used_[ku];
      search(pos + 1, me);
      --unmapped_used_[ku];
    }
  }

  const BehaviorGraph& l_;
  const BehaviorGraph& r_;
  std::vector<std::size_t> l_apps_, r_apps_;
  std::vector<int> l_pos_, r_pos_;
  std::size_t nl_ = 0, nr_ = 0;
  std::vector<std::vector<Codes>> ll_, rr_;
  std::vector<std::vector<long>> static_;
  std::vector<std::vector<std::size_t>> compatible_;
  std::map<int, long> unmapped_allowance_;
  std::size_t fixed_edges_ = 0;
  std::size_t app_edges_ = 0;
  std::size_t cap_ = 0;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> later_edges_;

  std::vector<long> assign_;
  std::vector<bool> used_;
  std::map<int, long> unmapped_used_;
  std::vector<std::vector<long>> dyn_;
  long best_ = 0;
};

void require_decoupled(const BehaviorGraph& g) {
  if (std::size_t clusters = g.app_cluster_count(); clusters > 1) {
    throw NotDecoupled(clusters);
  }
}

} // namespace

SimilarityScore similarity(const BehaviorGraph& g1, const BehaviorGraph& g2) {
  require_decoupled(g1);
  require_decoupled(g2);
  std::size_t a1 = g1.app_component_count();
  std::size_t a2 = g2.app_component_count();
  bool exact = std::min(a1, a2) <= kExactCutoff;
  // The heuristic is orientation-sensitive, so fix a canonical one.
  bool swap = a2 < a1 || (a1 == a2 && !exact && dump_graph(g2) < dump_graph(g1));
  const BehaviorGraph& l = swap ? g2 : g1;
  const BehaviorGraph& r = swap ? g1 : g2;

  EdgeMatcher m(l, r);
  std::size_t me = m.fixed_edges() + (exact ? m.solve_exact() : m.solve_beam());
  return make_score(g1, g2, max_vertex_matches(g1, g2), me, exact);
}

double similarity_upper_bound(const BehaviorGraph& g1, const BehaviorGraph& g2) {
  std::size_t total = g1.nodes().size() + g2.nodes().size() + g1.edges().size() + g2.edges().size();
  if (total == 0) {
    return 1.0;
  }
  std::size_t best = max_vertex_matches(g1, g2) + code_cap(g1, g2);
  return 2.0 * static_cast<double>(best) / static_cast<double>(total);
}

bool better_score(const SimilarityScore& a, const SimilarityScore& b) {
  // value = (max_ops - edit_ops) / max_ops, or 1 when max_ops == 0.
  auto num = [](const SimilarityScore& s) { return s.max_ops == 0 ? 1 : s.max_ops - s.edit_ops; };
  auto den = [](const SimilarityScore& s) { return s.max_ops == 0 ? 1 : s.max_ops; };
  return static_cast<unsigned __int128>(num(a)) * den(b) >
      static_cast<unsigned __int128>(num(b)) * den(a);
}

std::optional<RbgMatch> best_rbg_match(
    const std::vector<BehaviorGraph>& suspects, const SignatureStore& store, std::size_t alpha) {
  std::optional<RbgMatch> best;
  auto wins = [&](const RbgMatch& c) {
    if (!best) {
      return true;
    }
    if (better_score(c.score, best->score)) {
      return true;
    }
    if (better_score(best->score, c.score)) {
      return false;
    }
    return std::tie(c.family_id, c.ordinal, c.suspect) <
        std::tie(best->family_id, best->ordinal, best->suspect);
  };
  for (std::size_t si = 0; si < suspects.size(); ++si) {
    const BehaviorGraph& suspect = suspects[si];
    for (const GraphRef& ref : store.range_candidates(suspect.app_component_count(), alpha)) {
      const BehaviorGraph& stored = store.graph(ref);
      if (best && similarity_upper_bound(suspect, stored) < best->score.value - 1e-12) {
        continue;
      }
      RbgMatch c{ref.family_id, ref.ordinal, si, similarity(suspect, stored)};
      if (wins(c)) {
        best = std::move(c);
      }
    }
  }
  return best;
}

std::optional<RbgMatch> match_rbg(
    const std::vector<BehaviorGraph>& suspects,
    const SignatureStore& store,
    double threshold,
    std::size_t alpha) {
  auto best = best_rbg_match(suspects, store, alpha);
  if (best && best->score.value >= threshold - 1e-12) {
    return best;
  }
  return std::nullopt;
}

std::vector<std::string> match_sss(const Sss& suspect, const SssBlacklist& blacklist) {
  std::vector<std::string> hits;
  std::set<std::string> endpoints;
  for (const auto& e : suspect.endpoints) {
    endpoints.insert(normalize_endpoint(e));
  }
  for (const auto& e : endpoints) {
    if (blacklist.endpoints.count(e)) {
      hits.push_back(e);
    }
  }
  for (const auto& x : suspect.executables) {
    if (blacklist.executables.count(x)) {
      hits.push_back(x);
    }
  }
  return hits;
}

// ---------------------------------------------------------------------------
// Signatures and verdicts

json to_json(const RuntimeBehaviorSignature& sig) {
  return {{"app", sig.app}, {"rbg", to_json(sig.rbg)}, {"sss", to_json(sig.sss)}};
}

RuntimeBehaviorSignature signature_from_json(const json& j) {
  if (!j.is_object() || !j.contains("rbg")) {
    throw CorruptGraph("signature requires an 'rbg' object");
  }
  RuntimeBehaviorSignature sig;
  if (auto it = j.find("app"); it != j.end()) {
    if (!it->is_string()) {
      throw CorruptGraph("signature 'app' must be a string");
    }
    sig.app = *it;
  }
  sig.rbg = graph_from_json(j["rbg"]);
  if (auto it = j.find("sss"); it != j.end()) {
    try {
      sig.sss = sss_from_json(*it);
    } catch (const json::exception& e) {
      throw CorruptGraph(std::string("malformed sss: ") + e.what());
    }
  }
  return sig;
}

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::sss_only:
      return "sss_only";
    case Mode::rbg_only:
      return "rbg_only";
    case Mode::combined:
      return "combined";
  }
  return "combined";
}

std::optional<Mode> mode_from_string(std::string_view text) {
  for (Mode m : {Mode::sss_only, Mode::rbg_only, Mode::combined}) {
    if (to_string(m) == text) {
      return m;
    }
  }
  return std::nullopt;
}

std::string_view to_string(Decision decision) {
  return decision == Decision::malicious ? "malicious" : "clean";
}

json to_json(const Verdict& verdict) {
  json j = {{"decision", to_string(verdict.decision)}, {"mode", to_string(verdict.mode)}};
  if (verdict.family) {
    j["family"] = *verdict.family;
  }
  if (verdict.score) {
    j["score"] = verdict.score->value;
    j["exact"] = verdict.score->exact;
  }
  if (verdict.matched_blacklist) {
    j["matched_blacklist"] = *verdict.matched_blacklist;
  }
  return j;
}

Verdict decide(
    const RuntimeBehaviorSignature& signature,
    const SignatureStore& store,
    double threshold,
    Mode mode,
    std::size_t alpha) {
  Verdict v;
  v.mode = mode;
  bool malicious = false;
  if (mode != Mode::rbg_only) {
    auto hits = match_sss(signature.sss, store.blacklist());
    if (!hits.empty()) {
      malicious = true;
      v.matched_blacklist = std::move(hits);
    }
  }
  if (mode != Mode::sss_only) {
    auto best = best_rbg_match(decouple(signature.rbg), store, alpha);
    if (best) {
      v.score = best->score;
      if (best->score.value >= threshold - 1e-12) {
        malicious = true;
        v.family = best->family_id;
      }
    }
  }
  v.decision = malicious ? Decision::malicious : Decision::clean;
  return v;
}

} // namespace monet
