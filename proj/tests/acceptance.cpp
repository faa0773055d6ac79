// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>

#include "httplib.h"

#include "monet/corpus.hpp"
#include "monet/errors.hpp"
#include "monet/matcher.hpp"
#include "monet/service.hpp"
#include "monet/sig_store.hpp"
#include "oracles.hpp"

using namespace monet;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("monet-acceptance-" + name);
  fs::remove_all(p);
  return p;
}

/// Frontend on an ephemeral port with its accept loop on a background thread.
class RunningServer {
 public:
  explicit RunningServer(DetectionService& service) : frontend_(service) {
    port_ = frontend_.bind("127.0.0.1", 0);
    thread_ = std::thread([this] { frontend_.listen(); });
  }
  ~RunningServer() {
    frontend_.stop();
    thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60, 0);
    return c;
  }

 private:
  HttpFrontend frontend_;
  int port_ = 0;
  std::thread thread_;
};

/// Runtime signatures of transformed variants and benign apps.
std::vector<MatchRequest> corpus_requests(std::size_t families, std::size_t benign) {
  std::vector<MatchRequest> out;
  for (std::size_t f = 0; f < families; ++f) {
    FamilyTemplate t = generate_family(500 + f);
    for (int op = 0; op <= kTransformCount; ++op) {
      try {
        MatchRequest r;
        r.signature = runtime_signature(apply_transform(t, op, 77 + op));
        out.push_back(std::move(r));
      } catch (const InapplicableTransform&) {
      }
    }
  }
  for (std::size_t b = 0; b < benign; ++b) {
    FamilyTemplate t = generate_benign(9000 + b);
    MatchRequest r;
    r.signature = runtime_signature({t.base_pkg, t.base_trace});
    out.push_back(std::move(r));
  }
  return out;
}

SignatureStore family_store(std::size_t families) {
  SignatureStore store;
  for (std::size_t f = 0; f < families; ++f) {
    FamilyTemplate t = generate_family(500 + f);
    store.insert({t.family_id, {malicious_signature_graph(t)}, ""});
  }
  store.add_blacklist({{"c2.acceptance.test:443"}, {}});
  return store;
}

// ---------------------------------------------------------------------------

Outcome similarity_fixture() {
  const std::string dir = MONET_FIXTURES;
  BehaviorGraph g1 = parse_graph(slurp(dir + "/retarget_g1.json"));
  BehaviorGraph g2 = parse_graph(slurp(dir + "/retarget_g2.json"));
  bool shape = g1.nodes().size() == 6 && g1.edges().size() == 6 && g2.nodes().size() == 6 &&
               g2.edges().size() == 6;
  double worst_ms = 0.0;
  SimilarityScore s;
  for (int i = 0; i < 10; ++i) {
    auto start = Clock::now();
    s = similarity(g1, g2);
    worst_ms = std::max(worst_ms, ms_since(start));
  }
  char printed[32];
  std::snprintf(printed, sizeof printed, "%.4f", s.value);
  bool exact = s.edit_ops == 2 && s.max_ops == 24 && s.exact && std::string(printed) == "0.9167";
  Outcome o;
  o.pass = shape && exact && worst_ms < 1.0;
  o.detail = "ops " + std::to_string(s.edit_ops) + "/" + std::to_string(s.max_ops) + " = " +
             printed + ", slowest of 10 runs " + std::to_string(worst_ms) + " ms";
  return o;
}

Outcome ged_oracle() {
  oracle::Rng rng(0x5eed);
  auto start = Clock::now();
  std::size_t mismatches = 0;
  const std::size_t pairs = 250;
  for (std::size_t i = 0; i < pairs; ++i) {
    BehaviorGraph a = oracle::random_decoupled(rng, 6, 8, 4);
    BehaviorGraph b = oracle::random_decoupled(rng, 6, 8, 4);
    SimilarityScore s = similarity(a, b);
    oracle::BruteScore want = oracle::brute_similarity(a, b);
    if (!s.exact || s.edit_ops != want.edit_ops || s.max_ops != want.max_ops) {
      ++mismatches;
    }
  }
  double secs = ms_since(start) / 1000.0;
  return {mismatches == 0 && secs < 60.0,
          std::to_string(pairs) + " pairs, " + std::to_string(mismatches) + " mismatches, " +
              std::to_string(secs) + " s"};
}

Outcome reaching_oracle() {
  oracle::Rng rng(0xcf6);
  std::size_t mismatches = 0;
  const std::size_t cfgs = 600;
  std::size_t largest = 0;
  for (std::size_t i = 0; i < cfgs; ++i) {
    MethodIR m = oracle::random_method(rng, 20, 6);
    largest = std::max(largest, m.blocks.size());
    Cfg cfg = build_cfg(m);
    DefSets d = reaching_definitions(cfg);
    auto expected = oracle::chaotic_reaching(m, rng);
    for (std::size_t n = 1; n < cfg.size(); ++n) {
      auto in = d.named(d.in[n]);
      auto out = d.named(d.out[n]);
      const auto& want = expected[cfg.nodes[n].id];
      if (std::set<Definition>(in.begin(), in.end()) != want.in ||
          std::set<Definition>(out.begin(), out.end()) != want.out) {
        ++mismatches;
        break;
      }
    }
  }
  return {mismatches == 0, std::to_string(cfgs) + " CFGs (up to " + std::to_string(largest) +
                               " blocks), " + std::to_string(mismatches) + " mismatches"};
}

Outcome decoupling() {
  using EdgeKey = std::tuple<std::string, std::string, int>;
  auto labeled = [](const BehaviorGraph& g) {
    std::multiset<EdgeKey> out;
    for (const auto& e : g.edges()) {
      out.insert({g.node(e.src).label, g.node(e.dst).label, e.code});
    }
    return out;
  };
  oracle::Rng rng(0xdec);
  std::size_t failures = 0;
  const std::size_t cases = 300;
  for (std::size_t i = 0; i < cases; ++i) {
    BehaviorGraph g = oracle::random_rbg(rng);
    auto parts = decouple(g);
    std::multiset<std::string> apps, want_apps;
    std::multiset<EdgeKey> edges;
    bool ok = parts.size() == g.app_cluster_count();
    for (const auto& p : parts) {
      ok = ok && p.app_cluster_count() == 1;
      for (const auto& n : p.nodes()) {
        if (n.type == NodeType::app) {
          apps.insert(n.label);
        }
      }
      auto pe = labeled(p);
      edges.insert(pe.begin(), pe.end());
      auto again = decouple(p);
      ok = ok && again.size() == 1 && again[0] == p;
    }
    for (const auto& n : g.nodes()) {
      if (n.type == NodeType::app) {
        want_apps.insert(n.label);
      }
    }
    ok = ok && apps == want_apps && edges == labeled(g);
    failures += !ok;
  }

  BehaviorGraph repackaged = parse_graph(slurp(std::string(MONET_FIXTURES) + "/repackaged_rbg.json"));
  auto parts = decouple(repackaged);
  bool fixture_ok = parts.size() == 2;
  if (fixture_ok) {
    for (const auto& p : parts) {
      fixture_ok = fixture_ok && p.find(NodeType::system, "PackageManager").has_value();
    }
    fixture_ok = fixture_ok && parts[0].find(NodeType::system, "DevicePolicyManager") &&
                 parts[0].find(NodeType::system, "PhoneSubInfo") &&
                 !parts[1].find(NodeType::system, "DevicePolicyManager") &&
                 parts[1].find(NodeType::action, "android.intent.action.VIEW");
  }
  return {failures == 0 && fixture_ok,
          std::to_string(cases) + " random RBGs, " + std::to_string(failures) +
              " violations; fixture split into " + std::to_string(parts.size()) + " graphs"};
}

Outcome transformation_resilience() {
  EvalConfig cfg;
  cfg.families = 10;
  cfg.benign = 500;
  cfg.threshold = 0.8;
  cfg.modes = {Mode::rbg_only};
  auto start = Clock::now();
  EvalReport r = run_eval(cfg);
  double secs = ms_since(start) / 1000.0;

  bool ok = true;
  std::ostringstream detail;
  std::size_t hard_samples = 0, hard_detected = 0;
  for (int op = 1; op <= kTransformCount; ++op) {
    const TransformRow* row = r.row(op);
    if (!row || row->samples != cfg.families) {
      ok = false;
      detail << "op " << op << " missing samples; ";
      continue;
    }
    if (semantics_preserving(op)) {
      if (row->detected[0] != row->samples || row->exact_one != row->samples) {
        ok = false;
        detail << "op " << op << " " << row->detected[0] << "/" << row->samples
               << " exact=" << row->exact_one << "; ";
      }
    } else {
      hard_samples += row->samples;
      hard_detected += row->detected[0];
    }
  }
  double hard_rate = hard_samples ? static_cast<double>(hard_detected) / hard_samples : 0.0;
  const Counts& c = r.modes[0].counts;
  ok = ok && hard_samples > 0 && hard_rate >= 0.95 && c.tn + c.fp == 500 && c.fp == 0 &&
       secs < 600.0;
  detail << "layout ops exact; other ops " << hard_detected << "/" << hard_samples
         << ", benign FP " << c.fp << "/" << (c.tn + c.fp) << ", " << secs << " s";
  return {ok, detail.str()};
}

Outcome index_correctness() {
  oracle::Rng rng(0x1d);
  SignatureStore store;
  std::vector<std::pair<std::size_t, GraphRef>> linear;
  bool audits = true;
  for (std::size_t i = 0; i < 10000; ++i) {
    std::size_t apps = 1 + oracle::below(rng, 40);
    BehaviorGraph g(Origin::runtime);
    std::size_t prev = g.add_app("c0", ComponentKind::service);
    g.add_edge(prev, g.add_system("S" + std::to_string(i)), 2);
    for (std::size_t k = 1; k < apps; ++k) {
      std::size_t next = g.add_app("c" + std::to_string(k), ComponentKind::activity);
      g.add_edge(prev, next, 3);
      prev = next;
    }
    std::string fam = "fam" + std::to_string(oracle::below(rng, 200));
    std::size_t ordinal = store.families().count(fam) ? store.families().at(fam).graphs.size() : 0;
    store.insert({fam, {g}, ""});
    linear.push_back({apps, {fam, ordinal}});
    if ((i + 1) % 1000 == 0) {
      try {
        store.verify_index();
      } catch (const Error&) {
        audits = false;
      }
    }
  }
  std::size_t query_mismatches = 0;
  for (int q = 0; q < 100; ++q) {
    std::size_t n = oracle::below(rng, 50);
    std::size_t alpha = oracle::below(rng, 8);
    auto got = store.range_candidates(n, alpha);
    std::set<GraphRef> want;
    for (const auto& [k, ref] : linear) {
      if (k + alpha >= n && k <= n + alpha) {
        want.insert(ref);
      }
    }
    if (std::set<GraphRef>(got.begin(), got.end()) != want || got.size() != want.size()) {
      ++query_mismatches;
    }
  }

  // Doubling experiment: fixed-width range queries over n and 2n keys.
  auto query_time = [&](std::size_t n) {
    BplusIndex idx;
    std::vector<BplusIndex::Key> keys(n);
    for (std::size_t i = 0; i < n; ++i) {
      keys[i] = static_cast<BplusIndex::Key>(i);
    }
    std::shuffle(keys.begin(), keys.end(), rng);
    for (auto k : keys) {
      idx.insert(k, {"f", 0});
    }
    const int queries = 20000;
    std::vector<BplusIndex::Key> lows(queries);
    for (auto& lo : lows) {
      lo = static_cast<BplusIndex::Key>(oracle::below(rng, n - 8));
    }
    double best = 1e18;
    std::size_t sink = 0;
    for (int rep = 0; rep < 5; ++rep) {
      auto start = Clock::now();
      for (auto lo : lows) {
        sink += idx.range(lo, lo + 7).size();
      }
      best = std::min(best, ms_since(start));
    }
    return sink > 0 ? best : best + 1e18;
  };
  double t1 = query_time(100000);
  double t2 = query_time(200000);
  double ratio = t2 / t1;

  bool ok = audits && query_mismatches == 0 && store.graph_count() == 10000 && ratio < 2.0;
  std::ostringstream d;
  d << "10000 inserts, audits " << (audits ? "ok" : "FAILED") << ", " << query_mismatches
    << "/100 query mismatches, depth " << store.index().depth() << ", doubling ratio " << ratio;
  return {ok, d.str()};
}

Outcome matching_latency() {
  SignatureStore store;
  for (std::size_t f = 0; f < 1000; ++f) {
    FamilyTemplate t = generate_family(10000 + f);
    store.insert({t.family_id, {malicious_signature_graph(t)}, ""});
  }
  FamilyTemplate target = generate_family(10000 + 417);
  RuntimeBehaviorSignature sig = runtime_signature(apply_transform(target, 7, 3));
  std::size_t nodes = sig.rbg.nodes().size();
  auto start = Clock::now();
  Verdict v = decide(sig, store, 0.8, Mode::combined, 5);
  double ms = ms_since(start);
  bool ok = store.graph_count() == 1000 && nodes <= 50 && ms < 1000.0 &&
            v.decision == Decision::malicious && v.family == target.family_id;
  return {ok, std::to_string(nodes) + "-node signature vs " +
                  std::to_string(store.graph_count()) + " graphs: " + std::to_string(ms) +
                  " ms, verdict " + std::string(to_string(v.decision)) +
                  (v.family ? " (" + *v.family + ")" : "")};
}

Outcome service_determinism() {
  DetectionService service(family_store(6));
  auto requests = corpus_requests(6, 30);
  requests.resize(std::min<std::size_t>(requests.size(), 100));
  while (requests.size() < 100) {
    requests.push_back(requests[requests.size() % 20]);
  }
  auto s0 = service.snapshot();
  std::vector<json> serial0;
  for (const auto& r : requests) {
    serial0.push_back(to_json(service.match(r, *s0).verdict));
  }

  // The late family is a benign app; inserting it flips that app's verdict.
  FamilyTemplate late = generate_benign(9003);
  FamilySignature late_family{
      "late-insert", decouple(runtime_graph(late.base_pkg, late.base_trace)), ""};
  SignatureStore s1 = insert_signature(*s0, late_family);
  std::vector<json> serial1;
  std::size_t differing = 0;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    serial1.push_back(to_json(service.match(requests[i], s1).verdict));
    differing += serial1[i] != serial0[i];
  }

  RunningServer server(service);
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors;
  std::mutex errors_mutex;
  std::vector<std::uint64_t> versions(requests.size());
  std::vector<json> concurrent(requests.size());
  std::vector<std::thread> workers;
  for (int t = 0; t < 10; ++t) {
    workers.emplace_back([&] {
      auto client = server.client();
      for (std::size_t i; (i = next++) < requests.size();) {
        auto res = client.Post("/v1/match", to_json(requests[i]).dump(), "application/json");
        if (!res || res->status != 200) {
          std::lock_guard lock(errors_mutex);
          errors.push_back("request " + std::to_string(i) + " failed");
          continue;
        }
        json body = json::parse(res->body);
        concurrent[i] = body["verdict"];
        versions[i] = body["store_version"];
      }
    });
  }
  std::thread writer([&] {
    while (next < requests.size() / 2) {
      std::this_thread::yield();
    }
    service.insert(late_family);
  });
  for (auto& w : workers) {
    w.join();
  }
  writer.join();

  std::size_t mismatches = 0, after_insert = 0;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (versions[i] == s0->version()) {
      mismatches += concurrent[i] != serial0[i];
    } else if (versions[i] == s1.version()) {
      ++after_insert;
      mismatches += concurrent[i] != serial1[i];
    } else {
      ++mismatches;
    }
  }
  // The old snapshot still answers as before the insert.
  std::size_t stale = 0;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    stale += to_json(service.match(requests[i], *s0).verdict) != serial0[i];
  }
  bool ok = errors.empty() && mismatches == 0 && stale == 0 && differing > 0 &&
            *service.snapshot() == s1;
  return {ok, "100 concurrent requests, " + std::to_string(mismatches) + " mismatches, " +
                  std::to_string(after_insert) + " served after the insert, " +
                  std::to_string(differing) + " verdicts changed by it, old snapshot drift " +
                  std::to_string(stale)};
}

Outcome persistence() {
  oracle::Rng rng(0x9e75);
  fs::path dir = scratch("persist");
  std::size_t round_trip_failures = 0;
  const int stores = 20;
  for (int s = 0; s < stores; ++s) {
    SignatureStore store(3 + oracle::below(rng, 30));
    for (std::size_t f = 0, families = oracle::below(rng, 8); f < families; ++f) {
      FamilySignature fam{"fam-" + std::to_string(oracle::below(rng, 100)), {}, "n" + std::to_string(f)};
      for (std::size_t k = 0, n = 1 + oracle::below(rng, 4); k < n; ++k) {
        fam.graphs.push_back(oracle::random_decoupled(rng, 6, 12, 4));
      }
      store.insert(fam);
    }
    if (oracle::below(rng, 2)) {
      store.add_blacklist({{"h" + std::to_string(s) + ".test:80"}, {"/bin/x" + std::to_string(s)}});
    }
    save_store(store, dir);
    SignatureStore back = load_store(dir);
    round_trip_failures += !(back == store) || back.version() != store.version() ||
                           back.index().order() != store.index().order();
  }

  // Truncate each file of a saved store in turn; every load must throw.
  SignatureStore store;
  store.insert({"victim", {oracle::random_decoupled(rng, 4, 8, 4)}, ""});
  store.insert({"other", {oracle::random_decoupled(rng, 4, 8, 4)}, ""});
  std::size_t files = 0, failed_closed = 0;
  save_store(store, dir);
  std::vector<fs::path> paths;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) {
      paths.push_back(fs::relative(entry.path(), dir));
    }
  }
  for (const auto& rel : paths) {
    save_store(store, dir);
    std::string bytes = slurp(dir / rel);
    std::ofstream(dir / rel, std::ios::binary | std::ios::trunc) << bytes.substr(0, bytes.size() / 2);
    ++files;
    try {
      load_store(dir);
    } catch (const ChecksumMismatch&) {
      ++failed_closed;
    } catch (const Error&) {
    }
  }
  fs::remove_all(dir);
  return {round_trip_failures == 0 && files >= 4 && failed_closed == files,
          std::to_string(stores) + " random stores, " + std::to_string(round_trip_failures) +
              " round-trip failures; truncation rejected in " + std::to_string(failed_closed) +
              "/" + std::to_string(files) + " files"};
}

Outcome offline_parity() {
  fs::path dir = scratch("bundle");
  save_store(family_store(6), dir);
  auto requests = corpus_requests(6, 15);
  requests[3].signature.sss.endpoints.insert("c2.acceptance.test:443");
  requests[4].mode = Mode::sss_only;
  requests[5].threshold = 0.95;

  SignatureStore bundle = preload(dir);
  DetectionService service(load_store(dir));
  RunningServer server(service);
  auto client = server.client();
  std::size_t mismatches = 0, malicious = 0;
  for (const auto& r : requests) {
    json offline = to_json(decide(r.signature, bundle, r.threshold.value_or(kDefaultThreshold),
                                  r.mode, r.alpha.value_or(kDefaultAlpha)));
    auto res = client.Post("/v1/match", to_json(r).dump(), "application/json");
    if (!res || res->status != 200 || json::parse(res->body)["verdict"] != offline) {
      ++mismatches;
    }
    malicious += offline["decision"] == "malicious";
  }
  fs::remove_all(dir);
  return {mismatches == 0 && malicious > 0 && malicious < requests.size(),
          std::to_string(requests.size()) + " requests, " + std::to_string(malicious) +
              " malicious, " + std::to_string(mismatches) + " mismatches"};
}

} // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "redirected-edge similarity", similarity_fixture},
      {2, "edit distance vs brute force", ged_oracle},
      {3, "reaching definitions vs chaotic iteration", reaching_oracle},
      {4, "decoupling invariants", decoupling},
      {5, "transformation resilience", transformation_resilience},
      {6, "index correctness", index_correctness},
      {7, "matching latency", matching_latency},
      {8, "service determinism", service_determinism},
      {9, "persistence", persistence},
      {10, "offline parity", offline_parity},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    auto start = Clock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " " << c.name << ": "
              << o.detail << " [" << static_cast<long>(ms_since(start)) << " ms]" << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
