#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "monet/errors.hpp"
#include "monet/matcher.hpp"
#include "oracles.hpp"

using namespace monet;

namespace {

std::string fixture(const std::string& name) {
  std::ifstream in(std::string(MONET_FIXTURES) + "/" + name);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

BehaviorGraph chain(std::size_t apps, const std::string& prefix, const std::string& sys = "Sys") {
  BehaviorGraph g(Origin::runtime);
  std::size_t prev = g.add_app(prefix + "0", ComponentKind::service);
  g.add_edge(prev, g.add_system(sys), 2);
  for (std::size_t i = 1; i < apps; ++i) {
    std::size_t next = g.add_app(prefix + std::to_string(i), ComponentKind::service);
    g.add_edge(prev, next, intent_code::kStartService);
    prev = next;
  }
  return g;
}

SignatureStore store_with(const std::vector<std::pair<std::string, BehaviorGraph>>& entries) {
  SignatureStore store;
  for (const auto& [id, g] : entries) {
    store.insert({id, {g}, ""});
  }
  return store;
}

} // namespace

TEST(Similarity, IdenticalGraphsScoreOne) {
  BehaviorGraph g = parse_graph(fixture("retarget_g1.json"));
  SimilarityScore s = similarity(g, g);
  EXPECT_EQ(s.value, 1.0);
  EXPECT_EQ(s.edit_ops, 0u);
  EXPECT_EQ(s.max_ops, 24u);
  EXPECT_TRUE(s.exact);
}

TEST(Similarity, RedirectedEdgeCostsTwoOperations) {
  BehaviorGraph g1 = parse_graph(fixture("retarget_g1.json"));
  BehaviorGraph g2 = parse_graph(fixture("retarget_g2.json"));
  SimilarityScore s = similarity(g1, g2);
  EXPECT_EQ(s.edit_ops, 2u);
  EXPECT_EQ(s.max_ops, 24u);
  EXPECT_EQ(s.matched_vertices, 6u);
  EXPECT_EQ(s.matched_edges, 5u);
  EXPECT_DOUBLE_EQ(s.value, 1.0 - 2.0 / 24.0);
  EXPECT_TRUE(s.exact);
}

TEST(Similarity, EmptyGraphs) {
  BehaviorGraph empty(Origin::runtime);
  EXPECT_EQ(similarity(empty, empty).value, 1.0);
  BehaviorGraph g = parse_graph(fixture("retarget_g1.json"));
  SimilarityScore s = similarity(g, empty);
  EXPECT_EQ(s.value, 0.0);
  EXPECT_EQ(s.edit_ops, s.max_ops);
}

TEST(Similarity, RequiresDecoupledInput) {
  BehaviorGraph rbg = parse_graph(fixture("repackaged_rbg.json"));
  BehaviorGraph g = parse_graph(fixture("retarget_g1.json"));
  try {
    similarity(rbg, g);
    FAIL();
  } catch (const NotDecoupled& e) {
    EXPECT_EQ(e.clusters(), 2u);
  }
  EXPECT_THROW(similarity(g, rbg), NotDecoupled);
}

TEST(Similarity, AgreesWithBruteForce) {
  oracle::Rng rng(31337);
  for (int trial = 0; trial < 300; ++trial) {
    BehaviorGraph a = oracle::random_decoupled(rng, 5, 7);
    BehaviorGraph b = oracle::random_decoupled(rng, 5, 7);
    SimilarityScore s = similarity(a, b);
    oracle::BruteScore want = oracle::brute_similarity(a, b);
    ASSERT_TRUE(s.exact);
    ASSERT_EQ(s.max_ops, want.max_ops);
    ASSERT_EQ(s.edit_ops, want.edit_ops) << dump_graph(a) << dump_graph(b);
  }
}

TEST(Similarity, SymmetricAndBounded) {
  oracle::Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    BehaviorGraph a = oracle::random_decoupled(rng, 6, 10, 4);
    BehaviorGraph b = oracle::random_decoupled(rng, 6, 10, 4);
    SimilarityScore ab = similarity(a, b);
    SimilarityScore ba = similarity(b, a);
    EXPECT_EQ(ab.edit_ops, ba.edit_ops);
    EXPECT_GE(ab.value, 0.0);
    EXPECT_LE(ab.value, 1.0);
    EXPECT_LE(ab.value, similarity_upper_bound(a, b) + 1e-12);
  }
}

TEST(Similarity, InvariantUnderComponentRenaming) {
  oracle::Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    BehaviorGraph a = oracle::random_decoupled(rng, 6, 9, 4);
    BehaviorGraph b = oracle::random_decoupled(rng, 6, 9, 4);
    EXPECT_EQ(similarity(a, b).edit_ops, similarity(oracle::rename_apps(a, rng), b).edit_ops);
    EXPECT_EQ(similarity(a, oracle::rename_apps(a, rng)).value, 1.0);
  }
}

TEST(Similarity, LargeGraphsUseBoundedSearch) {
  BehaviorGraph a = chain(14, "a");
  BehaviorGraph b = chain(15, "b");
  SimilarityScore s = similarity(a, b);
  EXPECT_FALSE(s.exact);
  EXPECT_GT(s.value, 0.9);
  EXPECT_LE(s.value, similarity_upper_bound(a, b) + 1e-12);
  EXPECT_EQ(similarity(b, a).edit_ops, s.edit_ops);
}

TEST(BetterScore, ComparesExactFractions) {
  SimilarityScore a{0, 0, 0, true, 1, 3};  // 2/3
  SimilarityScore b{0, 0, 0, true, 2, 6};  // 2/3
  SimilarityScore c{0, 0, 0, true, 1, 4};  // 3/4
  EXPECT_FALSE(better_score(a, b));
  EXPECT_FALSE(better_score(b, a));
  EXPECT_TRUE(better_score(c, a));
}

TEST(MatchRbg, FindsIdenticalFamilyGraph) {
  BehaviorGraph g1 = parse_graph(fixture("retarget_g1.json"));
  SignatureStore store = store_with({{"admin-family", g1}, {"other", chain(3, "x", "Other")}});
  auto m = match_rbg({parse_graph(fixture("retarget_g2.json"))}, store);
  ASSERT_TRUE(m.has_value());
  EXPECT_EQ(m->family_id, "admin-family");
  EXPECT_EQ(m->score.edit_ops, 2u);
}

TEST(MatchRbg, ThresholdIsInclusive) {
  BehaviorGraph g1 = parse_graph(fixture("retarget_g1.json"));
  BehaviorGraph g2 = parse_graph(fixture("retarget_g2.json"));
  SignatureStore store = store_with({{"admin-family", g1}});
  double exact = 1.0 - 2.0 / 24.0;
  EXPECT_TRUE(match_rbg({g2}, store, exact).has_value());
  EXPECT_FALSE(match_rbg({g2}, store, exact + 1e-9).has_value());
}

TEST(MatchRbg, TiesGoToSmallestFamilyId) {
  BehaviorGraph g = chain(3, "c");
  SignatureStore store = store_with({{"zeta", g}, {"alpha", g}, {"mid", g}});
  auto m = match_rbg({g}, store);
  ASSERT_TRUE(m.has_value());
  EXPECT_EQ(m->family_id, "alpha");
}

TEST(MatchRbg, CandidatesLimitedByComponentCount) {
  SignatureStore store = store_with({{"big", chain(5, "s")}});
  BehaviorGraph suspect = chain(3, "q");
  EXPECT_FALSE(best_rbg_match({suspect}, store, 1).has_value());
  EXPECT_TRUE(best_rbg_match({suspect}, store, 2).has_value());
}

TEST(MatchRbg, PruningMatchesExhaustiveScan) {
  oracle::Rng rng(404);
  for (int trial = 0; trial < 30; ++trial) {
    SignatureStore store;
    for (int f = 0; f < 12; ++f) {
      store.insert({"fam" + std::to_string(f), {oracle::random_decoupled(rng, 6, 10, 4)}, ""});
    }
    std::vector<BehaviorGraph> suspects = {oracle::random_decoupled(rng, 6, 10, 4)};
    auto pruned = best_rbg_match(suspects, store, 1000);
    std::optional<RbgMatch> best;
    for (const auto& [id, fam] : store.families()) {
      for (std::size_t i = 0; i < fam.graphs.size(); ++i) {
        SimilarityScore s = similarity(suspects[0], fam.graphs[i]);
        if (!best || better_score(s, best->score)) {
          best = RbgMatch{id, i, 0, s};
        }
      }
    }
    ASSERT_EQ(pruned.has_value(), best.has_value());
    if (best) {
      EXPECT_EQ(pruned->family_id, best->family_id);
      EXPECT_EQ(pruned->score.edit_ops * best->score.max_ops,
                best->score.edit_ops * pruned->score.max_ops);
    }
  }
}

TEST(MatchSss, ReportsBlacklistHits) {
  SssBlacklist bl{{"c2.evil.com:443"}, {"/data/local/tmp/secbino"}};
  Sss suspect{{"c2.evil.com:443", "cdn.ok.com:80"}, {"/data/local/tmp/secbino", "/bin/ls"}};
  EXPECT_EQ(match_sss(suspect, bl),
            (std::vector<std::string>{"c2.evil.com:443", "/data/local/tmp/secbino"}));
  EXPECT_TRUE(match_sss(Sss{}, bl).empty());
}

TEST(Decide, ModesAreIsolated) {
  BehaviorGraph g1 = parse_graph(fixture("retarget_g1.json"));
  SignatureStore store = store_with({{"admin-family", g1}});
  store.add_blacklist({{"c2.evil.com:443"}, {}});

  RuntimeBehaviorSignature rbg_hit{"app", parse_graph(fixture("retarget_g2.json")), {}};
  RuntimeBehaviorSignature sss_hit{"app", chain(2, "n", "Unrelated"), {{"c2.evil.com:443"}, {}}};

  EXPECT_EQ(decide(rbg_hit, store, 0.8, Mode::rbg_only).decision, Decision::malicious);
  EXPECT_EQ(decide(rbg_hit, store, 0.8, Mode::sss_only).decision, Decision::clean);
  EXPECT_EQ(decide(rbg_hit, store, 0.8, Mode::combined).decision, Decision::malicious);

  EXPECT_EQ(decide(sss_hit, store, 0.8, Mode::rbg_only).decision, Decision::clean);
  EXPECT_EQ(decide(sss_hit, store, 0.8, Mode::sss_only).decision, Decision::malicious);
  EXPECT_EQ(decide(sss_hit, store, 0.8, Mode::combined).decision, Decision::malicious);

  Verdict v = decide(rbg_hit, store);
  EXPECT_EQ(v.family, std::optional<std::string>("admin-family"));
  EXPECT_EQ(v.mode, Mode::combined);
}

TEST(Decide, DecouplesBeforeMatching) {
  BehaviorGraph rbg = parse_graph(fixture("repackaged_rbg.json"));
  BehaviorGraph payload = decouple(rbg).front();
  SignatureStore store = store_with({{"payload", payload}});
  Verdict v = decide({"app", rbg, {}}, store, 0.8, Mode::rbg_only);
  EXPECT_EQ(v.decision, Decision::malicious);
  ASSERT_TRUE(v.score.has_value());
  EXPECT_EQ(v.score->value, 1.0);
}

TEST(Decide, EmptyStoreIsClean) {
  Verdict v = decide({"app", parse_graph(fixture("retarget_g1.json")), {}}, SignatureStore{});
  EXPECT_EQ(v.decision, Decision::clean);
  EXPECT_FALSE(v.family.has_value());
}

TEST(VerdictJson, CarriesDecisionModeAndScore) {
  SignatureStore store = store_with({{"admin-family", parse_graph(fixture("retarget_g1.json"))}});
  auto j = to_json(decide({"app", parse_graph(fixture("retarget_g2.json")), {}}, store));
  EXPECT_EQ(j["decision"], "malicious");
  EXPECT_EQ(j["mode"], "combined");
  EXPECT_EQ(j["family"], "admin-family");
  EXPECT_DOUBLE_EQ(j["score"].get<double>(), 1.0 - 2.0 / 24.0);
}

TEST(SignatureJson, RoundTrip) {
  RuntimeBehaviorSignature sig{"com.x", parse_graph(fixture("repackaged_rbg.json")), {{"h:1"}, {"/bin/a"}}};
  RuntimeBehaviorSignature back = signature_from_json(to_json(sig));
  EXPECT_EQ(back.app, sig.app);
  EXPECT_EQ(back.rbg, sig.rbg);
  EXPECT_EQ(back.sss, sig.sss);
}

TEST(ModeNames, RoundTrip) {
  for (Mode m : {Mode::sss_only, Mode::rbg_only, Mode::combined}) {
    EXPECT_EQ(mode_from_string(to_string(m)), m);
  }
  EXPECT_FALSE(mode_from_string("bogus").has_value());
}
