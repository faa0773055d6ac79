#include <gtest/gtest.h>

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "monet/errors.hpp"
#include "monet/sig_store.hpp"
#include "oracles.hpp"

using namespace monet;
namespace fs = std::filesystem;

namespace {

std::string fixture(const std::string& name) {
  std::ifstream in(std::string(MONET_FIXTURES) + "/" + name);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

BehaviorGraph with_apps(std::size_t apps, const std::string& tag = "S") {
  BehaviorGraph g(Origin::runtime);
  std::size_t prev = g.add_app("c0", ComponentKind::service);
  g.add_edge(prev, g.add_system(tag), 2);
  for (std::size_t i = 1; i < apps; ++i) {
    std::size_t next = g.add_app("c" + std::to_string(i), ComponentKind::activity);
    g.add_edge(prev, next, 3);
    prev = next;
  }
  return g;
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("monet-store-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
             "-" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
    fs::remove_all(fs::path(path_.string() + ".staging"), ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

std::string hex(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

/// Recomputes store.crc after a deliberate edit so only the content is wrong.
void reseal(const fs::path& dir) {
  std::istringstream lines(slurp(dir / "store.crc"));
  std::string line;
  std::string out;
  while (std::getline(lines, line)) {
    std::istringstream f(line);
    std::string crc, size, rel;
    f >> crc >> size >> rel;
    if (crc == "total") {
      break;
    }
    std::string bytes = slurp(dir / rel);
    out += hex(bytes) + " " + std::to_string(bytes.size()) + " " + rel + "\n";
  }
  out += "total " + hex(out) + "\n";
  spit(dir / "store.crc", out);
}

} // namespace

TEST(BplusIndex, RangeQueriesOverSparseKeys) {
  BplusIndex idx(4);
  for (auto k : {3, 9, 20}) {
    idx.insert(k, {"f" + std::to_string(k), 0});
  }
  auto keys = [&](BplusIndex::Key lo, BplusIndex::Key hi) {
    std::vector<std::string> out;
    for (const auto& r : idx.range(lo, hi)) {
      out.push_back(r.family_id);
    }
    return out;
  };
  EXPECT_EQ(keys(8, 10), (std::vector<std::string>{"f9"}));
  EXPECT_EQ(keys(0, 2), (std::vector<std::string>{}));
  EXPECT_EQ(keys(0, 100), (std::vector<std::string>{"f3", "f9", "f20"}));
  EXPECT_EQ(keys(10, 19), (std::vector<std::string>{}));
  EXPECT_EQ(keys(20, 20), (std::vector<std::string>{"f20"}));
  EXPECT_TRUE(idx.audit().empty());
}

TEST(BplusIndex, DuplicateKeysKeepInsertionOrder) {
  BplusIndex idx(3);
  for (std::size_t i = 0; i < 50; ++i) {
    idx.insert(static_cast<BplusIndex::Key>(i % 5), {"f", i});
  }
  auto r = idx.range(2, 2);
  ASSERT_EQ(r.size(), 10u);
  for (std::size_t i = 0; i < r.size(); ++i) {
    EXPECT_EQ(r[i].ordinal, 2 + 5 * i);
  }
  EXPECT_EQ(idx.key_count(), 5u);
  EXPECT_EQ(idx.value_count(), 50u);
}

TEST(BplusIndex, RandomInsertsMatchLinearScan) {
  oracle::Rng rng(1);
  for (std::size_t order : {3u, 4u, 7u, 32u}) {
    BplusIndex idx(order);
    std::vector<std::pair<BplusIndex::Key, GraphRef>> all;
    for (std::size_t i = 0; i < 3000; ++i) {
      auto key = static_cast<BplusIndex::Key>(oracle::below(rng, 400));
      GraphRef ref{"f", i};
      idx.insert(key, ref);
      all.push_back({key, ref});
      if (i % 500 == 0) {
        ASSERT_EQ(idx.audit(), "") << "order " << order << " after " << i;
      }
    }
    ASSERT_EQ(idx.audit(), "");
    for (int q = 0; q < 100; ++q) {
      auto lo = static_cast<BplusIndex::Key>(oracle::below(rng, 420)) - 10;
      auto hi = lo + static_cast<BplusIndex::Key>(oracle::below(rng, 30));
      std::vector<std::pair<BplusIndex::Key, std::size_t>> want;
      for (const auto& [k, r] : all) {
        if (k >= lo && k <= hi) {
          want.push_back({k, r.ordinal});
        }
      }
      std::stable_sort(want.begin(), want.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      std::vector<std::size_t> got;
      for (const auto& r : idx.range(lo, hi)) {
        got.push_back(r.ordinal);
      }
      std::vector<std::size_t> want_ordinals;
      for (const auto& w : want) {
        want_ordinals.push_back(w.second);
      }
      ASSERT_EQ(got, want_ordinals);
    }
  }
}

TEST(BplusIndex, DepthStaysLogarithmic) {
  BplusIndex idx(32);
  for (BplusIndex::Key k = 0; k < 10000; ++k) {
    idx.insert(k, {"f", static_cast<std::size_t>(k)});
    if ((k + 1) % 1000 == 0) {
      ASSERT_EQ(idx.audit(), "");
    }
  }
  double bound = std::ceil(std::log(10000.0) / std::log(16.0)) + 1;
  EXPECT_LE(static_cast<double>(idx.depth()), bound);
}

TEST(BplusIndex, CopiesAreIndependent) {
  BplusIndex a(4);
  for (int i = 0; i < 20; ++i) {
    a.insert(i, {"a", 0});
  }
  BplusIndex b = a;
  b.insert(100, {"b", 0});
  EXPECT_EQ(a.range(100, 100).size(), 0u);
  EXPECT_EQ(b.range(100, 100).size(), 1u);
  EXPECT_TRUE(a.audit().empty());
  EXPECT_TRUE(b.audit().empty());
}

TEST(SignatureStore, RangeCandidatesUseComponentCount) {
  SignatureStore store(4);
  store.insert({"three", {with_apps(3)}, ""});
  store.insert({"nine", {with_apps(9)}, ""});
  store.insert({"twenty", {with_apps(20)}, ""});
  auto ids = [&](std::size_t n, std::size_t alpha) {
    std::vector<std::string> out;
    for (const auto& r : store.range_candidates(n, alpha)) {
      out.push_back(r.family_id);
    }
    return out;
  };
  EXPECT_EQ(ids(8, 1), (std::vector<std::string>{"nine"}));
  EXPECT_EQ(ids(1, 1), (std::vector<std::string>{}));
  EXPECT_EQ(ids(2, 1), (std::vector<std::string>{"three"}));
  EXPECT_EQ(ids(15, 5), (std::vector<std::string>{"twenty"}));
  EXPECT_EQ(ids(10, 100), (std::vector<std::string>{"three", "nine", "twenty"}));
}

TEST(SignatureStore, InsertIsIdempotent) {
  SignatureStore store;
  FamilySignature fam{"admin-family", {parse_graph(fixture("retarget_g1.json"))}, "notes"};
  EXPECT_EQ(store.insert(fam), 1u);
  auto version = store.version();
  SignatureStore before = store;
  EXPECT_EQ(store.insert(fam), 0u);
  EXPECT_EQ(store.version(), version);
  EXPECT_EQ(store, before);
  EXPECT_EQ(store.graph_count(), 1u);
}

TEST(SignatureStore, InsertSignatureLeavesOriginalUntouched) {
  SignatureStore empty;
  SignatureStore next = insert_signature(empty, {"f", {with_apps(2)}, ""});
  EXPECT_EQ(empty.graph_count(), 0u);
  EXPECT_EQ(next.graph_count(), 1u);
  EXPECT_GT(next.version(), empty.version());
}

TEST(SignatureStore, RejectsCoupledGraphsAndBadIds) {
  SignatureStore store;
  EXPECT_THROW(store.insert({"f", {parse_graph(fixture("repackaged_rbg.json"))}, ""}), NotDecoupled);
  EXPECT_THROW(store.insert({"../up", {with_apps(2)}, ""}), Error);
  EXPECT_THROW(store.insert({"", {with_apps(2)}, ""}), Error);
  EXPECT_EQ(store.graph_count(), 0u);
  EXPECT_TRUE(valid_family_id("a.b-c_9"));
  EXPECT_FALSE(valid_family_id(".."));
  EXPECT_FALSE(valid_family_id("a/b"));
}

TEST(SignatureStore, TenThousandInsertsStaySound) {
  SignatureStore store;
  oracle::Rng rng(10);
  for (std::size_t i = 0; i < 10000; ++i) {
    store.insert({"fam" + std::to_string(i % 50),
                  {with_apps(1 + oracle::below(rng, 12), "S" + std::to_string(i))},
                  ""});
    if ((i + 1) % 1000 == 0) {
      ASSERT_NO_THROW(store.verify_index());
    }
  }
  EXPECT_EQ(store.graph_count(), 10000u);
  double bound = std::ceil(std::log(10000.0) / std::log(SignatureStore::kDefaultOrder / 2.0)) + 1;
  EXPECT_LE(static_cast<double>(store.index().depth()), bound);
}

TEST(Persistence, RoundTripPreservesEverything) {
  TempDir dir;
  SignatureStore store;
  oracle::Rng rng(3);
  for (int f = 0; f < 6; ++f) {
    FamilySignature fam{"fam-" + std::to_string(f), {}, "family " + std::to_string(f)};
    for (int k = 0; k < 3; ++k) {
      fam.graphs.push_back(oracle::random_decoupled(rng, 5, 9, 4));
    }
    store.insert(fam);
  }
  store.add_blacklist({{"c2.evil.com:443"}, {"/data/local/tmp/su"}});
  save_store(store, dir.path());
  SignatureStore back = load_store(dir.path());
  EXPECT_EQ(back, store);
  EXPECT_EQ(back.version(), store.version());
  EXPECT_EQ(back.blacklist(), store.blacklist());

  save_store(back, dir.path());
  EXPECT_EQ(load_store(dir.path()), store);
}

TEST(Persistence, TruncatedGraphFailsClosed) {
  TempDir dir;
  SignatureStore store;
  store.insert({"f", {with_apps(3)}, ""});
  save_store(store, dir.path());
  fs::path graph = dir.path() / "graphs" / "f" / "0.json";
  std::string bytes = slurp(graph);
  spit(graph, bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_store(dir.path()), ChecksumMismatch);
}

TEST(Persistence, TruncatedChecksumListFailsClosed) {
  TempDir dir;
  SignatureStore store;
  store.insert({"f", {with_apps(3)}, ""});
  save_store(store, dir.path());
  std::string crc = slurp(dir.path() / "store.crc");
  spit(dir.path() / "store.crc", crc.substr(0, crc.find("total")));
  EXPECT_THROW(load_store(dir.path()), ChecksumMismatch);
}

TEST(Persistence, ChecksumListCutInsideAPathFailsClosed) {
  TempDir dir;
  SignatureStore store;
  store.insert({"f", {with_apps(3)}, ""});
  save_store(store, dir.path());
  std::string crc = slurp(dir.path() / "store.crc");
  auto cut = crc.find("graphs/f/") + 8;
  spit(dir.path() / "store.crc", crc.substr(0, cut));
  EXPECT_THROW(load_store(dir.path()), ChecksumMismatch);
}

TEST(Persistence, FormatVersionMismatchRejected) {
  TempDir dir;
  save_store(SignatureStore{}, dir.path());
  std::string manifest = slurp(dir.path() / "store.json");
  auto pos = manifest.find("\"format_version\": 1");
  ASSERT_NE(pos, std::string::npos);
  manifest.replace(pos, std::string("\"format_version\": 1").size(), "\"format_version\": 99");
  spit(dir.path() / "store.json", manifest);
  reseal(dir.path());
  EXPECT_THROW(load_store(dir.path()), FormatVersionMismatch);
}

TEST(Persistence, MissingDirectoryIsIoError) {
  EXPECT_THROW(load_store("/nonexistent/monet/store"), IoError);
}
