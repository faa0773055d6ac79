#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "monet/behavior_graph.hpp"
#include "monet/bplus_index.hpp"
#include "monet/trace.hpp"

namespace monet {

/// Analyst-curated malicious graphs of one family. Each graph is a single
/// decoupled app cluster.
struct FamilySignature {
  std::string family_id;
  std::vector<BehaviorGraph> graphs;
  std::string notes;
};

struct SssBlacklist {
  std::set<std::string> endpoints; // normalized "host:port"
  std::set<std::string> executables;

  bool operator==(const SssBlacklist&) const = default;
};

nlohmann::json to_json(const FamilySignature& family);
/// Throws CorruptGraph on malformed input.
FamilySignature family_from_json(const nlohmann::json& j);

/// Family-labeled signature graphs, an SSS blacklist and a B+-tree index
/// keyed on app-component count. Copies are independent snapshots.
class SignatureStore {
 public:
  static constexpr std::size_t kDefaultOrder = 32;

  explicit SignatureStore(std::size_t index_order = kDefaultOrder);

  const std::map<std::string, FamilySignature>& families() const { return families_; }
  const SssBlacklist& blacklist() const { return blacklist_; }
  const BplusIndex& index() const { return index_; }
  std::uint64_t version() const { return version_; }
  std::size_t graph_count() const { return index_.value_count(); }

  const BehaviorGraph& graph(const GraphRef& ref) const;

  /// Stored graphs whose app-component count lies in [max(0, n - alpha), n + alpha].
  std::vector<GraphRef> range_candidates(std::size_t n, std::size_t alpha) const;

  /// In-place insert; see insert_signature. Returns the number of graphs
  /// actually added after deduplication.
  std::size_t insert(const FamilySignature& family);
  void add_blacklist(const SssBlacklist& entries);

  /// Rebuilds the index from the stored graphs and compares; throws
  /// CorruptGraph when they disagree or the tree audit fails.
  void verify_index() const;

  bool operator==(const SignatureStore& other) const;

 private:
  friend SignatureStore load_store(const std::filesystem::path& dir);

  std::map<std::string, FamilySignature> families_;
  std::map<std::string, std::set<std::string>> canonical_; // per family, dedup keys
  SssBlacklist blacklist_;
  BplusIndex index_;
  std::uint64_t version_ = 0;
};

/// Returns a new store with `family` merged in: graphs are indexed under
/// their app-component count, duplicates (by canonical serialization) are
/// dropped. Throws NotDecoupled or CorruptGraph.
SignatureStore insert_signature(const SignatureStore& store, const FamilySignature& family);

/// True for ids usable as a directory name: [A-Za-z0-9._-]+, not "." or "..".
bool valid_family_id(std::string_view id);

inline constexpr int kStoreFormatVersion = 1;

/// Directory layout: store.json (manifest), graphs/<family>/<ordinal>.json
/// and store.crc. The directory is replaced atomically.
void save_store(const SignatureStore& store, const std::filesystem::path& dir);

/// Verifies every checksum before parsing anything, then rebuilds and
/// verifies the index. Throws IoError, ChecksumMismatch,
/// FormatVersionMismatch or CorruptGraph; never returns a partial store.
SignatureStore load_store(const std::filesystem::path& dir);

} // namespace monet
