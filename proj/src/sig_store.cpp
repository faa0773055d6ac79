#include "monet/sig_store.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "monet/errors.hpp"

namespace monet {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// JSON

json to_json(const FamilySignature& family) {
  json graphs = json::array();
  for (const auto& g : family.graphs) {
    graphs.push_back(to_json(g));
  }
  return {{"family_id", family.family_id}, {"notes", family.notes}, {"graphs", graphs}};
}

FamilySignature family_from_json(const json& j) {
  if (!j.is_object() || !j.contains("family_id") || !j["family_id"].is_string() ||
      !j.contains("graphs") || !j["graphs"].is_array()) {
    throw CorruptGraph("family signature requires 'family_id' and 'graphs'");
  }
  FamilySignature family;
  family.family_id = j["family_id"];
  if (auto it = j.find("notes"); it != j.end()) {
    if (!it->is_string()) {
      throw CorruptGraph("family notes must be a string");
    }
    family.notes = *it;
  }
  for (const auto& g : j["graphs"]) {
    family.graphs.push_back(graph_from_json(g));
  }
  return family;
}

bool valid_family_id(std::string_view id) {
  if (id.empty() || id == "." || id == "..") {
    return false;
  }
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
        c == '.' || c == '_' || c == '-';
  });
}

// ---------------------------------------------------------------------------
// Store

SignatureStore::SignatureStore(std::size_t index_order) : index_(index_order) {}

const BehaviorGraph& SignatureStore::graph(const GraphRef& ref) const {
  auto it = families_.find(ref.family_id);
  if (it == families_.end() || ref.ordinal >= it->second.graphs.size()) {
    throw CorruptGraph(
        "dangling graph reference " + ref.family_id + "/" + std::to_string(ref.ordinal));
  }
  return it->second.graphs[ref.ordinal];
}

std::vector<GraphRef> SignatureStore::range_candidates(std::size_t n, std::size_t alpha) const {
  auto lo = static_cast<BplusIndex::Key>(n > alpha ? n - alpha : 0);
  auto hi = static_cast<BplusIndex::Key>(n + alpha);
  return index_.range(lo, hi);
}

std::size_t SignatureStore::insert(const FamilySignature& family) {
  if (!valid_family_id(family.family_id)) {
    throw Error("invalid family id '" + family.family_id + "'");
  }
  for (const auto& g : family.graphs) {
    std::size_t clusters = g.app_cluster_count();
    if (clusters != 1) {
      throw NotDecoupled(clusters);
    }
    for (const auto& e : g.edges()) {
      if (e.src >= g.nodes().size() || e.dst >= g.nodes().size()) {
        throw CorruptGraph("edge endpoint out of range in family " + family.family_id);
      }
    }
  }

  bool is_new = !families_.count(family.family_id);
  FamilySignature& stored = families_[family.family_id];
  auto& seen = canonical_[family.family_id];
  if (is_new) {
    stored.family_id = family.family_id;
    stored.notes = family.notes;
  }
  std::size_t added = 0;
  for (const auto& g : family.graphs) {
    if (!seen.insert(dump_graph(g)).second) {
      continue;
    }
    GraphRef ref{family.family_id, stored.graphs.size()};
    stored.graphs.push_back(g);
    index_.insert(static_cast<BplusIndex::Key>(g.app_component_count()), std::move(ref));
    ++added;
  }
  if (is_new || added > 0) {
    ++version_;
  }
  return added;
}

void SignatureStore::add_blacklist(const SssBlacklist& entries) {
  std::size_t before = blacklist_.endpoints.size() + blacklist_.executables.size();
  for (const auto& e : entries.endpoints) {
    blacklist_.endpoints.insert(normalize_endpoint(e));
  }
  blacklist_.executables.insert(entries.executables.begin(), entries.executables.end());
  if (blacklist_.endpoints.size() + blacklist_.executables.size() != before) {
    ++version_;
  }
}

void SignatureStore::verify_index() const {
  if (std::string err = index_.audit(); !err.empty()) {
    throw CorruptGraph("index audit failed: " + err);
  }
  BplusIndex rebuilt(index_.order());
  for (const auto& [id, family] : families_) {
    for (std::size_t i = 0; i < family.graphs.size(); ++i) {
      rebuilt.insert(
          static_cast<BplusIndex::Key>(family.graphs[i].app_component_count()), GraphRef{id, i});
    }
  }
  // Entry order within a key depends on insertion history; compare as sets.
  auto normalize = [](std::vector<std::pair<BplusIndex::Key, std::vector<GraphRef>>> entries) {
    for (auto& [key, refs] : entries) {
      std::sort(refs.begin(), refs.end());
    }
    return entries;
  };
  if (normalize(rebuilt.entries()) != normalize(index_.entries())) {
    throw CorruptGraph("index entries do not match stored graphs");
  }
}

bool SignatureStore::operator==(const SignatureStore& other) const {
  if (version_ != other.version_ || !(blacklist_ == other.blacklist_) ||
      families_.size() != other.families_.size()) {
    return false;
  }
  for (auto a = families_.begin(), b = other.families_.begin(); a != families_.end(); ++a, ++b) {
    if (a->first != b->first || a->second.notes != b->second.notes ||
        a->second.graphs != b->second.graphs) {
      return false;
    }
  }
  return true;
}

SignatureStore insert_signature(const SignatureStore& store, const FamilySignature& family) {
  SignatureStore next = store;
  next.insert(family);
  return next;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr const char* kManifest = "store.json";
constexpr const char* kChecksums = "store.crc";

std::uint32_t crc_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("short write to " + path.string());
  }
}

std::string graph_path(const std::string& family, std::size_t ordinal) {
  return "graphs/" + family + "/" + std::to_string(ordinal) + ".json";
}

} // namespace

void save_store(const SignatureStore& store, const fs::path& dir) {
  json families = json::array();
  for (const auto& [id, family] : store.families()) {
    families.push_back({{"id", id}, {"notes", family.notes}, {"graphs", family.graphs.size()}});
  }
  json manifest = {
      {"format_version", kStoreFormatVersion},
      {"version", store.version()},
      {"index_order", store.index().order()},
      {"families", families},
      {"blacklist",
       {{"endpoints", store.blacklist().endpoints},
        {"executables", store.blacklist().executables}}},
  };

  std::vector<std::pair<std::string, std::string>> files; // relative path, bytes
  files.emplace_back(kManifest, manifest.dump(2) + "\n");
  for (const auto& [id, family] : store.families()) {
    for (std::size_t i = 0; i < family.graphs.size(); ++i) {
      files.emplace_back(graph_path(id, i), dump_graph(family.graphs[i]));
    }
  }

  std::string checksums;
  for (const auto& [rel, bytes] : files) {
    checksums += hex32(crc_of(bytes)) + " " + std::to_string(bytes.size()) + " " + rel + "\n";
  }
  checksums += "total " + hex32(crc_of(checksums)) + "\n";

  fs::path target = fs::absolute(dir);
  fs::path staging = target;
  staging += ".staging";
  std::error_code ec;
  fs::remove_all(staging, ec);
  try {
    fs::create_directories(staging);
    for (const auto& [rel, bytes] : files) {
      fs::path path = staging / rel;
      fs::create_directories(path.parent_path());
      write_file(path, bytes);
    }
    write_file(staging / kChecksums, checksums);
    if (fs::exists(target)) {
      fs::remove_all(target);
    }
    fs::rename(staging, target);
  } catch (const fs::filesystem_error& e) {
    fs::remove_all(staging, ec);
    throw IoError(e.what());
  } catch (...) {
    fs::remove_all(staging, ec);
    throw;
  }
}

SignatureStore load_store(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw IoError("store directory " + dir.string() + " does not exist");
  }

  // 1. Checksums, before any parsing. The list seals itself with a final
  // "total" line, checked before any entry is trusted.
  std::string checksums = read_file(dir / kChecksums);
  std::size_t total_at = checksums.rfind("total ");
  if (total_at == std::string::npos || (total_at != 0 && checksums[total_at - 1] != '\n')) {
    throw ChecksumMismatch("checksum list is truncated");
  }
  std::string covered = checksums.substr(0, total_at);
  if (checksums.substr(total_at) != "total " + hex32(crc_of(covered)) + "\n") {
    throw ChecksumMismatch("checksum list is corrupt");
  }
  std::istringstream lines(covered);
  std::string line;
  std::map<std::string, std::string> verified; // relative path -> bytes
  while (std::getline(lines, line)) {
    std::istringstream fields(line);
    std::string crc;
    std::string size;
    std::string rel;
    fields >> crc >> size >> rel;
    if (rel.empty() || rel.find("..") != std::string::npos) {
      throw ChecksumMismatch("malformed checksum line: " + line);
    }
    if (!fs::is_regular_file(dir / rel)) {
      throw ChecksumMismatch(rel + " is listed but missing");
    }
    std::string bytes = read_file(dir / rel);
    if (std::to_string(bytes.size()) != size || hex32(crc_of(bytes)) != crc) {
      throw ChecksumMismatch(rel + " does not match its checksum");
    }
    verified[rel] = std::move(bytes);
  }
  if (!verified.count(kManifest)) {
    throw ChecksumMismatch("manifest not covered by checksums");
  }

  // 2. Manifest.
  json manifest = json::parse(verified[kManifest], nullptr, /*allow_exceptions=*/false);
  if (manifest.is_discarded() || !manifest.is_object()) {
    throw CorruptGraph("manifest is not a JSON object");
  }
  if (!manifest.contains("format_version") || !manifest["format_version"].is_number_integer()) {
    throw CorruptGraph("manifest missing format_version");
  }
  int format = manifest["format_version"];
  if (format != kStoreFormatVersion) {
    throw FormatVersionMismatch(format, kStoreFormatVersion);
  }

  try {
    SignatureStore store(manifest.at("index_order").get<std::size_t>());
    std::set<std::string> expected{kManifest};
    for (const auto& f : manifest.at("families")) {
      FamilySignature family;
      family.family_id = f.at("id").get<std::string>();
      family.notes = f.at("notes").get<std::string>();
      if (!valid_family_id(family.family_id)) {
        throw CorruptGraph("invalid family id in manifest");
      }
      auto count = f.at("graphs").get<std::size_t>();
      for (std::size_t i = 0; i < count; ++i) {
        std::string rel = graph_path(family.family_id, i);
        auto it = verified.find(rel);
        if (it == verified.end()) {
          throw ChecksumMismatch(rel + " is not covered by checksums");
        }
        expected.insert(rel);
        family.graphs.push_back(parse_graph(it->second));
      }
      if (store.insert(family) != family.graphs.size()) {
        throw CorruptGraph("family " + family.family_id + " contains duplicate graphs");
      }
    }
    if (expected.size() != verified.size()) {
      throw ChecksumMismatch("checksum list names files absent from the manifest");
    }
    const json& bl = manifest.at("blacklist");
    SssBlacklist blacklist;
    for (const auto& e : bl.at("endpoints")) {
      blacklist.endpoints.insert(e.get<std::string>());
    }
    for (const auto& e : bl.at("executables")) {
      blacklist.executables.insert(e.get<std::string>());
    }
    store.add_blacklist(blacklist);
    store.version_ = manifest.at("version").get<std::uint64_t>();
    store.verify_index();
    return store;
  } catch (const json::exception& e) {
    throw CorruptGraph(std::string("malformed manifest: ") + e.what());
  }
}

} // namespace monet
