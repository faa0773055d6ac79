#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "monet/behavior_graph.hpp"
#include "monet/sig_store.hpp"
#include "monet/trace.hpp"

namespace monet {

/// Graph-edit similarity of two decoupled graphs under insert/delete edits.
/// value == 1 - edit_ops / max_ops with
///   max_ops  = |V1| + |V2| + |E1| + |E2|
///   edit_ops = max_ops - 2 * (matched_vertices + matched_edges)
/// and value == 1 when both graphs are empty.
struct SimilarityScore {
  double value = 1.0;
  std::size_t matched_vertices = 0;
  std::size_t matched_edges = 0;
  bool exact = true;
  std::size_t edit_ops = 0;
  std::size_t max_ops = 0;

  bool operator==(const SimilarityScore&) const = default;
};

/// Largest smaller-side app-component count solved by exhaustive search.
inline constexpr std::size_t kExactCutoff = 12;
inline constexpr std::size_t kBeamWidth = 8;

/// System and action nodes match by equal label, app components by equal
/// kind (names ignored), edges when both endpoints are matched and codes are
/// equal. Throws NotDecoupled when either graph has two or more app clusters.
SimilarityScore similarity(const BehaviorGraph& g1, const BehaviorGraph& g2);

/// Cheap upper bound on similarity(g1, g2).value from label and code counts.
double similarity_upper_bound(const BehaviorGraph& g1, const BehaviorGraph& g2);

/// True when a's value is strictly higher than b's, compared as exact fractions.
bool better_score(const SimilarityScore& a, const SimilarityScore& b);

struct RbgMatch {
  std::string family_id;
  std::size_t ordinal = 0;
  std::size_t suspect = 0; // index into the suspect list
  SimilarityScore score;
};

inline constexpr double kDefaultThreshold = 0.8;
inline constexpr std::size_t kDefaultAlpha = 5;

/// Highest-scoring (suspect, stored graph) pair among index candidates,
/// regardless of threshold. Ties go to the smaller family id, then ordinal,
/// then suspect index.
std::optional<RbgMatch> best_rbg_match(
    const std::vector<BehaviorGraph>& suspects,
    const SignatureStore& store,
    std::size_t alpha = kDefaultAlpha);

/// best_rbg_match filtered by value >= threshold.
std::optional<RbgMatch> match_rbg(
    const std::vector<BehaviorGraph>& suspects,
    const SignatureStore& store,
    double threshold = kDefaultThreshold,
    std::size_t alpha = kDefaultAlpha);

/// Blacklisted endpoints (normalized) and executables present in `suspect`,
/// endpoints first, each group sorted.
std::vector<std::string> match_sss(const Sss& suspect, const SssBlacklist& blacklist);

struct RuntimeBehaviorSignature {
  std::string app;
  BehaviorGraph rbg{Origin::runtime};
  Sss sss;
};

nlohmann::json to_json(const RuntimeBehaviorSignature& sig);
/// Throws CorruptGraph on malformed input.
RuntimeBehaviorSignature signature_from_json(const nlohmann::json& j);

enum class Mode { sss_only, rbg_only, combined };

std::string_view to_string(Mode mode);
std::optional<Mode> mode_from_string(std::string_view text);

enum class Decision { malicious, clean };

std::string_view to_string(Decision decision);

struct Verdict {
  Decision decision = Decision::clean;
  Mode mode = Mode::combined;
  std::optional<std::string> family;
  std::optional<SimilarityScore> score;
  std::optional<std::vector<std::string>> matched_blacklist;
};

/// {"decision","mode","family?","score?","exact?","matched_blacklist?"}
nlohmann::json to_json(const Verdict& verdict);

/// sss_only: malicious iff the SSS hits the blacklist. rbg_only: malicious
/// iff some decoupled cluster matches a stored graph. combined: either.
/// The RBG is decoupled here; already decoupled input is unaffected.
Verdict decide(
    const RuntimeBehaviorSignature& signature,
    const SignatureStore& store,
    double threshold = kDefaultThreshold,
    Mode mode = Mode::combined,
    std::size_t alpha = kDefaultAlpha);

} // namespace monet
