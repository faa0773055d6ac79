#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "monet/app_model.hpp"
#include "monet/behavior_graph.hpp"
#include "monet/matcher.hpp"
#include "monet/trace.hpp"

namespace monet {

struct SizeParams {
  std::size_t malicious_components = 4;
  /// Components of the repackaged benign host. Defaults to 2-4 when there are
  /// at least two malicious components, else none.
  std::optional<std::size_t> benign_components;
};

/// A synthetic malware family: a package plus a trace whose runtime graph
/// decouples into the malicious cluster and, optionally, a benign host.
struct FamilyTemplate {
  std::uint64_t seed = 0;
  std::string family_id;
  AppPackage base_pkg;
  TraceLog base_trace;
  std::vector<std::string> malicious_cluster; // first entry is the root
  std::vector<std::string> benign_cluster;

  bool operator==(const FamilyTemplate&) const = default;
};

FamilyTemplate generate_family(std::uint64_t seed, const SizeParams& size = {});

/// A stand-alone benign app using its own system-service profile.
FamilyTemplate generate_benign(std::uint64_t seed);

/// Transformation operators keyed by their row number:
///  1 renaming classes            7 inserting junk instructions and components
///  2 reversing block order       8 inserting nop instructions
///  3 string encryption           9 renaming methods
///  4 class-constant encryption  10 renaming fields (variables)
///  5 removing debug information 11 reflection
///  6 reordering instructions    12 dynamic loading
inline constexpr int kTransformCount = 12;

std::string_view transform_name(int op);
/// Ops whose completed runtime graph is identical to the base one.
bool semantics_preserving(int op);

struct Sample {
  AppPackage pkg;
  TraceLog trace;
};

/// Deterministic in (template, op, seed). Throws InapplicableTransform when
/// the template lacks the construct the op rewrites, or for unknown ops.
Sample apply_transform(const FamilyTemplate& tmpl, int op, std::uint64_t seed);

/// Static analysis plus runtime completion: pkg, trace -> RBG.
BehaviorGraph runtime_graph(const AppPackage& pkg, const TraceLog& trace);
RuntimeBehaviorSignature runtime_signature(const Sample& sample);

/// The decoupled cluster containing the template's malicious root.
BehaviorGraph malicious_signature_graph(const FamilyTemplate& tmpl);

struct Counts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  double tpr() const;
  double fnr() const;
  double tnr() const;
  double fpr() const;
  double acc() const;
};

struct ModeReport {
  Mode mode = Mode::rbg_only;
  Counts counts;
};

struct TransformRow {
  int op = 0; // 0 is the untransformed base sample
  std::size_t samples = 0;
  std::size_t inapplicable = 0;
  std::vector<std::size_t> detected; // parallel to EvalReport::modes
  double min_similarity = 1.0;       // best rbg score per sample
  double max_similarity = 0.0;
  std::size_t exact_one = 0;         // samples scoring exactly 1
};

struct EvalConfig {
  std::size_t families = 10;
  std::vector<int> ops = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  std::size_t variants_per_op = 1;
  std::size_t benign = 500;
  double threshold = kDefaultThreshold;
  std::size_t alpha = kDefaultAlpha;
  std::uint64_t seed = 1;
  std::vector<Mode> modes = {Mode::sss_only, Mode::rbg_only, Mode::combined};
  SizeParams size;
};

struct EvalReport {
  std::vector<ModeReport> modes;
  std::vector<TransformRow> transforms;
  std::size_t benign_rejected = 0;     // regenerated for scoring >= 0.6
  double benign_max_similarity = 0.0;  // after rejection
  std::vector<std::size_t> benign_histogram; // 10 bins over [0, 1]
  std::size_t pruning_disagreements = 0;     // indexed vs unrestricted verdicts
  double seconds = 0.0;

  const ModeReport* find(Mode mode) const;
  const TransformRow* row(int op) const;
};

inline constexpr double kBenignRejectSimilarity = 0.6;

/// Builds a store from one base signature per family, then classifies every
/// variant (positive) and every generated benign app (negative).
EvalReport run_eval(const EvalConfig& config);

nlohmann::json to_json(const EvalReport& report);
std::string render_table(const EvalReport& report);

} // namespace monet
