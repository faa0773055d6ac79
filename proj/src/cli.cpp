#include "monet/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "monet/behavior_graph.hpp"
#include "monet/corpus.hpp"
#include "monet/dataflow.hpp"
#include "monet/errors.hpp"
#include "monet/matcher.hpp"
#include "monet/service.hpp"
#include "monet/sig_store.hpp"
#include "monet/trace.hpp"

namespace monet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to `path`, or to `out` when the path is empty or "-".
void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !(f << text)) {
    throw IoError("cannot write " + path);
  }
}

json read_json(const std::string& path) {
  json j = json::parse(slurp(path), nullptr, false);
  if (j.is_discarded()) {
    throw CorruptGraph(path + " is not valid JSON");
  }
  return j;
}

BehaviorGraph read_graph(const std::string& path) {
  return graph_from_json(read_json(path));
}

Sss read_sss(const std::string& path) {
  try {
    return sss_from_json(read_json(path));
  } catch (const json::exception& e) {
    throw CorruptGraph(path + ": " + e.what());
  }
}

std::string format_score(const SimilarityScore& s) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(4) << s.value << " exact=" << (s.exact ? "true" : "false")
    << "\n";
  return o.str();
}

SignatureStore open_or_create(const fs::path& dir) {
  if (fs::exists(dir / "store.crc")) {
    return load_store(dir);
  }
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    throw IoError(dir.string() + " exists but is not a signature store");
  }
  return SignatureStore{};
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"MONET behavior-graph malware variant detection toolkit", "monet"};
  app.require_subcommand(1);
  int status = kExitOk;

  // sbg
  std::string pkg_path, out_path;
  bool debug_dataflow = false;
  auto* sbg = app.add_subcommand("sbg", "Static behavior graph of a package");
  sbg->add_option("package", pkg_path, "Package IR file")->required();
  sbg->add_option("-o,--output", out_path, "Output graph JSON (default stdout)");
  sbg->add_flag("--debug-dataflow", debug_dataflow, "Dump CFGs and def sets to stderr");
  sbg->callback([&] {
    AppPackage pkg = parse_package(slurp(pkg_path));
    if (debug_dataflow) {
      json dump = json::array();
      for (const auto& [owner, methods] : pkg.methods) {
        for (const auto& m : methods) {
          Cfg cfg = build_cfg(m);
          dump.push_back(
              {{"component", owner},
               {"method", m.name},
               {"dataflow", dataflow_to_json(cfg, reaching_definitions(cfg))}});
        }
      }
      err << dump.dump(2) << "\n";
    }
    emit(out_path, dump_graph(build_sbg(pkg, analyze_package(pkg))), out);
  });

  // rbg
  std::string sbg_path, trace_path;
  auto* rbg = app.add_subcommand("rbg", "Complete a static graph with a trace");
  rbg->add_option("--sbg", sbg_path, "Static graph JSON")->required();
  rbg->add_option("--pkg", pkg_path, "Package IR file")->required();
  rbg->add_option("--trace", trace_path, "Trace (JSON Lines)")->required();
  rbg->add_option("-o,--output", out_path, "Output graph JSON (default stdout)");
  rbg->callback([&] {
    BehaviorGraph g = read_graph(sbg_path);
    if (g.origin() != Origin::static_analysis) {
      throw CorruptGraph(sbg_path + " is not a static graph");
    }
    AppPackage pkg = parse_package(slurp(pkg_path));
    TraceLog trace = parse_trace(slurp(trace_path));
    emit(out_path, dump_graph(complete_rbg(g, trace, pkg)), out);
  });

  // decouple
  std::string rbg_path, out_dir;
  auto* dec = app.add_subcommand("decouple", "Split a runtime graph into app clusters");
  dec->add_option("rbg", rbg_path, "Runtime graph JSON")->required();
  dec->add_option("-o,--output", out_dir, "Output directory")->required();
  dec->callback([&] {
    auto parts = decouple(read_graph(rbg_path));
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < parts.size(); ++i) {
      emit((fs::path(out_dir) / ("cluster-" + std::to_string(i) + ".json")).string(),
           dump_graph(parts[i]), out);
    }
    out << parts.size() << " cluster(s)\n";
  });

  // sss
  auto* sss = app.add_subcommand("sss", "Suspicious system-call set of a trace");
  sss->add_option("trace", trace_path, "Trace (JSON Lines)")->required();
  sss->add_option("-o,--output", out_path, "Output JSON (default stdout)");
  sss->callback([&] {
    emit(out_path, to_json(build_sss(parse_trace(slurp(trace_path)))).dump(2) + "\n", out);
  });

  // sim
  std::string g1_path, g2_path;
  auto* sim = app.add_subcommand("sim", "Similarity of two decoupled graphs");
  sim->add_option("g1", g1_path)->required();
  sim->add_option("g2", g2_path)->required();
  sim->callback([&] { out << format_score(similarity(read_graph(g1_path), read_graph(g2_path))); });

  // sign
  std::string family, notes, store_dir, sss_path;
  std::vector<std::string> rbg_paths;
  auto* sign = app.add_subcommand("sign", "Add a family signature to a store");
  sign->add_option("--family", family, "Family id")->required();
  sign->add_option("--rbg", rbg_paths, "Decoupled malicious graph(s)")->required();
  sign->add_option("--store", store_dir, "Store directory (created if absent)")->required();
  sign->add_option("--sss", sss_path, "SSS JSON whose items join the blacklist");
  sign->add_option("--notes", notes, "Free-text notes");
  sign->callback([&] {
    SignatureStore store = open_or_create(store_dir);
    FamilySignature fam{family, {}, notes};
    for (const auto& p : rbg_paths) {
      fam.graphs.push_back(read_graph(p));
    }
    std::size_t added = store.insert(fam);
    if (!sss_path.empty()) {
      Sss s = read_sss(sss_path);
      store.add_blacklist({s.endpoints, s.executables});
    }
    save_store(store, store_dir);
    out << "added " << added << " graph(s) to " << family << "; store version "
        << store.version() << "\n";
  });

  // match
  std::string mode_name = "combined";
  double threshold = kDefaultThreshold;
  std::size_t alpha = kDefaultAlpha;
  auto* match = app.add_subcommand("match", "Classify a runtime behavior signature");
  match->add_option("--store", store_dir, "Store directory")->required();
  match->add_option("--rbg", rbg_path, "Runtime graph JSON")->required();
  match->add_option("--sss", sss_path, "SSS JSON");
  match->add_option("--mode", mode_name, "sss_only | rbg_only | combined")
      ->check(CLI::IsMember({"sss_only", "rbg_only", "combined"}));
  match->add_option("--threshold", threshold, "Similarity threshold")
      ->check(CLI::Range(0.0, 1.0));
  match->add_option("--alpha", alpha, "Index range half-width");
  match->callback([&] {
    SignatureStore store = preload(store_dir);
    RuntimeBehaviorSignature sig;
    sig.rbg = read_graph(rbg_path);
    if (!sss_path.empty()) {
      sig.sss = read_sss(sss_path);
    }
    Verdict v = decide(sig, store, threshold, *mode_from_string(mode_name), alpha);
    out << to_json(v).dump(2) << "\n";
    status = v.decision == Decision::malicious ? kExitMalicious : kExitOk;
  });

  // serve
  ServeConfig serve_cfg;
  std::string serve_store;
  auto* srv = app.add_subcommand("serve", "Run the detection server");
  srv->add_option("--store", serve_store, "Store directory (MONET_STORE overrides)");
  srv->add_option("--listen", serve_cfg.listen, "host:port")->capture_default_str();
  srv->add_option("--threshold", serve_cfg.options.threshold, "Default threshold")
      ->check(CLI::Range(0.0, 1.0));
  srv->add_option("--alpha", serve_cfg.options.alpha, "Default index half-width");
  srv->add_flag("--persist", serve_cfg.persist, "Save admin inserts back to the store");
  srv->callback([&] {
    if (const char* env = std::getenv("MONET_STORE"); env && *env) {
      serve_store = env;
    }
    if (serve_store.empty()) {
      throw CLI::RequiredError("--store or MONET_STORE");
    }
    serve_cfg.store_dir = serve_store;
    serve(serve_cfg);
  });

  // eval
  EvalConfig eval_cfg;
  std::string json_path;
  auto* ev = app.add_subcommand("eval", "Synthetic-corpus detection evaluation");
  ev->add_option("--families", eval_cfg.families)->capture_default_str();
  ev->add_option("--variants", eval_cfg.variants_per_op, "Variants per family and op")
      ->capture_default_str();
  ev->add_option("--ops", eval_cfg.ops, "Transformation ids (0 = base)")
      ->check(CLI::Range(0, kTransformCount));
  ev->add_option("--benign", eval_cfg.benign)->capture_default_str();
  ev->add_option("--threshold", eval_cfg.threshold)->check(CLI::Range(0.0, 1.0));
  ev->add_option("--alpha", eval_cfg.alpha)->capture_default_str();
  ev->add_option("--seed", eval_cfg.seed)->capture_default_str();
  ev->add_option("--json", json_path, "Write the JSON report here ('-' for stdout)");
  ev->callback([&] {
    EvalReport report = run_eval(eval_cfg);
    if (!json_path.empty()) {
      emit(json_path, to_json(report).dump(2) + "\n", out);
    }
    if (json_path != "-") {
      out << render_table(report);
    }
  });

  // gen
  std::uint64_t seed = 1;
  SizeParams size;
  std::size_t benign_components = 0;
  int op = 0;
  bool benign_app = false;
  auto* gen = app.add_subcommand("gen", "Write a synthetic package and trace");
  gen->add_option("--seed", seed)->capture_default_str();
  gen->add_option("--malicious", size.malicious_components, "Malicious components")
      ->capture_default_str();
  auto* benign_opt = gen->add_option("--host", benign_components, "Benign host components");
  gen->add_option("--op", op, "Transformation to apply (0 = none)")
      ->check(CLI::Range(0, kTransformCount));
  gen->add_flag("--benign", benign_app, "Generate a benign app instead of a family");
  gen->add_option("-o,--output", out_dir, "Output directory")->required();
  gen->callback([&] {
    if (*benign_opt) {
      size.benign_components = benign_components;
    }
    FamilyTemplate t = benign_app ? generate_benign(seed) : generate_family(seed, size);
    Sample s = apply_transform(t, op, seed);
    fs::create_directories(out_dir);
    emit((fs::path(out_dir) / "pkg.mir").string(), render_package(s.pkg), out);
    emit((fs::path(out_dir) / "trace.jsonl").string(), write_trace(s.trace), out);
    out << t.family_id << " -> " << out_dir << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "monet: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "monet: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "monet: " << e.what() << "\n";
    return kExitData;
  } catch (const json::exception& e) {
    err << "monet: " << e.what() << "\n";
    return kExitData;
  }
  return status;
}

int run(int argc, const char* const* argv) {
  return run(argc, argv, std::cout, std::cerr);
}

} // namespace monet::cli
