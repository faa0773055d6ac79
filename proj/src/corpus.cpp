#include "monet/corpus.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "monet/dataflow.hpp"
#include "monet/errors.hpp"
#include "monet/sig_store.hpp"

namespace monet {

using nlohmann::json;

namespace {

using Rng = std::mt19937_64;

std::size_t below(Rng& rng, std::size_t n) {
  return n == 0 ? 0 : static_cast<std::size_t>(rng() % n);
}

bool chance(Rng& rng, double p) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53 < p;
}

template <typename T>
const T& choose(Rng& rng, const std::vector<T>& items) {
  return items[below(rng, items.size())];
}

Rng seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{
      static_cast<std::uint32_t>(seed),
      static_cast<std::uint32_t>(seed >> 32),
      static_cast<std::uint32_t>(stream),
      static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

struct Service {
  std::string descriptor;
  int code;
  std::string method;
};

const std::vector<Service>& malicious_services() {
  static const std::vector<Service> pool = {
      {"android.content.pm.IPackageManager", 2, "getPackageInfo"},
      {"android.net.IConnectivityManager", 4, "getActiveNetworkInfo"},
      {"com.android.internal.telephony.IPhoneSubInfo", 4, "getDeviceId"},
      {"android.app.admin.IDevicePolicyManager", 41, "isAdminActive"},
      {"com.android.internal.telephony.ISms", 5, "sendText"},
      {"android.location.ILocationManager", 7, "getLastLocation"},
      {"android.accounts.IAccountManager", 3, "getAccounts"},
      {"com.android.internal.telephony.ITelephony", 12, "endCall"},
      {"android.app.IActivityManager", 26, "getRunningTasks"},
      {"android.net.wifi.IWifiManager", 9, "getConnectionInfo"},
      {"android.os.IPowerManager", 1, "acquireWakeLock"},
      {"com.android.internal.telephony.ITelephonyRegistry", 3, "listen"},
  };
  return pool;
}

const std::vector<Service>& benign_services() {
  static const std::vector<Service> pool = {
      {"android.content.IClipboard", 2, "getPrimaryClip"},
      {"android.view.IWindowManager", 8, "getInitialDisplaySize"},
      {"com.android.internal.view.IInputMethodManager", 6, "showSoftInput"},
      {"android.app.INotificationManager", 3, "enqueueNotificationWithTag"},
      {"android.os.IVibratorService", 2, "vibrate"},
      {"android.app.IWallpaperManager", 4, "getWallpaper"},
      {"android.media.IAudioService", 15, "getStreamVolume"},
      {"android.hardware.display.IDisplayManager", 1, "getDisplayInfo"},
      {"android.app.IAlarmManager", 1, "set"},
      {"android.app.job.IJobScheduler", 2, "schedule"},
      {"android.os.IUserManager", 5, "getUserInfo"},
  };
  return pool;
}

struct Action {
  std::string name;
  CallKind kind;
};

const std::vector<Action>& malicious_actions() {
  static const std::vector<Action> pool = {
      {"android.app.action.ADD_DEVICE_ADMIN", CallKind::start_activity},
      {"android.intent.action.CALL", CallKind::start_activity},
      {"android.settings.ACCESSIBILITY_SETTINGS", CallKind::start_activity},
      {"android.intent.action.DELETE", CallKind::start_activity},
      {"com.android.vending.INSTALL_REFERRER", CallKind::send_broadcast},
  };
  return pool;
}

const std::vector<Action>& benign_actions() {
  static const std::vector<Action> pool = {
      {"android.intent.action.VIEW", CallKind::start_activity},
      {"android.intent.action.SEND", CallKind::start_activity},
      {"android.intent.action.PICK", CallKind::start_activity},
      {"android.media.action.IMAGE_CAPTURE", CallKind::start_activity},
      {"android.intent.action.DIAL", CallKind::start_activity},
  };
  return pool;
}

const std::vector<std::string>& words() {
  static const std::vector<std::string> pool = {
      "Main",   "Work",   "Admin", "Update", "Sync",    "Boot",  "Push",  "Loader",
      "Helper", "Monitor", "Core", "Task",   "Config",  "Stat",  "Relay", "Guard",
      "Cache",  "Alarm",  "Net",   "Shell",  "Player",  "Photo", "Share", "Login",
      "Detail", "Search", "Feed",  "Upload", "Profile", "Media", "Widget", "Tracker",
  };
  return pool;
}

const std::vector<std::string>& vendors() {
  static const std::vector<std::string> pool = {
      "google", "android", "apps", "mobile", "studio", "games", "tools", "media",
      "soft",   "lab",     "cloud", "smart", "fun",   "happy", "daily", "pocket",
  };
  return pool;
}

const std::vector<std::string>& exploits() {
  static const std::vector<std::string> pool = {
      "secbino", "rageagainstthecage", "exploid", "gingerbreak", "psneuter", "zergrush",
  };
  return pool;
}

CallKind call_for(ComponentKind kind) {
  switch (kind) {
    case ComponentKind::activity:
      return CallKind::start_activity;
    case ComponentKind::service:
      return CallKind::start_service;
    default:
      return CallKind::send_broadcast;
  }
}

Instruction start_call(CallKind kind, std::string intent) {
  switch (kind) {
    case CallKind::start_activity:
      return Instruction::start_activity(std::move(intent));
    case CallKind::start_service:
      return Instruction::start_service(std::move(intent));
    case CallKind::send_broadcast:
      return Instruction::send_broadcast(std::move(intent));
  }
  return Instruction::start_activity(std::move(intent));
}

std::string entry_method(ComponentKind kind) {
  switch (kind) {
    case ComponentKind::activity:
      return "onCreate";
    case ComponentKind::service:
      return "onStartCommand";
    case ComponentKind::receiver:
      return "onReceive";
    case ComponentKind::provider:
      return "query";
  }
  return "onCreate";
}

struct Chain {
  bool is_explicit = true;
  std::string target; // class or action
  CallKind kind = CallKind::start_activity;
  bool observed = true;
};

struct Plan {
  std::string name;
  ComponentKind kind = ComponentKind::activity;
  std::vector<std::string> filters;
  std::vector<Chain> chains;
  std::vector<Service> services;
  std::vector<SyscallRecord> syscalls; // seq filled in later
};

/// Lays out one component's entry method: definitions in the entry block, a
/// branch, and the intent constructions spread over the branch arms and join.
MethodIR entry_body(const Plan& plan, Rng& rng) {
  MethodIR m;
  m.name = entry_method(plan.kind);
  BasicBlock b0{"b0", {}}, b1{"b1", {}}, b2{"b2", {}}, b3{"b3", {}}, b4{"b4", {}};
  std::size_t temp = 0;
  auto fresh = [&temp] { return "t" + std::to_string(temp++); };

  b0.instructions.push_back(Instruction::opaque("dbg.enter"));
  std::vector<BasicBlock*> arms = {&b1, &b2, &b3};
  for (std::size_t k = 0; k < plan.chains.size(); ++k) {
    const Chain& c = plan.chains[k];
    std::string n = std::to_string(k);
    std::vector<Instruction> tail;
    if (c.is_explicit) {
      b0.instructions.push_back(Instruction::assign_this("self" + n));
      b0.instructions.push_back(Instruction::assign_class("cls" + n, c.target));
      tail.push_back(Instruction::new_intent_explicit("intent" + n, "self" + n, "cls" + n));
    } else {
      b0.instructions.push_back(Instruction::assign_string("act" + n, c.target));
      tail.push_back(Instruction::new_intent_action("intent" + n, "act" + n));
    }
    tail.push_back(start_call(c.kind, "intent" + n));
    BasicBlock* arm = arms[below(rng, arms.size())];
    arm->instructions.insert(arm->instructions.end(), tail.begin(), tail.end());
  }
  for (const auto& s : plan.services) {
    auto& block = chance(rng, 0.5) ? b0 : b3;
    block.instructions.push_back(Instruction::opaque("binder." + s.method, fresh()));
  }
  b0.instructions.push_back(Instruction::opaque("cond.check", "cond"));
  std::string t1 = fresh();
  b1.instructions.insert(b1.instructions.begin(), Instruction::opaque("ui.update", t1, {"cond"}));
  b2.instructions.insert(b2.instructions.begin(), Instruction::opaque("net.poll"));
  if (chance(rng, 0.5)) {
    b2.instructions.push_back(Instruction::opaque("dbg.line"));
  }
  b3.instructions.push_back(Instruction::opaque("state.save", std::nullopt, {"cond"}));
  if (chance(rng, 0.5)) {
    b3.instructions.push_back(Instruction::opaque("dbg.line"));
  }
  b4.instructions.push_back(Instruction::opaque("ret"));

  m.blocks = {b0, b1, b2, b3, b4};
  m.edges = {{"b0", "b1"}, {"b0", "b2"}, {"b1", "b3"}, {"b2", "b3"}, {"b3", "b4"}};
  if (chance(rng, 0.3)) {
    m.edges.emplace_back("b3", "b1");
  }
  m.entry = "b0";
  return m;
}

MethodIR helper_body(Rng& rng) {
  MethodIR m;
  m.name = "init";
  BasicBlock b0{"b0", {}};
  b0.instructions.push_back(Instruction::opaque("dbg.enter"));
  b0.instructions.push_back(Instruction::opaque("prefs.load", "cfg"));
  if (chance(rng, 0.5)) {
    b0.instructions.push_back(Instruction::opaque("prefs.parse", "opts", {"cfg"}));
  }
  b0.instructions.push_back(Instruction::opaque("ret"));
  m.blocks = {b0};
  m.entry = "b0";
  return m;
}

struct Built {
  AppPackage pkg;
  TraceLog trace;
};

Built assemble(const std::string& package, const std::vector<Plan>& plans, Rng& rng) {
  Built out;
  out.pkg.package_name = package;
  out.trace.app = package;
  std::uint64_t seq = 1;
  for (const auto& p : plans) {
    out.pkg.components.push_back({p.name, p.kind, p.filters});
    std::vector<MethodIR> methods{entry_body(p, rng)};
    if (chance(rng, 0.4)) {
      methods.push_back(helper_body(rng));
    }
    out.pkg.methods[p.name] = std::move(methods);
  }
  // Execution order follows plan order: every tree parent precedes its children.
  for (const auto& p : plans) {
    for (const auto& s : p.services) {
      BinderRecord r;
      r.seq = seq++;
      r.caller = p.name;
      r.target = {BinderTarget::Type::system, s.descriptor};
      r.code = s.code;
      r.content = s.method;
      out.trace.binder.push_back(std::move(r));
    }
    for (const auto& c : p.chains) {
      if (!c.observed) {
        continue;
      }
      BinderRecord r;
      r.seq = seq++;
      r.caller = p.name;
      r.target = {
          c.is_explicit ? BinderTarget::Type::component : BinderTarget::Type::action, c.target};
      r.code = code_for(c.kind);
      r.content = std::string(to_string(c.kind));
      out.trace.binder.push_back(std::move(r));
    }
    for (auto s : p.syscalls) {
      s.seq = seq++;
      out.trace.syscalls.push_back(std::move(s));
    }
  }
  return out;
}

class NamePool {
 public:
  NamePool(std::string package, Rng& rng) : package_(std::move(package)), rng_(rng) {}

  std::string next(ComponentKind kind) {
    static const char* suffix[] = {"Activity", "Service", "Receiver", "Provider"};
    for (;;) {
      std::string name = package_ + "." + choose(rng_, words()) +
          suffix[static_cast<int>(kind)];
      if (used_.insert(name).second) {
        return name;
      }
      if (used_.size() > 100) {
        name += std::to_string(used_.size());
        used_.insert(name);
        return name;
      }
    }
  }

 private:
  std::string package_;
  Rng& rng_;
  std::set<std::string> used_;
};

std::vector<Service> pick_services(Rng& rng, const std::vector<Service>& pool, std::size_t n) {
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    idx[i] = i;
  }
  std::vector<Service> out;
  for (std::size_t i = 0; i < n && i < idx.size(); ++i) {
    std::swap(idx[i], idx[i + below(rng, idx.size() - i)]);
    out.push_back(pool[idx[i]]);
  }
  return out;
}

/// Spanning tree rooted at plans[first] over plans[first, first+count), with
/// optional extra edges observed at runtime with probability `observe_extra`.
void wire_cluster(
    std::vector<Plan>& plans,
    std::size_t first,
    std::size_t count,
    std::size_t extra,
    double observe_extra,
    Rng& rng) {
  std::set<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 1; i < count; ++i) {
    std::size_t parent = first + below(rng, i);
    std::size_t child = first + i;
    plans[parent].chains.push_back({true, plans[child].name, call_for(plans[child].kind), true});
    edges.insert({parent, child});
  }
  for (std::size_t attempt = 0; extra > 0 && attempt < 20; ++attempt) {
    std::size_t a = first + below(rng, count);
    std::size_t b = first + 1 + below(rng, count - 1);
    if (a == b || !edges.insert({a, b}).second) {
      continue;
    }
    plans[a].chains.push_back(
        {true, plans[b].name, call_for(plans[b].kind), chance(rng, observe_extra)});
    --extra;
  }
}

std::string package_name(Rng& rng, const std::string& prefix) {
  std::string a = choose(rng, vendors());
  std::string b = choose(rng, vendors());
  return prefix + "." + a + "." + b + std::to_string(below(rng, 100));
}

} // namespace

// ---------------------------------------------------------------------------
// Generation

FamilyTemplate generate_family(std::uint64_t seed, const SizeParams& size) {
  Rng rng = seeded(seed, 0x6d616cULL);
  std::size_t m = std::max<std::size_t>(1, size.malicious_components);
  std::size_t b = size.benign_components.value_or(m >= 2 ? 2 + below(rng, 3) : 0);

  FamilyTemplate t;
  t.seed = seed;
  t.family_id = "family-" + std::to_string(seed);
  std::string package = package_name(rng, "com");
  NamePool names(package, rng);

  std::vector<Plan> plans;
  for (std::size_t i = 0; i < m; ++i) {
    Plan p;
    if (i == 0) {
      p.kind = ComponentKind::receiver;
      p.filters = {"android.intent.action.BOOT_COMPLETED"};
    } else {
      static const std::vector<ComponentKind> kinds = {
          ComponentKind::activity,
          ComponentKind::service,
          ComponentKind::service,
          ComponentKind::receiver};
      p.kind = choose(rng, kinds);
    }
    p.name = names.next(p.kind);
    p.services = pick_services(rng, malicious_services(), 1 + below(rng, 3));
    t.malicious_cluster.push_back(p.name);
    plans.push_back(std::move(p));
  }
  wire_cluster(plans, 0, m, m >= 3 ? below(rng, 3) : 0, 0.5, rng);

  // Implicit intents: the first one is always exercised at runtime.
  std::size_t implicit = 1 + below(rng, 2);
  for (std::size_t k = 0; k < implicit; ++k) {
    const Action& a = choose(rng, malicious_actions());
    plans[below(rng, m)].chains.push_back({false, a.name, a.kind, k == 0 || chance(rng, 0.5)});
  }

  if (chance(rng, 0.8)) {
    std::string host = choose(rng, words()) + std::to_string(seed % 997) + ".c2-" +
        choose(rng, vendors()) + ".net";
    std::transform(host.begin(), host.end(), host.begin(), [](unsigned char c) {
      return static_cast<char>(std::tolower(c));
    });
    plans[below(rng, m)].syscalls.push_back(
        {0, Syscall::socket, host + ":" + std::to_string(1024 + below(rng, 8000))});
    if (chance(rng, 0.6)) {
      plans[below(rng, m)].syscalls.push_back(
          {0, Syscall::execve, "/data/data/" + package + "/files/" + choose(rng, exploits())});
    }
  }

  for (std::size_t i = 0; i < b; ++i) {
    Plan p;
    p.kind = i == 0 ? ComponentKind::activity
                    : (chance(rng, 0.6) ? ComponentKind::activity : ComponentKind::service);
    if (i == 0) {
      p.filters = {"android.intent.action.MAIN"};
    }
    p.name = names.next(p.kind);
    p.services = pick_services(rng, benign_services(), 1 + below(rng, 2));
    if (chance(rng, 0.3)) {
      p.services.push_back(malicious_services().front()); // shared with the payload
    }
    t.benign_cluster.push_back(p.name);
    plans.push_back(std::move(p));
  }
  if (b > 0) {
    wire_cluster(plans, m, b, below(rng, 2), 1.0, rng);
    if (chance(rng, 0.5)) {
      const Action& a = choose(rng, benign_actions());
      plans[m + below(rng, b)].chains.push_back({false, a.name, a.kind, true});
    }
  }

  Built built = assemble(package, plans, rng);
  t.base_pkg = std::move(built.pkg);
  t.base_trace = std::move(built.trace);
  return t;
}

FamilyTemplate generate_benign(std::uint64_t seed) {
  Rng rng = seeded(seed, 0x62656eULL);
  FamilyTemplate t;
  t.seed = seed;
  t.family_id = "benign-" + std::to_string(seed);
  std::string package = package_name(rng, "org");
  NamePool names(package, rng);
  std::size_t n = 2 + below(rng, 5);

  std::vector<Plan> plans;
  for (std::size_t i = 0; i < n; ++i) {
    Plan p;
    p.kind = i == 0 ? ComponentKind::activity
                    : (chance(rng, 0.7) ? ComponentKind::activity : ComponentKind::service);
    if (i == 0) {
      p.filters = {"android.intent.action.MAIN"};
    }
    p.name = names.next(p.kind);
    p.services = pick_services(rng, benign_services(), 1 + below(rng, 3));
    t.benign_cluster.push_back(p.name);
    plans.push_back(std::move(p));
  }
  wire_cluster(plans, 0, n, below(rng, 3), 1.0, rng);
  for (std::size_t k = 0, count = below(rng, 3); k < count; ++k) {
    const Action& a = choose(rng, benign_actions());
    plans[below(rng, n)].chains.push_back({false, a.name, a.kind, chance(rng, 0.8)});
  }
  if (chance(rng, 0.7)) {
    plans[below(rng, n)].syscalls.push_back(
        {0, Syscall::socket, "api." + choose(rng, vendors()) + ".com:443"});
  }

  Built built = assemble(package, plans, rng);
  t.base_pkg = std::move(built.pkg);
  t.base_trace = std::move(built.trace);
  return t;
}

// ---------------------------------------------------------------------------
// Transformations

std::string_view transform_name(int op) {
  static const char* names[] = {
      "base",
      "renaming classes",
      "reversing bytecode order",
      "string encryption",
      "arrays encryption",
      "removing debug information",
      "reordering instructions",
      "inserting non-trivial junk instructions",
      "inserting NOP instructions",
      "renaming method",
      "renaming fields",
      "reflection",
      "dynamic loading",
  };
  return op >= 0 && op <= kTransformCount ? names[op] : "unknown";
}

bool semantics_preserving(int op) {
  return op == 0 || op == 1 || op == 2 || op == 5 || op == 6 || op == 8 || op == 9 || op == 10;
}

namespace {

std::string short_name(std::size_t i) {
  std::string s;
  do {
    s.insert(s.begin(), static_cast<char>('a' + i % 26));
    i /= 26;
  } while (i-- > 0);
  return s;
}

template <typename F>
void for_each_instruction(AppPackage& pkg, F&& f) {
  for (auto& [owner, methods] : pkg.methods) {
    for (auto& m : methods) {
      for (auto& b : m.blocks) {
        for (auto& ins : b.instructions) {
          f(ins);
        }
      }
    }
  }
}

Sample rename_classes(const FamilyTemplate& t) {
  Sample s{t.base_pkg, t.base_trace};
  std::map<std::string, std::string> rename;
  for (std::size_t i = 0; i < s.pkg.components.size(); ++i) {
    rename[s.pkg.components[i].name] = s.pkg.package_name + "." + short_name(i);
  }
  auto mapped = [&](const std::string& n) {
    auto it = rename.find(n);
    return it == rename.end() ? n : it->second;
  };
  for (auto& c : s.pkg.components) {
    c.name = mapped(c.name);
  }
  std::map<std::string, std::vector<MethodIR>> methods;
  for (auto& [owner, ms] : s.pkg.methods) {
    methods[mapped(owner)] = std::move(ms);
  }
  s.pkg.methods = std::move(methods);
  for_each_instruction(s.pkg, [&](Instruction& ins) {
    if (ins.op == OpCode::assign_class) {
      ins.operand = mapped(ins.operand);
    }
  });
  for (auto& r : s.trace.binder) {
    r.caller = mapped(r.caller);
    if (r.target.type == BinderTarget::Type::component) {
      r.target.value = mapped(r.target.value);
    }
  }
  return s;
}

Sample reverse_blocks(const FamilyTemplate& t) {
  Sample s{t.base_pkg, t.base_trace};
  bool changed = false;
  for (auto& [owner, ms] : s.pkg.methods) {
    for (auto& m : ms) {
      if (m.blocks.size() > 1) {
        std::reverse(m.blocks.begin(), m.blocks.end());
        changed = true;
      }
    }
  }
  if (!changed) {
    throw InapplicableTransform("no method has more than one block");
  }
  return s;
}

/// Replaces the definitions selected by `pick` with opaque definitions of
/// the same variable.
template <typename Pick>
std::size_t opaque_defs(AppPackage& pkg, const std::string& tag, Pick&& pick) {
  std::size_t n = 0;
  for (auto& [owner, ms] : pkg.methods) {
    for (auto& m : ms) {
      std::set<std::string> targets = pick(m);
      for (auto& b : m.blocks) {
        for (auto& ins : b.instructions) {
          if (!ins.defs.empty() && targets.count(ins.defs.front()) &&
              ins.op != OpCode::opaque) {
            ins = Instruction::opaque(tag, ins.defs.front());
            ++n;
          }
        }
      }
    }
  }
  return n;
}

Sample encrypt_strings(const FamilyTemplate& t) {
  Sample s{t.base_pkg, t.base_trace};
  std::size_t n = opaque_defs(s.pkg, "crypto.decryptString", [](const MethodIR& m) {
    std::set<std::string> action_vars;
    for (const auto& b : m.blocks) {
      for (const auto& ins : b.instructions) {
        if (ins.op == OpCode::new_intent_action) {
          action_vars.insert(ins.uses.begin(), ins.uses.end());
        }
      }
    }
    std::set<std::string> strings;
    for (const auto& b : m.blocks) {
      for (const auto& ins : b.instructions) {
        if (ins.op == OpCode::assign_string && action_vars.count(ins.defs.front())) {
          strings.insert(ins.defs.front());
        }
      }
    }
    return strings;
  });
  if (n == 0) {
    throw InapplicableTransform("no string constant feeds an implicit intent");
  }
  return s;
}

Sample encrypt_class_constants(const FamilyTemplate& t) {
  Sample s{t.base_pkg, t.base_trace};
  std::size_t n = opaque_defs(s.pkg, "crypto.decryptClass", [](const MethodIR& m) {
    std::set<std::string> vars;
    for (const auto& b : m.blocks) {
      for (const auto& ins : b.instructions) {
        if (ins.op == OpCode::assign_class) {
          vars.insert(ins.defs.front());
        }
      }
    }
    return vars;
  });
  if (n == 0) {
    throw InapplicableTransform("no class constant present");
  }
  return s;
}

Sample strip_debug(const FamilyTemplate& t) {
  Sample s{t.base_pkg, t.base_trace};
  std::size_t removed = 0;
  for (auto& [owner, ms] : s.pkg.methods) {
    for (auto& m : ms) {
      for (auto& b : m.blocks) {
        auto& v = b.instructions;
        auto it = std::remove_if(v.begin(), v.end(), [](const Instruction& ins) {
          return ins.op == OpCode::opaque && ins.operand.rfind("dbg.", 0) == 0;
        });
        removed += static_cast<std::size_t>(v.end() - it);
        v.erase(it, v.end());
      }
    }
  }
  if (removed == 0) {
    throw InapplicableTransform("no debug instructions present");
  }
  return s;
}

bool pure(const Instruction& ins) {
  switch (ins.op) {
    case OpCode::assign_this:
    case OpCode::assign_class:
    case OpCode::assign_string:
    case OpCode::nop:
      return true;
    default:
      return false;
  }
}

bool independent(const Instruction& a, const Instruction& b) {
  auto meets = [](const std::vector<std::string>& x, const std::vector<std::string>& y) {
    return std::any_of(x.begin(), x.end(), [&](const std::string& v) {
      return std::find(y.begin(), y.end(), v) != y.end();
    });
  };
  return (pure(a) || pure(b)) && !meets(a.defs, b.defs) && !meets(a.defs, b.uses) &&
      !meets(b.defs, a.uses);
}

Sample reorder_instructions(const FamilyTemplate& t, Rng& rng) {
  Sample s{t.base_pkg, t.base_trace};
  std::vector<std::pair<std::vector<Instruction>*, std::size_t>> candidates;
  for (auto& [owner, ms] : s.pkg.methods) {
    for (auto& m : ms) {
      for (auto& b : m.blocks) {
        for (std::size_t i = 0; i + 1 < b.instructions.size(); ++i) {
          if (independent(b.instructions[i], b.instructions[i + 1])) {
            candidates.emplace_back(&b.instructions, i);
          }
        }
      }
    }
  }
  if (candidates.empty()) {
    throw InapplicableTransform("no adjacent independent instructions");
  }
  // Swap a random subset of non-overlapping pairs; always at least one.
  std::size_t forced = below(rng, candidates.size());
  std::vector<Instruction>* last_block = nullptr;
  std::size_t last_index = 0;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    auto [block, i] = candidates[c];
    bool overlaps = block == last_block && i <= last_index + 1;
    if (overlaps || (c != forced && !chance(rng, 0.5))) {
      continue;
    }
    if (!independent((*block)[i], (*block)[i + 1])) {
      continue;
    }
    std::swap((*block)[i], (*block)[i + 1]);
    last_block = block;
    last_index = i;
  }
  return s;
}

Sample insert_junk(const FamilyTemplate& t, Rng& rng) {
  if (t.malicious_cluster.empty()) {
    throw InapplicableTransform("template has no malicious cluster");
  }
  Sample s{t.base_pkg, t.base_trace};
  std::size_t counter = 0;
  for (auto& [owner, ms] : s.pkg.methods) {
    for (auto& m : ms) {
      for (auto& b : m.blocks) {
        std::size_t at = below(rng, b.instructions.size() + 1);
        std::string v = "junk" + std::to_string(counter++);
        b.instructions.insert(
            b.instructions.begin() + static_cast<std::ptrdiff_t>(at),
            Instruction::opaque("junk.compute", v));
      }
    }
  }
  // Two never-invoked components, each statically wired into the payload.
  for (int k = 0; k < 2; ++k) {
    std::string name = s.pkg.package_name + ".Z" + std::to_string(k) + "x";
    const std::string& target = choose(rng, t.malicious_cluster);
    const ComponentDecl* decl = s.pkg.find_component(target);
    s.pkg.components.push_back({name, ComponentKind::activity, {}});
    MethodIR m;
    m.name = "onCreate";
    m.entry = "b0";
    m.blocks = {{"b0",
                 {Instruction::opaque("junk.compute", "z"),
                  Instruction::assign_this("self"),
                  Instruction::assign_class("cls", target),
                  Instruction::new_intent_explicit("intent", "self", "cls"),
                  start_call(call_for(decl->kind), "intent")}}};
    s.pkg.methods[name] = {m};
  }
  return s;
}

Sample insert_nops(const FamilyTemplate& t, Rng& rng) {
  Sample s{t.base_pkg, t.base_trace};
  for (auto& [owner, ms] : s.pkg.methods) {
    for (auto& m : ms) {
      for (std::size_t k = 0, n = 1 + below(rng, 3); k < n; ++k) {
        auto& b = m.blocks[below(rng, m.blocks.size())];
        std::size_t at = below(rng, b.instructions.size() + 1);
        b.instructions.insert(
            b.instructions.begin() + static_cast<std::ptrdiff_t>(at), Instruction::nop());
      }
    }
  }
  return s;
}

Sample rename_methods(const FamilyTemplate& t) {
  Sample s{t.base_pkg, t.base_trace};
  std::size_t i = 0;
  for (auto& [owner, ms] : s.pkg.methods) {
    for (auto& m : ms) {
      m.name = short_name(i++);
    }
  }
  return s;
}

Sample rename_fields(const FamilyTemplate& t) {
  Sample s{t.base_pkg, t.base_trace};
  for (auto& [owner, ms] : s.pkg.methods) {
    for (auto& m : ms) {
      std::map<std::string, std::string> rename;
      auto mapped = [&rename](const std::string& v) {
        auto [it, fresh] = rename.emplace(v, "");
        if (fresh) {
          it->second = "f" + short_name(rename.size() - 1);
        }
        return it->second;
      };
      for (auto& b : m.blocks) {
        for (auto& ins : b.instructions) {
          for (auto& v : ins.uses) {
            v = mapped(v);
          }
          for (auto& v : ins.defs) {
            v = mapped(v);
          }
        }
      }
    }
  }
  return s;
}

/// Class constant assigned to `var` anywhere in `m`, if unique.
std::optional<std::string> class_constant(const MethodIR& m, const std::string& var) {
  std::optional<std::string> found;
  for (const auto& b : m.blocks) {
    for (const auto& ins : b.instructions) {
      if (!ins.defs.empty() && ins.defs.front() == var) {
        if (found || ins.op != OpCode::assign_class) {
          return std::nullopt;
        }
        found = ins.operand;
      }
    }
  }
  return found;
}

Sample reflection(const FamilyTemplate& t, Rng& rng) {
  Sample s{t.base_pkg, t.base_trace};
  std::set<std::pair<std::string, std::string>> observed;
  for (const auto& r : s.trace.binder) {
    if (r.target.type == BinderTarget::Type::component) {
      observed.insert({r.caller, r.target.value});
    }
  }
  std::vector<Instruction*> covered;
  for (auto& [owner, ms] : s.pkg.methods) {
    for (auto& m : ms) {
      for (auto& b : m.blocks) {
        for (auto& ins : b.instructions) {
          if (ins.op != OpCode::new_intent_explicit) {
            continue;
          }
          auto target = class_constant(m, ins.uses[1]);
          if (target && observed.count({owner, *target})) {
            covered.push_back(&ins);
          }
        }
      }
    }
  }
  if (covered.empty()) {
    throw InapplicableTransform("no explicit intent is observed at runtime");
  }
  Instruction& ins = *covered[below(rng, covered.size())];
  ins = Instruction::opaque("reflect.newInstance", ins.defs.front(), ins.uses);
  return s;
}

Sample dynamic_loading(const FamilyTemplate& t, Rng& rng) {
  if (t.malicious_cluster.size() < 2) {
    throw InapplicableTransform("no non-root malicious component to load dynamically");
  }
  Sample s{t.base_pkg, t.base_trace};
  std::string victim = t.malicious_cluster[1 + below(rng, t.malicious_cluster.size() - 1)];
  auto& comps = s.pkg.components;
  comps.erase(
      std::remove_if(
          comps.begin(), comps.end(), [&](const ComponentDecl& c) { return c.name == victim; }),
      comps.end());
  s.pkg.methods.erase(victim);
  for (auto& r : s.trace.binder) {
    if (r.caller == victim) {
      r.dynamic_caller = true;
    }
  }
  return s;
}

} // namespace

Sample apply_transform(const FamilyTemplate& tmpl, int op, std::uint64_t seed) {
  Rng rng = seeded(seed ^ (tmpl.seed << 20), static_cast<std::uint64_t>(op));
  switch (op) {
    case 0:
      return {tmpl.base_pkg, tmpl.base_trace};
    case 1:
      return rename_classes(tmpl);
    case 2:
      return reverse_blocks(tmpl);
    case 3:
      return encrypt_strings(tmpl);
    case 4:
      return encrypt_class_constants(tmpl);
    case 5:
      return strip_debug(tmpl);
    case 6:
      return reorder_instructions(tmpl, rng);
    case 7:
      return insert_junk(tmpl, rng);
    case 8:
      return insert_nops(tmpl, rng);
    case 9:
      return rename_methods(tmpl);
    case 10:
      return rename_fields(tmpl);
    case 11:
      return reflection(tmpl, rng);
    case 12:
      return dynamic_loading(tmpl, rng);
    default:
      throw InapplicableTransform("unknown transformation " + std::to_string(op));
  }
}

BehaviorGraph runtime_graph(const AppPackage& pkg, const TraceLog& trace) {
  return complete_rbg(build_sbg(pkg, analyze_package(pkg)), trace, pkg);
}

RuntimeBehaviorSignature runtime_signature(const Sample& sample) {
  return {sample.pkg.package_name, runtime_graph(sample.pkg, sample.trace), build_sss(sample.trace)};
}

BehaviorGraph malicious_signature_graph(const FamilyTemplate& tmpl) {
  if (tmpl.malicious_cluster.empty()) {
    throw InapplicableTransform("template has no malicious cluster");
  }
  for (auto& g : decouple(runtime_graph(tmpl.base_pkg, tmpl.base_trace))) {
    if (g.find(NodeType::app, tmpl.malicious_cluster.front())) {
      return std::move(g);
    }
  }
  throw CorruptGraph("malicious root missing from the runtime graph");
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

} // namespace

double Counts::tpr() const { return ratio(tp, tp + fn); }
double Counts::fnr() const { return ratio(fn, tp + fn); }
double Counts::tnr() const { return ratio(tn, tn + fp); }
double Counts::fpr() const { return ratio(fp, tn + fp); }
double Counts::acc() const { return ratio(tp + tn, total()); }

const ModeReport* EvalReport::find(Mode mode) const {
  for (const auto& m : modes) {
    if (m.mode == mode) {
      return &m;
    }
  }
  return nullptr;
}

const TransformRow* EvalReport::row(int op) const {
  for (const auto& r : transforms) {
    if (r.op == op) {
      return &r;
    }
  }
  return nullptr;
}

EvalReport run_eval(const EvalConfig& config) {
  auto start = std::chrono::steady_clock::now();
  EvalReport report;
  for (Mode m : config.modes) {
    report.modes.push_back({m, {}});
  }

  std::vector<FamilyTemplate> families;
  std::vector<BehaviorGraph> bases;
  SignatureStore store;
  for (std::size_t f = 0; f < config.families; ++f) {
    families.push_back(generate_family(config.seed * 1000 + f, config.size));
    const FamilyTemplate& t = families.back();
    bases.push_back(malicious_signature_graph(t));
    store.insert({t.family_id, {bases.back()}, "synthetic family, seed " + std::to_string(t.seed)});
    Sss sss = build_sss(t.base_trace);
    store.add_blacklist({sss.endpoints, sss.executables});
  }

  constexpr std::size_t kUnbounded = std::numeric_limits<std::int32_t>::max();
  auto classify = [&](const RuntimeBehaviorSignature& sig, bool positive) {
    std::vector<bool> flagged;
    for (auto& mr : report.modes) {
      Verdict v = decide(sig, store, config.threshold, mr.mode, config.alpha);
      bool hit = v.decision == Decision::malicious;
      flagged.push_back(hit);
      if (positive) {
        ++(hit ? mr.counts.tp : mr.counts.fn);
      } else {
        ++(hit ? mr.counts.fp : mr.counts.tn);
      }
    }
    auto clusters = decouple(sig.rbg);
    auto indexed = match_rbg(clusters, store, config.threshold, config.alpha);
    auto unrestricted = match_rbg(clusters, store, config.threshold, kUnbounded);
    if (indexed.has_value() != unrestricted.has_value()) {
      ++report.pruning_disagreements;
    }
    return flagged;
  };

  for (int op : config.ops) {
    TransformRow row;
    row.op = op;
    row.detected.assign(report.modes.size(), 0);
    for (std::size_t f = 0; f < families.size(); ++f) {
      for (std::size_t v = 0; v < config.variants_per_op; ++v) {
        Sample sample;
        try {
          sample = apply_transform(families[f], op, config.seed * 7919 + v);
        } catch (const InapplicableTransform&) {
          ++row.inapplicable;
          continue;
        }
        RuntimeBehaviorSignature sig = runtime_signature(sample);
        ++row.samples;
        auto flagged = classify(sig, true);
        for (std::size_t i = 0; i < flagged.size(); ++i) {
          row.detected[i] += flagged[i] ? 1 : 0;
        }
        SimilarityScore own{0.0, 0, 0, true, 1, 1};
        for (const auto& cluster : decouple(sig.rbg)) {
          SimilarityScore s = similarity(cluster, bases[f]);
          if (better_score(s, own)) {
            own = s;
          }
        }
        row.min_similarity = std::min(row.min_similarity, own.value);
        row.max_similarity = std::max(row.max_similarity, own.value);
        row.exact_one += own.edit_ops == 0 ? 1 : 0;
      }
    }
    if (row.samples == 0) {
      row.min_similarity = 0.0;
    }
    report.transforms.push_back(std::move(row));
  }

  report.benign_histogram.assign(10, 0);
  std::uint64_t next_seed = config.seed * 1000003 + 17;
  for (std::size_t i = 0; i < config.benign; ++i) {
    for (;;) {
      FamilyTemplate b = generate_benign(next_seed++);
      RuntimeBehaviorSignature sig = runtime_signature({b.base_pkg, b.base_trace});
      double worst = 0.0;
      for (const auto& cluster : decouple(sig.rbg)) {
        for (const auto& base : bases) {
          worst = std::max(worst, similarity(cluster, base).value);
        }
      }
      if (worst >= kBenignRejectSimilarity) {
        ++report.benign_rejected;
        continue;
      }
      report.benign_max_similarity = std::max(report.benign_max_similarity, worst);
      ++report.benign_histogram[std::min<std::size_t>(9, static_cast<std::size_t>(worst * 10))];
      classify(sig, false);
      break;
    }
  }

  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

json to_json(const EvalReport& report) {
  json modes = json::array();
  for (const auto& m : report.modes) {
    const Counts& c = m.counts;
    modes.push_back({
        {"mode", to_string(m.mode)},
        {"tp", c.tp},
        {"fp", c.fp},
        {"tn", c.tn},
        {"fn", c.fn},
        {"tpr", c.tpr()},
        {"fnr", c.fnr()},
        {"tnr", c.tnr()},
        {"fpr", c.fpr()},
        {"acc", c.acc()},
    });
  }
  json rows = json::array();
  for (const auto& r : report.transforms) {
    json detected = json::object();
    for (std::size_t i = 0; i < report.modes.size(); ++i) {
      detected[std::string(to_string(report.modes[i].mode))] = r.detected[i];
    }
    rows.push_back({
        {"op", r.op},
        {"name", transform_name(r.op)},
        {"samples", r.samples},
        {"inapplicable", r.inapplicable},
        {"detected", detected},
        {"min_similarity", r.min_similarity},
        {"max_similarity", r.max_similarity},
        {"exact_one", r.exact_one},
    });
  }
  return {
      {"modes", modes},
      {"transforms", rows},
      {"benign",
       {{"rejected", report.benign_rejected},
        {"max_similarity", report.benign_max_similarity},
        {"histogram", report.benign_histogram}}},
      {"pruning_disagreements", report.pruning_disagreements},
      {"seconds", report.seconds},
  };
}

std::string render_table(const EvalReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "mode        TP    FP    TN    FN    TPR     FPR     ACC\n";
  for (const auto& m : report.modes) {
    const Counts& c = m.counts;
    out << std::left << std::setw(10) << to_string(m.mode) << std::right << std::setw(5) << c.tp
        << std::setw(6) << c.fp << std::setw(6) << c.tn << std::setw(6) << c.fn << "  "
        << c.tpr() << "  " << c.fpr() << "  " << c.acc() << "\n";
  }
  out << "\nop  technique                                 samples";
  for (const auto& m : report.modes) {
    out << "  " << to_string(m.mode);
  }
  out << "  min_sim\n";
  for (const auto& r : report.transforms) {
    out << std::setw(2) << r.op << "  " << std::left << std::setw(42) << transform_name(r.op)
        << std::right << std::setw(7) << r.samples;
    for (std::size_t i = 0; i < r.detected.size(); ++i) {
      out << std::setw(static_cast<int>(to_string(report.modes[i].mode).size()) + 2)
          << r.detected[i];
    }
    out << "  " << r.min_similarity << "\n";
  }
  out << "\nbenign rejected " << report.benign_rejected << ", max similarity "
      << report.benign_max_similarity << ", pruning disagreements "
      << report.pruning_disagreements << "\n";
  return out.str();
}

} // namespace monet
