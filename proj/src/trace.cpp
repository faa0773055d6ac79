#include "monet/trace.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "monet/errors.hpp"

namespace monet {

using nlohmann::json;

std::string normalize_endpoint(std::string_view endpoint) {
  std::size_t colon = endpoint.rfind(':');
  std::size_t host_end = colon == std::string_view::npos ? endpoint.size() : colon;
  std::string out(endpoint);
  for (std::size_t i = 0; i < host_end; ++i) {
    out[i] = static_cast<char>(std::tolower(static_cast<unsigned char>(out[i])));
  }
  return out;
}

namespace {

const json& require(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw TraceSyntaxError(std::string("missing field '") + key + "'", line);
  }
  return *it;
}

std::string require_string(const json& obj, const char* key, std::size_t line) {
  const json& v = require(obj, key, line);
  if (!v.is_string()) {
    throw TraceSyntaxError(std::string("field '") + key + "' must be a string", line);
  }
  return v.get<std::string>();
}

std::int64_t require_int(const json& obj, const char* key, std::size_t line) {
  const json& v = require(obj, key, line);
  if (!v.is_number_integer()) {
    throw TraceSyntaxError(std::string("field '") + key + "' must be an integer", line);
  }
  return v.get<std::int64_t>();
}

BinderRecord parse_binder(const json& obj, std::size_t line) {
  BinderRecord r;
  r.caller = require_string(obj, "caller", line);
  if (r.caller.empty()) {
    throw TraceSyntaxError("empty caller", line);
  }
  const json& target = require(obj, "target", line);
  if (!target.is_object()) {
    throw TraceSyntaxError("field 'target' must be an object", line);
  }
  std::string type = require_string(target, "type", line);
  if (type == "component") {
    r.target.type = BinderTarget::Type::component;
  } else if (type == "system") {
    r.target.type = BinderTarget::Type::system;
  } else if (type == "action") {
    r.target.type = BinderTarget::Type::action;
  } else {
    throw TraceSyntaxError("unknown target type '" + type + "'", line);
  }
  r.target.value = require_string(target, "value", line);
  if (r.target.value.empty()) {
    throw TraceSyntaxError("empty target value", line);
  }
  std::int64_t code = require_int(obj, "code", line);
  if (code < 0 || code > 0xFFFFFF) {
    throw TraceSyntaxError("transaction code out of range", line);
  }
  r.code = static_cast<int>(code);
  if (auto it = obj.find("content"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) {
      throw TraceSyntaxError("field 'content' must be a string", line);
    }
    r.content = it->get<std::string>();
  }
  if (auto it = obj.find("dynamic_caller"); it != obj.end()) {
    if (!it->is_boolean()) {
      throw TraceSyntaxError("field 'dynamic_caller' must be a boolean", line);
    }
    r.dynamic_caller = it->get<bool>();
  }
  return r;
}

SyscallRecord parse_syscall(const json& obj, std::size_t line) {
  SyscallRecord r;
  std::string call = require_string(obj, "call", line);
  r.detail = require_string(obj, "detail", line);
  if (call == "socket") {
    r.call = Syscall::socket;
    r.detail = normalize_endpoint(r.detail);
  } else if (call == "execve") {
    r.call = Syscall::execve;
  } else {
    throw TraceSyntaxError("unsupported system call '" + call + "'", line);
  }
  if (r.detail.empty()) {
    throw TraceSyntaxError("empty detail", line);
  }
  return r;
}

} // namespace

TraceLog parse_trace(std::istream& in) {
  TraceLog log;
  bool have_header = false;
  std::optional<std::uint64_t> last_seq;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') {
      text.pop_back();
    }
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    json obj = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (obj.is_discarded() || !obj.is_object()) {
      throw TraceSyntaxError("not a JSON object", line);
    }
    if (!have_header) {
      if (!obj.contains("app") || obj.contains("kind")) {
        throw TraceSyntaxError("first line must be the {\"app\": ...} header", line);
      }
      log.app = require_string(obj, "app", line);
      have_header = true;
      continue;
    }
    std::string kind = require_string(obj, "kind", line);
    if (kind != "binder" && kind != "syscall") {
      throw UnknownKind(kind, line);
    }
    std::int64_t seq = require_int(obj, "seq", line);
    if (seq < 0) {
      throw TraceSyntaxError("negative seq", line);
    }
    if (last_seq && static_cast<std::uint64_t>(seq) <= *last_seq) {
      throw NonMonotoneSeq(line);
    }
    last_seq = static_cast<std::uint64_t>(seq);
    if (kind == "binder") {
      BinderRecord r = parse_binder(obj, line);
      r.seq = *last_seq;
      log.binder.push_back(std::move(r));
    } else {
      SyscallRecord r = parse_syscall(obj, line);
      r.seq = *last_seq;
      log.syscalls.push_back(std::move(r));
    }
  }
  return log;
}

TraceLog parse_trace(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_trace(in);
}

std::string write_trace(const TraceLog& trace) {
  std::vector<std::pair<std::uint64_t, json>> lines;
  for (const auto& r : trace.binder) {
    std::string type = r.target.type == BinderTarget::Type::component ? "component"
        : r.target.type == BinderTarget::Type::system                 ? "system"
                                                                      : "action";
    json obj = {
        {"seq", r.seq},
        {"kind", "binder"},
        {"caller", r.caller},
        {"target", {{"type", type}, {"value", r.target.value}}},
        {"code", r.code},
        {"dynamic_caller", r.dynamic_caller},
    };
    if (r.content) {
      obj["content"] = *r.content;
    }
    lines.emplace_back(r.seq, std::move(obj));
  }
  for (const auto& r : trace.syscalls) {
    lines.emplace_back(
        r.seq,
        json{
            {"seq", r.seq},
            {"kind", "syscall"},
            {"call", r.call == Syscall::socket ? "socket" : "execve"},
            {"detail", r.detail},
        });
  }
  std::stable_sort(lines.begin(), lines.end(), [](const auto& a, const auto& b) {
    return a.first < b.first;
  });
  std::string out = json{{"app", trace.app}}.dump() + "\n";
  for (const auto& [seq, obj] : lines) {
    out += obj.dump() + "\n";
  }
  return out;
}

Sss build_sss(const TraceLog& trace) {
  Sss sss;
  for (const auto& r : trace.syscalls) {
    if (r.call == Syscall::socket) {
      sss.endpoints.insert(normalize_endpoint(r.detail));
    } else {
      sss.executables.insert(r.detail);
    }
  }
  return sss;
}

json to_json(const Sss& sss) {
  return {{"endpoints", sss.endpoints}, {"executables", sss.executables}};
}

Sss sss_from_json(const json& j) {
  if (!j.is_object()) {
    throw Error("SSS must be a JSON object");
  }
  Sss sss;
  for (const char* key : {"endpoints", "executables"}) {
    auto it = j.find(key);
    if (it == j.end()) {
      continue;
    }
    if (!it->is_array()) {
      throw Error(std::string("SSS field '") + key + "' must be an array");
    }
    for (const auto& v : *it) {
      if (!v.is_string()) {
        throw Error(std::string("SSS field '") + key + "' must contain strings");
      }
      if (std::string_view(key) == "endpoints") {
        sss.endpoints.insert(normalize_endpoint(v.get<std::string>()));
      } else {
        sss.executables.insert(v.get<std::string>());
      }
    }
  }
  return sss;
}

} // namespace monet
