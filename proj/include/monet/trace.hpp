#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace monet {

struct BinderTarget {
  enum class Type { component, system, action };
  Type type = Type::system;
  std::string value;

  bool operator==(const BinderTarget&) const = default;
};

/// One intercepted binder transaction, attributed to the calling component.
struct BinderRecord {
  std::uint64_t seq = 0;
  std::string caller;
  BinderTarget target;
  int code = 0;
  std::optional<std::string> content;
  bool dynamic_caller = false;

  bool operator==(const BinderRecord&) const = default;
};

enum class Syscall { socket, execve };

struct SyscallRecord {
  std::uint64_t seq = 0;
  Syscall call = Syscall::socket;
  std::string detail; // "host:port" for socket, executable path for execve

  bool operator==(const SyscallRecord&) const = default;
};

struct TraceLog {
  std::string app;
  std::vector<BinderRecord> binder;
  std::vector<SyscallRecord> syscalls;

  bool operator==(const TraceLog&) const = default;
};

/// Suspicious system-call set.
struct Sss {
  std::set<std::string> endpoints;
  std::set<std::string> executables;

  bool empty() const { return endpoints.empty() && executables.empty(); }
  bool operator==(const Sss&) const = default;
};

/// Lower-cases the host part of "host:port"; the port is kept verbatim.
std::string normalize_endpoint(std::string_view endpoint);

/// Parses the JSON Lines trace format. Blank lines are ignored.
/// Throws TraceSyntaxError, NonMonotoneSeq or UnknownKind.
TraceLog parse_trace(std::istream& in);
TraceLog parse_trace(std::string_view text);

/// Writes the header line followed by all records merged in seq order.
std::string write_trace(const TraceLog& trace);

Sss build_sss(const TraceLog& trace);

nlohmann::json to_json(const Sss& sss);
Sss sss_from_json(const nlohmann::json& j);

} // namespace monet
