#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace monet {

enum class ComponentKind { activity, service, receiver, provider };

std::string_view to_string(ComponentKind kind);
std::optional<ComponentKind> component_kind_from_string(std::string_view text);

struct ComponentDecl {
  std::string name;
  ComponentKind kind = ComponentKind::activity;
  std::vector<std::string> intent_filters;

  bool operator==(const ComponentDecl&) const = default;
};

enum class OpCode {
  assign_this,
  assign_class,
  assign_string,
  new_intent_explicit,
  new_intent_action,
  start_activity,
  start_service,
  send_broadcast,
  opaque,
  nop,
};

std::string_view to_string(OpCode op);

/// One IR instruction. `operand` carries the class name for assign_class,
/// the literal for assign_string and the tag for opaque; it is empty for
/// every other op.
struct Instruction {
  OpCode op = OpCode::nop;
  std::string operand;
  std::vector<std::string> defs;
  std::vector<std::string> uses;

  bool operator==(const Instruction&) const = default;

  static Instruction assign_this(std::string var);
  static Instruction assign_class(std::string var, std::string class_name);
  static Instruction assign_string(std::string var, std::string literal);
  static Instruction new_intent_explicit(
      std::string intent, std::string caller_var, std::string target_var);
  static Instruction new_intent_action(std::string intent, std::string action_var);
  static Instruction start_activity(std::string intent);
  static Instruction start_service(std::string intent);
  static Instruction send_broadcast(std::string intent);
  /// `def` may be empty (no variable written). `uses` may be empty.
  static Instruction opaque(
      std::string tag,
      std::optional<std::string> def = std::nullopt,
      std::vector<std::string> uses = {});
  static Instruction nop();

  bool is_start_call() const;
  /// True when defs/uses agree with the arity required by `op`.
  bool well_formed() const;
};

struct BasicBlock {
  std::string id;
  std::vector<Instruction> instructions;

  bool operator==(const BasicBlock&) const = default;
};

struct MethodIR {
  std::string name;
  std::vector<BasicBlock> blocks;
  std::vector<std::pair<std::string, std::string>> edges;
  std::string entry;

  /// Edges compare as a multiset; the text format groups them by source block.
  bool operator==(const MethodIR& other) const;

  const BasicBlock* find_block(std::string_view id) const;
};

struct AppPackage {
  std::string package_name;
  std::vector<ComponentDecl> components;
  std::map<std::string, std::vector<MethodIR>> methods;

  bool operator==(const AppPackage&) const = default;

  const ComponentDecl* find_component(std::string_view name) const;
};

/// Checks every type invariant; throws DuplicateComponent,
/// UnknownComponentRef or InvalidPackage.
void validate(const AppPackage& pkg);
void validate(const MethodIR& method);

/// Parses the package-IR text format. Throws SyntaxError on malformed input
/// and the `validate` errors on well-formed but invalid packages.
AppPackage parse_package(std::string_view text);

/// Renders `pkg` in the canonical text format. Blocks keep their order; an
/// `entry` clause is written only when the entry is not the first block.
std::string render_package(const AppPackage& pkg);

} // namespace monet
