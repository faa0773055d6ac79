#include "monet/app_model.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <sstream>

#include "monet/errors.hpp"

namespace monet {

SyntaxError::SyntaxError(std::size_t line, std::size_t col, std::string expected)
    : Error(
          "syntax error at " + std::to_string(line) + ":" + std::to_string(col) +
          ": expected " + expected),
      line_(line),
      col_(col),
      expected_(std::move(expected)) {}

namespace {

constexpr std::array<std::pair<ComponentKind, std::string_view>, 4> kKindNames{{
    {ComponentKind::activity, "activity"},
    {ComponentKind::service, "service"},
    {ComponentKind::receiver, "receiver"},
    {ComponentKind::provider, "provider"},
}};

bool is_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
      (c >= '0' && c <= '9') || c == '_' || c == '$' || c == '.';
}

bool is_plain_name(std::string_view text) {
  return !text.empty() && std::all_of(text.begin(), text.end(), is_name_char);
}

// ---------------------------------------------------------------------------
// Lexer

enum class Tok { name, string, punct, arrow, end };

struct Token {
  Tok kind = Tok::end;
  std::string text;
  std::size_t line = 0;
  std::size_t col = 0;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      skip_space();
      Token t;
      t.line = line_;
      t.col = col_;
      if (pos_ >= src_.size()) {
        out.push_back(t);
        return out;
      }
      char c = src_[pos_];
      if (is_name_char(c)) {
        std::size_t start = pos_;
        while (pos_ < src_.size() && is_name_char(src_[pos_])) {
          advance();
        }
        t.kind = Tok::name;
        t.text = std::string(src_.substr(start, pos_ - start));
      } else if (c == '"') {
        t.kind = Tok::string;
        t.text = read_string(t);
      } else if (c == '-' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '>') {
        advance();
        advance();
        t.kind = Tok::arrow;
        t.text = "->";
      } else if (std::string_view("{}:;,()=").find(c) != std::string_view::npos) {
        advance();
        t.kind = Tok::punct;
        t.text = std::string(1, c);
      } else {
        throw SyntaxError(line_, col_, "token");
      }
      out.push_back(std::move(t));
    }
  }

 private:
  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_space() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') {
          advance();
        }
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        advance();
      } else {
        return;
      }
    }
  }

  std::string read_string(const Token& start) {
    std::string out;
    advance(); // opening quote
    while (true) {
      if (pos_ >= src_.size() || src_[pos_] == '\n') {
        throw SyntaxError(start.line, start.col, "closing '\"'");
      }
      char c = src_[pos_];
      if (c == '"') {
        advance();
        return out;
      }
      if (c == '\\') {
        advance();
        if (pos_ >= src_.size()) {
          throw SyntaxError(line_, col_, "escape character");
        }
        char e = src_[pos_];
        switch (e) {
          case 'n':
            out.push_back('\n');
            break;
          case 't':
            out.push_back('\t');
            break;
          case '"':
          case '\\':
            out.push_back(e);
            break;
          default:
            throw SyntaxError(line_, col_, "one of \\n \\t \\\" \\\\");
        }
        advance();
        continue;
      }
      out.push_back(c);
      advance();
    }
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t col_ = 1;
};

// ---------------------------------------------------------------------------
// Parser

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

  AppPackage run() {
    AppPackage pkg;
    expect_keyword("package");
    pkg.package_name = expect_word("package name");
    std::set<std::string> seen;
    while (peek().kind != Tok::end) {
      const Token& t = peek();
      if (is_keyword(t, "component")) {
        next();
        ComponentDecl decl = parse_component();
        if (!seen.insert(decl.name).second) {
          throw DuplicateComponent(decl.name);
        }
        pkg.components.push_back(std::move(decl));
      } else if (is_keyword(t, "method")) {
        next();
        auto [owner, method] = parse_method();
        pkg.methods[owner].push_back(std::move(method));
      } else {
        fail("'component' or 'method'");
      }
    }
    validate(pkg);
    return pkg;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    std::size_t i = std::min(pos_ + ahead, toks_.size() - 1);
    return toks_[i];
  }

  const Token& next() {
    const Token& t = toks_[pos_];
    if (pos_ + 1 < toks_.size()) {
      ++pos_;
    }
    return t;
  }

  [[noreturn]] void fail(const std::string& expected) const {
    throw SyntaxError(peek().line, peek().col, expected);
  }

  static bool is_keyword(const Token& t, std::string_view word) {
    return t.kind == Tok::name && t.text == word;
  }

  static bool is_punct(const Token& t, char c) {
    return t.kind == Tok::punct && t.text.size() == 1 && t.text[0] == c;
  }

  void expect_keyword(std::string_view word) {
    if (!is_keyword(peek(), word)) {
      fail("'" + std::string(word) + "'");
    }
    next();
  }

  void expect_punct(char c) {
    if (!is_punct(peek(), c)) {
      fail(std::string("'") + c + "'");
    }
    next();
  }

  std::string expect_name(const std::string& what) {
    if (peek().kind != Tok::name) {
      fail(what);
    }
    return next().text;
  }

  // A name or a quoted string.
  std::string expect_word(const std::string& what) {
    if (peek().kind != Tok::name && peek().kind != Tok::string) {
      fail(what);
    }
    return next().text;
  }

  ComponentDecl parse_component() {
    ComponentDecl decl;
    const Token& kind_tok = peek();
    auto kind = kind_tok.kind == Tok::name
        ? component_kind_from_string(kind_tok.text)
        : std::nullopt;
    if (!kind) {
      fail("component kind (activity|service|receiver|provider)");
    }
    next();
    decl.kind = *kind;
    decl.name = expect_word("component class name");
    if (is_keyword(peek(), "filters")) {
      next();
      decl.intent_filters.push_back(expect_word("intent filter action"));
      while (is_punct(peek(), ',')) {
        next();
        decl.intent_filters.push_back(expect_word("intent filter action"));
      }
    }
    return decl;
  }

  std::pair<std::string, MethodIR> parse_method() {
    std::string owner = expect_word("component class name");
    MethodIR method;
    method.name = expect_word("method name");
    std::optional<std::string> entry;
    if (is_keyword(peek(), "entry")) {
      next();
      entry = expect_name("entry block id");
    }
    expect_punct('{');
    while (!is_punct(peek(), '}')) {
      parse_block(method);
    }
    next();
    if (method.blocks.empty()) {
      method.blocks.push_back(BasicBlock{"b0", {}});
    }
    method.entry = entry ? *entry : method.blocks.front().id;
    return {std::move(owner), std::move(method)};
  }

  void parse_block(MethodIR& method) {
    BasicBlock block;
    block.id = expect_name("block id");
    expect_punct(':');
    while (true) {
      const Token& t = peek();
      if (is_punct(t, '}') || t.kind == Tok::arrow || t.kind == Tok::end) {
        break;
      }
      if (t.kind == Tok::name && is_punct(peek(1), ':')) {
        break; // next block
      }
      block.instructions.push_back(parse_instruction());
      expect_punct(';');
    }
    if (peek().kind == Tok::arrow) {
      next();
      method.edges.emplace_back(block.id, expect_name("successor block id"));
      while (is_punct(peek(), ',')) {
        next();
        method.edges.emplace_back(block.id, expect_name("successor block id"));
      }
    }
    method.blocks.push_back(std::move(block));
  }

  std::string parse_single_arg() {
    expect_punct('(');
    std::string var = expect_name("variable");
    expect_punct(')');
    return var;
  }

  std::vector<std::string> parse_optional_args() {
    std::vector<std::string> out;
    if (!is_punct(peek(), '(')) {
      return out;
    }
    next();
    if (!is_punct(peek(), ')')) {
      out.push_back(expect_name("variable"));
      while (is_punct(peek(), ',')) {
        next();
        out.push_back(expect_name("variable"));
      }
    }
    expect_punct(')');
    return out;
  }

  Instruction parse_instruction() {
    const Token& head = peek();
    if (head.kind != Tok::name) {
      fail("instruction");
    }
    if (is_punct(peek(1), '=')) {
      std::string var = next().text;
      next(); // '='
      return parse_rhs(std::move(var));
    }
    std::string word = next().text;
    if (word == "start_activity") {
      return Instruction::start_activity(parse_single_arg());
    }
    if (word == "start_service") {
      return Instruction::start_service(parse_single_arg());
    }
    if (word == "send_broadcast") {
      return Instruction::send_broadcast(parse_single_arg());
    }
    if (word == "nop") {
      return Instruction::nop();
    }
    if (word == "opaque") {
      std::string tag = expect_word("opaque tag");
      return Instruction::opaque(std::move(tag), std::nullopt, parse_optional_args());
    }
    throw SyntaxError(head.line, head.col, "instruction");
  }

  Instruction parse_rhs(std::string var) {
    const Token& t = peek();
    if (t.kind == Tok::string) {
      return Instruction::assign_string(std::move(var), next().text);
    }
    if (t.kind != Tok::name) {
      fail("right-hand side");
    }
    if (t.text == "this") {
      next();
      return Instruction::assign_this(std::move(var));
    }
    if (t.text == "class") {
      next();
      return Instruction::assign_class(std::move(var), expect_word("class name"));
    }
    if (t.text == "intent") {
      next();
      expect_punct('(');
      std::string caller = expect_name("caller variable");
      expect_punct(',');
      std::string target = expect_name("target variable");
      expect_punct(')');
      return Instruction::new_intent_explicit(
          std::move(var), std::move(caller), std::move(target));
    }
    if (t.text == "intent_action") {
      next();
      return Instruction::new_intent_action(std::move(var), parse_single_arg());
    }
    if (t.text == "opaque") {
      next();
      std::string tag = expect_word("opaque tag");
      return Instruction::opaque(std::move(tag), std::move(var), parse_optional_args());
    }
    fail("this | class <name> | \"literal\" | intent(..) | intent_action(..) | opaque <tag>");
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Renderer

std::string quote_if_needed(std::string_view text) {
  if (is_plain_name(text)) {
    return std::string(text);
  }
  std::string out = "\"";
  for (char c : text) {
    switch (c) {
      case '"':
        out += "\\\"";
        break;
      case '\\':
        out += "\\\\";
        break;
      case '\n':
        out += "\\n";
        break;
      case '\t':
        out += "\\t";
        break;
      default:
        out.push_back(c);
    }
  }
  out.push_back('"');
  return out;
}

std::string quote_always(std::string_view text) {
  std::string q = quote_if_needed(text);
  return q.front() == '"' ? q : "\"" + q + "\"";
}

void render_instruction(std::ostream& os, const Instruction& ins) {
  auto use = [&](std::size_t i) { return ins.uses.at(i); };
  auto def = [&]() { return ins.defs.at(0); };
  switch (ins.op) {
    case OpCode::assign_this:
      os << def() << " = this";
      break;
    case OpCode::assign_class:
      os << def() << " = class " << quote_if_needed(ins.operand);
      break;
    case OpCode::assign_string:
      os << def() << " = " << quote_always(ins.operand);
      break;
    case OpCode::new_intent_explicit:
      os << def() << " = intent(" << use(0) << ", " << use(1) << ")";
      break;
    case OpCode::new_intent_action:
      os << def() << " = intent_action(" << use(0) << ")";
      break;
    case OpCode::start_activity:
    case OpCode::start_service:
    case OpCode::send_broadcast:
      os << to_string(ins.op) << "(" << use(0) << ")";
      break;
    case OpCode::opaque:
      if (!ins.defs.empty()) {
        os << def() << " = ";
      }
      os << "opaque " << quote_if_needed(ins.operand);
      if (!ins.uses.empty()) {
        os << "(";
        for (std::size_t i = 0; i < ins.uses.size(); ++i) {
          os << (i ? ", " : "") << ins.uses[i];
        }
        os << ")";
      }
      break;
    case OpCode::nop:
      os << "nop";
      break;
  }
}

} // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(ComponentKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) {
      return name;
    }
  }
  return "activity";
}

std::optional<ComponentKind> component_kind_from_string(std::string_view text) {
  for (const auto& [k, name] : kKindNames) {
    if (name == text) {
      return k;
    }
  }
  return std::nullopt;
}

std::string_view to_string(OpCode op) {
  switch (op) {
    case OpCode::assign_this:
      return "assign_this";
    case OpCode::assign_class:
      return "assign_class";
    case OpCode::assign_string:
      return "assign_string";
    case OpCode::new_intent_explicit:
      return "new_intent_explicit";
    case OpCode::new_intent_action:
      return "new_intent_action";
    case OpCode::start_activity:
      return "start_activity";
    case OpCode::start_service:
      return "start_service";
    case OpCode::send_broadcast:
      return "send_broadcast";
    case OpCode::opaque:
      return "opaque";
    case OpCode::nop:
      return "nop";
  }
  return "nop";
}

Instruction Instruction::assign_this(std::string var) {
  return {OpCode::assign_this, {}, {std::move(var)}, {}};
}

Instruction Instruction::assign_class(std::string var, std::string class_name) {
  return {OpCode::assign_class, std::move(class_name), {std::move(var)}, {}};
}

Instruction Instruction::assign_string(std::string var, std::string literal) {
  return {OpCode::assign_string, std::move(literal), {std::move(var)}, {}};
}

Instruction Instruction::new_intent_explicit(
    std::string intent, std::string caller_var, std::string target_var) {
  return {
      OpCode::new_intent_explicit,
      {},
      {std::move(intent)},
      {std::move(caller_var), std::move(target_var)}};
}

Instruction Instruction::new_intent_action(std::string intent, std::string action_var) {
  return {OpCode::new_intent_action, {}, {std::move(intent)}, {std::move(action_var)}};
}

Instruction Instruction::start_activity(std::string intent) {
  return {OpCode::start_activity, {}, {}, {std::move(intent)}};
}

Instruction Instruction::start_service(std::string intent) {
  return {OpCode::start_service, {}, {}, {std::move(intent)}};
}

Instruction Instruction::send_broadcast(std::string intent) {
  return {OpCode::send_broadcast, {}, {}, {std::move(intent)}};
}

Instruction Instruction::opaque(
    std::string tag, std::optional<std::string> def, std::vector<std::string> uses) {
  Instruction ins{OpCode::opaque, std::move(tag), {}, std::move(uses)};
  if (def) {
    ins.defs.push_back(std::move(*def));
  }
  return ins;
}

Instruction Instruction::nop() {
  return {};
}

bool Instruction::is_start_call() const {
  return op == OpCode::start_activity || op == OpCode::start_service ||
      op == OpCode::send_broadcast;
}

bool Instruction::well_formed() const {
  auto all_names = [](const std::vector<std::string>& vars) {
    return std::all_of(vars.begin(), vars.end(), is_plain_name);
  };
  if (!all_names(defs) || !all_names(uses)) {
    return false;
  }
  switch (op) {
    case OpCode::assign_this:
      return defs.size() == 1 && uses.empty() && operand.empty();
    case OpCode::assign_class:
      return defs.size() == 1 && uses.empty() && !operand.empty();
    case OpCode::assign_string:
      return defs.size() == 1 && uses.empty();
    case OpCode::new_intent_explicit:
      return defs.size() == 1 && uses.size() == 2 && operand.empty();
    case OpCode::new_intent_action:
      return defs.size() == 1 && uses.size() == 1 && operand.empty();
    case OpCode::start_activity:
    case OpCode::start_service:
    case OpCode::send_broadcast:
      return defs.empty() && uses.size() == 1 && operand.empty();
    case OpCode::opaque:
      return defs.size() <= 1 && !operand.empty();
    case OpCode::nop:
      return defs.empty() && uses.empty() && operand.empty();
  }
  return false;
}

bool MethodIR::operator==(const MethodIR& other) const {
  if (name != other.name || entry != other.entry || blocks != other.blocks ||
      edges.size() != other.edges.size()) {
    return false;
  }
  auto a = edges;
  auto b = other.edges;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}

const BasicBlock* MethodIR::find_block(std::string_view id) const {
  for (const auto& b : blocks) {
    if (b.id == id) {
      return &b;
    }
  }
  return nullptr;
}

const ComponentDecl* AppPackage::find_component(std::string_view name) const {
  for (const auto& c : components) {
    if (c.name == name) {
      return &c;
    }
  }
  return nullptr;
}

void validate(const MethodIR& method) {
  if (method.name.empty()) {
    throw InvalidPackage("method with empty name");
  }
  std::set<std::string_view> ids;
  for (const auto& b : method.blocks) {
    if (!is_plain_name(b.id)) {
      throw InvalidPackage("method " + method.name + ": invalid block id '" + b.id + "'");
    }
    if (!ids.insert(b.id).second) {
      throw InvalidPackage("method " + method.name + ": duplicate block id " + b.id);
    }
    for (const auto& ins : b.instructions) {
      if (!ins.well_formed()) {
        throw InvalidPackage(
            "method " + method.name + ", block " + b.id + ": malformed " +
            std::string(to_string(ins.op)) + " instruction");
      }
    }
  }
  if (!ids.count(method.entry)) {
    throw InvalidPackage("method " + method.name + ": entry block " + method.entry + " missing");
  }
  for (const auto& [from, to] : method.edges) {
    if (!ids.count(from) || !ids.count(to)) {
      throw InvalidPackage(
          "method " + method.name + ": edge " + from + " -> " + to +
          " references an unknown block");
    }
  }
}

void validate(const AppPackage& pkg) {
  if (pkg.package_name.empty()) {
    throw InvalidPackage("empty package name");
  }
  if (pkg.components.empty()) {
    throw InvalidPackage("package declares no components");
  }
  std::set<std::string_view> names;
  for (const auto& c : pkg.components) {
    if (c.name.empty()) {
      throw InvalidPackage("component with empty name");
    }
    if (!names.insert(c.name).second) {
      throw DuplicateComponent(c.name);
    }
  }
  for (const auto& [owner, methods] : pkg.methods) {
    if (!names.count(owner)) {
      throw UnknownComponentRef(owner);
    }
    for (const auto& m : methods) {
      validate(m);
    }
  }
}

AppPackage parse_package(std::string_view text) {
  return Parser(Lexer(text).run()).run();
}

std::string render_package(const AppPackage& pkg) {
  std::ostringstream os;
  os << "package " << quote_if_needed(pkg.package_name) << "\n\n";
  for (const auto& c : pkg.components) {
    os << "component " << to_string(c.kind) << " " << quote_if_needed(c.name);
    if (!c.intent_filters.empty()) {
      os << " filters ";
      for (std::size_t i = 0; i < c.intent_filters.size(); ++i) {
        os << (i ? "," : "") << quote_if_needed(c.intent_filters[i]);
      }
    }
    os << "\n";
  }
  for (const auto& [owner, methods] : pkg.methods) {
    for (const auto& m : methods) {
      os << "\nmethod " << quote_if_needed(owner) << " " << quote_if_needed(m.name);
      if (m.blocks.empty() || m.blocks.front().id != m.entry) {
        os << " entry " << m.entry;
      }
      os << " {\n";
      for (const auto& b : m.blocks) {
        os << "  " << b.id << ":";
        for (const auto& ins : b.instructions) {
          os << " ";
          render_instruction(os, ins);
          os << ";";
        }
        bool first = true;
        for (const auto& [from, to] : m.edges) {
          if (from != b.id) {
            continue;
          }
          os << (first ? " -> " : ", ") << to;
          first = false;
        }
        os << "\n";
      }
      os << "}\n";
    }
  }
  return os.str();
}

} // namespace monet
