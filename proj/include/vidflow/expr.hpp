#pragma once

// Expression language used by signal handlers, dataset and playlist
// transforms, annotation encodings and cursor policies. It is a small
// subset of the Vega expression language plus the player reference syntax
// (`@player.signal`, `@surface.invert(x)`, `$width`).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "vidflow/error.hpp"

namespace vidflow {

using Value = nlohmann::json;

// ---------------------------------------------------------------------------
// Value helpers (JavaScript-flavoured coercions)
// ---------------------------------------------------------------------------

inline bool truthy(const Value& v) {
  if (v.is_null()) return false;
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number()) {
    double d = v.get<double>();
    return d != 0.0 && !std::isnan(d);
  }
  if (v.is_string()) return !v.get_ref<const std::string&>().empty();
  return true;
}

inline std::string format_number(double d) {
  if (std::isnan(d)) return "NaN";
  if (std::isinf(d)) return d > 0 ? "Infinity" : "-Infinity";
  if (d == std::floor(d) && std::fabs(d) < 1e15) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f", d);
    return buf;
  }
  // Shortest representation that round-trips.
  return Value(d).dump();
}

inline std::string display_string(const Value& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return format_number(v.get<double>());
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_null()) return "null";
  return v.dump();
}

// ---------------------------------------------------------------------------
// Scales
// ---------------------------------------------------------------------------

enum class ScaleType { Linear, Time, Band, Point, Ordinal };

inline const char* to_string(ScaleType t) {
  switch (t) {
    case ScaleType::Linear: return "linear";
    case ScaleType::Time: return "time";
    case ScaleType::Band: return "band";
    case ScaleType::Point: return "point";
    case ScaleType::Ordinal: return "ordinal";
  }
  return "linear";
}

inline bool is_continuous(ScaleType t) { return t == ScaleType::Linear || t == ScaleType::Time; }

/// A resolved scale: numeric two-point range and a domain that is either
/// numeric [lo, hi] (continuous scales) or a list of categories.
struct Scale {
  ScaleType type = ScaleType::Linear;
  Value domain = Value::array();
  double range_lo = 0.0;
  double range_hi = 1.0;
  bool clamp = false;

  double apply(const Value& v) const;
  Value invert(double x) const;
};

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

namespace ast {
struct Literal {
  Value value;
};
/// Reference to a signal. Player signals keep their `@player.signal` form.
struct SignalRef {
  std::string name;
};
struct EventField {
  std::string field;
};
struct DatumField {
  std::string field;
};
struct Member {
  ExprPtr object;
  std::string field;
};
struct Index {
  ExprPtr object;
  ExprPtr index;
};
struct ArrayLit {
  std::vector<ExprPtr> items;
};
struct Call {
  std::string fn;
  std::vector<ExprPtr> args;
};
struct Unary {
  std::string op;
  ExprPtr arg;
};
struct Binary {
  std::string op;
  ExprPtr lhs;
  ExprPtr rhs;
};
struct ScaleInvert {
  std::string scale;
  ExprPtr arg;
};
struct Conditional {
  ExprPtr cond;
  ExprPtr then;
  ExprPtr otherwise;
};
}  // namespace ast

struct Expr {
  using Node = std::variant<ast::Literal, ast::SignalRef, ast::EventField, ast::DatumField, ast::Member,
                            ast::Index, ast::ArrayLit, ast::Call, ast::Unary, ast::Binary, ast::ScaleInvert,
                            ast::Conditional>;
  Node node;

  template <class T>
  const T* as() const {
    return std::get_if<T>(&node);
  }
};

template <class T>
ExprPtr make_expr(T node) {
  return std::make_shared<const Expr>(Expr{std::move(node)});
}

bool equal(const Expr& a, const Expr& b);
inline bool equal(const ExprPtr& a, const ExprPtr& b) {
  if (!a || !b) return a == b;
  return equal(*a, *b);
}

/// Functions the evaluator knows. Anything else fails to parse.
inline const std::set<std::string, std::less<>>& known_functions() {
  static const std::set<std::string, std::less<>> fns{
      "min",   "max",      "clamp",    "abs",   "floor",  "ceil",  "round",   "sqrt",   "pow",
      "log",   "exp",      "inrange",  "if",    "isValid", "length", "scale", "format", "toString",
      "toNumber", "lead",  "lag",      "span"};
  return fns;
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

namespace detail {

class Parser {
 public:
  explicit Parser(std::string_view src) : src_(src) {}

  ExprPtr parse() {
    skip_ws();
    if (pos_ >= src_.size()) throw ParseError("empty expression", pos_);
    ExprPtr e = conditional();
    skip_ws();
    if (pos_ != src_.size()) throw ParseError("unexpected '" + std::string(1, src_[pos_]) + "'", pos_);
    return e;
  }

 private:
  std::string_view src_;
  std::size_t pos_ = 0;

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }
  bool peek(std::string_view tok) {
    skip_ws();
    return src_.substr(pos_, tok.size()) == tok;
  }
  bool accept(std::string_view tok) {
    if (!peek(tok)) return false;
    pos_ += tok.size();
    return true;
  }
  void expect(std::string_view tok) {
    if (!accept(tok)) throw ParseError("expected '" + std::string(tok) + "'", pos_);
  }
  static bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
  static bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

  std::string identifier() {
    skip_ws();
    if (pos_ >= src_.size() || !ident_start(src_[pos_])) throw ParseError("expected identifier", pos_);
    std::size_t start = pos_;
    while (pos_ < src_.size() && ident_char(src_[pos_])) ++pos_;
    return std::string(src_.substr(start, pos_ - start));
  }

  ExprPtr conditional() {
    ExprPtr cond = logical_or();
    if (accept("?")) {
      ExprPtr a = conditional();
      expect(":");
      ExprPtr b = conditional();
      return make_expr(ast::Conditional{cond, a, b});
    }
    return cond;
  }

  ExprPtr logical_or() {
    ExprPtr lhs = logical_and();
    while (accept("||")) lhs = make_expr(ast::Binary{"||", lhs, logical_and()});
    return lhs;
  }

  ExprPtr logical_and() {
    ExprPtr lhs = equality();
    while (accept("&&")) lhs = make_expr(ast::Binary{"&&", lhs, equality()});
    return lhs;
  }

  ExprPtr equality() {
    ExprPtr lhs = relational();
    for (;;) {
      std::string op;
      if (accept("===")) op = "===";
      else if (accept("!==")) op = "!==";
      else if (accept("==")) op = "==";
      else if (accept("!=")) op = "!=";
      else return lhs;
      lhs = make_expr(ast::Binary{op, lhs, relational()});
    }
  }

  ExprPtr relational() {
    ExprPtr lhs = additive();
    for (;;) {
      std::string op;
      if (accept("<=")) op = "<=";
      else if (accept(">=")) op = ">=";
      else if (accept("<")) op = "<";
      else if (accept(">")) op = ">";
      else return lhs;
      lhs = make_expr(ast::Binary{op, lhs, additive()});
    }
  }

  ExprPtr additive() {
    ExprPtr lhs = multiplicative();
    for (;;) {
      if (accept("+")) lhs = make_expr(ast::Binary{"+", lhs, multiplicative()});
      else if (accept("-")) lhs = make_expr(ast::Binary{"-", lhs, multiplicative()});
      else return lhs;
    }
  }

  ExprPtr multiplicative() {
    ExprPtr lhs = unary();
    for (;;) {
      if (accept("*")) lhs = make_expr(ast::Binary{"*", lhs, unary()});
      else if (accept("/")) lhs = make_expr(ast::Binary{"/", lhs, unary()});
      else if (accept("%")) lhs = make_expr(ast::Binary{"%", lhs, unary()});
      else return lhs;
    }
  }

  ExprPtr unary() {
    if (accept("-")) {
      // A minus sign directly attached to a number is a negative literal.
      if (pos_ < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.')) {
        ExprPtr lit = number();
        return postfix(make_expr(ast::Literal{Value(-lit->as<ast::Literal>()->value.get<double>())}));
      }
      return make_expr(ast::Unary{"-", unary()});
    }
    if (peek("!") && !peek("!=")) {
      ++pos_;
      return make_expr(ast::Unary{"!", unary()});
    }
    if (accept("+")) return make_expr(ast::Unary{"+", unary()});
    return postfix(primary());
  }

  ExprPtr postfix(ExprPtr e) {
    for (;;) {
      if (accept(".")) {
        std::string field = identifier();
        if (peek("(")) throw ParseError("method calls are not supported", pos_);
        e = member(std::move(e), field);
      } else if (accept("[")) {
        ExprPtr idx = conditional();
        expect("]");
        e = make_expr(ast::Index{e, idx});
      } else {
        return e;
      }
    }
  }

  // `datum.a.b` folds to a single datum field path; `event.x` to an event field.
  static ExprPtr member(ExprPtr obj, const std::string& field) {
    if (auto* d = obj->as<ast::DatumField>(); d && !d->field.empty())
      return make_expr(ast::DatumField{d->field + "." + field});
    return make_expr(ast::Member{std::move(obj), field});
  }

  std::vector<ExprPtr> args() {
    std::vector<ExprPtr> out;
    expect("(");
    if (accept(")")) return out;
    do {
      out.push_back(conditional());
    } while (accept(","));
    expect(")");
    return out;
  }

  ExprPtr number() {
    std::size_t start = pos_;
    while (pos_ < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.')) ++pos_;
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      ++pos_;
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }
    std::string text(src_.substr(start, pos_ - start));
    char* end = nullptr;
    double d = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size()) throw ParseError("malformed number '" + text + "'", start);
    return make_expr(ast::Literal{Value(d)});
  }

  ExprPtr string_literal() {
    char quote = src_[pos_++];
    std::string out;
    while (pos_ < src_.size() && src_[pos_] != quote) {
      char c = src_[pos_++];
      if (c == '\\' && pos_ < src_.size()) {
        char n = src_[pos_++];
        switch (n) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          default: out += n;
        }
      } else {
        out += c;
      }
    }
    if (pos_ >= src_.size()) throw ParseError("unterminated string", pos_);
    ++pos_;
    return make_expr(ast::Literal{Value(out)});
  }

  ExprPtr primary() {
    skip_ws();
    if (pos_ >= src_.size()) throw ParseError("unexpected end of expression", pos_);
    char c = src_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && pos_ + 1 < src_.size() &&
                                                         std::isdigit(static_cast<unsigned char>(src_[pos_ + 1]))))
      return number();
    if (c == '\'' || c == '"') return string_literal();
    if (accept("(")) {
      ExprPtr e = conditional();
      expect(")");
      return e;
    }
    if (accept("[")) {
      ast::ArrayLit arr;
      if (!accept("]")) {
        do {
          arr.items.push_back(conditional());
        } while (accept(","));
        expect("]");
      }
      return make_expr(std::move(arr));
    }
    if (accept("$")) return make_expr(ast::SignalRef{identifier()});
    if (accept("@")) {
      std::string object = identifier();
      std::size_t save = pos_;
      if (accept(".")) {
        std::string field = identifier();
        if (peek("(")) {
          if (field != "invert") throw ParseError("unsupported method '" + field + "'", pos_);
          auto a = args();
          if (a.size() != 1) throw ParseError("invert takes one argument", pos_);
          return make_expr(ast::ScaleInvert{object, a[0]});
        }
        return make_expr(ast::SignalRef{"@" + object + "." + field});
      }
      pos_ = save;
      return make_expr(ast::SignalRef{"@" + object});
    }
    if (ident_start(c)) {
      std::size_t start = pos_;
      std::string name = identifier();
      if (name == "true") return make_expr(ast::Literal{Value(true)});
      if (name == "false") return make_expr(ast::Literal{Value(false)});
      if (name == "null") return make_expr(ast::Literal{Value(nullptr)});
      if (name == "event" || name == "datum") {
        if (!accept(".")) {
          if (name == "datum") return make_expr(ast::DatumField{""});
          throw ParseError("expected '.' after event", pos_);
        }
        std::string field = identifier();
        if (name == "event") return make_expr(ast::EventField{field});
        return make_expr(ast::DatumField{field});
      }
      if (peek("(")) {
        if (name == "invert") {
          auto a = args();
          if (a.size() != 2) throw ParseError("invert takes (scale, value)", start);
          auto* lit = a[0]->as<ast::Literal>();
          if (!lit || !lit->value.is_string()) throw ParseError("invert expects a scale name literal", start);
          return make_expr(ast::ScaleInvert{lit->value.get<std::string>(), a[1]});
        }
        if (!known_functions().count(name)) throw ParseError("unknown function '" + name + "'", start);
        return make_expr(ast::Call{name, args()});
      }
      return make_expr(ast::SignalRef{name});
    }
    throw ParseError("unexpected '" + std::string(1, c) + "'", pos_);
  }
};

}  // namespace detail

/// Parses an expression; throws ParseError.
inline ExprPtr parse_expr(std::string_view text) { return detail::Parser(text).parse(); }

// ---------------------------------------------------------------------------
// Printer (canonical form; parse(print(e)) is structurally equal to e)
// ---------------------------------------------------------------------------

inline std::string quote_string(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    if (c == '\t') {
      out += "\\t";
      continue;
    }
    out += c;
  }
  return out + "'";
}

inline std::string to_string(const Expr& e);
inline std::string to_string(const ExprPtr& e) { return e ? to_string(*e) : std::string{}; }

inline std::string to_string(const Expr& e) {
  struct Printer {
    std::string operator()(const ast::Literal& n) const {
      const Value& v = n.value;
      if (v.is_string()) return quote_string(v.get<std::string>());
      if (v.is_number()) {
        double d = v.get<double>();
        std::string s = format_number(std::fabs(d));
        return d < 0 ? "(-" + s + ")" : s;
      }
      return display_string(v);
    }
    std::string operator()(const ast::SignalRef& n) const {
      if (!n.name.empty() && n.name[0] == '@') return n.name;
      return n.name;
    }
    std::string operator()(const ast::EventField& n) const { return "event." + n.field; }
    std::string operator()(const ast::DatumField& n) const { return n.field.empty() ? "datum" : "datum." + n.field; }
    std::string operator()(const ast::Member& n) const { return to_string(n.object) + "." + n.field; }
    std::string operator()(const ast::Index& n) const { return to_string(n.object) + "[" + to_string(n.index) + "]"; }
    std::string operator()(const ast::ArrayLit& n) const {
      std::string s = "[";
      for (std::size_t i = 0; i < n.items.size(); ++i) s += (i ? ", " : "") + to_string(n.items[i]);
      return s + "]";
    }
    std::string operator()(const ast::Call& n) const {
      std::string s = n.fn + "(";
      for (std::size_t i = 0; i < n.args.size(); ++i) s += (i ? ", " : "") + to_string(n.args[i]);
      return s + ")";
    }
    std::string operator()(const ast::Unary& n) const {
      std::string arg = to_string(n.arg);
      if (n.arg->as<ast::Literal>()) arg = "(" + arg + ")";
      return "(" + n.op + arg + ")";
    }
    std::string operator()(const ast::Binary& n) const {
      return "(" + to_string(n.lhs) + " " + n.op + " " + to_string(n.rhs) + ")";
    }
    std::string operator()(const ast::ScaleInvert& n) const {
      return "invert(" + quote_string(n.scale) + ", " + to_string(n.arg) + ")";
    }
    std::string operator()(const ast::Conditional& n) const {
      return "(" + to_string(n.cond) + " ? " + to_string(n.then) + " : " + to_string(n.otherwise) + ")";
    }
  };
  return std::visit(Printer{}, e.node);
}

// ---------------------------------------------------------------------------
// Structural equality, traversal, rewriting
// ---------------------------------------------------------------------------

inline bool equal(const Expr& a, const Expr& b) {
  if (a.node.index() != b.node.index()) return false;
  auto eq_list = [](const std::vector<ExprPtr>& x, const std::vector<ExprPtr>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!equal(x[i], y[i])) return false;
    return true;
  };
  return std::visit(
      [&](const auto& n) -> bool {
        using T = std::decay_t<decltype(n)>;
        const T& m = std::get<T>(b.node);
        if constexpr (std::is_same_v<T, ast::Literal>) {
          if (n.value.is_number() && m.value.is_number()) return n.value.template get<double>() == m.value.template get<double>();
          return n.value == m.value;
        } else if constexpr (std::is_same_v<T, ast::SignalRef>) {
          return n.name == m.name;
        } else if constexpr (std::is_same_v<T, ast::EventField> || std::is_same_v<T, ast::DatumField>) {
          return n.field == m.field;
        } else if constexpr (std::is_same_v<T, ast::Member>) {
          return n.field == m.field && equal(n.object, m.object);
        } else if constexpr (std::is_same_v<T, ast::Index>) {
          return equal(n.object, m.object) && equal(n.index, m.index);
        } else if constexpr (std::is_same_v<T, ast::ArrayLit>) {
          return eq_list(n.items, m.items);
        } else if constexpr (std::is_same_v<T, ast::Call>) {
          return n.fn == m.fn && eq_list(n.args, m.args);
        } else if constexpr (std::is_same_v<T, ast::Unary>) {
          return n.op == m.op && equal(n.arg, m.arg);
        } else if constexpr (std::is_same_v<T, ast::Binary>) {
          return n.op == m.op && equal(n.lhs, m.lhs) && equal(n.rhs, m.rhs);
        } else if constexpr (std::is_same_v<T, ast::ScaleInvert>) {
          return n.scale == m.scale && equal(n.arg, m.arg);
        } else {
          return equal(n.cond, m.cond) && equal(n.then, m.then) && equal(n.otherwise, m.otherwise);
        }
      },
      a.node);
}

/// Direct children of a node, in evaluation order.
inline std::vector<ExprPtr> children(const Expr& e) {
  return std::visit(
      [](const auto& n) -> std::vector<ExprPtr> {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, ast::Member>) return {n.object};
        else if constexpr (std::is_same_v<T, ast::Index>) return {n.object, n.index};
        else if constexpr (std::is_same_v<T, ast::ArrayLit>) return n.items;
        else if constexpr (std::is_same_v<T, ast::Call>) return n.args;
        else if constexpr (std::is_same_v<T, ast::Unary>) return {n.arg};
        else if constexpr (std::is_same_v<T, ast::Binary>) return {n.lhs, n.rhs};
        else if constexpr (std::is_same_v<T, ast::ScaleInvert>) return {n.arg};
        else if constexpr (std::is_same_v<T, ast::Conditional>) return {n.cond, n.then, n.otherwise};
        else return {};
      },
      e.node);
}

/// Pre-order walk.
inline void walk(const ExprPtr& e, const std::function<void(const Expr&)>& fn) {
  if (!e) return;
  fn(*e);
  for (const auto& c : children(*e)) walk(c, fn);
}

inline std::set<std::string> signal_refs(const ExprPtr& e) {
  std::set<std::string> out;
  walk(e, [&](const Expr& n) {
    if (auto* s = n.as<ast::SignalRef>()) out.insert(s->name);
  });
  return out;
}

inline std::set<std::string> scale_refs(const ExprPtr& e) {
  std::set<std::string> out;
  walk(e, [&](const Expr& n) {
    if (auto* s = n.as<ast::ScaleInvert>()) out.insert(s->scale);
    if (auto* c = n.as<ast::Call>(); c && c->fn == "scale" && !c->args.empty())
      if (auto* lit = c->args[0]->as<ast::Literal>(); lit && lit->value.is_string())
        out.insert(lit->value.get<std::string>());
  });
  return out;
}

inline std::set<std::string> called_functions(const ExprPtr& e) {
  std::set<std::string> out;
  walk(e, [&](const Expr& n) {
    if (auto* c = n.as<ast::Call>()) out.insert(c->fn);
  });
  return out;
}

/// Returns a copy of `e` with every SignalRef renamed by `rename`
/// (unchanged subtrees are shared).
inline ExprPtr rename_signals(const ExprPtr& e, const std::function<std::string(const std::string&)>& rename) {
  if (!e) return e;
  return std::visit(
      [&](const auto& n) -> ExprPtr {
        using T = std::decay_t<decltype(n)>;
        auto r = [&](const ExprPtr& c) { return rename_signals(c, rename); };
        if constexpr (std::is_same_v<T, ast::SignalRef>) {
          std::string to = rename(n.name);
          return to == n.name ? e : make_expr(ast::SignalRef{to});
        } else if constexpr (std::is_same_v<T, ast::Member>) {
          return make_expr(ast::Member{r(n.object), n.field});
        } else if constexpr (std::is_same_v<T, ast::Index>) {
          return make_expr(ast::Index{r(n.object), r(n.index)});
        } else if constexpr (std::is_same_v<T, ast::ArrayLit>) {
          ast::ArrayLit a;
          for (auto& c : n.items) a.items.push_back(r(c));
          return make_expr(std::move(a));
        } else if constexpr (std::is_same_v<T, ast::Call>) {
          ast::Call c{n.fn, {}};
          for (auto& a : n.args) c.args.push_back(r(a));
          return make_expr(std::move(c));
        } else if constexpr (std::is_same_v<T, ast::Unary>) {
          return make_expr(ast::Unary{n.op, r(n.arg)});
        } else if constexpr (std::is_same_v<T, ast::Binary>) {
          return make_expr(ast::Binary{n.op, r(n.lhs), r(n.rhs)});
        } else if constexpr (std::is_same_v<T, ast::ScaleInvert>) {
          return make_expr(ast::ScaleInvert{n.scale, r(n.arg)});
        } else if constexpr (std::is_same_v<T, ast::Conditional>) {
          return make_expr(ast::Conditional{r(n.cond), r(n.then), r(n.otherwise)});
        } else {
          return e;
        }
      },
      e->node);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Lookup tables for evaluation. Unset members behave as empty.
struct EvalEnv {
  std::function<const Value*(std::string_view)> signal;
  const Value* event = nullptr;
  const Value* datum = nullptr;
  std::function<const Scale*(std::string_view)> scale;
  /// lead/lag window accessor: (segment object, k, is_lead) -> neighbor object.
  std::function<Value(const Value&, long, bool)> window;
};

inline double Scale::apply(const Value& v) const {
  if (is_continuous(type)) {
    double d0 = domain.at(0).get<double>(), d1 = domain.at(1).get<double>();
    double x = v.get<double>();
    if (d1 == d0) return range_lo;
    double r = range_lo + (x - d0) * (range_hi - range_lo) / (d1 - d0);
    if (clamp) r = std::clamp(r, std::min(range_lo, range_hi), std::max(range_lo, range_hi));
    return r;
  }
  std::size_t n = domain.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (domain[i] == v) {
      double step = n ? (range_hi - range_lo) / static_cast<double>(type == ScaleType::Point && n > 1 ? n - 1 : n) : 0;
      return range_lo + step * static_cast<double>(i);
    }
  }
  return std::nan("");
}

inline Value Scale::invert(double x) const {
  if (is_continuous(type)) {
    double d0 = domain.at(0).get<double>(), d1 = domain.at(1).get<double>();
    if (range_hi == range_lo) return d0;
    double t = (x - range_lo) / (range_hi - range_lo);
    if (clamp) t = std::clamp(t, 0.0, 1.0);
    return d0 + t * (d1 - d0);
  }
  std::size_t n = domain.size();
  if (n == 0 || range_hi == range_lo) return nullptr;
  double step = (range_hi - range_lo) / static_cast<double>(n);
  long i = static_cast<long>(std::floor((x - range_lo) / step));
  if (i < 0 || i >= static_cast<long>(n)) return nullptr;
  return domain[static_cast<std::size_t>(i)];
}

namespace detail {

class Evaluator {
 public:
  explicit Evaluator(const EvalEnv& env) : env_(env) {}

  Value eval(const Expr& e, const std::string& path) {
    return std::visit([&](const auto& n) { return eval_node(n, path); }, e.node);
  }

 private:
  const EvalEnv& env_;

  [[noreturn]] static void fail(const std::string& path, const std::string& msg) { throw EvalError(path, msg); }

  static double num(const Value& v, const std::string& path) {
    if (v.is_number()) return v.get<double>();
    if (v.is_boolean()) return v.get<bool>() ? 1.0 : 0.0;
    if (v.is_null()) return 0.0;
    fail(path, "expected a number, got " + std::string(v.type_name()));
  }

  Value lookup_signal(const std::string& name, const std::string& path) {
    if (env_.signal) {
      if (const Value* v = env_.signal(name)) return *v;
      // `@obj.field` falls back to a field of a bound object `@obj`.
      auto dot = name.find('.');
      if (dot != std::string::npos) {
        if (const Value* obj = env_.signal(std::string_view(name).substr(0, dot))) {
          std::string field = name.substr(dot + 1);
          if (obj->is_object() && obj->contains(field)) return (*obj)[field];
          fail(path, "'" + name.substr(0, dot) + "' has no field '" + field + "'");
        }
      }
    }
    fail(path, "unresolved signal '" + name + "'");
  }

  Value eval_node(const ast::Literal& n, const std::string&) { return n.value; }
  Value eval_node(const ast::SignalRef& n, const std::string& path) { return lookup_signal(n.name, path); }

  Value eval_node(const ast::EventField& n, const std::string& path) {
    if (!env_.event) fail(path, "no event in scope");
    if (env_.event->is_object() && env_.event->contains(n.field)) return (*env_.event)[n.field];
    return nullptr;
  }

  Value eval_node(const ast::DatumField& n, const std::string& path) {
    if (!env_.datum) fail(path, "no datum in scope");
    const Value* cur = env_.datum;
    if (n.field.empty()) return *cur;
    std::size_t start = 0;
    while (start <= n.field.size()) {
      std::size_t dot = n.field.find('.', start);
      std::string key = n.field.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!cur->is_object() || !cur->contains(key)) return nullptr;
      cur = &(*cur)[key];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    return *cur;
  }

  Value eval_node(const ast::Member& n, const std::string& path) {
    Value obj = eval(*n.object, path + ".object");
    if (obj.is_object()) {
      if (obj.contains(n.field)) return obj[n.field];
      return nullptr;
    }
    if (obj.is_array() && n.field == "length") return static_cast<double>(obj.size());
    if (obj.is_string() && n.field == "length") return static_cast<double>(obj.get_ref<const std::string&>().size());
    fail(path, "cannot read field '" + n.field + "' of " + std::string(obj.type_name()));
  }

  Value eval_node(const ast::Index& n, const std::string& path) {
    Value obj = eval(*n.object, path + ".object");
    Value idx = eval(*n.index, path + ".index");
    if (obj.is_array()) {
      double i = num(idx, path + ".index");
      if (i < 0 || i >= static_cast<double>(obj.size()) || i != std::floor(i)) return nullptr;
      return obj[static_cast<std::size_t>(i)];
    }
    if (obj.is_object() && idx.is_string()) {
      auto key = idx.get<std::string>();
      return obj.contains(key) ? obj[key] : Value(nullptr);
    }
    fail(path, "cannot index " + std::string(obj.type_name()));
  }

  Value eval_node(const ast::ArrayLit& n, const std::string& path) {
    Value out = Value::array();
    for (std::size_t i = 0; i < n.items.size(); ++i)
      out.push_back(eval(*n.items[i], path + ".items[" + std::to_string(i) + "]"));
    return out;
  }

  Value eval_node(const ast::Unary& n, const std::string& path) {
    Value v = eval(*n.arg, path + ".arg");
    if (n.op == "!") return !truthy(v);
    double d = num(v, path + ".arg");
    return n.op == "-" ? -d : d;
  }

  static bool loose_equal(const Value& a, const Value& b) {
    if (a.is_number() && b.is_number()) return a.get<double>() == b.get<double>();
    if ((a.is_number() || a.is_boolean()) && (b.is_number() || b.is_boolean())) {
      double x = a.is_boolean() ? (a.get<bool>() ? 1.0 : 0.0) : a.get<double>();
      double y = b.is_boolean() ? (b.get<bool>() ? 1.0 : 0.0) : b.get<double>();
      return x == y;
    }
    return a == b;
  }

  Value eval_node(const ast::Binary& n, const std::string& path) {
    if (n.op == "&&") {
      Value l = eval(*n.lhs, path + ".lhs");
      return truthy(l) ? eval(*n.rhs, path + ".rhs") : l;
    }
    if (n.op == "||") {
      Value l = eval(*n.lhs, path + ".lhs");
      return truthy(l) ? l : eval(*n.rhs, path + ".rhs");
    }
    Value l = eval(*n.lhs, path + ".lhs");
    Value r = eval(*n.rhs, path + ".rhs");
    const std::string& op = n.op;
    if (op == "==" || op == "===") return loose_equal(l, r);
    if (op == "!=" || op == "!==") return !loose_equal(l, r);
    if (op == "+" && (l.is_string() || r.is_string())) return display_string(l) + display_string(r);
    if ((op == "<" || op == "<=" || op == ">" || op == ">=") && l.is_string() && r.is_string()) {
      int c = l.get_ref<const std::string&>().compare(r.get_ref<const std::string&>());
      if (op == "<") return c < 0;
      if (op == "<=") return c <= 0;
      if (op == ">") return c > 0;
      return c >= 0;
    }
    double a = num(l, path + ".lhs"), b = num(r, path + ".rhs");
    if (op == "+") return a + b;
    if (op == "-") return a - b;
    if (op == "*") return a * b;
    if (op == "/") return a / b;
    if (op == "%") return std::fmod(a, b);
    if (op == "<") return a < b;
    if (op == "<=") return a <= b;
    if (op == ">") return a > b;
    if (op == ">=") return a >= b;
    fail(path, "unknown operator '" + op + "'");
  }

  const Scale& find_scale(const std::string& name, const std::string& path) {
    const Scale* s = env_.scale ? env_.scale(name) : nullptr;
    if (!s) fail(path, "unknown scale '" + name + "'");
    return *s;
  }

  Value eval_node(const ast::ScaleInvert& n, const std::string& path) {
    const Scale& s = find_scale(n.scale, path);
    return s.invert(num(eval(*n.arg, path + ".arg"), path + ".arg"));
  }

  Value eval_node(const ast::Conditional& n, const std::string& path) {
    return truthy(eval(*n.cond, path + ".cond")) ? eval(*n.then, path + ".then") : eval(*n.otherwise, path + ".otherwise");
  }

  static std::string format_value(const Value& v, const std::string& spec, const std::string& path) {
    // Supports ".Nf", "d" and "" (default display).
    if (spec.empty()) return display_string(v);
    double d = num(v, path);
    if (spec == "d") return format_number(std::round(d));
    if (spec.size() >= 3 && spec[0] == '.' && spec.back() == 'f') {
      int digits = std::stoi(spec.substr(1, spec.size() - 2));
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.*f", digits, d);
      return buf;
    }
    if (spec.size() >= 3 && spec[0] == '.' && spec.back() == '%') {
      int digits = std::stoi(spec.substr(1, spec.size() - 2));
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.*f%%", digits, d * 100.0);
      return buf;
    }
    fail(path, "unsupported format '" + spec + "'");
  }

  Value eval_node(const ast::Call& n, const std::string& path) {
    const std::string& fn = n.fn;
    auto arg_path = [&](std::size_t i) { return path + ".args[" + std::to_string(i) + "]"; };
    auto need = [&](std::size_t lo, std::size_t hi) {
      if (n.args.size() < lo || n.args.size() > hi) fail(path, fn + ": wrong number of arguments");
    };
    if (fn == "if") {
      need(3, 3);
      return truthy(eval(*n.args[0], arg_path(0))) ? eval(*n.args[1], arg_path(1)) : eval(*n.args[2], arg_path(2));
    }
    std::vector<Value> a;
    a.reserve(n.args.size());
    for (std::size_t i = 0; i < n.args.size(); ++i) a.push_back(eval(*n.args[i], arg_path(i)));
    auto d = [&](std::size_t i) { return num(a[i], arg_path(i)); };

    if (fn == "min" || fn == "max") {
      if (a.empty()) fail(path, fn + ": no arguments");
      double acc = d(0);
      for (std::size_t i = 1; i < a.size(); ++i) acc = fn == "min" ? std::fmin(acc, d(i)) : std::fmax(acc, d(i));
      return acc;
    }
    if (fn == "clamp") {
      need(3, 3);
      return std::fmax(d(1), std::fmin(d(2), d(0)));
    }
    if (fn == "abs") return need(1, 1), std::fabs(d(0));
    if (fn == "floor") return need(1, 1), std::floor(d(0));
    if (fn == "ceil") return need(1, 1), std::ceil(d(0));
    if (fn == "round") return need(1, 1), std::round(d(0));
    if (fn == "sqrt") return need(1, 1), std::sqrt(d(0));
    if (fn == "log") return need(1, 1), std::log(d(0));
    if (fn == "exp") return need(1, 1), std::exp(d(0));
    if (fn == "pow") return need(2, 2), std::pow(d(0), d(1));
    if (fn == "inrange") {
      need(2, 2);
      if (!a[1].is_array() || a[1].size() != 2) fail(arg_path(1), "inrange expects a [lo, hi] array");
      double x = d(0), lo = num(a[1][0], arg_path(1)), hi = num(a[1][1], arg_path(1));
      if (lo > hi) std::swap(lo, hi);
      return x >= lo && x <= hi;
    }
    if (fn == "span") {
      need(1, 1);
      if (!a[0].is_array() || a[0].empty()) return 0.0;
      return num(a[0].back(), arg_path(0)) - num(a[0].front(), arg_path(0));
    }
    if (fn == "isValid") {
      need(1, 1);
      if (a[0].is_object() && a[0].contains("valid")) return truthy(a[0]["valid"]);
      return !a[0].is_null() && !(a[0].is_number() && std::isnan(a[0].get<double>()));
    }
    if (fn == "length") {
      need(1, 1);
      if (a[0].is_array()) return static_cast<double>(a[0].size());
      if (a[0].is_string()) return static_cast<double>(a[0].get_ref<const std::string&>().size());
      fail(arg_path(0), "length expects an array or string");
    }
    if (fn == "toString") return need(1, 1), Value(display_string(a[0]));
    if (fn == "toNumber") {
      need(1, 1);
      if (a[0].is_string()) {
        const auto& s = a[0].get_ref<const std::string&>();
        char* end = nullptr;
        double v = std::strtod(s.c_str(), &end);
        return end == s.c_str() ? std::nan("") : v;
      }
      return d(0);
    }
    if (fn == "format") {
      need(2, 2);
      if (!a[1].is_string()) fail(arg_path(1), "format expects a specifier string");
      return format_value(a[0], a[1].get<std::string>(), arg_path(0));
    }
    if (fn == "scale") {
      need(2, 2);
      if (!a[0].is_string()) fail(arg_path(0), "scale expects a scale name");
      return find_scale(a[0].get<std::string>(), path).apply(a[1]);
    }
    if (fn == "lead" || fn == "lag") {
      need(1, 2);
      long k = a.size() > 1 ? static_cast<long>(d(1)) : 1;
      if (!env_.window) fail(path, fn + " is only available in cursor policies");
      return env_.window(a[0], k, fn == "lead");
    }
    fail(path, "unknown function '" + fn + "'");
  }
};

}  // namespace detail

/// Evaluates `e` in `env`. Throws EvalError carrying the failing sub-expression path.
inline Value eval_expr(const Expr& e, const EvalEnv& env) { return detail::Evaluator(env).eval(e, "root"); }
inline Value eval_expr(const ExprPtr& e, const EvalEnv& env) { return eval_expr(*e, env); }

/// Evaluates to a finite double or throws EvalError.
inline double eval_number(const ExprPtr& e, const EvalEnv& env) {
  Value v = eval_expr(e, env);
  if (v.is_boolean()) return v.get<bool>() ? 1.0 : 0.0;
  if (!v.is_number()) throw EvalError("root", "expected a number, got " + std::string(v.type_name()));
  return v.get<double>();
}

}  // namespace vidflow
