#pragma once

// Static classification of seek-writing update rules as continuous or
// discrete interactions.

#include <algorithm>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vidflow/expr.hpp"
#include "vidflow/spec.hpp"

namespace vidflow {

/// Per-expression lattice: Constant < Continuous < Discrete.
enum class Continuity { Constant = 0, Continuous = 1, Discrete = 2 };

inline Continuity join(Continuity a, Continuity b) { return static_cast<Continuity>(std::max(int(a), int(b))); }

inline const char* to_string(Continuity c) {
  switch (c) {
    case Continuity::Constant: return "constant";
    case Continuity::Continuous: return "continuous";
    case Continuity::Discrete: return "discrete";
  }
  return "discrete";
}

enum class ContinuityClass { Continuous, Discrete };

inline const char* to_string(ContinuityClass c) { return c == ContinuityClass::Continuous ? "continuous" : "discrete"; }

struct ContinuityReason {
  std::string path;  // "event", "root", "root.args[0]", ...
  Continuity verdict;
  std::string rule;
  bool operator==(const ContinuityReason&) const = default;
};

struct ContinuityVerdict {
  ContinuityClass cls = ContinuityClass::Discrete;
  std::vector<ContinuityReason> reasons;
};

struct ContinuityRules {
  std::set<std::string, std::less<>> continuous_events{"pointermove", "drag", "touchmove", "wheel"};
  std::set<std::string, std::less<>> discrete_events{"click", "dblclick", "keydown", "pointerdown",
                                                     "pointerup"};
  std::set<std::string, std::less<>> continuous_functions{"min", "max", "clamp"};
  std::set<std::string, std::less<>> continuous_operators{"+", "-", "*", "/"};
  std::set<std::string, std::less<>> continuous_event_fields{"x", "y"};
  /// Signals whose value is a fixed extent; valid nonzero divisors.
  std::set<std::string, std::less<>> extent_signals{"width", "height"};

  ContinuityRules& wheel_continuous(bool on) {
    if (on) continuous_events.insert("wheel");
    else continuous_events.erase("wheel");
    return *this;
  }
};

/// What the classifier needs to know about names in an expression.
struct ContinuityContext {
  /// Class of a signal (already classified upstream); nullopt when unknown.
  std::function<std::optional<Continuity>(std::string_view)> signal;
  /// Scale type for a scale or seek-surface name; nullopt when unknown.
  std::function<std::optional<ScaleType>(std::string_view)> scale;
};

namespace detail {

class ContinuityWalker {
 public:
  ContinuityWalker(const ContinuityContext& ctx, const ContinuityRules& rules, std::vector<ContinuityReason>& out)
      : ctx_(ctx), rules_(rules), out_(out) {}

  Continuity walk(const Expr& e, const std::string& path) {
    return std::visit([&](const auto& n) { return visit(n, path); }, e.node);
  }

 private:
  const ContinuityContext& ctx_;
  const ContinuityRules& rules_;
  std::vector<ContinuityReason>& out_;

  Continuity note(const std::string& path, Continuity v, std::string rule) {
    out_.push_back({path, v, std::move(rule)});
    return v;
  }

  Continuity visit(const ast::Literal&, const std::string& path) { return note(path, Continuity::Constant, "literal"); }

  Continuity visit(const ast::SignalRef& n, const std::string& path) {
    std::optional<Continuity> c = ctx_.signal ? ctx_.signal(n.name) : std::nullopt;
    if (!c) return note(path, Continuity::Discrete, "unknown signal '" + n.name + "'");
    return note(path, *c, "signal '" + n.name + "' is " + to_string(*c));
  }

  Continuity visit(const ast::EventField& n, const std::string& path) {
    if (rules_.continuous_event_fields.count(n.field)) return note(path, Continuity::Continuous, "event coordinate");
    return note(path, Continuity::Discrete, "event field '" + n.field + "'");
  }

  Continuity visit(const ast::DatumField&, const std::string& path) {
    return note(path, Continuity::Discrete, "datum field");
  }

  Continuity visit(const ast::Member& n, const std::string& path) {
    walk(*n.object, path + ".object");
    return note(path, Continuity::Discrete, "unknown construct (field access)");
  }

  Continuity visit(const ast::Index& n, const std::string& path) {
    walk(*n.object, path + ".object");
    walk(*n.index, path + ".index");
    return note(path, Continuity::Discrete, "unknown construct (indexing)");
  }

  Continuity visit(const ast::ArrayLit& n, const std::string& path) {
    for (std::size_t i = 0; i < n.items.size(); ++i) walk(*n.items[i], path + ".items[" + std::to_string(i) + "]");
    return note(path, Continuity::Discrete, "unknown construct (array)");
  }

  Continuity visit(const ast::Call& n, const std::string& path) {
    Continuity acc = Continuity::Constant;
    for (std::size_t i = 0; i < n.args.size(); ++i)
      acc = join(acc, walk(*n.args[i], path + ".args[" + std::to_string(i) + "]"));
    if (!rules_.continuous_functions.count(n.fn))
      return note(path, Continuity::Discrete, "function '" + n.fn + "' is not whitelisted");
    if (n.args.empty()) return note(path, Continuity::Discrete, "function '" + n.fn + "' without arguments");
    return note(path, acc, "whitelisted function '" + n.fn + "'");
  }

  Continuity visit(const ast::Unary& n, const std::string& path) {
    Continuity a = walk(*n.arg, path + ".arg");
    if (n.op != "-") return note(path, Continuity::Discrete, "operator '" + n.op + "' is not whitelisted");
    return note(path, a, "negation");
  }

  bool valid_divisor(const Expr& rhs) const {
    if (auto* lit = rhs.as<ast::Literal>()) return lit->value.is_number() && lit->value.get<double>() != 0.0;
    if (auto* ref = rhs.as<ast::SignalRef>()) return rules_.extent_signals.count(ref->name) > 0;
    return false;
  }

  Continuity visit(const ast::Binary& n, const std::string& path) {
    Continuity l = walk(*n.lhs, path + ".lhs");
    Continuity r = walk(*n.rhs, path + ".rhs");
    if (!rules_.continuous_operators.count(n.op))
      return note(path, Continuity::Discrete, "operator '" + n.op + "' is not whitelisted");
    if (n.op == "/" && !valid_divisor(*n.rhs))
      return note(path, Continuity::Discrete, "division by a non-constant or zero divisor");
    return note(path, join(l, r), "arithmetic '" + n.op + "'");
  }

  Continuity visit(const ast::ScaleInvert& n, const std::string& path) {
    Continuity a = walk(*n.arg, path + ".arg");
    std::optional<ScaleType> t = ctx_.scale ? ctx_.scale(n.scale) : std::nullopt;
    if (!t) return note(path, Continuity::Discrete, "unknown scale '" + n.scale + "'");
    if (!is_continuous(*t))
      return note(path, Continuity::Discrete, std::string("inversion of ") + to_string(*t) + " scale");
    return note(path, a, std::string("inversion of ") + to_string(*t) + " scale");
  }

  Continuity visit(const ast::Conditional& n, const std::string& path) {
    Continuity c = walk(*n.cond, path + ".cond");
    Continuity a = walk(*n.then, path + ".then");
    Continuity b = walk(*n.otherwise, path + ".otherwise");
    if (c == Continuity::Discrete) return note(path, Continuity::Discrete, "conditional on a discrete condition");
    return note(path, join(c, join(a, b)), "conditional");
  }
};

}  // namespace detail

/// Classifies an expression on its own (no event). Reasons are appended to `reasons`.
inline Continuity classify_expr(const ExprPtr& e, const ContinuityContext& ctx, const ContinuityRules& rules,
                                std::vector<ContinuityReason>& reasons) {
  return detail::ContinuityWalker(ctx, rules, reasons).walk(*e, "root");
}

inline bool rules_contains(const std::set<std::string, std::less<>>& s, std::string_view v) { return s.count(v) > 0; }

/// Continuity of an event stream: continuous only when every selector's
/// stream type is a continuous event.
inline Continuity classify_events(const std::vector<EventSelector>& events, const ContinuityRules& rules,
                                  std::vector<ContinuityReason>& reasons) {
  Continuity acc = Continuity::Continuous;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const std::string& type = events[i].stream.type;
    std::string path = "event[" + std::to_string(i) + "]";
    if (rules_contains(rules.continuous_events, type)) {
      reasons.push_back({path, Continuity::Continuous, "continuous event '" + type + "'"});
    } else {
      std::string why = rules_contains(rules.discrete_events, type) ? "discrete event '" : "unknown event '";
      reasons.push_back({path, Continuity::Discrete, why + type + "'"});
      acc = Continuity::Discrete;
    }
  }
  if (events.empty()) {
    reasons.push_back({"event", Continuity::Discrete, "no event"});
    acc = Continuity::Discrete;
  }
  return acc;
}

inline ContinuityClass to_class(Continuity c) {
  return c == Continuity::Continuous ? ContinuityClass::Continuous : ContinuityClass::Discrete;
}

/// Classifies an update rule (events + expression).
inline ContinuityVerdict classify(const std::vector<EventSelector>& events, const ExprPtr& expr,
                                  const ContinuityContext& ctx = {}, const ContinuityRules& rules = {}) {
  ContinuityVerdict v;
  Continuity ev = classify_events(events, rules, v.reasons);
  Continuity ex = classify_expr(expr, ctx, rules, v.reasons);
  if (ex == Continuity::Constant) v.reasons.push_back({"root", Continuity::Discrete, "constant jump target"});
  v.cls = ev == Continuity::Continuous && ex == Continuity::Continuous ? ContinuityClass::Continuous
                                                                       : ContinuityClass::Discrete;
  return v;
}

/// Classifies a dependency-driven binding (no triggering event of its own).
inline ContinuityVerdict classify_binding(const ExprPtr& expr, const ContinuityContext& ctx = {},
                                          const ContinuityRules& rules = {}) {
  ContinuityVerdict v;
  Continuity ex = classify_expr(expr, ctx, rules, v.reasons);
  if (ex == Continuity::Constant) v.reasons.push_back({"root", Continuity::Discrete, "constant jump target"});
  v.cls = to_class(ex);
  return v;
}

inline std::string explain(const ContinuityVerdict& v) {
  std::string out = to_string(v.cls);
  for (const auto& r : v.reasons) out += "\n  " + r.path + ": " + to_string(r.verdict) + " (" + r.rule + ")";
  return out;
}

}  // namespace vidflow
