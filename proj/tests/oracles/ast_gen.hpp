#pragma once

// Random expression trees built only from whitelisted continuous
// constructs, rendered as text with an optional wrapped node.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gen.hpp"

namespace oracle {

struct GenNode {
  enum Kind { EventX, EventY, Width, Literal, Add, Sub, Mul, DivLit, Min, Max, Clamp, Neg, Invert } kind;
  double literal = 0;
  std::vector<std::unique_ptr<GenNode>> kids;
};

inline std::unique_ptr<GenNode> gen_tree(Gen& g, int depth) {
  auto n = std::make_unique<GenNode>();
  if (depth <= 0 || g.coin(0.25)) {
    static const GenNode::Kind leaves[] = {GenNode::EventX, GenNode::EventY, GenNode::Width, GenNode::Literal};
    n->kind = leaves[g.integer(0, 3)];
    n->literal = static_cast<double>(g.integer(1, 9));
    return n;
  }
  n->kind = static_cast<GenNode::Kind>(g.integer(GenNode::Add, GenNode::Invert));
  int arity = n->kind == GenNode::Clamp ? 3 : (n->kind == GenNode::Neg || n->kind == GenNode::Invert || n->kind == GenNode::DivLit) ? 1 : 2;
  for (int i = 0; i < arity; ++i) n->kids.push_back(gen_tree(g, depth - 1));
  n->literal = static_cast<double>(g.integer(1, 9));
  return n;
}

inline std::size_t count_nodes(const GenNode& n) {
  std::size_t c = 1;
  for (const auto& k : n.kids) c += count_nodes(*k);
  return c;
}

inline bool has_event_leaf(const GenNode& n) {
  if (n.kind == GenNode::EventX || n.kind == GenNode::EventY) return true;
  for (const auto& k : n.kids)
    if (has_event_leaf(*k)) return true;
  return false;
}

/// Renders `n`; the node with pre-order id `wrap` is wrapped as `fn(...)`.
inline std::string render(const GenNode& n, long wrap = -1, const std::string& fn = "round") {
  long counter = 0;
  std::function<std::string(const GenNode&)> go = [&](const GenNode& x) -> std::string {
    long id = counter++;
    std::string s;
    auto kid = [&](std::size_t i) { return go(*x.kids[i]); };
    switch (x.kind) {
      case GenNode::EventX: s = "event.x"; break;
      case GenNode::EventY: s = "event.y"; break;
      case GenNode::Width: s = "width"; break;
      case GenNode::Literal: s = std::to_string(static_cast<int>(x.literal)); break;
      case GenNode::Add: { auto a = kid(0); s = "(" + a + " + " + kid(1) + ")"; break; }
      case GenNode::Sub: { auto a = kid(0); s = "(" + a + " - " + kid(1) + ")"; break; }
      case GenNode::Mul: { auto a = kid(0); s = "(" + a + " * " + kid(1) + ")"; break; }
      case GenNode::DivLit: s = "(" + kid(0) + " / " + std::to_string(static_cast<int>(x.literal)) + ")"; break;
      case GenNode::Min: { auto a = kid(0); s = "min(" + a + ", " + kid(1) + ")"; break; }
      case GenNode::Max: { auto a = kid(0); s = "max(" + a + ", " + kid(1) + ")"; break; }
      case GenNode::Clamp: {
        auto a = kid(0);
        auto b = kid(1);
        s = "clamp(" + a + ", " + b + ", " + kid(2) + ")";
        break;
      }
      case GenNode::Neg: s = "-(" + kid(0) + ")"; break;
      case GenNode::Invert: s = "@x.invert(" + kid(0) + ")"; break;
    }
    return id == wrap ? fn + "(" + s + ")" : s;
  };
  return go(n);
}

}  // namespace oracle
