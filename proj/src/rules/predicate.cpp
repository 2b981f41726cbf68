// SPDX-License-Identifier: Apache-2.0
#include "tts/rules/predicate.hpp"

#include <algorithm>
#include <charconv>

#include "tts/common/error.hpp"
#include "tts/common/text.hpp"

namespace tts::rules {

namespace {

PredicatePtr wrap(auto node) { return std::make_shared<const Predicate>(Predicate{std::move(node)}); }

[[noreturn]] void malformed(const std::string& msg) { throw Error(Errc::MalformedPredicate, msg); }

std::vector<std::string> sorted_texts(const std::vector<PredicatePtr>& ops) {
  std::vector<std::string> out;
  out.reserve(ops.size());
  for (const auto& op : ops) out.push_back(op ? to_text(*op) : std::string("<null>"));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

PredicatePtr in_bounds(std::string sensor_id, double lo, double hi) {
  return wrap(SensorInBounds{std::move(sensor_id), lo, hi});
}
PredicatePtr status_is(std::string asset_id, bool on) {
  return wrap(AssetStatusIs{std::move(asset_id), on});
}
PredicatePtr count_at_most(std::string counter, std::int64_t n) {
  return wrap(CountAtMost{std::move(counter), n});
}
PredicatePtr rate_at_most(std::string sensor_id, double delta, std::int64_t window) {
  return wrap(RateAtMost{std::move(sensor_id), delta, window});
}
PredicatePtr role_required(Action action, Role role) { return wrap(RoleRequired{action, role}); }
PredicatePtr constant(bool pass) { return wrap(Const{pass}); }
PredicatePtr all_of(std::vector<PredicatePtr> operands) { return wrap(And{std::move(operands)}); }
PredicatePtr any_of(std::vector<PredicatePtr> operands) { return wrap(Or{std::move(operands)}); }
PredicatePtr negate(PredicatePtr operand) { return wrap(Not{std::move(operand)}); }

std::string to_text(const Predicate& p) {
  return std::visit(
      [](const auto& n) -> std::string {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, SensorInBounds>) {
          return "(in-bounds " + n.sensor_id + " " + format_number(n.lo) + " " +
                 format_number(n.hi) + ")";
        } else if constexpr (std::is_same_v<T, AssetStatusIs>) {
          return "(status-is " + n.asset_id + (n.on ? " on)" : " off)");
        } else if constexpr (std::is_same_v<T, CountAtMost>) {
          return "(count-at-most " + n.counter + " " + std::to_string(n.n) + ")";
        } else if constexpr (std::is_same_v<T, RateAtMost>) {
          return "(rate-at-most " + n.sensor_id + " " + format_number(n.delta) + " " +
                 std::to_string(n.window) + ")";
        } else if constexpr (std::is_same_v<T, RoleRequired>) {
          return "(role-required " + std::string(to_string(n.action)) + " " +
                 std::string(to_string(n.role)) + ")";
        } else if constexpr (std::is_same_v<T, Const>) {
          return n.pass ? "(const pass)" : "(const fail)";
        } else if constexpr (std::is_same_v<T, And> || std::is_same_v<T, Or>) {
          std::string s = std::is_same_v<T, And> ? "(and" : "(or";
          for (const auto& t : sorted_texts(n.operands)) s += " " + t;
          return s + ")";
        } else {
          return "(not " + (n.operand ? to_text(*n.operand) : std::string("<null>")) + ")";
        }
      },
      p.node);
}

// --- parser -----------------------------------------------------------------

namespace {

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  PredicatePtr parse() {
    auto p = expr(1);
    skip_ws();
    if (pos_ != text_.size()) fail("trailing input");
    return p;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    malformed(msg + " at offset " + std::to_string(pos_));
  }

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' ||
                                   text_[pos_] == '\n' || text_[pos_] == '\r')) {
      ++pos_;
    }
  }

  void expect(char c) {
    skip_ws();
    if (pos_ >= text_.size() || text_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  bool peek(char c) {
    skip_ws();
    return pos_ < text_.size() && text_[pos_] == c;
  }

  std::string token() {
    skip_ws();
    auto start = pos_;
    while (pos_ < text_.size() && text_[pos_] != '(' && text_[pos_] != ')' && text_[pos_] != ' ' &&
           text_[pos_] != '\t' && text_[pos_] != '\n' && text_[pos_] != '\r') {
      ++pos_;
    }
    if (start == pos_) fail("expected a token");
    return std::string(text_.substr(start, pos_ - start));
  }

  double number() {
    auto t = token();
    try {
      return parse_number(t);
    } catch (const Error&) {
      fail("'" + t + "' is not a number");
    }
  }

  std::int64_t integer() {
    auto t = token();
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) fail("'" + t + "' is not an integer");
    return v;
  }

  PredicatePtr expr(std::size_t level) {
    if (level > kMaxDepth) fail("predicate nested deeper than " + std::to_string(kMaxDepth));
    expect('(');
    auto op = token();
    PredicatePtr out;
    if (op == "in-bounds") {
      auto id = token();
      auto lo = number();
      auto hi = number();
      out = in_bounds(id, lo, hi);
    } else if (op == "status-is") {
      auto id = token();
      auto s = token();
      if (s != "on" && s != "off") fail("status must be on or off");
      out = status_is(id, s == "on");
    } else if (op == "count-at-most") {
      auto id = token();
      out = count_at_most(id, integer());
    } else if (op == "rate-at-most") {
      auto id = token();
      auto delta = number();
      out = rate_at_most(id, delta, integer());
    } else if (op == "role-required") {
      auto a = action_from_string(token());
      if (!a) fail("unknown action");
      auto r = role_from_string(token());
      if (!r) fail("unknown role");
      out = role_required(*a, *r);
    } else if (op == "const") {
      auto v = token();
      if (v != "pass" && v != "fail") fail("const takes pass or fail");
      out = constant(v == "pass");
    } else if (op == "and" || op == "or") {
      std::vector<PredicatePtr> ops;
      while (!peek(')')) {
        if (pos_ >= text_.size()) fail("unterminated expression");
        ops.push_back(expr(level + 1));
      }
      out = op == "and" ? all_of(std::move(ops)) : any_of(std::move(ops));
    } else if (op == "not") {
      out = negate(expr(level + 1));
    } else {
      fail("unknown operator '" + op + "'");
    }
    expect(')');
    return out;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

PredicatePtr parse_predicate(std::string_view text) { return Parser(text).parse(); }

std::size_t depth(const Predicate& p) {
  return std::visit(
      [](const auto& n) -> std::size_t {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, And> || std::is_same_v<T, Or>) {
          std::size_t d = 0;
          for (const auto& op : n.operands) d = std::max(d, op ? depth(*op) : 0);
          return d + 1;
        } else if constexpr (std::is_same_v<T, Not>) {
          return (n.operand ? depth(*n.operand) : 0) + 1;
        } else {
          return 1;
        }
      },
      p.node);
}

void check_well_formed(const Predicate& p, const icm::EngineeringKnowledge& ek) {
  if (depth(p) > kMaxDepth) malformed("predicate nested deeper than " + std::to_string(kMaxDepth));
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, SensorInBounds>) {
          if (!ek.find_sensor(n.sensor_id)) malformed("unknown sensor '" + n.sensor_id + "'");
          if (!is_finite(n.lo) || !is_finite(n.hi)) malformed("bounds must be finite");
          if (n.lo > n.hi) malformed("lower bound exceeds upper bound");
        } else if constexpr (std::is_same_v<T, AssetStatusIs>) {
          if (!ek.find_device(n.asset_id)) malformed("unknown asset '" + n.asset_id + "'");
        } else if constexpr (std::is_same_v<T, CountAtMost>) {
          if (n.counter.empty()) malformed("empty counter name");
          if (n.n < 0) malformed("count bound must be non-negative");
        } else if constexpr (std::is_same_v<T, RateAtMost>) {
          if (!ek.find_sensor(n.sensor_id)) malformed("unknown sensor '" + n.sensor_id + "'");
          if (!is_finite(n.delta) || n.delta < 0) malformed("rate bound must be finite and >= 0");
          if (n.window < 2) malformed("rate window needs at least two samples");
        } else if constexpr (std::is_same_v<T, And> || std::is_same_v<T, Or>) {
          if (n.operands.empty()) malformed("and/or needs at least one operand");
          for (const auto& op : n.operands) {
            if (!op) malformed("null operand");
            check_well_formed(*op, ek);
          }
        } else if constexpr (std::is_same_v<T, Not>) {
          if (!n.operand) malformed("null operand");
          check_well_formed(*n.operand, ek);
        }
      },
      p.node);
}

std::set<std::string> referenced_ids(const Predicate& p) {
  std::set<std::string> out;
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, SensorInBounds> || std::is_same_v<T, RateAtMost>) {
          out.insert(n.sensor_id);
        } else if constexpr (std::is_same_v<T, AssetStatusIs>) {
          out.insert(n.asset_id);
        } else if constexpr (std::is_same_v<T, And> || std::is_same_v<T, Or>) {
          for (const auto& op : n.operands) {
            if (op) out.merge(referenced_ids(*op));
          }
        } else if constexpr (std::is_same_v<T, Not>) {
          if (n.operand) out.merge(referenced_ids(*n.operand));
        }
      },
      p.node);
  return out;
}

const SensorInBounds* threshold_atom(const Predicate& p) {
  if (const auto* a = std::get_if<SensorInBounds>(&p.node)) return a;
  if (const auto* conj = std::get_if<And>(&p.node)) {
    const SensorInBounds* found = nullptr;
    for (const auto& op : conj->operands) {
      if (const auto* a = std::get_if<SensorInBounds>(&op->node)) {
        if (found) return nullptr;
        found = a;
      } else if (!std::holds_alternative<AssetStatusIs>(op->node)) {
        return nullptr;
      }
    }
    return found;
  }
  return nullptr;
}

}  // namespace tts::rules
