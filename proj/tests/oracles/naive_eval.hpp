#pragma once

// Unsplit reference evaluator: player signals are ordinary signals that
// take a written value immediately (time and itime move together, frame
// follows time). Handles the subset used by the seek-surface fixtures:
// handlers with plain or between-filtered selectors, then derived
// `update` signals in declaration order.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vidflow/dataflow.hpp"

namespace oracle {

class NaiveEvaluator {
 public:
  NaiveEvaluator(const vidflow::Spec& spec, std::string player) : spec_(spec), player_(std::move(player)) {
    if (spec.width) values_["width"] = *spec.width;
    if (spec.height) values_["height"] = *spec.height;
    fps_ = spec.find_player(player_)->fps;
    write_time(0.0);
    for (const auto& sc : spec.scales) {
      vidflow::Scale s;
      s.type = sc.type;
      s.domain = sc.domain;
      auto extent = [&](const vidflow::Value& r) -> std::pair<double, double> {
        if (r == "width") return {0.0, *spec.width};
        if (r == "height") return {*spec.height, 0.0};
        return {r[0].get<double>(), r[1].get<double>()};
      };
      std::tie(s.range_lo, s.range_hi) = extent(sc.range);
      scales_[sc.name] = s;
    }
    for (const auto& m : spec.marks)
      if (m.seek_scale) scales_[m.name] = scales_.at(*m.seek_scale);
    for (const auto& s : spec.signals)
      if (s.name[0] != '@') values_[s.name] = s.value;
    recompute();
  }

  void inject(const vidflow::Value& event) {
    for (const auto& s : spec_.signals) {
      for (std::size_t h = 0; h < s.on.size(); ++h) {
        auto sels = vidflow::parse_event_selectors(s.on[h].events);
        bool fire = false;
        for (std::size_t i = 0; i < sels.size(); ++i) {
          bool stream = matches(sels[i].stream, event);
          if (sels[i].between_start) stream = stream && active_[{s.name, h, i}];
          fire = fire || stream;
        }
        if (fire) {
          vidflow::EvalEnv env = this->env();
          env.event = &event;
          assign(s.name, vidflow::eval_expr(vidflow::parse_expr(s.on[h].update), env));
        }
        for (std::size_t i = 0; i < sels.size(); ++i) {
          if (!sels[i].between_start) continue;
          if (matches(*sels[i].between_end, event)) active_[{s.name, h, i}] = false;
          else if (matches(*sels[i].between_start, event)) active_[{s.name, h, i}] = true;
        }
      }
    }
    recompute();
  }

  const vidflow::Value& value(const std::string& name) const { return values_.at(name); }

 private:
  const vidflow::Spec& spec_;
  std::string player_;
  double fps_ = 30;
  std::map<std::string, vidflow::Value> values_;
  std::map<std::string, vidflow::Scale> scales_;
  std::map<std::tuple<std::string, std::size_t, std::size_t>, bool> active_;

  static bool matches(const vidflow::SimpleSelector& s, const vidflow::Value& e) {
    if (e.value("type", "") != s.type) return false;
    if (s.source.empty() || s.source == "window" || s.source == "view") return true;
    if (s.source[0] == '@') return e.value("source", "") == s.source.substr(1);
    return e.value("marktype", "") == s.source;
  }

  void write_time(double t) {
    values_["@" + player_ + ".time"] = t;
    values_["@" + player_ + ".itime"] = t;
    values_["@" + player_ + ".frame"] = static_cast<long>(std::floor(t * fps_ + 0.5));
    values_["@" + player_ + ".iframe"] = static_cast<long>(std::floor(t * fps_ + 0.5));
  }

  void assign(const std::string& name, const vidflow::Value& v) {
    if (name == "@" + player_ + ".time" || name == "@" + player_ + ".itime") write_time(v.get<double>());
    else values_[name] = v;
  }

  vidflow::EvalEnv env() const {
    vidflow::EvalEnv env;
    env.signal = [this](std::string_view n) -> const vidflow::Value* {
      auto it = values_.find(std::string(n));
      return it == values_.end() ? nullptr : &it->second;
    };
    env.scale = [this](std::string_view n) -> const vidflow::Scale* {
      auto it = scales_.find(std::string(n));
      return it == scales_.end() ? nullptr : &it->second;
    };
    return env;
  }

  void recompute() {
    for (const auto& s : spec_.signals)
      if (s.update) values_[s.name] = vidflow::eval_expr(vidflow::parse_expr(*s.update), env());
  }
};

}  // namespace oracle
