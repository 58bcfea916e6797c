#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "sera/bank.hpp"
#include "sera/errors.hpp"
#include "sera/hash.hpp"
#include "sera/jsonl.hpp"
#include "sera/scenario.hpp"

namespace sera {

// ---------------------------------------------------------------------------
// Deterministic longitudinal driving simulator.
//
// One-dimensional world: the ego vehicle moves along x, y = z = 0. Scripted
// hazards (traffic lights, stopped lead vehicles, crossing pedestrians, speed
// zones) sit at fixed positions. A linear policy over a fixed feature basis
// maps observations to a clamped acceleration. Rollouts are Euler-integrated
// at a fixed timestep, so every trajectory, log and metric is an exact
// function of (policy parameters, route).
// ---------------------------------------------------------------------------

constexpr double kDt = 0.1;                 // s
constexpr double kSpeedCap = 15.0;          // m/s
constexpr double kSensingRange = 60.0;      // m
constexpr double kFogSensingRange = 30.0;   // m
constexpr double kAccelMin = -4.0;          // m/s^2
constexpr double kAccelMax = 2.0;           // m/s^2
constexpr double kJerkRef = 2.0;            // m/s^3, comfort reference
constexpr int kThetaDim = 8;

// Multiplicative driving-score penalty per infraction event.
inline double infraction_penalty(const std::string& kind) {
  if (kind == "collision") return 0.5;
  if (kind == "red_light") return 0.7;
  if (kind == "speeding") return 0.9;
  if (kind == "route_deviation") return 0.7;
  return 1.0;
}

enum class HazardKind { kTrafficLight, kStoppedLeadVehicle, kCrossingPedestrian, kSpeedZone };

inline const char* hazard_kind_token(HazardKind k) {
  switch (k) {
    case HazardKind::kTrafficLight: return "traffic_light";
    case HazardKind::kStoppedLeadVehicle: return "stopped_lead_vehicle";
    case HazardKind::kCrossingPedestrian: return "crossing_pedestrian";
    case HazardKind::kSpeedZone: return "speed_zone";
  }
  return "traffic_light";
}

inline HazardKind hazard_kind_from_token(const std::string& s) {
  if (s == "traffic_light") return HazardKind::kTrafficLight;
  if (s == "stopped_lead_vehicle") return HazardKind::kStoppedLeadVehicle;
  if (s == "crossing_pedestrian") return HazardKind::kCrossingPedestrian;
  if (s == "speed_zone") return HazardKind::kSpeedZone;
  throw SchemaError(0, "kind", "unknown hazard kind '" + s + "'");
}

struct Hazard {
  HazardKind kind = HazardKind::kTrafficLight;
  double position_m = 0.0;
  // traffic_light: red during [0, red_s) of every cycle, shifted by offset_s
  double light_offset_s = 0.0;
  double light_period_s = 20.0;
  double light_red_s = 10.0;
  // crossing_pedestrian: steps onto the road when the ego is within
  // trigger_distance_m, occupies it for crossing_duration_s, then clears
  double trigger_distance_m = 25.0;
  double crossing_duration_s = 3.0;
  // speed_zone: [position_m, position_m + zone_length_m] at zone_limit_mps
  double zone_length_m = 25.0;
  double zone_limit_mps = 8.0;

  bool operator==(const Hazard&) const = default;

  bool light_is_red(double t_s) const {
    double phase = std::fmod(t_s + light_offset_s, light_period_s);
    if (phase < 0) phase += light_period_s;
    return phase < light_red_s;
  }
};

struct Route {
  std::string route_id;
  double length_m = 150.0;
  ScenarioAttributes conditions;
  std::vector<Hazard> hazards;  // positions strictly increasing, in (0, length)
  int time_limit_steps = 600;
  std::uint64_t seed = 0;

  bool operator==(const Route&) const = default;
};

inline void validate_route(const Route& r, int line_no = 0) {
  if (r.length_m <= 0) throw SchemaError(line_no, "length_m", "must be positive");
  if (r.time_limit_steps < 1) throw SchemaError(line_no, "time_limit_steps", "must be >= 1");
  double prev = 0.0;
  for (const auto& h : r.hazards) {
    if (h.position_m <= prev || h.position_m >= r.length_m)
      throw SchemaError(line_no, "hazards",
                        "positions must be strictly increasing within (0, length)");
    prev = h.position_m;
  }
}

struct Observation {
  double position_m = 0.0;
  double speed_mps = 0.0;
  double dist_to_next_hazard_m = kSensingRange;  // capped at sensing range
  std::array<double, 4> hazard_kind_onehot{0, 0, 0, 0};
  double light_is_red = 0.0;
  double speed_limit_mps = kSpeedCap;
};

struct Action {
  double accel_mps2 = 0.0;
};

enum class TerminalReason { kGoal, kCollision, kTimeout };

inline const char* terminal_reason_token(TerminalReason t) {
  switch (t) {
    case TerminalReason::kGoal: return "goal";
    case TerminalReason::kCollision: return "collision";
    case TerminalReason::kTimeout: return "timeout";
  }
  return "timeout";
}

struct Trajectory {
  std::string route_id;
  std::vector<std::pair<Observation, Action>> steps;
  TerminalReason terminal_reason = TerminalReason::kTimeout;
  // Kinematic end position; on collision, clamped to the obstacle position.
  double final_position_m = 0.0;
};

struct PolicyParams {
  std::array<double, kThetaDim> theta{};

  bool operator==(const PolicyParams&) const = default;
};

inline void validate_policy(const PolicyParams& p) {
  for (double v : p.theta)
    if (!std::isfinite(v)) throw SchemaError(0, "theta", "entries must be finite");
}

// Fixed feature basis. Proximity ramps 0 -> 1 as the sensed hazard closes in;
// normalization uses the clear-weather range so fog (which caps the sensed
// distance) reads as a shorter horizon rather than a different scale.
inline std::array<double, kThetaDim> policy_features(const Observation& o) {
  const double proximity = 1.0 - o.dist_to_next_hazard_m / kSensingRange;
  return {
      1.0,
      o.speed_mps / kSpeedCap,
      o.dist_to_next_hazard_m / kSensingRange,
      o.light_is_red * proximity,
      o.hazard_kind_onehot[1] * proximity,  // stopped lead vehicle
      o.hazard_kind_onehot[2] * proximity,  // crossing pedestrian
      o.hazard_kind_onehot[3] * proximity,  // speed zone
      std::max(0.0, o.speed_mps - o.speed_limit_mps) / kSpeedCap,
  };
}

inline Action policy_act(const PolicyParams& params, const Observation& obs) {
  const auto f = policy_features(obs);
  double a = 0.0;
  for (int i = 0; i < kThetaDim; ++i)
    a += params.theta[static_cast<std::size_t>(i)] * f[static_cast<std::size_t>(i)];
  return Action{std::min(kAccelMax, std::max(kAccelMin, a))};
}

// Default policy shipped with the harness: drives assertively and brakes too
// little, too late around hazards, so pre-evaluation surfaces failures.
inline PolicyParams baseline_policy() {
  PolicyParams p;
  p.theta = {1.4, -0.45, 0.6, -0.9, -1.1, -0.9, -0.4, -0.6};
  return p;
}

// ---------------------------------------------------------------------------
// Rollout
// ---------------------------------------------------------------------------

namespace detail {

struct PedestrianState {
  bool triggered = false;
  int trigger_step = 0;
  bool occupied(int step, const Hazard& h) const {
    if (!triggered) return false;
    const int window = static_cast<int>(std::lround(h.crossing_duration_s / kDt));
    return step - trigger_step < window;
  }
  bool cleared(int step, const Hazard& h) const {
    if (!triggered) return false;
    const int window = static_cast<int>(std::lround(h.crossing_duration_s / kDt));
    return step - trigger_step >= window;
  }
};

}  // namespace detail

inline double sensing_range_for(const ScenarioAttributes& conditions) {
  return conditions.weather == Weather::kFog ? kFogSensingRange : kSensingRange;
}

inline Trajectory run_route(const PolicyParams& params, const Route& route) {
  validate_policy(params);
  validate_route(route);

  const double range = sensing_range_for(route.conditions);
  double pos = 0.0;
  double speed = 0.0;
  std::vector<detail::PedestrianState> peds(route.hazards.size());

  Trajectory traj;
  traj.route_id = route.route_id;
  traj.terminal_reason = TerminalReason::kTimeout;

  for (int step = 0;; ++step) {
    if (pos >= route.length_m) {
      traj.terminal_reason = TerminalReason::kGoal;
      break;
    }
    if (step >= route.time_limit_steps) {
      traj.terminal_reason = TerminalReason::kTimeout;
      break;
    }
    const double t_s = step * kDt;

    // Pedestrian triggers fire off the start-of-step position.
    for (std::size_t i = 0; i < route.hazards.size(); ++i) {
      const Hazard& h = route.hazards[i];
      if (h.kind != HazardKind::kCrossingPedestrian || peds[i].triggered) continue;
      double trigger = h.trigger_distance_m;
      if (route.conditions.time == TimeOfDay::kNight) trigger = std::min(trigger, 15.0);
      if (h.position_m > pos && h.position_m - pos <= trigger) {
        peds[i].triggered = true;
        peds[i].trigger_step = step;
      }
    }

    // Observation: nearest sensed hazard ahead.
    Observation obs;
    obs.position_m = pos;
    obs.speed_mps = speed;
    obs.dist_to_next_hazard_m = range;
    double best = range;
    int best_kind = -1;
    bool best_red = false;
    for (std::size_t i = 0; i < route.hazards.size(); ++i) {
      const Hazard& h = route.hazards[i];
      if (h.position_m <= pos) continue;
      if (h.kind == HazardKind::kCrossingPedestrian &&
          !peds[i].occupied(step, h))
        continue;  // pedestrians are sensed only while on the road
      double d = h.position_m - pos;
      if (d < best) {
        best = d;
        best_kind = static_cast<int>(h.kind);
        best_red = h.kind == HazardKind::kTrafficLight && h.light_is_red(t_s);
      }
    }
    obs.dist_to_next_hazard_m = best;
    if (best_kind >= 0) {
      obs.hazard_kind_onehot[static_cast<std::size_t>(best_kind)] = 1.0;
      obs.light_is_red = best_red ? 1.0 : 0.0;
    }
    obs.speed_limit_mps = kSpeedCap;
    for (const Hazard& h : route.hazards)
      if (h.kind == HazardKind::kSpeedZone && pos >= h.position_m &&
          pos <= h.position_m + h.zone_length_m)
        obs.speed_limit_mps = h.zone_limit_mps;

    const Action act = policy_act(params, obs);
    traj.steps.emplace_back(obs, act);

    // Euler step; speed updates after the position so that
    // pos_{t+1} - pos_t == speed_t * dt holds exactly.
    double new_pos = pos + speed * kDt;

    // Blocking obstacles: a stopped lead always blocks; a pedestrian blocks
    // while crossing. The vehicle cannot pass through either, so the episode
    // ends at the obstacle position.
    double blocked_at = -1.0;
    for (std::size_t i = 0; i < route.hazards.size(); ++i) {
      const Hazard& h = route.hazards[i];
      bool blocking = h.kind == HazardKind::kStoppedLeadVehicle ||
                      (h.kind == HazardKind::kCrossingPedestrian && peds[i].occupied(step, h));
      if (!blocking || h.position_m <= pos) continue;
      if (new_pos >= h.position_m && (blocked_at < 0 || h.position_m < blocked_at))
        blocked_at = h.position_m;
    }
    if (blocked_at >= 0) {
      traj.terminal_reason = TerminalReason::kCollision;
      traj.final_position_m = blocked_at;
      return traj;
    }

    pos = new_pos;
    speed = std::min(kSpeedCap, std::max(0.0, speed + act.accel_mps2 * kDt));
  }

  traj.final_position_m = pos;
  return traj;
}

// ---------------------------------------------------------------------------
// Evaluation mapping: trajectory -> structured performance log
// ---------------------------------------------------------------------------

struct InfractionEvent {
  std::string kind;  // collision | red_light | route_deviation | speeding
  int step = 0;
  std::array<double, 3> position{0.0, 0.0, 0.0};  // y and z fixed at 0
  std::string message;

  bool operator==(const InfractionEvent&) const = default;
};

struct DrivingMetrics {
  double driving_score = 0.0;
  bool success = false;
  double efficiency = 0.0;
  double comfortness = 0.0;

  bool operator==(const DrivingMetrics&) const = default;
};

struct PerformanceLog {
  std::string route_id;
  ScenarioAttributes conditions;  // carried for failure-pattern grouping
  std::vector<InfractionEvent> events;
  double route_completion_fraction = 0.0;
  DrivingMetrics metrics;

  bool operator==(const PerformanceLog&) const = default;

  bool has_event(const std::string& kind) const {
    for (const auto& e : events)
      if (e.kind == kind) return true;
    return false;
  }
};

inline std::string infraction_message(const std::string& kind, double x) {
  char buf[96];
  const char* verb = nullptr;
  if (kind == "red_light") verb = "Agent ran a red light at";
  else if (kind == "collision") verb = "Agent collided with an obstacle at";
  else if (kind == "route_deviation") verb = "Agent deviated from the route at";
  else verb = "Agent exceeded the speed limit at";
  std::snprintf(buf, sizeof(buf), "%s (x=%.2f, y=0.00, z=0.00)", verb, x);
  return std::string(buf);
}

inline InfractionEvent make_event(const std::string& kind, int step, double x) {
  return InfractionEvent{kind, step, {x, 0.0, 0.0}, infraction_message(kind, x)};
}

inline PerformanceLog evaluate(const Trajectory& traj, const Route& route) {
  PerformanceLog log;
  log.route_id = route.route_id;
  log.conditions = route.conditions;

  const std::size_t n = traj.steps.size();

  // Per-step positions; index n is the end-of-rollout position.
  auto position_at = [&](std::size_t t) -> double {
    if (t < n) return traj.steps[t].first.position_m;
    return traj.final_position_m;
  };

  // Red-light crossings: the light's state is taken at the step on which the
  // movement across the stop line happened.
  for (const Hazard& h : route.hazards) {
    if (h.kind != HazardKind::kTrafficLight) continue;
    for (std::size_t t = 0; t < n; ++t) {
      if (position_at(t) < h.position_m && position_at(t + 1) >= h.position_m) {
        if (h.light_is_red(static_cast<double>(t) * kDt))
          log.events.push_back(make_event("red_light", static_cast<int>(t), h.position_m));
        break;
      }
    }
  }

  // Speeding: one event per zone, at the first violation inside it.
  for (const Hazard& h : route.hazards) {
    if (h.kind != HazardKind::kSpeedZone) continue;
    for (std::size_t t = 0; t < n; ++t) {
      const Observation& o = traj.steps[t].first;
      if (o.position_m >= h.position_m && o.position_m <= h.position_m + h.zone_length_m &&
          o.speed_mps > h.zone_limit_mps + 1e-9) {
        log.events.push_back(
            make_event("speeding", static_cast<int>(t), o.position_m));
        break;
      }
    }
  }

  if (traj.terminal_reason == TerminalReason::kCollision && n > 0)
    log.events.push_back(
        make_event("collision", static_cast<int>(n - 1), traj.final_position_m));
  if (traj.terminal_reason == TerminalReason::kTimeout)
    log.events.push_back(make_event("route_deviation", static_cast<int>(n == 0 ? 0 : n - 1),
                                    traj.final_position_m));

  std::stable_sort(log.events.begin(), log.events.end(),
                   [](const InfractionEvent& a, const InfractionEvent& b) {
                     return a.step < b.step;
                   });

  log.route_completion_fraction = std::min(1.0, traj.final_position_m / route.length_m);

  // Driving score: completion scaled by a multiplicative penalty per event.
  double score = 100.0 * log.route_completion_fraction;
  for (const auto& e : log.events) score *= infraction_penalty(e.kind);
  log.metrics.driving_score = score;

  log.metrics.success = !log.has_event("collision") && !log.has_event("red_light") &&
                        log.route_completion_fraction == 1.0;

  // Efficiency: ideal (speed-cap) time over actual time for the distance covered.
  const double distance = std::min(traj.final_position_m, route.length_m);
  const double actual_s = static_cast<double>(n) * kDt;
  log.metrics.efficiency =
      (n == 0 || distance <= 0.0) ? 0.0 : 100.0 * (distance / kSpeedCap) / actual_s;

  // Comfortness: mean absolute jerk of the commanded accelerations.
  double jerk_sum = 0.0;
  for (std::size_t t = 1; t < n; ++t)
    jerk_sum += std::abs(traj.steps[t].second.accel_mps2 - traj.steps[t - 1].second.accel_mps2) / kDt;
  const double mean_jerk = n >= 2 ? jerk_sum / static_cast<double>(n - 1) : 0.0;
  log.metrics.comfortness = 100.0 * std::max(0.0, 1.0 - mean_jerk / kJerkRef);

  return log;
}

inline double mean_abs_jerk(const Trajectory& traj) {
  const std::size_t n = traj.steps.size();
  if (n < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t t = 1; t < n; ++t)
    sum += std::abs(traj.steps[t].second.accel_mps2 - traj.steps[t - 1].second.accel_mps2) / kDt;
  return sum / static_cast<double>(n - 1);
}

// ---------------------------------------------------------------------------
// Pre-evaluation over a route set
// ---------------------------------------------------------------------------

struct EvaluationSummary {
  double mean_driving_score = 0.0;
  double success_rate = 0.0;  // in [0,1]
  double mean_efficiency = 0.0;
  double mean_comfortness = 0.0;
  int infraction_count = 0;

  bool operator==(const EvaluationSummary&) const = default;
};

struct PreEvaluation {
  std::vector<PerformanceLog> logs;  // in route order
  EvaluationSummary summary;
};

inline EvaluationSummary summarize(const std::vector<PerformanceLog>& logs) {
  EvaluationSummary s;
  if (logs.empty()) return s;
  for (const auto& log : logs) {
    s.mean_driving_score += log.metrics.driving_score;
    s.success_rate += log.metrics.success ? 1.0 : 0.0;
    s.mean_efficiency += log.metrics.efficiency;
    s.mean_comfortness += log.metrics.comfortness;
    s.infraction_count += static_cast<int>(log.events.size());
  }
  const double m = static_cast<double>(logs.size());
  s.mean_driving_score /= m;
  s.success_rate /= m;
  s.mean_efficiency /= m;
  s.mean_comfortness /= m;
  return s;
}

inline PreEvaluation pre_evaluate(const PolicyParams& params, const std::vector<Route>& routes) {
  if (routes.empty()) throw EmptyRouteSetError("pre-evaluation needs at least one route");
  PreEvaluation out;
  out.logs.reserve(routes.size());
  for (const Route& r : routes) out.logs.push_back(evaluate(run_route(params, r), r));
  out.summary = summarize(out.logs);
  return out;
}

// ---------------------------------------------------------------------------
// Scenario -> executable route
// ---------------------------------------------------------------------------

namespace detail {

// Deterministic jitter in [-5, +5] m derived from (seed, slot).
inline double position_jitter(std::uint64_t seed, int slot) {
  std::uint64_t h = splitmix64(seed + 0x9E37u * static_cast<std::uint64_t>(slot + 1));
  return static_cast<double>(h % 1001) / 100.0 - 5.0;
}

inline bool tag_maps_to(const std::string& tag, HazardKind kind) {
  switch (kind) {
    case HazardKind::kTrafficLight:
      return tag == "red_light" || tag == "traffic_light";
    case HazardKind::kStoppedLeadVehicle:
      return tag == "stopped_lead_vehicle" || tag == "stopped_vehicle" ||
             tag == "aggressive_cut_in";
    case HazardKind::kCrossingPedestrian:
      return tag.find("pedestrian") != std::string::npos || tag == "jaywalker";
    case HazardKind::kSpeedZone:
      return tag == "speed_zone" || tag == "school_zone" || tag == "speed_limit";
  }
  return false;
}

}  // namespace detail

// Deterministic mapping from a bank scenario to a runnable training route.
// The location fixes a base hazard family, scene tags add hazards (one per
// kind at most), weather and time act through the conditions carried on the
// route. The same (record, seed) pair always yields the same route.
inline Route scenario_to_route(const ScenarioRecord& record, std::uint64_t seed) {
  Route route;
  route.route_id = "r_" + record.scenario_id + "_" + std::to_string(seed);
  route.length_m = 150.0;
  route.conditions = record.attributes;
  route.time_limit_steps = 600;
  route.seed = seed;

  bool want[4] = {false, false, false, false};
  switch (record.attributes.location) {
    case Location::kUrbanIntersection: want[0] = true; break;   // traffic light
    case Location::kRoundabout: want[3] = true; break;          // slow zone
    case Location::kMergeRamp: want[1] = true; break;           // queued lead
    case Location::kHighway:
    case Location::kResidential: break;
  }
  for (const auto& tag : record.attributes.scene_tags)
    for (int k = 0; k < 4; ++k)
      if (detail::tag_maps_to(tag, static_cast<HazardKind>(k))) want[k] = true;

  // Fixed per-kind slots; jitter keeps distinct seeds from producing the
  // exact same episode while preserving the slot ordering.
  const double slot_pos[4] = {70.0, 95.0, 55.0, 30.0};
  std::vector<Hazard> hazards;
  for (int k = 0; k < 4; ++k) {
    if (!want[k]) continue;
    Hazard h;
    h.kind = static_cast<HazardKind>(k);
    h.position_m = slot_pos[k] + detail::position_jitter(seed, k);
    if (h.kind == HazardKind::kTrafficLight) {
      h.light_period_s = 20.0;
      h.light_red_s = 10.0;
      h.light_offset_s =
          static_cast<double>(splitmix64(seed ^ 0xA11CEULL) % 200) / 10.0;  // [0, 20)
    }
    if (h.kind == HazardKind::kCrossingPedestrian) {
      h.trigger_distance_m = 25.0;  // night narrows this at rollout time
      h.crossing_duration_s = 3.0;
    }
    if (h.kind == HazardKind::kSpeedZone) {
      h.zone_length_m = 25.0;
      h.zone_limit_mps = 8.0;
    }
    hazards.push_back(h);
  }
  std::sort(hazards.begin(), hazards.end(),
            [](const Hazard& a, const Hazard& b) { return a.position_m < b.position_m; });
  route.hazards = std::move(hazards);
  validate_route(route);
  return route;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline Json hazard_to_json(const Hazard& h) {
  Json params = Json::object();
  switch (h.kind) {
    case HazardKind::kTrafficLight:
      params["light_offset_s"] = h.light_offset_s;
      params["light_period_s"] = h.light_period_s;
      params["light_red_s"] = h.light_red_s;
      break;
    case HazardKind::kCrossingPedestrian:
      params["trigger_distance_m"] = h.trigger_distance_m;
      params["crossing_duration_s"] = h.crossing_duration_s;
      break;
    case HazardKind::kSpeedZone:
      params["zone_length_m"] = h.zone_length_m;
      params["zone_limit_mps"] = h.zone_limit_mps;
      break;
    case HazardKind::kStoppedLeadVehicle:
      break;
  }
  return Json{{"kind", hazard_kind_token(h.kind)}, {"position_m", h.position_m},
              {"params", params}};
}

inline Hazard hazard_from_json(const Json& j, int line_no = 0) {
  Hazard h;
  h.kind = hazard_kind_from_token(require_field<std::string>(j, "kind", line_no));
  h.position_m = require_field<double>(j, "position_m", line_no);
  const Json params = j.contains("params") ? j.at("params") : Json::object();
  auto opt = [&](const char* key, double& slot) {
    if (params.contains(key)) slot = params.at(key).get<double>();
  };
  opt("light_offset_s", h.light_offset_s);
  opt("light_period_s", h.light_period_s);
  opt("light_red_s", h.light_red_s);
  opt("trigger_distance_m", h.trigger_distance_m);
  opt("crossing_duration_s", h.crossing_duration_s);
  opt("zone_length_m", h.zone_length_m);
  opt("zone_limit_mps", h.zone_limit_mps);
  return h;
}

inline Json route_to_json(const Route& r) {
  Json hazards = Json::array();
  for (const auto& h : r.hazards) hazards.push_back(hazard_to_json(h));
  return Json{{"route_id", r.route_id},
              {"length_m", r.length_m},
              {"conditions", attributes_to_json(r.conditions)},
              {"hazards", hazards},
              {"time_limit_steps", r.time_limit_steps},
              {"seed", r.seed}};
}

inline Route route_from_json(const Json& j, int line_no = 0) {
  Route r;
  r.route_id = require_field<std::string>(j, "route_id", line_no);
  r.length_m = require_field<double>(j, "length_m", line_no);
  if (!j.contains("conditions")) throw SchemaError(line_no, "conditions", "missing required field");
  r.conditions = attributes_from_json(j.at("conditions"), line_no);
  if (!j.contains("hazards")) throw SchemaError(line_no, "hazards", "missing required field");
  for (const Json& h : j.at("hazards")) r.hazards.push_back(hazard_from_json(h, line_no));
  r.time_limit_steps = require_field<int>(j, "time_limit_steps", line_no);
  r.seed = require_field<std::uint64_t>(j, "seed", line_no);
  validate_route(r, line_no);
  return r;
}

inline std::vector<Route> load_routes(const std::string& path) {
  std::vector<Route> routes;
  for_each_jsonl(path, [&](int line_no, const Json& obj) {
    routes.push_back(route_from_json(obj, line_no));
  });
  return routes;
}

inline void save_routes(const std::string& path, const std::vector<Route>& routes) {
  std::vector<Json> rows;
  rows.reserve(routes.size());
  for (const auto& r : routes) rows.push_back(route_to_json(r));
  save_jsonl(path, rows);
}

inline Json log_to_json(const PerformanceLog& log) {
  Json events = Json::array();
  for (const auto& e : log.events)
    events.push_back(Json{{"kind", e.kind},
                          {"step", e.step},
                          {"position", e.position},
                          {"message", e.message}});
  return Json{{"route_id", log.route_id},
              {"conditions", attributes_to_json(log.conditions)},
              {"events", events},
              {"route_completion_fraction", log.route_completion_fraction},
              {"metrics",
               Json{{"driving_score", log.metrics.driving_score},
                    {"success", log.metrics.success},
                    {"efficiency", log.metrics.efficiency},
                    {"comfortness", log.metrics.comfortness}}}};
}

inline PerformanceLog log_from_json(const Json& j, int line_no = 0) {
  PerformanceLog log;
  log.route_id = require_field<std::string>(j, "route_id", line_no);
  if (!j.contains("conditions")) throw SchemaError(line_no, "conditions", "missing required field");
  log.conditions = attributes_from_json(j.at("conditions"), line_no);
  if (!j.contains("events")) throw SchemaError(line_no, "events", "missing required field");
  for (const Json& e : j.at("events")) {
    InfractionEvent ev;
    ev.kind = require_field<std::string>(e, "kind", line_no);
    ev.step = require_field<int>(e, "step", line_no);
    ev.position = require_field<std::array<double, 3>>(e, "position", line_no);
    ev.message = require_field<std::string>(e, "message", line_no);
    log.events.push_back(std::move(ev));
  }
  log.route_completion_fraction =
      require_field<double>(j, "route_completion_fraction", line_no);
  if (!j.contains("metrics")) throw SchemaError(line_no, "metrics", "missing required field");
  const Json& m = j.at("metrics");
  log.metrics.driving_score = require_field<double>(m, "driving_score", line_no);
  log.metrics.success = require_field<bool>(m, "success", line_no);
  log.metrics.efficiency = require_field<double>(m, "efficiency", line_no);
  log.metrics.comfortness = require_field<double>(m, "comfortness", line_no);
  return log;
}

inline std::vector<PerformanceLog> load_logs(const std::string& path) {
  std::vector<PerformanceLog> logs;
  for_each_jsonl(path, [&](int line_no, const Json& obj) {
    logs.push_back(log_from_json(obj, line_no));
  });
  return logs;
}

inline void save_logs(const std::string& path, const std::vector<PerformanceLog>& logs) {
  std::vector<Json> rows;
  rows.reserve(logs.size());
  for (const auto& log : logs) rows.push_back(log_to_json(log));
  save_jsonl(path, rows);
}

inline Json policy_to_json(const PolicyParams& p) { return Json{{"theta", p.theta}}; }

inline PolicyParams policy_from_json(const Json& j, int line_no = 0) {
  PolicyParams p;
  auto theta = require_field<std::vector<double>>(j, "theta", line_no);
  if (theta.size() != kThetaDim)
    throw SchemaError(line_no, "theta", "expected " + std::to_string(kThetaDim) + " entries");
  std::copy(theta.begin(), theta.end(), p.theta.begin());
  validate_policy(p);
  return p;
}

inline PolicyParams load_policy(const std::string& path) {
  Json j = Json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw SchemaError(1, "<json>", "malformed JSON");
  return policy_from_json(j, 1);
}

inline void save_policy(const std::string& path, const PolicyParams& p) {
  write_file(path, policy_to_json(p).dump(2) + "\n");
}

}  // namespace sera
