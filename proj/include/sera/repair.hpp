#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sera/bank.hpp"
#include "sera/embed.hpp"
#include "sera/errors.hpp"
#include "sera/failure.hpp"
#include "sera/harness.hpp"
#include "sera/jsonl.hpp"
#include "sera/llm.hpp"
#include "sera/recommend.hpp"

namespace sera {

// ---------------------------------------------------------------------------
// End-to-end repair loop: pre-evaluate, extract failure patterns, recommend,
// reflect, refine, fine-tune, re-evaluate. Produces a before/after report
// containing every intermediate artifact.
// ---------------------------------------------------------------------------

enum class AnalyzerMode { kLlm, kRules };
enum class ReflectionMode { kLlm, kRules, kOff };
enum class SelectionMode { kRandom, kInitial, kFull };
enum class LoopGranularity { kPerRoute, kBatch };

struct RepairConfig {
  std::string routes_file;
  std::string bank_file;
  std::string policy_file;  // optional; the shipped baseline when empty
  int k = 8;
  AnalyzerMode analyzer = AnalyzerMode::kRules;
  ReflectionMode reflection = ReflectionMode::kRules;
  SelectionMode selection = SelectionMode::kFull;
  double learning_rate = 0.05;
  int max_grad_steps = 200;
  double fd_step = 1e-3;
  int episodes_per_scenario = 3;
  LoopGranularity granularity = LoopGranularity::kBatch;
  std::uint64_t seed = 0;
  double tau_cov = kDefaultTauCov;
  double tau_dup = kDefaultTauDup;
};

inline void validate_config(const RepairConfig& cfg) {
  if (cfg.routes_file.empty()) throw ConfigError("routes file not set");
  if (cfg.bank_file.empty()) throw ConfigError("bank file not set");
  if (cfg.k < 1) throw ConfigError("k must be >= 1");
  if (cfg.learning_rate <= 0) throw ConfigError("learning_rate must be positive");
  if (cfg.max_grad_steps < 1) throw ConfigError("max_grad_steps must be >= 1");
  if (cfg.fd_step <= 0) throw ConfigError("fd_step must be positive");
  if (cfg.episodes_per_scenario < 1) throw ConfigError("episodes_per_scenario must be >= 1");
}

// ---------------------------------------------------------------------------
// Config file: flat key = value lines, # comments, quoted strings.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string strip(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::string unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

}  // namespace detail

inline RepairConfig parse_repair_config(const std::string& text,
                                        const std::string& base_dir = "") {
  RepairConfig cfg;
  auto resolve = [&](const std::string& p) {
    if (p.empty() || base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
    return (std::filesystem::path(base_dir) / p).string();
  };

  std::size_t start = 0;
  int line_no = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    std::string line = text.substr(start, end == std::string::npos ? end : end - start);
    start = end == std::string::npos ? text.size() + 1 : end + 1;
    ++line_no;

    // Strip comments outside quotes.
    bool in_quote = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_quote = !in_quote;
      if (line[i] == '#' && !in_quote) {
        line = line.substr(0, i);
        break;
      }
    }
    line = detail::strip(line);
    if (line.empty()) continue;

    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    std::string key = detail::strip(line.substr(0, eq));
    std::string value = detail::unquote(detail::strip(line.substr(eq + 1)));

    try {
      if (key == "routes") cfg.routes_file = resolve(value);
      else if (key == "bank") cfg.bank_file = resolve(value);
      else if (key == "policy") cfg.policy_file = resolve(value);
      else if (key == "k") cfg.k = std::stoi(value);
      else if (key == "analyzer") {
        if (value == "llm") cfg.analyzer = AnalyzerMode::kLlm;
        else if (value == "rules") cfg.analyzer = AnalyzerMode::kRules;
        else throw ConfigError("analyzer must be llm|rules");
      } else if (key == "reflection") {
        if (value == "llm") cfg.reflection = ReflectionMode::kLlm;
        else if (value == "rules") cfg.reflection = ReflectionMode::kRules;
        else if (value == "off") cfg.reflection = ReflectionMode::kOff;
        else throw ConfigError("reflection must be llm|rules|off");
      } else if (key == "selection") {
        if (value == "random") cfg.selection = SelectionMode::kRandom;
        else if (value == "initial") cfg.selection = SelectionMode::kInitial;
        else if (value == "full") cfg.selection = SelectionMode::kFull;
        else throw ConfigError("selection must be random|initial|full");
      } else if (key == "learning_rate") cfg.learning_rate = std::stod(value);
      else if (key == "max_grad_steps") cfg.max_grad_steps = std::stoi(value);
      else if (key == "fd_step") cfg.fd_step = std::stod(value);
      else if (key == "episodes_per_scenario") cfg.episodes_per_scenario = std::stoi(value);
      else if (key == "granularity") {
        if (value == "per_route") cfg.granularity = LoopGranularity::kPerRoute;
        else if (value == "batch") cfg.granularity = LoopGranularity::kBatch;
        else throw ConfigError("granularity must be per_route|batch");
      } else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "tau_cov") cfg.tau_cov = std::stod(value);
      else if (key == "tau_dup") cfg.tau_dup = std::stod(value);
      else throw ConfigError("unknown key '" + key + "' on line " + std::to_string(line_no));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("line " + std::to_string(line_no) + ": bad value for '" + key + "'");
    }
  }
  validate_config(cfg);
  return cfg;
}

inline RepairConfig load_repair_config(const std::string& path) {
  return parse_repair_config(read_file(path),
                             std::filesystem::path(path).parent_path().string());
}

inline Json config_to_json(const RepairConfig& cfg) {
  return Json{
      {"routes", cfg.routes_file},
      {"bank", cfg.bank_file},
      {"policy", cfg.policy_file},
      {"k", cfg.k},
      {"analyzer", cfg.analyzer == AnalyzerMode::kLlm ? "llm" : "rules"},
      {"reflection", cfg.reflection == ReflectionMode::kLlm
                         ? "llm"
                         : (cfg.reflection == ReflectionMode::kRules ? "rules" : "off")},
      {"selection", cfg.selection == SelectionMode::kRandom
                        ? "random"
                        : (cfg.selection == SelectionMode::kInitial ? "initial" : "full")},
      {"learning_rate", cfg.learning_rate},
      {"max_grad_steps", cfg.max_grad_steps},
      {"fd_step", cfg.fd_step},
      {"episodes_per_scenario", cfg.episodes_per_scenario},
      {"granularity", cfg.granularity == LoopGranularity::kPerRoute ? "per_route" : "batch"},
      {"seed", cfg.seed},
      {"tau_cov", cfg.tau_cov},
      {"tau_dup", cfg.tau_dup}};
}

// ---------------------------------------------------------------------------
// Failure-specific risk over the refined set
// ---------------------------------------------------------------------------

// Episode seeds are derived from the global seed only, so the loss is a
// function of the refined id set, not of member ordering or route identity.
inline std::vector<std::uint64_t> episode_seeds(std::uint64_t global_seed, int episodes) {
  std::vector<std::uint64_t> seeds;
  seeds.reserve(static_cast<std::size_t>(episodes));
  for (int i = 0; i < episodes; ++i)
    seeds.push_back(splitmix64(global_seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(i + 1)));
  return seeds;
}

inline double episode_loss(const PolicyParams& params, const Route& route) {
  Trajectory traj = run_route(params, route);
  PerformanceLog log = evaluate(traj, route);
  int collisions = 0, red_lights = 0, deviations = 0, speedings = 0;
  for (const auto& e : log.events) {
    if (e.kind == "collision") ++collisions;
    else if (e.kind == "red_light") ++red_lights;
    else if (e.kind == "route_deviation") ++deviations;
    else if (e.kind == "speeding") ++speedings;
  }
  return 10.0 * collisions + 5.0 * red_lights + 3.0 * deviations + 1.0 * speedings +
         (1.0 - log.route_completion_fraction) + 0.1 * mean_abs_jerk(traj);
}

// Mean failure risk over all (scenario, episode seed) rollouts. Episodes are
// accumulated in sorted (scenario_id, seed index) order so the value is
// bit-identical under any ordering of the refined members.
inline double fail_loss(const PolicyParams& params, const RefinedSet& refined, const Bank& bank,
                        const std::vector<std::uint64_t>& seeds) {
  if (refined.members.empty()) throw ConfigError("refined set is empty");
  std::vector<std::string> ids;
  ids.reserve(refined.members.size());
  for (const auto& m : refined.members) ids.push_back(m.scenario_id);
  std::sort(ids.begin(), ids.end());

  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& id : ids) {
    const ScenarioRecord& rec = bank.get(id);
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const std::uint64_t route_seed = splitmix64(seeds[k] ^ fnv1a64(id));
      sum += episode_loss(params, scenario_to_route(rec, route_seed));
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Fine-tuning: gradient descent with central finite differences
// ---------------------------------------------------------------------------

struct FineTuneResult {
  PolicyParams theta;
  std::vector<double> loss_curve;  // loss after each gradient step
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

inline FineTuneResult fine_tune(const PolicyParams& start, const RefinedSet& refined,
                                const Bank& bank, const RepairConfig& cfg) {
  validate_config(cfg);
  const std::vector<std::uint64_t> seeds = episode_seeds(cfg.seed, cfg.episodes_per_scenario);
  auto loss_at = [&](const PolicyParams& p) { return fail_loss(p, refined, bank, seeds); };

  PolicyParams theta = start;
  PolicyParams best = start;
  double best_loss = loss_at(start);
  const double initial_loss = best_loss;

  FineTuneResult result;
  int stall = 0;
  for (int step = 0; step < cfg.max_grad_steps; ++step) {
    std::array<double, kThetaDim> grad{};
    for (int i = 0; i < kThetaDim; ++i) {
      PolicyParams plus = theta, minus = theta;
      plus.theta[static_cast<std::size_t>(i)] += cfg.fd_step;
      minus.theta[static_cast<std::size_t>(i)] -= cfg.fd_step;
      grad[static_cast<std::size_t>(i)] =
          (loss_at(plus) - loss_at(minus)) / (2.0 * cfg.fd_step);
    }
    for (int i = 0; i < kThetaDim; ++i)
      theta.theta[static_cast<std::size_t>(i)] -= cfg.learning_rate * grad[static_cast<std::size_t>(i)];

    const double loss = loss_at(theta);
    result.loss_curve.push_back(loss);
    const double improvement = best_loss - loss;
    if (loss < best_loss) {
      best_loss = loss;
      best = theta;
    }
    stall = improvement < 1e-4 ? stall + 1 : 0;
    if (stall >= 10) break;
  }

  result.theta = best;  // never worse than the input on the training loss
  result.initial_loss = initial_loss;
  result.final_loss = best_loss;
  return result;
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

struct IterationRecord {
  std::string scope;  // "batch" or the route id
  std::vector<FailurePattern> patterns;
  CandidateSet candidates;
  std::vector<ReflectionSuggestion> suggestions;
  RefinedSet refined;
  std::vector<double> loss_curve;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

struct RepairReport {
  RepairConfig config;
  EvaluationSummary before;
  EvaluationSummary after;
  std::vector<PerformanceLog> before_logs;
  std::vector<PerformanceLog> after_logs;
  std::vector<IterationRecord> iterations;
  PolicyParams final_theta;
};

namespace detail {

// Uniform K-subset of bank ids; index sampling uses modulo so the draw only
// depends on the standardized mt19937_64 stream.
inline std::vector<std::string> sample_ids(const Bank& bank, int k, std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(bank.size());
  for (const auto& [id, rec] : bank.records()) ids.push_back(id);
  std::mt19937_64 gen(seed);
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), ids.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::size_t j = i + static_cast<std::size_t>(gen() % (ids.size() - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(take);
  return ids;
}

inline CandidateSet select_candidates(const Bank& bank,
                                      const std::vector<FailurePattern>& patterns,
                                      const RepairConfig& cfg, const Embedder& embedder) {
  if (cfg.selection != SelectionMode::kRandom) return recommend(bank, patterns, cfg.k, embedder);
  // Random arm: uniform scenario draw, scored afterwards for reporting.
  std::vector<std::string> ids = sample_ids(bank, cfg.k, cfg.seed);
  CandidateSet out;
  out.k = cfg.k;
  for (const auto& id : ids)
    out.members.push_back(score_record(bank.get(id), patterns, embedder));
  std::sort(out.members.begin(), out.members.end(), candidate_order);
  return out;
}

}  // namespace detail

// Runs one recommend/reflect/refine/fine-tune pass over the given logs and
// updates theta in place. Returns the iteration record.
inline IterationRecord repair_iteration(const std::string& scope,
                                        const std::vector<PerformanceLog>& logs,
                                        PolicyParams& theta, const Bank& bank,
                                        const Embedder& embedder, const RepairConfig& cfg,
                                        LlmClient* llm) {
  IterationRecord rec;
  rec.scope = scope;

  rec.patterns = cfg.analyzer == AnalyzerMode::kLlm && llm != nullptr
                     ? extract_patterns_llm(logs, *llm)
                     : extract_patterns_rules(logs);
  if (rec.patterns.empty()) return rec;  // nothing to repair in this scope

  rec.candidates = detail::select_candidates(bank, rec.patterns, cfg, embedder);

  const bool reflect = cfg.selection == SelectionMode::kFull &&
                       cfg.reflection != ReflectionMode::kOff;
  if (reflect) {
    rec.suggestions =
        cfg.reflection == ReflectionMode::kLlm && llm != nullptr
            ? reflect_llm(rec.candidates, rec.patterns, bank, *llm)
            : reflect_rules(rec.candidates, rec.patterns, bank, embedder, cfg.tau_cov,
                            cfg.tau_dup);
  }
  rec.refined = refine(rec.candidates, rec.suggestions, bank, rec.patterns, embedder);

  FineTuneResult ft = fine_tune(theta, rec.refined, bank, cfg);
  theta = ft.theta;
  rec.loss_curve = std::move(ft.loss_curve);
  rec.initial_loss = ft.initial_loss;
  rec.final_loss = ft.final_loss;
  return rec;
}

inline RepairReport run_repair(const RepairConfig& cfg, LlmClient* llm = nullptr) {
  validate_config(cfg);
  Bank bank = Bank::load(cfg.bank_file);
  if (bank.empty()) throw EmptyBankError("bank '" + cfg.bank_file + "' is empty");
  std::vector<Route> routes = load_routes(cfg.routes_file);
  if (routes.empty()) throw EmptyRouteSetError("route set '" + cfg.routes_file + "' is empty");

  Embedder embedder;
  ensure_embeddings(bank, embedder);

  PolicyParams theta =
      cfg.policy_file.empty() ? baseline_policy() : load_policy(cfg.policy_file);

  RepairReport report;
  report.config = cfg;

  PreEvaluation before = pre_evaluate(theta, routes);
  report.before = before.summary;
  report.before_logs = before.logs;

  if (cfg.granularity == LoopGranularity::kBatch) {
    report.iterations.push_back(
        repair_iteration("batch", before.logs, theta, bank, embedder, cfg, llm));
  } else {
    for (const Route& route : routes) {
      PerformanceLog log = evaluate(run_route(theta, route), route);
      report.iterations.push_back(
          repair_iteration(route.route_id, {log}, theta, bank, embedder, cfg, llm));
    }
  }

  PreEvaluation after = pre_evaluate(theta, routes);
  report.after = after.summary;
  report.after_logs = after.logs;
  report.final_theta = theta;
  return report;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

inline Json summary_to_json(const EvaluationSummary& s) {
  return Json{{"mean_driving_score", s.mean_driving_score},
              {"success_rate", s.success_rate},
              {"mean_efficiency", s.mean_efficiency},
              {"mean_comfortness", s.mean_comfortness},
              {"infraction_count", s.infraction_count}};
}

inline Json iteration_to_json(const IterationRecord& it) {
  Json patterns = Json::array();
  for (const auto& p : it.patterns) patterns.push_back(pattern_to_json(p));
  Json candidates = Json::array();
  for (const auto& c : it.candidates.members) candidates.push_back(candidate_to_json(c));
  Json suggestions = Json::array();
  for (const auto& s : it.suggestions) suggestions.push_back(suggestion_to_json(s));
  return Json{{"scope", it.scope},
              {"patterns", patterns},
              {"candidates", candidates},
              {"suggestions", suggestions},
              {"refined", refined_to_json(it.refined)},
              {"initial_loss", it.initial_loss},
              {"final_loss", it.final_loss},
              {"loss_curve", it.loss_curve}};
}

inline Json report_to_json(const RepairReport& r) {
  Json iterations = Json::array();
  for (const auto& it : r.iterations) iterations.push_back(iteration_to_json(it));
  Json before_logs = Json::array();
  for (const auto& log : r.before_logs) before_logs.push_back(log_to_json(log));
  Json after_logs = Json::array();
  for (const auto& log : r.after_logs) after_logs.push_back(log_to_json(log));
  return Json{{"config", config_to_json(r.config)},
              {"before", summary_to_json(r.before)},
              {"after", summary_to_json(r.after)},
              {"iterations", iterations},
              {"before_logs", before_logs},
              {"after_logs", after_logs},
              {"final_theta", r.final_theta.theta}};
}

inline void save_report(const std::string& path, const RepairReport& r) {
  write_file(path, report_to_json(r).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Ablation: the three selection arms under identical seed and budgets
// ---------------------------------------------------------------------------

struct AblationResult {
  std::string arm;
  RepairReport report;
};

inline std::vector<AblationResult> run_ablation(const RepairConfig& base, LlmClient* llm = nullptr) {
  std::vector<AblationResult> results;
  const std::pair<const char*, SelectionMode> arms[] = {
      {"random", SelectionMode::kRandom},
      {"initial", SelectionMode::kInitial},
      {"full", SelectionMode::kFull},
  };
  for (const auto& [name, mode] : arms) {
    RepairConfig cfg = base;
    cfg.selection = mode;
    results.push_back(AblationResult{name, run_repair(cfg, llm)});
  }
  return results;
}

}  // namespace sera
