#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lord/adapters.hpp"
#include "lord/domains.hpp"
#include "lord/planner.hpp"
#include "lord/training.hpp"

namespace lord {

// ---------------------------------------------------------------------------
// open-loop metrics

struct OpenLoopMetrics {
    double ade = 0.0;
    double fde = 0.0;
    double min_sade = 0.0;
    double min_sfde = 0.0;
    double bmin_sfde = 0.0;
    double smr = 0.0;
    long samples = 0;
};

std::pair<double, double> ade_fde(const Tensor& pred, const Tensor& gt);  // both T x 2

struct JointMetricsResult {
    double min_sade = 0.0;
    double min_sfde = 0.0;
    double bmin_sfde = 0.0;
    bool miss = false;
};

// Scene-level joint metrics: per-mode SADE/SFDE averaged over valid agents,
// minimized independently over modes; bminSFDE adds the Brier penalty
// (1 - p*)^2 of the SFDE-minimizing mode; miss when minSFDE >= threshold.
JointMetricsResult joint_metrics(const Tensor& modes, const std::vector<double>& probs, const Tensor& gt,
                                 const std::vector<bool>& valid, double miss_threshold);

OpenLoopMetrics eval_open_loop(const ParameterStore& params, const AdapterSet* adapters, const ModelConfig& mcfg,
                               const PlannerConfig& pcfg, const Dataset& data, double miss_threshold);

// ---------------------------------------------------------------------------
// closed-loop engine

enum class AgentSimMode { Reactive, NonReactive };
const char* agent_sim_mode_name(AgentSimMode m);

struct EpisodeConfig {
    int steps = kEpisodeSteps;
    int replan_every = 2;  // 0.4 s at dt = 0.2
    double comfort_accel = 3.0;
    double comfort_jerk = 5.0;
    double corridor_slack = 0.5;
    ActuationLimits limits{};
};

struct ClosedLoopMetrics {
    bool collision = false;
    bool off_corridor = false;
    bool nonfinite_plan = false;
    double progress_ratio = 0.0;
    double comfort = 0.0;
    double score = 0.0;
    AgentSimMode mode = AgentSimMode::NonReactive;
};

// score = collision_gate * corridor_gate * mean(progress, comfort).
double driving_score(const ClosedLoopMetrics& m);

using PlanFn = std::function<Tensor(const ObservationSeq&)>;  // T x 2 ego-frame plan

// Executes the policy with replanning: nonreactive mode replays the scripted
// rollout recorded at scenario generation, reactive mode steps agents with IDM
// that treats the ego as a potential leader. Deterministic per inputs.
ClosedLoopMetrics closed_loop_episode(const PlanFn& policy, const Scenario& scenario, const ModelConfig& mcfg,
                                      AgentSimMode mode, const EpisodeConfig& ecfg,
                                      std::vector<std::string>* trace = nullptr);

PlanFn make_network_policy(const ParameterStore& params, const AdapterSet* adapters, const ModelConfig& mcfg,
                           const PlannerConfig& pcfg);

// Scripted controller exposed as a policy: IDM + pure pursuit simulated
// forward over the horizon with constant-velocity agents.
PlanFn make_expert_policy(const ModelConfig& mcfg);

struct ClosedLoopAggregate {
    double mean_score = 0.0;
    double collision_rate = 0.0;
    double mean_progress = 0.0;
    double mean_comfort = 0.0;
    long episodes = 0;
};

ClosedLoopAggregate aggregate_closed_loop(const std::vector<ClosedLoopMetrics>& runs);

// ---------------------------------------------------------------------------
// cross-domain reporting

struct MetricRow {
    std::map<std::string, double> values;
};

MetricRow metric_row(const OpenLoopMetrics& ol);
MetricRow metric_row(const OpenLoopMetrics& ol, const ClosedLoopAggregate& cl_nr, const ClosedLoopAggregate& cl_r);

struct CrossDomainReport {
    std::string method;
    MetricRow id;
    MetricRow ood;
    MetricRow averaged;      // arithmetic mean of the two domains
    MetricRow recovered_id;  // 2 * averaged - ood
    MetricRow forgetting;    // adapted ID minus base ID, when a base is given
    bool has_forgetting = false;
    std::uint64_t config_hash = 0;
};

// `base_id` enables the forgetting row. The two domains must come from the
// same experiment config; mismatched hashes are an error.
CrossDomainReport cross_domain_report(const std::string& method, const MetricRow& id, const MetricRow& ood,
                                      const MetricRow* base_id, std::uint64_t id_config_hash,
                                      std::uint64_t ood_config_hash);

}  // namespace lord
