#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lord/geometry.hpp"
#include "lord/model.hpp"
#include "lord/tensor.hpp"

namespace lord {

// Two-domain distribution shift. The OOD default bundles handedness, density
// (fewer agents, larger gaps) and speed (slower traffic, more cautious cruise
// factor); a handedness-only variant isolates the geometric part.
struct DomainConfig {
    std::string name = "id";
    bool left_handed = false;
    double agent_lambda = 3.0;  // Poisson mean, truncated to the model's agent slots
    double speed_min = 8.0;     // posted target speed range, m/s
    double speed_max = 14.0;
    int lane_count = 2;  // 1 = single lane, 2 = ego + oncoming
    double lane_width = 3.5;
    double curvature_min = -0.004;  // 1/m
    double curvature_max = 0.004;
    double gap_mean = 25.0;       // longitudinal spacing scale, m
    double speed_noise = 0.08;    // relative jitter of initial speeds
    double lateral_noise = 0.15;  // initial lateral offset jitter, m
    double cruise_factor = 1.0;   // expert cruise speed / posted target speed

    void validate() const;
};

struct IdmParams {
    double desired_speed = 10.0;
    double time_headway = 1.5;
    double min_gap = 2.0;       // s0
    double max_accel = 2.0;
    double comfort_decel = 2.5;
};

struct ActorInit {
    KinematicState state;
    int lane = 0;  // 0 = ego lane, 1 = oncoming
    IdmParams idm;
};

struct Scenario {
    std::uint64_t seed = 0;
    int index = 0;
    std::string domain;
    std::vector<Vec2> ego_lane;      // ordered in driving direction
    std::vector<Vec2> oncoming_lane; // empty for single-lane corridors
    double lane_width = 3.5;
    KinematicState ego;
    IdmParams ego_idm;
    double target_speed = 10.0;  // posted value, part of the observation
    std::vector<ActorInit> agents;
    Vec2 goal;
};

// Deterministic in (config, seed). Left-handed domains are built as the
// mirrored right-handed scenario of the same seed.
Scenario sample_scenario(const DomainConfig& cfg, std::uint64_t seed);

struct SimStates {
    Tensor ego_states;                 // (steps+1) x 4
    std::vector<Tensor> agent_states;  // per agent, (steps+1) x 4
    int steps = 0;
};

inline constexpr int kEpisodeSteps = 75;  // 15 s at dt = 0.2

// Scripted rollout: IDM speed control plus pure-pursuit lane tracking for the
// ego and every agent. Throws if the expert collides.
SimStates expert_rollout(const Scenario& scenario, int steps);

// Vehicle footprint shared by the expert safety check and closed-loop scoring:
// 4.5 x 2.0 m box approximated by two discs of radius 1.0 at +/-1.25 m.
bool vehicles_collide(const KinematicState& a, const KinematicState& b);

// One imitation sample: observation window plus the joint expert future.
struct Window {
    ObservationSeq obs;
    Tensor future;        // A x (T*2); row 0 is the ego
    Tensor future_valid;  // A
    double expert_progress = 0.0;  // ego arc progress over the future, m
    int scenario_index = 0;
    int anchor = 0;
};

// Observation built from world-frame state histories, expressed in the ego
// frame of the last entry. Shared between dataset extraction and the
// closed-loop engine.
ObservationSeq build_observation(const LanePath& ego_lane, const std::vector<KinematicState>& ego_hist,
                                 const std::vector<std::vector<KinematicState>>& agent_hists, double target_speed,
                                 const ModelConfig& cfg);

std::vector<Window> extract_windows(const Scenario& scenario, const SimStates& sim, const ModelConfig& cfg,
                                    int windows_per_scenario);

struct Dataset {
    std::string domain;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    int H = 0, T = 0, A = 0, L = 0;
    std::vector<Window> windows;
};

// Scenario seeds are derived from (seed, scenario index); splits use disjoint
// index ranges so their seed sets never overlap.
Dataset make_dataset(const DomainConfig& dcfg, const ModelConfig& mcfg, int num_scenarios, int windows_per_scenario,
                     std::uint64_t seed, std::uint64_t seed_offset, std::uint64_t config_hash);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

struct Histogram {
    double lo = 0.0, hi = 1.0;
    std::vector<long> counts;
    long total = 0;
    double mean = 0.0;

    void add(double v);
};

struct DomainStatistics {
    Histogram nearest_agent_distance;  // m, per window
    Histogram speeds;                  // ego and agent current speeds pooled
    Histogram agent_counts;            // valid agents per window
    long windows = 0;
};

DomainStatistics domain_statistics(const Dataset& ds);
std::string statistics_report(const DomainStatistics& id_stats, const DomainStatistics& ood_stats);

}  // namespace lord
