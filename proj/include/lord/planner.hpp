#pragma once

#include <array>
#include <utility>
#include <vector>

#include "lord/geometry.hpp"
#include "lord/model.hpp"
#include "lord/tape.hpp"
#include "lord/tensor.hpp"

namespace lord {

inline constexpr int kNumCostFeatures = 7;

struct PlannerConfig {
    std::vector<double> accel_set{-2.5, -1.25, 0.0, 0.75, 1.5};
    std::vector<double> lateral_set{-1.5, 0.0, 1.5};
    double v_max = 16.0;
    double temperature = 1.0;
    int unroll_steps = 10;
    double unroll_step_size = 0.05;
    double unroll_clamp = 0.5;      // max waypoint displacement per descent step, m
    double proximity_margin = 3.0;  // m
    double agent_radius = 1.0;      // m
};

// Nonnegative effective weights via softplus of the raw decoder output.
struct CostWeights {
    Tensor raw;  // n_w
    Tensor effective() const;
};

// Lane-aligned candidate trajectories. Rows are future positions at times
// dt..T*dt; all candidates emanate from the shared start (the ego position).
struct CandidateSet {
    std::vector<Tensor> trajectories;               // each T x 2
    std::vector<std::pair<double, double>> profile;  // (longitudinal accel, lateral target)
    Vec2 start;

    int size() const { return static_cast<int>(trajectories.size()); }
};

// K = |accel_set| x |lateral_set| candidates: constant-acceleration
// longitudinal profiles along the lane arc, quintic lateral blends from the
// current offset to each target offset, speeds clamped to [0, v_max].
CandidateSet generate_candidates(const KinematicState& ego, const LanePath& lane, const PlannerConfig& cfg,
                                 int horizon_steps, double dt);

// Everything the cost features read that is constant w.r.t. the trajectory.
// Lane reference points/tangents/normals are sampled on a fixed arc schedule
// so they stay constants during trajectory optimization.
struct FeatureContext {
    Tensor lane_ref;  // T x 2
    Tensor lane_tan;  // T x 2, unit
    Tensor lane_nrm;  // T x 2, unit left normals
    std::vector<Tensor> agent_pred;  // valid agents, constant-velocity, T x 2
    double dt = 0.2;
    double target_speed = 10.0;
    double progress_target = 0.0;  // target_speed * T * dt
    Vec2 start;                    // current ego position
    double proximity_threshold = 5.0;  // 2 * agent_radius + margin
};

FeatureContext make_feature_context(const ObservationSeq& obs, const ModelConfig& mcfg, const PlannerConfig& pcfg);

// phi: progress shortfall, mean |lateral offset|, mean |speed - target|,
// mean accel^2, mean jerk^2, proximity hinge^2 sum, squared final goal
// distance. All nonnegative.
std::array<double, kNumCostFeatures> cost_features(const Tensor& traj, const FeatureContext& ctx, Vec2 goal);

// E = softplus(raw) . phi
double energy(const Tensor& weights_raw, const std::array<double, kNumCostFeatures>& phi);
Var energy_graph(Tape& tape, Var weights_raw, Var phi);

struct EnergyTable {
    std::vector<double> energies;
    std::vector<double> residual;  // optional, same length when non-empty
    double temperature = 1.0;

    bool has_residual() const { return !residual.empty(); }
    std::vector<double> totals() const;
};

// Gibbs probabilities over candidates, max-subtracted for stability.
std::vector<double> gibbs_probs(const EnergyTable& table);

// Product-of-experts composition: entrywise energy sum.
EnergyTable compose_energy(const EnergyTable& base, const EnergyTable& residual);

int argmin_index(const std::vector<double>& energies);  // ties -> lowest index
std::pair<int, Tensor> select_argmin(const EnergyTable& table, const CandidateSet& candidates);

// Candidate energies as graph nodes: features are constants except the goal
// term, which keeps the learned goal differentiable.
std::vector<Var> candidate_energies_graph(Tape& tape, Var weights_raw, Var goal, const CandidateSet& candidates,
                                          const FeatureContext& ctx);

// Analytic dE/dtraj assembled from graph ops, so unrolled descent stays
// differentiable w.r.t. weights, goal and the initial trajectory.
Var energy_traj_gradient(Tape& tape, Var weights_eff, Var traj, Var goal, const FeatureContext& ctx);

// N explicit gradient-descent steps on E starting at init_traj, each waypoint
// displacement clamped to `clamp` metres per step. Aborts with the step index
// if the iterate becomes non-finite.
Var unrolled_descent(Tape& tape, Var weights_raw, Var init_traj, Var goal, const FeatureContext& ctx, int steps,
                     double step_size, double clamp);

}  // namespace lord
