#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lord/checkpoint.hpp"
#include "lord/tape.hpp"
#include "lord/tensor.hpp"

namespace lord {

struct AdapterSet;  // adapters.hpp

// Which head drives the executed plan.
enum class PlanMode { StructuredSampling, StructuredUnrolled, Unstructured };

PlanMode plan_mode_from_string(const std::string& s);
const char* plan_mode_name(PlanMode m);

struct ModelConfig {
    int history_steps = 10;  // H
    int horizon_steps = 20;  // T
    int max_agents = 4;      // A, agent slots in the observation
    int num_modes = 6;       // M
    int latent_dim = 64;     // d_z
    int num_cost_weights = 7;
    int lane_points = 20;  // L
    double dt = 0.2;

    int enc_hidden = 64;
    int enc_embed = 64;
    int fusion_hidden = 128;
    int head_hidden = 64;
    int joint_hidden = 128;

    bool head_game_params = true;  // cost weights, goals, initial trajectory
    bool head_sdv = true;          // unstructured trajectory head
    PlanMode plan_mode = PlanMode::StructuredSampling;

    int ego_dim() const { return history_steps * 4; }
    int agent_dim() const { return history_steps * 5; }
    int lane_dim() const { return lane_points * 2 + 1; }  // + target speed
    int fusion_dim() const { return 3 * enc_embed; }
    int joint_dim() const { return num_modes * max_agents * horizon_steps * 2; }
    int mode_traj_dim() const { return max_agents * horizon_steps * 2; }
    int goals_dim() const { return max_agents * 2; }
    int traj_dim() const { return horizon_steps * 2; }
};

// One observation window in the ego frame of the current step: the ego is at
// the origin heading +x. Agent rows are flattened (x, y, heading, speed,
// valid) per history step; fully invalid agents are all-zero rows.
struct ObservationSeq {
    Tensor ego_hist;    // H x 4 (x, y, heading, speed)
    Tensor agent_hist;  // A x (H*5)
    Tensor lane;        // L x 2 centerline ahead of the ego
    double target_speed = 0.0;

    bool agent_valid(int a) const;  // validity flag at the current step
    int valid_agent_count() const;
    void validate(const ModelConfig& cfg) const;
};

// Graph handles of one forward pass. Head vars are flat vectors; reshape at
// the point of use.
struct PolicyGraph {
    Var latent;
    Var joint_modes;       // M x (A*T*2)
    Var mode_logits;       // M
    Var cost_weights_raw;  // n_w, residual included when attached
    Var goals;             // A*2
    Var init_trajectory;   // T*2
    Var sdv_trajectory;    // T*2
    bool has_game_params = false;
    bool has_sdv = false;
};

// Numeric snapshot of the decoder heads (the y of the policy).
struct DecoderOutput {
    Tensor joint_modes;  // M x (A*T*2)
    Tensor mode_logits;
    Tensor cost_weights_raw;
    Tensor goals;  // A x 2
    Tensor init_trajectory;  // T x 2
    Tensor sdv_trajectory;   // T x 2
    bool has_game_params = false;
    bool has_sdv = false;

    const Tensor& require_game(const Tensor& t, const char* what) const;
    const Tensor& cost_weights() const;
    const Tensor& goal_points() const;
    const Tensor& init_traj() const;
    const Tensor& sdv_traj() const;
};

struct ForwardOptions {
    bool training = false;
    std::uint64_t seed = 0;
};

// Seeded initialization: linear weights uniform in +/- sqrt(6/(fan_in+fan_out)),
// biases zero.
void init_model_params(ParameterStore& params, const ModelConfig& cfg, std::uint64_t seed);

Var encode(Tape& tape, const ParameterStore& params, const ModelConfig& cfg, const ObservationSeq& obs,
           const ForwardOptions& opts, const AdapterSet* adapters = nullptr);

PolicyGraph decode(Tape& tape, const ParameterStore& params, const ModelConfig& cfg, Var latent,
                   const ForwardOptions& opts, const AdapterSet* adapters = nullptr);

PolicyGraph policy_forward(Tape& tape, const ParameterStore& params, const ModelConfig& cfg,
                           const ObservationSeq& obs, const ForwardOptions& opts,
                           const AdapterSet* adapters = nullptr);

DecoderOutput snapshot(const Tape& tape, const PolicyGraph& g, const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// control-space rollout

struct KinematicState {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;
    double speed = 0.0;
};

struct ActuationLimits {
    double accel = 4.0;     // |a| bound, m/s^2
    double yaw_rate = 1.2;  // |omega| bound, rad/s
    double v_max = 20.0;
};

struct RolloutResult {
    Tensor states;  // T x 4 (x, y, heading, speed), after each step
    int clamp_events = 0;
};

// Unicycle Euler integration with substeps; controls are (accel, yaw rate)
// rows over T steps of dt. Inputs outside the limits are clamped and the
// clamping is reported via clamp_events.
RolloutResult rollout_kinematics(const Tensor& controls, const KinematicState& start, double dt,
                                 const ActuationLimits& lim, int substeps = 10);

}  // namespace lord
