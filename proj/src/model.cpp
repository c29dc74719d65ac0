#include "lord/model.hpp"

#include <algorithm>
#include <cmath>

#include "lord/adapters.hpp"
#include "lord/errors.hpp"
#include "lord/rng.hpp"

namespace lord {

PlanMode plan_mode_from_string(const std::string& s) {
    if (s == "sampling" || s == "structured-sampling") return PlanMode::StructuredSampling;
    if (s == "unrolled" || s == "structured-unrolled") return PlanMode::StructuredUnrolled;
    if (s == "unstructured") return PlanMode::Unstructured;
    throw ConfigError("unknown plan mode '" + s + "'");
}

const char* plan_mode_name(PlanMode m) {
    switch (m) {
        case PlanMode::StructuredSampling: return "sampling";
        case PlanMode::StructuredUnrolled: return "unrolled";
        case PlanMode::Unstructured: return "unstructured";
    }
    return "?";
}

bool ObservationSeq::agent_valid(int a) const {
    const int H = ego_hist.rows();
    return agent_hist.at2(a, (H - 1) * 5 + 4) != 0.0;
}

int ObservationSeq::valid_agent_count() const {
    int n = 0;
    for (int a = 0; a < agent_hist.rows(); ++a) n += agent_valid(a) ? 1 : 0;
    return n;
}

void ObservationSeq::validate(const ModelConfig& cfg) const {
    if (ego_hist.ndim() != 2 || ego_hist.rows() != cfg.history_steps || ego_hist.cols() != 4) {
        throw ConfigError("ObservationSeq: ego history shape " + shape_str(ego_hist.shape()) +
                          " does not match config H=" + std::to_string(cfg.history_steps));
    }
    if (agent_hist.ndim() != 2 || agent_hist.rows() != cfg.max_agents || agent_hist.cols() != cfg.agent_dim()) {
        throw ConfigError("ObservationSeq: agent history shape mismatch");
    }
    if (lane.ndim() != 2 || lane.rows() != cfg.lane_points || lane.cols() != 2) {
        throw ConfigError("ObservationSeq: lane shape mismatch");
    }
    if (!ego_hist.all_finite() || !agent_hist.all_finite() || !lane.all_finite() || !std::isfinite(target_speed)) {
        throw ContractError("ObservationSeq: non-finite entries");
    }
}

const Tensor& DecoderOutput::require_game(const Tensor& t, const char* what) const {
    if (!has_game_params) throw ConfigError(std::string("decoder head disabled: ") + what);
    return t;
}

const Tensor& DecoderOutput::cost_weights() const { return require_game(cost_weights_raw, "cost weights"); }
const Tensor& DecoderOutput::goal_points() const { return require_game(goals, "goals"); }
const Tensor& DecoderOutput::init_traj() const { return require_game(init_trajectory, "initial trajectory"); }

const Tensor& DecoderOutput::sdv_traj() const {
    if (!has_sdv) throw ConfigError("decoder head disabled: sdv trajectory");
    return sdv_trajectory;
}

namespace {

void init_linear(ParameterStore& params, const std::string& prefix, int out_dim, int in_dim, Rng& rng) {
    Tensor w({out_dim, in_dim});
    const double bound = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    for (int i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
    params.add(prefix + "/w", std::move(w));
    params.add(prefix + "/b", Tensor({out_dim}));
}

// Two-layer MLP parameter block: <name>/l1/{w,b}, <name>/l2/{w,b}.
void init_mlp(ParameterStore& params, const std::string& name, int in_dim, int hidden, int out_dim, Rng& rng) {
    init_linear(params, name + "/l1", hidden, in_dim, rng);
    init_linear(params, name + "/l2", out_dim, hidden, rng);
}

Var linear(Tape& tape, const ParameterStore& params, const std::string& prefix, Var x) {
    Var w = tape.named_leaf(prefix + "/w", params.get(prefix + "/w"));
    Var b = tape.named_leaf(prefix + "/b", params.get(prefix + "/b"));
    return tape.add(tape.matvec(w, x), b);
}

Var mlp(Tape& tape, const ParameterStore& params, const std::string& name, Var x) {
    Var h = tape.tanh_(linear(tape, params, name + "/l1", x));
    return tape.tanh_(linear(tape, params, name + "/l2", h));
}

// Head variant without the final tanh: raw regression outputs.
Var mlp_head(Tape& tape, const ParameterStore& params, const std::string& name, Var x) {
    Var h = tape.tanh_(linear(tape, params, name + "/l1", x));
    return linear(tape, params, name + "/l2", h);
}

}  // namespace

void init_model_params(ParameterStore& params, const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xA11CEull));
    init_mlp(params, "enc/agent", cfg.agent_dim(), cfg.enc_hidden, cfg.enc_embed, rng);
    init_mlp(params, "enc/ego", cfg.ego_dim(), cfg.enc_hidden, cfg.enc_embed, rng);
    init_mlp(params, "enc/lane", cfg.lane_dim(), cfg.enc_hidden, cfg.enc_embed, rng);
    init_mlp(params, "enc/fusion", cfg.fusion_dim(), cfg.fusion_hidden, cfg.latent_dim, rng);
    init_mlp(params, "dec/joint", cfg.latent_dim, cfg.joint_hidden, cfg.joint_dim(), rng);
    init_mlp(params, "dec/logits", cfg.latent_dim, cfg.head_hidden, cfg.num_modes, rng);
    if (cfg.head_game_params) {
        init_mlp(params, "dec/cost", cfg.latent_dim, cfg.head_hidden, cfg.num_cost_weights, rng);
        init_mlp(params, "dec/goals", cfg.latent_dim, cfg.head_hidden, cfg.goals_dim(), rng);
        init_mlp(params, "dec/init", cfg.latent_dim, cfg.head_hidden, cfg.traj_dim(), rng);
    }
    if (cfg.head_sdv) {
        init_mlp(params, "dec/sdv", cfg.latent_dim, cfg.head_hidden, cfg.traj_dim(), rng);
    }
}

Var encode(Tape& tape, const ParameterStore& params, const ModelConfig& cfg, const ObservationSeq& obs,
           const ForwardOptions& opts, const AdapterSet* adapters) {
    obs.validate(cfg);

    const AdapterSpec* agent_ad = adapters ? adapters->find(Attachment::EncoderAgent) : nullptr;
    const AdapterSpec* fusion_ad = adapters ? adapters->find(Attachment::EncoderFusion) : nullptr;

    // Per-agent embeddings; invalid agents are skipped entirely, which makes
    // outputs exactly invariant to their row contents.
    std::vector<Var> embeds;
    for (int a = 0; a < cfg.max_agents; ++a) {
        if (!obs.agent_valid(a)) continue;
        Tensor rowv({cfg.agent_dim()});
        for (int i = 0; i < cfg.agent_dim(); ++i) rowv[i] = obs.agent_hist.at2(a, i);
        Var x = tape.constant(std::move(rowv));
        Var pre = linear(tape, params, "enc/agent/l1", x);
        if (agent_ad) {
            ForwardOptions o = opts;
            o.seed = mix_seed(opts.seed, 0xE0A0ull + static_cast<std::uint64_t>(a));
            pre = apply_residual(tape, params, *agent_ad, x, pre, o);
        }
        Var h = tape.tanh_(pre);
        embeds.push_back(tape.tanh_(linear(tape, params, "enc/agent/l2", h)));
    }
    Var pooled;
    if (embeds.empty()) {
        pooled = tape.constant(Tensor({cfg.enc_embed}));
    } else {
        Var acc = embeds[0];
        for (std::size_t i = 1; i < embeds.size(); ++i) acc = tape.add(acc, embeds[i]);
        pooled = tape.scale_const(acc, 1.0 / static_cast<double>(embeds.size()));
    }

    Tensor egov({cfg.ego_dim()});
    for (int i = 0; i < cfg.ego_dim(); ++i) egov[i] = obs.ego_hist[i];
    Var ego_e = mlp(tape, params, "enc/ego", tape.constant(std::move(egov)));

    Tensor lanev({cfg.lane_dim()});
    for (int i = 0; i < cfg.lane_points * 2; ++i) lanev[i] = obs.lane[i];
    lanev[cfg.lane_points * 2] = obs.target_speed;
    Var lane_e = mlp(tape, params, "enc/lane", tape.constant(std::move(lanev)));

    Var fused_in = tape.concat({ego_e, pooled, lane_e});
    Var pre = linear(tape, params, "enc/fusion/l1", fused_in);
    if (fusion_ad) {
        ForwardOptions o = opts;
        o.seed = mix_seed(opts.seed, 0xF0510ull);
        pre = apply_residual(tape, params, *fusion_ad, fused_in, pre, o);
    }
    Var h = tape.tanh_(pre);
    return tape.tanh_(linear(tape, params, "enc/fusion/l2", h));
}

PolicyGraph decode(Tape& tape, const ParameterStore& params, const ModelConfig& cfg, Var latent,
                   const ForwardOptions& opts, const AdapterSet* adapters) {
    PolicyGraph g;
    g.latent = latent;

    auto with_residual = [&](Var base, Attachment att, std::uint64_t salt) {
        const AdapterSpec* spec = adapters ? adapters->find(att) : nullptr;
        if (!spec) return base;
        ForwardOptions o = opts;
        o.seed = mix_seed(opts.seed, salt);
        return apply_residual(tape, params, *spec, latent, base, o);
    };

    Var joint_flat = mlp_head(tape, params, "dec/joint", latent);
    joint_flat = with_residual(joint_flat, Attachment::PredictedAgentTraj, 0x10ull);
    g.joint_modes = tape.reshape(joint_flat, {cfg.num_modes, cfg.mode_traj_dim()});
    g.mode_logits = mlp_head(tape, params, "dec/logits", latent);

    if (cfg.head_game_params) {
        g.cost_weights_raw =
            with_residual(mlp_head(tape, params, "dec/cost", latent), Attachment::CostWeights, 0x11ull);
        g.goals = with_residual(mlp_head(tape, params, "dec/goals", latent), Attachment::Goals, 0x12ull);
        g.init_trajectory =
            with_residual(mlp_head(tape, params, "dec/init", latent), Attachment::InitTrajectory, 0x13ull);
        g.has_game_params = true;
    }
    if (cfg.head_sdv) {
        g.sdv_trajectory =
            with_residual(mlp_head(tape, params, "dec/sdv", latent), Attachment::SdvTrajectory, 0x14ull);
        g.has_sdv = true;
    }
    return g;
}

PolicyGraph policy_forward(Tape& tape, const ParameterStore& params, const ModelConfig& cfg,
                           const ObservationSeq& obs, const ForwardOptions& opts, const AdapterSet* adapters) {
    Var z = encode(tape, params, cfg, obs, opts, adapters);
    return decode(tape, params, cfg, z, opts, adapters);
}

DecoderOutput snapshot(const Tape& tape, const PolicyGraph& g, const ModelConfig& cfg) {
    DecoderOutput out;
    out.joint_modes = tape.value(g.joint_modes);
    out.mode_logits = tape.value(g.mode_logits);
    out.has_game_params = g.has_game_params;
    out.has_sdv = g.has_sdv;
    if (g.has_game_params) {
        out.cost_weights_raw = tape.value(g.cost_weights_raw);
        Tensor goals({cfg.max_agents, 2}, tape.value(g.goals).vec());
        out.goals = std::move(goals);
        out.init_trajectory = Tensor({cfg.horizon_steps, 2}, tape.value(g.init_trajectory).vec());
    }
    if (g.has_sdv) {
        out.sdv_trajectory = Tensor({cfg.horizon_steps, 2}, tape.value(g.sdv_trajectory).vec());
    }
    return out;
}

RolloutResult rollout_kinematics(const Tensor& controls, const KinematicState& start, double dt,
                                 const ActuationLimits& lim, int substeps) {
    if (dt <= 0.0) throw ContractError("rollout_kinematics: dt must be positive");
    if (controls.ndim() != 2 || controls.cols() != 2) throw ContractError("rollout_kinematics: controls must be Tx2");
    if (substeps < 1) substeps = 1;
    const int T = controls.rows();
    RolloutResult r;
    r.states = Tensor({T, 4});
    double x = start.x, y = start.y, th = start.heading, v = start.speed;
    const double h = dt / static_cast<double>(substeps);
    for (int t = 0; t < T; ++t) {
        double a = controls.at2(t, 0);
        double w = controls.at2(t, 1);
        const double ac = std::clamp(a, -lim.accel, lim.accel);
        const double wc = std::clamp(w, -lim.yaw_rate, lim.yaw_rate);
        if (ac != a || wc != w) ++r.clamp_events;
        for (int k = 0; k < substeps; ++k) {
            x += v * std::cos(th) * h;
            y += v * std::sin(th) * h;
            th += wc * h;
            v += ac * h;
            if (v < 0.0) v = 0.0;
            if (v > lim.v_max) {
                v = lim.v_max;
                ++r.clamp_events;
            }
        }
        r.states.at2(t, 0) = x;
        r.states.at2(t, 1) = y;
        r.states.at2(t, 2) = th;
        r.states.at2(t, 3) = v;
    }
    return r;
}

}  // namespace lord
