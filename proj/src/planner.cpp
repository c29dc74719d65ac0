#include "lord/planner.hpp"

#include <algorithm>
#include <cmath>

#include "lord/errors.hpp"

namespace lord {

namespace {

double stable_softplus(double x) {
    if (x > 35.0) return x;
    if (x < -35.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

// Guard under square roots so gradients stay finite for zero-length steps.
constexpr double kDistEps = 1e-18;

// Quintic smoothstep: 0 -> 1 with zero first/second derivatives at both ends.
double quintic_blend(double u) {
    u = std::clamp(u, 0.0, 1.0);
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0);
}

}  // namespace

Tensor CostWeights::effective() const {
    Tensor eff(raw.shape());
    for (int i = 0; i < raw.size(); ++i) eff[i] = stable_softplus(raw[i]);
    return eff;
}

CandidateSet generate_candidates(const KinematicState& ego, const LanePath& lane, const PlannerConfig& cfg,
                                 int horizon_steps, double dt) {
    if (lane.points().size() < 2) throw DataError("generate_candidates: lane needs >= 2 points");
    const int T = horizon_steps;
    double s0 = 0.0, l0 = 0.0;
    lane.project({ego.x, ego.y}, &s0, &l0);

    CandidateSet set;
    set.start = {ego.x, ego.y};
    for (double accel : cfg.accel_set) {
        for (double lat : cfg.lateral_set) {
            Tensor traj({T, 2});
            double v = ego.speed;
            double s = s0;
            for (int t = 0; t < T; ++t) {
                // Exact integral of the clamped constant-acceleration profile
                // over one step.
                const double v_next_unclamped = v + accel * dt;
                const double v_next = std::clamp(v_next_unclamped, 0.0, cfg.v_max);
                double ds;
                if (v_next == v_next_unclamped) {
                    ds = v * dt + 0.5 * accel * dt * dt;
                } else {
                    // Hits the clamp inside the step; split the integral.
                    const double t_hit = accel != 0.0 ? std::clamp((v_next - v) / accel, 0.0, dt) : 0.0;
                    ds = v * t_hit + 0.5 * accel * t_hit * t_hit + v_next * (dt - t_hit);
                }
                s += ds;
                v = v_next;
                const double u = static_cast<double>(t + 1) / static_cast<double>(T);
                const double offset = l0 + (lat - l0) * quintic_blend(u);
                const Vec2 c = lane.point_at(s);
                const Vec2 n = lane.normal_at(s);
                traj.at2(t, 0) = c.x + n.x * offset;
                traj.at2(t, 1) = c.y + n.y * offset;
            }
            set.trajectories.push_back(std::move(traj));
            set.profile.emplace_back(accel, lat);
        }
    }
    return set;
}

FeatureContext make_feature_context(const ObservationSeq& obs, const ModelConfig& mcfg, const PlannerConfig& pcfg) {
    const int T = mcfg.horizon_steps;
    const int H = mcfg.history_steps;
    FeatureContext ctx;
    ctx.dt = mcfg.dt;
    ctx.target_speed = obs.target_speed;
    ctx.progress_target = obs.target_speed * T * mcfg.dt;
    ctx.proximity_threshold = 2.0 * pcfg.agent_radius + pcfg.proximity_margin;

    std::vector<Vec2> pts;
    pts.reserve(static_cast<std::size_t>(mcfg.lane_points));
    for (int i = 0; i < mcfg.lane_points; ++i) pts.push_back({obs.lane.at2(i, 0), obs.lane.at2(i, 1)});
    LanePath lane(std::move(pts));

    // Ego frame: the ego sits at the origin. Reference arc schedule at the
    // nominal target speed keeps the frame constant during optimization.
    double s0 = 0.0, l0 = 0.0;
    lane.project({0.0, 0.0}, &s0, &l0);
    ctx.start = {0.0, 0.0};
    const double v_ref = std::max(obs.target_speed, 1.0);
    ctx.lane_ref = Tensor({T, 2});
    ctx.lane_tan = Tensor({T, 2});
    ctx.lane_nrm = Tensor({T, 2});
    for (int t = 0; t < T; ++t) {
        const double s = s0 + v_ref * (t + 1) * mcfg.dt;
        const Vec2 p = lane.point_at(s);
        const Vec2 tan = lane.tangent_at(s);
        ctx.lane_ref.at2(t, 0) = p.x;
        ctx.lane_ref.at2(t, 1) = p.y;
        ctx.lane_tan.at2(t, 0) = tan.x;
        ctx.lane_tan.at2(t, 1) = tan.y;
        ctx.lane_nrm.at2(t, 0) = -tan.y;
        ctx.lane_nrm.at2(t, 1) = tan.x;
    }

    // Constant-velocity extrapolation of valid agents from their current state.
    for (int a = 0; a < mcfg.max_agents; ++a) {
        if (!obs.agent_valid(a)) continue;
        const int base = (H - 1) * 5;
        const double ax = obs.agent_hist.at2(a, base + 0);
        const double ay = obs.agent_hist.at2(a, base + 1);
        const double ah = obs.agent_hist.at2(a, base + 2);
        const double av = obs.agent_hist.at2(a, base + 3);
        Tensor pred({T, 2});
        for (int t = 0; t < T; ++t) {
            pred.at2(t, 0) = ax + av * std::cos(ah) * (t + 1) * mcfg.dt;
            pred.at2(t, 1) = ay + av * std::sin(ah) * (t + 1) * mcfg.dt;
        }
        ctx.agent_pred.push_back(std::move(pred));
    }
    return ctx;
}

std::array<double, kNumCostFeatures> cost_features(const Tensor& traj, const FeatureContext& ctx, Vec2 goal) {
    if (traj.ndim() != 2 || traj.cols() != 2) throw ContractError("cost_features: trajectory must be Tx2");
    const int T = traj.rows();
    const double dt = ctx.dt;
    std::array<double, kNumCostFeatures> phi{};

    // Step vectors, distances, speeds.
    std::vector<double> sx(static_cast<std::size_t>(T)), sy(static_cast<std::size_t>(T)),
        dist(static_cast<std::size_t>(T)), speed(static_cast<std::size_t>(T));
    double px = ctx.start.x, py = ctx.start.y;
    for (int t = 0; t < T; ++t) {
        sx[t] = traj.at2(t, 0) - px;
        sy[t] = traj.at2(t, 1) - py;
        dist[t] = std::sqrt(sx[t] * sx[t] + sy[t] * sy[t] + kDistEps);
        speed[t] = dist[t] / dt;
        px = traj.at2(t, 0);
        py = traj.at2(t, 1);
    }

    // 1: progress shortfall against driving target_speed for the horizon.
    double progress = 0.0;
    for (int t = 0; t < T; ++t) progress += sx[t] * ctx.lane_tan.at2(t, 0) + sy[t] * ctx.lane_tan.at2(t, 1);
    phi[0] = std::max(0.0, ctx.progress_target - progress);

    // 2: mean absolute lateral offset.
    double lat = 0.0;
    for (int t = 0; t < T; ++t) {
        const double ox = traj.at2(t, 0) - ctx.lane_ref.at2(t, 0);
        const double oy = traj.at2(t, 1) - ctx.lane_ref.at2(t, 1);
        lat += std::fabs(ox * ctx.lane_nrm.at2(t, 0) + oy * ctx.lane_nrm.at2(t, 1));
    }
    phi[1] = lat / T;

    // 3: mean absolute speed deviation.
    double sdev = 0.0;
    for (int t = 0; t < T; ++t) sdev += std::fabs(speed[t] - ctx.target_speed);
    phi[2] = sdev / T;

    // 4, 5: mean squared acceleration and jerk of the speed profile.
    if (T >= 2) {
        double acc2 = 0.0;
        std::vector<double> acc(static_cast<std::size_t>(T - 1));
        for (int t = 0; t + 1 < T; ++t) {
            acc[t] = (speed[t + 1] - speed[t]) / dt;
            acc2 += acc[t] * acc[t];
        }
        phi[3] = acc2 / (T - 1);
        if (T >= 3) {
            double jerk2 = 0.0;
            for (int t = 0; t + 2 < T; ++t) {
                const double j = (acc[t + 1] - acc[t]) / dt;
                jerk2 += j * j;
            }
            phi[4] = jerk2 / (T - 2);
        }
    }

    // 6: squared proximity hinge against every valid agent per step.
    double prox = 0.0;
    for (const Tensor& q : ctx.agent_pred) {
        for (int t = 0; t < T; ++t) {
            const double dx = traj.at2(t, 0) - q.at2(t, 0);
            const double dy = traj.at2(t, 1) - q.at2(t, 1);
            const double d = std::sqrt(dx * dx + dy * dy + kDistEps);
            const double h = std::max(0.0, ctx.proximity_threshold - d);
            prox += h * h;
        }
    }
    phi[5] = prox;

    // 7: squared final distance to the goal.
    const double gx = traj.at2(T - 1, 0) - goal.x;
    const double gy = traj.at2(T - 1, 1) - goal.y;
    phi[6] = gx * gx + gy * gy;
    return phi;
}

double energy(const Tensor& weights_raw, const std::array<double, kNumCostFeatures>& phi) {
    if (weights_raw.size() != kNumCostFeatures) throw ContractError("energy: weight dimension mismatch");
    double e = 0.0;
    for (int i = 0; i < kNumCostFeatures; ++i) e += stable_softplus(weights_raw[i]) * phi[static_cast<std::size_t>(i)];
    return e;
}

Var energy_graph(Tape& tape, Var weights_raw, Var phi) {
    if (tape.value(weights_raw).size() != tape.value(phi).size()) {
        throw ContractError("energy_graph: dimension mismatch");
    }
    return tape.dot(tape.softplus(weights_raw), phi);
}

std::vector<double> EnergyTable::totals() const {
    std::vector<double> t = energies;
    if (has_residual()) {
        if (residual.size() != energies.size()) throw ContractError("EnergyTable: residual length mismatch");
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += residual[i];
    }
    return t;
}

std::vector<double> gibbs_probs(const EnergyTable& table) {
    if (table.energies.empty()) throw ContractError("gibbs_probs: empty table");
    if (!(table.temperature > 0.0)) throw ContractError("gibbs_probs: temperature must be positive");
    const std::vector<double> e = table.totals();
    double mn = e[0];
    for (double v : e) mn = std::min(mn, v);
    std::vector<double> p(e.size());
    double z = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        p[i] = std::exp(-(e[i] - mn) / table.temperature);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

EnergyTable compose_energy(const EnergyTable& base, const EnergyTable& residual) {
    if (base.energies.size() != residual.energies.size()) {
        throw ContractError("compose_energy: table sizes differ");
    }
    if (base.temperature != residual.temperature) {
        throw ContractError("compose_energy: temperatures differ");
    }
    EnergyTable out;
    out.temperature = base.temperature;
    out.energies = base.totals();
    const std::vector<double> r = residual.totals();
    for (std::size_t i = 0; i < out.energies.size(); ++i) out.energies[i] += r[i];
    return out;
}

int argmin_index(const std::vector<double>& energies) {
    if (energies.empty()) throw ContractError("argmin_index: empty");
    int best = 0;
    for (int i = 1; i < static_cast<int>(energies.size()); ++i) {
        if (energies[static_cast<std::size_t>(i)] < energies[static_cast<std::size_t>(best)]) best = i;
    }
    return best;
}

std::pair<int, Tensor> select_argmin(const EnergyTable& table, const CandidateSet& candidates) {
    if (static_cast<int>(table.energies.size()) != candidates.size()) {
        throw ContractError("select_argmin: table/candidate size mismatch");
    }
    const int idx = argmin_index(table.totals());
    return {idx, candidates.trajectories[static_cast<std::size_t>(idx)]};
}

std::vector<Var> candidate_energies_graph(Tape& tape, Var weights_raw, Var goal, const CandidateSet& candidates,
                                          const FeatureContext& ctx) {
    Var w_eff = tape.softplus(weights_raw);
    Var w_goal = tape.at(w_eff, kNumCostFeatures - 1);
    std::vector<Var> energies;
    energies.reserve(static_cast<std::size_t>(candidates.size()));
    for (const Tensor& traj : candidates.trajectories) {
        // Goal slot zeroed in the constant part; the goal term is rebuilt as a
        // graph expression of the learned goal.
        auto phi = cost_features(traj, ctx, {0.0, 0.0});
        Tensor phi_c({kNumCostFeatures});
        for (int i = 0; i + 1 < kNumCostFeatures; ++i) phi_c[i] = phi[static_cast<std::size_t>(i)];
        const int T = traj.rows();
        Var last = tape.constant(Tensor({2}, {traj.at2(T - 1, 0), traj.at2(T - 1, 1)}));
        Var goal_term = tape.sum(tape.square(tape.sub(last, goal)));
        Var e = tape.add(tape.dot(w_eff, tape.constant(std::move(phi_c))), tape.mul(w_goal, goal_term));
        energies.push_back(e);
    }
    return energies;
}

// ---------------------------------------------------------------------------
// analytic energy gradient w.r.t. the trajectory, as graph expressions

Var energy_traj_gradient(Tape& tape, Var weights_eff, Var traj, Var goal, const FeatureContext& ctx) {
    const Tensor& a_val = tape.value(traj);
    if (a_val.ndim() != 2 || a_val.cols() != 2) throw ContractError("energy_traj_gradient: trajectory must be Tx2");
    const int T = a_val.rows();
    if (T < 3) throw ContractError("energy_traj_gradient: needs T >= 3");
    const double dt = ctx.dt;

    auto w_at = [&](int i) { return tape.at(weights_eff, i); };

    Var start_row = tape.constant(Tensor({1, 2}, {ctx.start.x, ctx.start.y}));
    Var prev = tape.concat_rows({start_row, tape.slice_rows(traj, 0, T - 1)});
    Var D = tape.sub(traj, prev);                                                     // T x 2 step vectors
    Var dist = tape.sqrt_(tape.add_const(tape.rowwise_sum(tape.mul(D, D)), kDistEps));  // T
    Var inv_dist = tape.inv(dist);
    Var speeds = tape.scale_const(dist, 1.0 / dt);

    Var tan_c = tape.constant(ctx.lane_tan);
    Var nrm_c = tape.constant(ctx.lane_nrm);
    Var ref_c = tape.constant(ctx.lane_ref);

    std::vector<Var> gA_terms;  // direct d/dtraj contributions
    std::vector<Var> gD_terms;  // contributions through the step vectors

    // Gradient flowing into the speed profile is mapped to step vectors via
    // d speed_t / d D_t = D_t / (dist_t * dt).
    auto speeds_to_D = [&](Var gs) {
        return tape.scale_const(tape.mul_rows(D, tape.mul(gs, inv_dist)), 1.0 / dt);
    };
    auto pad_front = [&](Var x) { return tape.concat({tape.constant(Tensor({1})), x}); };
    auto pad_back = [&](Var x) { return tape.concat({x, tape.constant(Tensor({1}))}); };

    // phi1 = relu(progress_target - sum_t D_t . tan_t)
    {
        Var progress = tape.sum(tape.rowwise_sum(tape.mul(D, tan_c)));
        Var active = tape.step_pos(tape.add_const(tape.neg(progress), ctx.progress_target));
        Var g = tape.scale_const(tape.scale(tan_c, tape.mul(active, w_at(0))), -1.0);
        gD_terms.push_back(g);
    }

    // phi2 = mean |(traj - ref) . nrm|
    {
        Var lat = tape.rowwise_sum(tape.mul(tape.sub(traj, ref_c), nrm_c));
        Var sg = tape.sign(lat);
        gA_terms.push_back(tape.scale(tape.mul_rows(nrm_c, sg), tape.scale_const(w_at(1), 1.0 / T)));
    }

    // phi3 = mean |speed - target|
    {
        Var sg = tape.sign(tape.add_const(speeds, -ctx.target_speed));
        Var gs = tape.scale_const(sg, 1.0 / T);
        gD_terms.push_back(tape.scale(speeds_to_D(gs), w_at(2)));
    }

    // phi4 = mean accel^2, accel_t = (speed_{t+1} - speed_t) / dt
    Var accel = tape.scale_const(tape.sub(tape.slice(speeds, 1, T - 1), tape.slice(speeds, 0, T - 1)), 1.0 / dt);
    {
        Var gacc = tape.scale_const(accel, 2.0 / (T - 1));
        Var gs = tape.scale_const(tape.sub(pad_front(gacc), pad_back(gacc)), 1.0 / dt);
        gD_terms.push_back(tape.scale(speeds_to_D(gs), w_at(3)));
    }

    // phi5 = mean jerk^2, jerk_t = (accel_{t+1} - accel_t) / dt
    {
        Var jerk = tape.scale_const(tape.sub(tape.slice(accel, 1, T - 2), tape.slice(accel, 0, T - 2)), 1.0 / dt);
        Var gjerk = tape.scale_const(jerk, 2.0 / (T - 2));
        Var gacc = tape.scale_const(tape.sub(pad_front(gjerk), pad_back(gjerk)), 1.0 / dt);
        Var gs = tape.scale_const(tape.sub(pad_front(gacc), pad_back(gacc)), 1.0 / dt);
        gD_terms.push_back(tape.scale(speeds_to_D(gs), w_at(4)));
    }

    // phi6 = sum_j sum_t relu(threshold - dist_jt)^2
    for (const Tensor& q : ctx.agent_pred) {
        Var diff = tape.sub(traj, tape.constant(q));
        Var dq = tape.sqrt_(tape.add_const(tape.rowwise_sum(tape.mul(diff, diff)), kDistEps));
        Var h = tape.relu(tape.add_const(tape.neg(dq), ctx.proximity_threshold));
        Var g = tape.mul_rows(diff, tape.mul(tape.scale_const(h, -2.0), tape.inv(dq)));
        gA_terms.push_back(tape.scale(g, w_at(5)));
    }

    // phi7 = |traj_T - goal|^2
    {
        Var gfin = tape.scale(tape.scale_const(tape.sub(tape.row(traj, T - 1), goal), 2.0), w_at(6));
        Var zeros = tape.constant(Tensor({T - 1, 2}));
        gA_terms.push_back(tape.concat_rows({zeros, tape.reshape(gfin, {1, 2})}));
    }

    Var gD_total = gD_terms[0];
    for (std::size_t i = 1; i < gD_terms.size(); ++i) gD_total = tape.add(gD_total, gD_terms[i]);
    // d/dtraj_t of <gD, D> = gD_t - gD_{t+1}
    Var shifted = tape.concat_rows({tape.slice_rows(gD_total, 1, T - 1), tape.constant(Tensor({1, 2}))});
    Var total = tape.sub(gD_total, shifted);
    for (Var g : gA_terms) total = tape.add(total, g);
    return total;
}

Var unrolled_descent(Tape& tape, Var weights_raw, Var init_traj, Var goal, const FeatureContext& ctx, int steps,
                     double step_size, double clamp) {
    if (steps < 0) throw ContractError("unrolled_descent: steps must be >= 0");
    if (!(step_size > 0.0)) throw ContractError("unrolled_descent: step size must be positive");
    Var w_eff = tape.softplus(weights_raw);
    Var a = init_traj;
    const int T = tape.value(init_traj).rows();
    for (int n = 0; n < steps; ++n) {
        Var g = energy_traj_gradient(tape, w_eff, a, goal, ctx);
        if (!tape.value(g).all_finite()) {
            throw NumericError("unrolled_descent: non-finite energy gradient at step " + std::to_string(n));
        }
        Var delta = tape.scale_const(g, -step_size);
        // Row-norm clamp: factor = clamp / max(|delta_t|, clamp) <= 1.
        Var rn = tape.sqrt_(tape.add_const(tape.rowwise_sum(tape.mul(delta, delta)), kDistEps));
        Var factor = tape.scale_const(tape.inv(tape.max_const(rn, clamp)), clamp);
        a = tape.add(a, tape.mul_rows(delta, factor));
        if (!tape.value(a).all_finite()) {
            throw NumericError("unrolled_descent: non-finite iterate at step " + std::to_string(n));
        }
    }
    (void)T;
    return a;
}

}  // namespace lord
