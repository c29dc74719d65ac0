#include "lord/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lord/errors.hpp"

namespace lord {

std::pair<double, double> ade_fde(const Tensor& pred, const Tensor& gt) {
    if (pred.ndim() != 2 || gt.ndim() != 2 || pred.cols() != 2 || gt.cols() != 2 || pred.rows() != gt.rows()) {
        throw ContractError("ade_fde: trajectories must be equal-length Tx2");
    }
    const int T = pred.rows();
    double acc = 0.0, last = 0.0;
    for (int t = 0; t < T; ++t) {
        const double dx = pred.at2(t, 0) - gt.at2(t, 0);
        const double dy = pred.at2(t, 1) - gt.at2(t, 1);
        last = std::sqrt(dx * dx + dy * dy);
        acc += last;
    }
    return {acc / T, last};
}

JointMetricsResult joint_metrics(const Tensor& modes, const std::vector<double>& probs, const Tensor& gt,
                                 const std::vector<bool>& valid, double miss_threshold) {
    const int M = modes.rows();
    if (static_cast<int>(probs.size()) != M) throw ContractError("joint_metrics: probs size mismatch");
    double psum = 0.0;
    for (double p : probs) psum += p;
    if (std::fabs(psum - 1.0) > 1e-9) throw ContractError("joint_metrics: probs must sum to 1");
    const int A = gt.rows();
    if (static_cast<int>(valid.size()) != A) throw ContractError("joint_metrics: validity size mismatch");
    const int T = gt.cols() / 2;
    if (modes.cols() != A * T * 2) throw ContractError("joint_metrics: mode/gt shape mismatch");
    int n_valid = 0;
    for (bool v : valid) n_valid += v ? 1 : 0;
    if (n_valid == 0) throw DataError("joint_metrics: zero valid agents");

    JointMetricsResult r;
    double best_sade = 1e300, best_sfde = 1e300;
    int best_sfde_mode = 0;
    for (int m = 0; m < M; ++m) {
        double sade = 0.0, sfde = 0.0;
        for (int a = 0; a < A; ++a) {
            if (!valid[static_cast<std::size_t>(a)]) continue;
            double ade = 0.0, fde = 0.0;
            for (int t = 0; t < T; ++t) {
                const double dx = modes.at2(m, a * T * 2 + t * 2 + 0) - gt.at2(a, t * 2 + 0);
                const double dy = modes.at2(m, a * T * 2 + t * 2 + 1) - gt.at2(a, t * 2 + 1);
                fde = std::sqrt(dx * dx + dy * dy);
                ade += fde;
            }
            sade += ade / T;
            sfde += fde;
        }
        sade /= n_valid;
        sfde /= n_valid;
        if (sade < best_sade) best_sade = sade;
        if (sfde < best_sfde) {
            best_sfde = sfde;
            best_sfde_mode = m;
        }
    }
    r.min_sade = best_sade;
    r.min_sfde = best_sfde;
    const double p_star = probs[static_cast<std::size_t>(best_sfde_mode)];
    r.bmin_sfde = best_sfde + (1.0 - p_star) * (1.0 - p_star);
    r.miss = best_sfde >= miss_threshold;
    return r;
}

OpenLoopMetrics eval_open_loop(const ParameterStore& params, const AdapterSet* adapters, const ModelConfig& mcfg,
                               const PlannerConfig& pcfg, const Dataset& data, double miss_threshold) {
    OpenLoopMetrics acc;
    const int T = mcfg.horizon_steps;
    for (const Window& w : data.windows) {
        Tensor plan = plan_trajectory(params, adapters, mcfg, pcfg, w.obs);
        Tensor ego_future({T, 2});
        for (int i = 0; i < T * 2; ++i) ego_future[i] = w.future.at2(0, i);
        const auto [ade, fde] = ade_fde(plan, ego_future);

        Tape tape;
        ForwardOptions opts;
        PolicyGraph g = policy_forward(tape, params, mcfg, w.obs, opts, adapters);
        std::vector<double> probs;
        {
            Var sm = tape.softmax(g.mode_logits);
            const Tensor& p = tape.value(sm);
            probs.assign(p.data(), p.data() + p.size());
        }
        std::vector<bool> valid(static_cast<std::size_t>(mcfg.max_agents));
        for (int a = 0; a < mcfg.max_agents; ++a) valid[static_cast<std::size_t>(a)] = w.future_valid[a] != 0.0;
        const JointMetricsResult jm =
            joint_metrics(tape.value(g.joint_modes), probs, w.future, valid, miss_threshold);

        acc.ade += ade;
        acc.fde += fde;
        acc.min_sade += jm.min_sade;
        acc.min_sfde += jm.min_sfde;
        acc.bmin_sfde += jm.bmin_sfde;
        acc.smr += jm.miss ? 1.0 : 0.0;
        ++acc.samples;
    }
    if (acc.samples > 0) {
        const double inv = 1.0 / static_cast<double>(acc.samples);
        acc.ade *= inv;
        acc.fde *= inv;
        acc.min_sade *= inv;
        acc.min_sfde *= inv;
        acc.bmin_sfde *= inv;
        acc.smr *= inv;
    }
    return acc;
}

// ---------------------------------------------------------------------------
// closed loop

const char* agent_sim_mode_name(AgentSimMode m) { return m == AgentSimMode::Reactive ? "reactive" : "nonreactive"; }

double driving_score(const ClosedLoopMetrics& m) {
    if (m.collision || m.nonfinite_plan) return 0.0;
    const double corridor_gate = m.off_corridor ? 0.5 : 1.0;
    return corridor_gate * 0.5 * (m.progress_ratio + m.comfort);
}

namespace {

constexpr double kSimDt = 0.2;
constexpr int kTrackSubsteps = 5;

struct IdmActor {
    KinematicState state;
    IdmParams idm;
    int lane = 0;
};

double idm_accel_cl(const IdmActor& me, double gap, double leader_speed) {
    const IdmParams& p = me.idm;
    const double v = me.state.speed;
    const double free_term = std::pow(v / std::max(p.desired_speed, 0.1), 4.0);
    double interaction = 0.0;
    if (gap < 1e8) {
        const double dv = v - leader_speed;
        const double s_star =
            p.min_gap + std::max(0.0, v * p.time_headway + v * dv / (2.0 * std::sqrt(p.max_accel * p.comfort_decel)));
        interaction = std::pow(s_star / std::max(gap, 0.1), 2.0);
    }
    return p.max_accel * (1.0 - free_term - interaction);
}

double pursuit_yaw_cl(const KinematicState& s, const LanePath& lane) {
    double sl = 0.0, lat = 0.0;
    lane.project({s.x, s.y}, &sl, &lat);
    const double lookahead = std::max(4.0, 0.8 * s.speed);
    const Vec2 target = lane.point_at(sl + lookahead);
    double alpha = std::atan2(target.y - s.y, target.x - s.x) - s.heading;
    while (alpha > M_PI) alpha -= 2.0 * M_PI;
    while (alpha < -M_PI) alpha += 2.0 * M_PI;
    return std::clamp(2.0 * s.speed * std::sin(alpha) / lookahead, -1.2, 1.2);
}

// Waypoint tracker: pure pursuit on the plan polyline plus speed matching the
// plan's spacing, turned into (accel, yaw rate) controls.
std::pair<double, double> track_plan(const KinematicState& s, const Tensor& plan_world, int step_in_plan, double dt,
                                     const ActuationLimits& lim) {
    const int T = plan_world.rows();
    const int i0 = std::min(step_in_plan, T - 1);
    const int i1 = std::min(i0 + 1, T - 1);
    const Vec2 target{plan_world.at2(i1, 0), plan_world.at2(i1, 1)};
    const double dx = target.x - s.x;
    const double dy = target.y - s.y;
    const double dist = std::sqrt(dx * dx + dy * dy);
    const double horizon = (i1 - step_in_plan + 1) * dt;
    const double v_des = std::clamp(dist / std::max(horizon, dt), 0.0, lim.v_max);
    const double accel = std::clamp((v_des - s.speed) / dt, -lim.accel, lim.accel);
    double yaw = 0.0;
    if (dist > 0.3 && s.speed > 0.3) {
        double alpha = std::atan2(dy, dx) - s.heading;
        while (alpha > M_PI) alpha -= 2.0 * M_PI;
        while (alpha < -M_PI) alpha += 2.0 * M_PI;
        yaw = std::clamp(2.0 * s.speed * std::sin(alpha) / std::max(dist, 1.0), -lim.yaw_rate, lim.yaw_rate);
    }
    return {accel, yaw};
}

void integrate_cl(KinematicState& s, double accel, double yaw_rate, double dt, double v_max) {
    const double h = dt / kTrackSubsteps;
    for (int k = 0; k < kTrackSubsteps; ++k) {
        s.x += s.speed * std::cos(s.heading) * h;
        s.y += s.speed * std::sin(s.heading) * h;
        s.heading += yaw_rate * h;
        s.speed = std::clamp(s.speed + accel * h, 0.0, v_max);
    }
}

}  // namespace

ClosedLoopMetrics closed_loop_episode(const PlanFn& policy, const Scenario& scenario, const ModelConfig& mcfg,
                                      AgentSimMode mode, const EpisodeConfig& ecfg,
                                      std::vector<std::string>* trace) {
    ClosedLoopMetrics m;
    m.mode = mode;
    LanePath ego_lane(scenario.ego_lane);
    LanePath oncoming = scenario.oncoming_lane.empty() ? ego_lane : LanePath(scenario.oncoming_lane);

    // The scripted rollout is both the log-replay track and the progress
    // reference.
    const SimStates script = expert_rollout(scenario, ecfg.steps);
    double ref_start = 0.0, ref_end = 0.0, tmp = 0.0;
    ego_lane.project({script.ego_states.at2(0, 0), script.ego_states.at2(0, 1)}, &ref_start, &tmp);
    ego_lane.project({script.ego_states.at2(ecfg.steps, 0), script.ego_states.at2(ecfg.steps, 1)}, &ref_end, &tmp);
    const double ref_progress = std::max(ref_end - ref_start, 1e-6);

    const int H = mcfg.history_steps;
    const int n_agents = static_cast<int>(scenario.agents.size());

    // Histories primed from the scripted past: the scenario starts at t=0, so
    // earlier steps replicate the initial state.
    std::vector<KinematicState> ego_hist(static_cast<std::size_t>(H), scenario.ego);
    std::vector<std::vector<KinematicState>> agent_hists;
    std::vector<IdmActor> agents;
    for (int a = 0; a < n_agents; ++a) {
        agent_hists.emplace_back(static_cast<std::size_t>(H), scenario.agents[static_cast<std::size_t>(a)].state);
        agents.push_back({scenario.agents[static_cast<std::size_t>(a)].state,
                          scenario.agents[static_cast<std::size_t>(a)].idm,
                          scenario.agents[static_cast<std::size_t>(a)].lane});
    }

    KinematicState ego = scenario.ego;
    Tensor plan_world({mcfg.horizon_steps, 2});
    int plan_age = 0;
    bool have_plan = false;
    double prev_accel = 0.0;
    int comfort_ok = 0;
    bool off_corridor_ever = false;
    double ego_start_s = 0.0;
    ego_lane.project({ego.x, ego.y}, &ego_start_s, &tmp);

    if (trace) trace->push_back("t,ego_x,ego_y,ego_heading,ego_speed,accel,score_flags");

    for (int t = 0; t < ecfg.steps; ++t) {
        if (t % ecfg.replan_every == 0 || !have_plan) {
            ObservationSeq obs = build_observation(ego_lane, ego_hist, agent_hists, scenario.target_speed, mcfg);
            Tensor plan_local = policy(obs);
            if (!plan_local.all_finite()) {
                m.nonfinite_plan = true;
                m.score = 0.0;
                if (trace) trace->push_back("# nonfinite plan at step " + std::to_string(t));
                return m;
            }
            const double ch = std::cos(ego.heading), sh = std::sin(ego.heading);
            for (int i = 0; i < mcfg.horizon_steps; ++i) {
                const double lx = plan_local.at2(i, 0), ly = plan_local.at2(i, 1);
                plan_world.at2(i, 0) = ego.x + lx * ch - ly * sh;
                plan_world.at2(i, 1) = ego.y + lx * sh + ly * ch;
            }
            plan_age = 0;
            have_plan = true;
        }

        const auto [accel, yaw] = track_plan(ego, plan_world, plan_age, mcfg.dt, ecfg.limits);
        integrate_cl(ego, accel, yaw, mcfg.dt, ecfg.limits.v_max);
        ++plan_age;

        // Agents follow the script or react with IDM (the ego counts as a
        // potential leader in its lane).
        for (int a = 0; a < n_agents; ++a) {
            IdmActor& ag = agents[static_cast<std::size_t>(a)];
            if (mode == AgentSimMode::NonReactive) {
                const Tensor& st = script.agent_states[static_cast<std::size_t>(a)];
                ag.state = {st.at2(t + 1, 0), st.at2(t + 1, 1), st.at2(t + 1, 2), st.at2(t + 1, 3)};
            } else {
                const LanePath& lane = ag.lane == 0 ? ego_lane : oncoming;
                double my_s = 0.0, lat = 0.0;
                lane.project({ag.state.x, ag.state.y}, &my_s, &lat);
                double best_gap = 1e9;
                double leader_speed = 0.0;
                for (int b = 0; b < n_agents; ++b) {
                    if (b == a || agents[static_cast<std::size_t>(b)].lane != ag.lane) continue;
                    double os = 0.0;
                    lane.project({agents[static_cast<std::size_t>(b)].state.x,
                                  agents[static_cast<std::size_t>(b)].state.y}, &os, &tmp);
                    const double gap = os - my_s - 4.5;
                    if (gap > 0.0 && gap < best_gap) {
                        best_gap = gap;
                        leader_speed = agents[static_cast<std::size_t>(b)].state.speed;
                    }
                }
                if (ag.lane == 0) {
                    double es = 0.0;
                    lane.project({ego.x, ego.y}, &es, &tmp);
                    const double gap = es - my_s - 4.5;
                    if (gap > 0.0 && gap < best_gap) {
                        best_gap = gap;
                        leader_speed = ego.speed;
                    }
                }
                const double a_cmd = idm_accel_cl(ag, best_gap, leader_speed);
                const double y_cmd = pursuit_yaw_cl(ag.state, lane);
                integrate_cl(ag.state, a_cmd, y_cmd, mcfg.dt, 30.0);
            }
        }

        // Histories advance after the step.
        ego_hist.erase(ego_hist.begin());
        ego_hist.push_back(ego);
        for (int a = 0; a < n_agents; ++a) {
            auto& h = agent_hists[static_cast<std::size_t>(a)];
            h.erase(h.begin());
            h.push_back(agents[static_cast<std::size_t>(a)].state);
        }

        for (int a = 0; a < n_agents; ++a) {
            if (vehicles_collide(ego, agents[static_cast<std::size_t>(a)].state)) m.collision = true;
        }
        double s_now = 0.0, lat_now = 0.0;
        ego_lane.project({ego.x, ego.y}, &s_now, &lat_now);
        if (std::fabs(lat_now) > scenario.lane_width / 2.0 + ecfg.corridor_slack) off_corridor_ever = true;

        const double jerk = (accel - prev_accel) / mcfg.dt;
        const bool comfortable = std::fabs(accel) <= ecfg.comfort_accel && (t == 0 || std::fabs(jerk) <= ecfg.comfort_jerk);
        if (comfortable) ++comfort_ok;
        prev_accel = accel;

        if (trace) {
            std::ostringstream os;
            os << t << "," << ego.x << "," << ego.y << "," << ego.heading << "," << ego.speed << "," << accel << ","
               << (m.collision ? "C" : (off_corridor_ever ? "O" : "-"));
            trace->push_back(os.str());
        }
        if (m.collision) break;
    }

    double s_final = 0.0;
    ego_lane.project({ego.x, ego.y}, &s_final, &tmp);
    m.progress_ratio = std::clamp((s_final - ego_start_s) / ref_progress, 0.0, 1.0);
    m.comfort = static_cast<double>(comfort_ok) / static_cast<double>(ecfg.steps);
    m.off_corridor = off_corridor_ever;
    m.score = driving_score(m);
    return m;
}

PlanFn make_network_policy(const ParameterStore& params, const AdapterSet* adapters, const ModelConfig& mcfg,
                           const PlannerConfig& pcfg) {
    return [&params, adapters, mcfg, pcfg](const ObservationSeq& obs) {
        return plan_trajectory(params, adapters, mcfg, pcfg, obs);
    };
}

PlanFn make_expert_policy(const ModelConfig& mcfg) {
    return [mcfg](const ObservationSeq& obs) {
        const int H = mcfg.history_steps;
        const int T = mcfg.horizon_steps;
        std::vector<Vec2> pts;
        for (int i = 0; i < obs.lane.rows(); ++i) pts.push_back({obs.lane.at2(i, 0), obs.lane.at2(i, 1)});
        LanePath lane(std::move(pts));

        // Current ego state in its own frame plus constant-velocity agents.
        KinematicState s{0.0, 0.0, 0.0, obs.ego_hist.at2(H - 1, 3)};
        struct CvAgent {
            double x, y, vx, vy;
        };
        std::vector<CvAgent> others;
        for (int a = 0; a < obs.agent_hist.rows(); ++a) {
            if (!obs.agent_valid(a)) continue;
            const int base = (H - 1) * 5;
            const double heading = obs.agent_hist.at2(a, base + 2);
            const double speed = obs.agent_hist.at2(a, base + 3);
            others.push_back({obs.agent_hist.at2(a, base + 0), obs.agent_hist.at2(a, base + 1),
                              speed * std::cos(heading), speed * std::sin(heading)});
        }

        IdmParams idm;
        idm.desired_speed = obs.target_speed;
        Tensor plan({T, 2});
        for (int t = 0; t < T; ++t) {
            double my_s = 0.0, tmp = 0.0;
            lane.project({s.x, s.y}, &my_s, &tmp);
            double best_gap = 1e9;
            double leader_speed = 0.0;
            for (const CvAgent& o : others) {
                double os = 0.0, ol = 0.0;
                lane.project({o.x + o.vx * t * mcfg.dt, o.y + o.vy * t * mcfg.dt}, &os, &ol);
                if (std::fabs(ol) > 2.0) continue;  // other lane
                const double gap = os - my_s - 4.5;
                if (gap > 0.0 && gap < best_gap) {
                    best_gap = gap;
                    leader_speed = std::sqrt(o.vx * o.vx + o.vy * o.vy);
                }
            }
            IdmActor me{s, idm, 0};
            const double accel = idm_accel_cl(me, best_gap, leader_speed);
            const double yaw = pursuit_yaw_cl(s, lane);
            integrate_cl(s, accel, yaw, mcfg.dt, 30.0);
            plan.at2(t, 0) = s.x;
            plan.at2(t, 1) = s.y;
        }
        return plan;
    };
}

ClosedLoopAggregate aggregate_closed_loop(const std::vector<ClosedLoopMetrics>& runs) {
    ClosedLoopAggregate agg;
    for (const auto& r : runs) {
        agg.mean_score += r.score;
        agg.collision_rate += r.collision ? 1.0 : 0.0;
        agg.mean_progress += r.progress_ratio;
        agg.mean_comfort += r.comfort;
        ++agg.episodes;
    }
    if (agg.episodes > 0) {
        const double inv = 1.0 / static_cast<double>(agg.episodes);
        agg.mean_score *= inv;
        agg.collision_rate *= inv;
        agg.mean_progress *= inv;
        agg.mean_comfort *= inv;
    }
    return agg;
}

// ---------------------------------------------------------------------------
// reporting

MetricRow metric_row(const OpenLoopMetrics& ol) {
    MetricRow r;
    r.values["ade"] = ol.ade;
    r.values["fde"] = ol.fde;
    r.values["minsade"] = ol.min_sade;
    r.values["minsfde"] = ol.min_sfde;
    r.values["bminsfde"] = ol.bmin_sfde;
    r.values["smr"] = ol.smr;
    r.values["samples"] = static_cast<double>(ol.samples);
    return r;
}

MetricRow metric_row(const OpenLoopMetrics& ol, const ClosedLoopAggregate& cl_nr, const ClosedLoopAggregate& cl_r) {
    MetricRow r = metric_row(ol);
    r.values["cl_nr"] = cl_nr.mean_score;
    r.values["cl_r"] = cl_r.mean_score;
    r.values["cl_collision_rate"] = (cl_nr.collision_rate + cl_r.collision_rate) / 2.0;
    return r;
}

CrossDomainReport cross_domain_report(const std::string& method, const MetricRow& id, const MetricRow& ood,
                                      const MetricRow* base_id, std::uint64_t id_config_hash,
                                      std::uint64_t ood_config_hash) {
    if (id_config_hash != ood_config_hash) {
        throw DataError("cross_domain_report: domain config hash mismatch (" + std::to_string(id_config_hash) +
                        " vs " + std::to_string(ood_config_hash) + ")");
    }
    CrossDomainReport rep;
    rep.method = method;
    rep.id = id;
    rep.ood = ood;
    rep.config_hash = id_config_hash;
    for (const auto& [key, v_id] : id.values) {
        auto it = ood.values.find(key);
        if (it == ood.values.end()) continue;
        const double avg = (v_id + it->second) / 2.0;
        rep.averaged.values[key] = avg;
        rep.recovered_id.values[key] = 2.0 * avg - it->second;
    }
    if (base_id) {
        rep.has_forgetting = true;
        for (const auto& [key, v_id] : id.values) {
            auto it = base_id->values.find(key);
            if (it != base_id->values.end()) rep.forgetting.values[key] = v_id - it->second;
        }
    }
    return rep;
}

}  // namespace lord
