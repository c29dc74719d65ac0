#include "lord/domains.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lord/errors.hpp"
#include "lord/rng.hpp"

namespace lord {

namespace {

constexpr double kCorridorLength = 300.0;
constexpr double kLanePointSpacing = 2.0;
constexpr double kVehicleLength = 4.5;
constexpr double kDiscOffset = 1.25;
constexpr double kDiscRadius = 1.0;
constexpr double kObsLaneSpacing = 3.0;
constexpr double kObservationRadius = 60.0;
constexpr int kSimSubsteps = 5;
constexpr double kSimDt = 0.2;

struct EgoFrame {
    Vec2 origin;
    double cos_h = 1.0, sin_h = 0.0;

    explicit EgoFrame(const KinematicState& s) : origin{s.x, s.y}, cos_h(std::cos(s.heading)), sin_h(std::sin(s.heading)) {}

    Vec2 to_local(Vec2 p) const {
        const Vec2 d = p - origin;
        return {d.x * cos_h + d.y * sin_h, -d.x * sin_h + d.y * cos_h};
    }
    double heading_local(double h) const {
        double a = h - std::atan2(sin_h, cos_h);
        while (a > M_PI) a -= 2.0 * M_PI;
        while (a < -M_PI) a += 2.0 * M_PI;
        return a;
    }
};

void mirror_state(KinematicState& s) {
    s.y = -s.y;
    s.heading = -s.heading;
}

}  // namespace

void DomainConfig::validate() const {
    if (agent_lambda < 0.0) throw ConfigError("domain " + name + ": agent_lambda must be >= 0");
    if (!(speed_min > 0.0) || !(speed_max >= speed_min)) throw ConfigError("domain " + name + ": bad speed range");
    if (!(lane_width > 2.2)) throw ConfigError("domain " + name + ": lane width must exceed vehicle width");
    if (lane_count != 1 && lane_count != 2) throw ConfigError("domain " + name + ": lane_count must be 1 or 2");
    if (!(cruise_factor > 0.0)) throw ConfigError("domain " + name + ": cruise_factor must be positive");
}

Scenario sample_scenario(const DomainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x5CE11ull));

    // Canonical right-handed construction; mirrored at the end if required.
    const double curvature = rng.uniform(cfg.curvature_min, cfg.curvature_max);
    const int n_pts = static_cast<int>(kCorridorLength / kLanePointSpacing) + 1;
    std::vector<Vec2> base(static_cast<std::size_t>(n_pts));
    double x = 0.0, y = 0.0, heading = 0.0;
    for (int i = 0; i < n_pts; ++i) {
        base[static_cast<std::size_t>(i)] = {x, y};
        x += std::cos(heading) * kLanePointSpacing;
        y += std::sin(heading) * kLanePointSpacing;
        heading += curvature * kLanePointSpacing;
    }

    auto offset_line = [&](double off) {
        std::vector<Vec2> pts(base.size());
        for (std::size_t i = 0; i < base.size(); ++i) {
            Vec2 tan;
            if (i + 1 < base.size()) {
                tan = (base[i + 1] - base[i]).normalized();
            } else {
                tan = (base[i] - base[i - 1]).normalized();
            }
            pts[i] = base[i] + tan.perp() * off;
        }
        return pts;
    };

    Scenario sc;
    sc.seed = seed;
    sc.domain = cfg.name;
    sc.lane_width = cfg.lane_width;
    if (cfg.lane_count == 1) {
        sc.ego_lane = base;
    } else {
        // Right-hand traffic: ego lane right of the corridor axis, oncoming left.
        sc.ego_lane = offset_line(-cfg.lane_width / 2.0);
        sc.oncoming_lane = offset_line(cfg.lane_width / 2.0);
        std::reverse(sc.oncoming_lane.begin(), sc.oncoming_lane.end());
    }

    LanePath ego_lane(sc.ego_lane);
    sc.target_speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    const double cruise = cfg.cruise_factor * sc.target_speed;

    const double s_ego = 30.0 + rng.uniform(0.0, 10.0);
    const Vec2 p = ego_lane.point_at(s_ego);
    const Vec2 tan = ego_lane.tangent_at(s_ego);
    sc.ego.x = p.x;
    sc.ego.y = p.y;
    sc.ego.heading = std::atan2(tan.y, tan.x);
    sc.ego.speed = std::max(0.5, sc.target_speed * (1.0 + rng.uniform(-3.0, 1.5) * cfg.speed_noise));
    sc.ego_idm.desired_speed = cruise;
    sc.goal = ego_lane.point_at(s_ego + cruise * kEpisodeSteps * kSimDt);

    const int want = std::min(rng.poisson(cfg.agent_lambda), 4);
    std::vector<double> ego_lane_slots{s_ego};  // occupied arc positions on the ego lane
    int placed = 0, attempts = 0;
    LanePath oncoming = sc.oncoming_lane.empty() ? ego_lane : LanePath(sc.oncoming_lane);
    while (placed < want && attempts < 64) {
        ++attempts;
        ActorInit agent;
        const bool on_ego_lane = sc.oncoming_lane.empty() || rng.uniform() < 0.65;
        const double gap = cfg.gap_mean * (0.6 + 0.8 * rng.uniform());
        if (on_ego_lane) {
            const bool ahead = placed % 2 == 0;
            double s = 0.0;
            if (ahead) {
                double max_s = s_ego;
                for (double v : ego_lane_slots) max_s = std::max(max_s, v);
                s = max_s + gap;
            } else {
                double min_s = s_ego;
                for (double v : ego_lane_slots) min_s = std::min(min_s, v);
                s = min_s - gap;
            }
            if (s < 5.0 || s > kCorridorLength - 10.0) continue;
            bool ok = true;
            for (double v : ego_lane_slots) {
                if (std::fabs(v - s) < kVehicleLength + 2.0) ok = false;
            }
            if (!ok) continue;
            ego_lane_slots.push_back(s);
            const Vec2 ap = ego_lane.point_at(s);
            const Vec2 at = ego_lane.tangent_at(s);
            const Vec2 an = at.perp();
            const double lat = rng.uniform(-cfg.lateral_noise, cfg.lateral_noise);
            agent.lane = 0;
            agent.state.x = ap.x + an.x * lat;
            agent.state.y = ap.y + an.y * lat;
            agent.state.heading = std::atan2(at.y, at.x);
        } else {
            const double s = 40.0 + rng.uniform(0.0, kCorridorLength - 90.0);
            const Vec2 ap = oncoming.point_at(s);
            const Vec2 at = oncoming.tangent_at(s);
            const Vec2 an = at.perp();
            const double lat = rng.uniform(-cfg.lateral_noise, cfg.lateral_noise);
            agent.lane = 1;
            agent.state.x = ap.x + an.x * lat;
            agent.state.y = ap.y + an.y * lat;
            agent.state.heading = std::atan2(at.y, at.x);
        }
        const double agent_target = rng.uniform(cfg.speed_min, cfg.speed_max) * cfg.cruise_factor;
        agent.state.speed = std::max(0.5, agent_target * (1.0 + rng.uniform(-1.0, 1.0) * cfg.speed_noise));
        agent.idm.desired_speed = agent_target;
        sc.agents.push_back(agent);
        ++placed;
    }
    if (placed < want) {
        throw DataError("sample_scenario: infeasible agent placement for seed " + std::to_string(seed));
    }

    if (cfg.left_handed) {
        for (auto& pt : sc.ego_lane) pt.y = -pt.y;
        for (auto& pt : sc.oncoming_lane) pt.y = -pt.y;
        mirror_state(sc.ego);
        for (auto& agent : sc.agents) mirror_state(agent.state);
        sc.goal.y = -sc.goal.y;
    }
    return sc;
}

namespace {

struct Actor {
    KinematicState state;
    IdmParams idm;
    const LanePath* lane;
};

double idm_accel(const Actor& me, double gap, double leader_speed) {
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

double pursuit_yaw_rate(const Actor& me) {
    double s = 0.0, lat = 0.0;
    me.lane->project({me.state.x, me.state.y}, &s, &lat);
    const double lookahead = std::max(4.0, 0.8 * me.state.speed);
    const Vec2 target = me.lane->point_at(s + lookahead);
    const double dx = target.x - me.state.x;
    const double dy = target.y - me.state.y;
    const double target_angle = std::atan2(dy, dx);
    double alpha = target_angle - me.state.heading;
    while (alpha > M_PI) alpha -= 2.0 * M_PI;
    while (alpha < -M_PI) alpha += 2.0 * M_PI;
    const double omega = 2.0 * me.state.speed * std::sin(alpha) / lookahead;
    return std::clamp(omega, -1.2, 1.2);
}

void integrate(KinematicState& s, double accel, double yaw_rate, double dt) {
    const double h = dt / kSimSubsteps;
    for (int k = 0; k < kSimSubsteps; ++k) {
        s.x += s.speed * std::cos(s.heading) * h;
        s.y += s.speed * std::sin(s.heading) * h;
        s.heading += yaw_rate * h;
        s.speed = std::max(0.0, s.speed + accel * h);
    }
}

// Nearest leader of `me` among `others` sharing its lane; gap measured along
// the lane between vehicle fronts and rears.
std::pair<double, double> find_leader(const Actor& me, const std::vector<const Actor*>& others) {
    double my_s = 0.0, tmp = 0.0;
    me.lane->project({me.state.x, me.state.y}, &my_s, &tmp);
    double best_gap = 1e9;
    double leader_speed = 0.0;
    for (const Actor* o : others) {
        if (o == &me || o->lane != me.lane) continue;
        double os = 0.0;
        o->lane->project({o->state.x, o->state.y}, &os, &tmp);
        const double gap = os - my_s - kVehicleLength;
        if (gap > 0.0 && gap < best_gap) {
            best_gap = gap;
            leader_speed = o->state.speed;
        }
    }
    return {best_gap, leader_speed};
}

}  // namespace

bool vehicles_collide(const KinematicState& a, const KinematicState& b) {
    const double ca = std::cos(a.heading), sa = std::sin(a.heading);
    const double cb = std::cos(b.heading), sb = std::sin(b.heading);
    for (double da : {-kDiscOffset, kDiscOffset}) {
        for (double db : {-kDiscOffset, kDiscOffset}) {
            const double ax = a.x + da * ca, ay = a.y + da * sa;
            const double bx = b.x + db * cb, by = b.y + db * sb;
            const double dx = ax - bx, dy = ay - by;
            if (dx * dx + dy * dy < (2.0 * kDiscRadius) * (2.0 * kDiscRadius)) return true;
        }
    }
    return false;
}

SimStates expert_rollout(const Scenario& scenario, int steps) {
    LanePath ego_lane(scenario.ego_lane);
    LanePath oncoming = scenario.oncoming_lane.empty() ? ego_lane : LanePath(scenario.oncoming_lane);

    std::vector<Actor> actors;
    actors.push_back({scenario.ego, scenario.ego_idm, &ego_lane});
    for (const auto& a : scenario.agents) {
        actors.push_back({a.state, a.idm, a.lane == 0 ? &ego_lane : &oncoming});
    }

    SimStates sim;
    sim.steps = steps;
    sim.ego_states = Tensor({steps + 1, 4});
    sim.agent_states.assign(scenario.agents.size(), Tensor({steps + 1, 4}));
    auto record = [&](int t) {
        for (std::size_t i = 0; i < actors.size(); ++i) {
            Tensor& dst = i == 0 ? sim.ego_states : sim.agent_states[i - 1];
            dst.at2(t, 0) = actors[i].state.x;
            dst.at2(t, 1) = actors[i].state.y;
            dst.at2(t, 2) = actors[i].state.heading;
            dst.at2(t, 3) = actors[i].state.speed;
        }
    };
    record(0);

    std::vector<const Actor*> ptrs;
    for (const auto& a : actors) ptrs.push_back(&a);

    for (int t = 1; t <= steps; ++t) {
        std::vector<std::pair<double, double>> controls(actors.size());
        for (std::size_t i = 0; i < actors.size(); ++i) {
            const auto [gap, lv] = find_leader(actors[i], ptrs);
            controls[i] = {idm_accel(actors[i], gap, lv), pursuit_yaw_rate(actors[i])};
        }
        for (std::size_t i = 0; i < actors.size(); ++i) {
            integrate(actors[i].state, controls[i].first, controls[i].second, kSimDt);
        }
        for (std::size_t i = 0; i < actors.size(); ++i) {
            for (std::size_t j = i + 1; j < actors.size(); ++j) {
                if (vehicles_collide(actors[i].state, actors[j].state)) {
                    throw DataError("expert_rollout: collision in scenario seed " + std::to_string(scenario.seed));
                }
            }
        }
        record(t);
    }
    return sim;
}

ObservationSeq build_observation(const LanePath& ego_lane, const std::vector<KinematicState>& ego_hist,
                                 const std::vector<std::vector<KinematicState>>& agent_hists, double target_speed,
                                 const ModelConfig& cfg) {
    const int H = cfg.history_steps;
    if (static_cast<int>(ego_hist.size()) != H) throw ContractError("build_observation: ego history length != H");
    const KinematicState& now = ego_hist.back();
    EgoFrame frame(now);

    ObservationSeq obs;
    obs.target_speed = target_speed;
    obs.ego_hist = Tensor({H, 4});
    for (int t = 0; t < H; ++t) {
        const KinematicState& s = ego_hist[static_cast<std::size_t>(t)];
        const Vec2 p = frame.to_local({s.x, s.y});
        obs.ego_hist.at2(t, 0) = p.x;
        obs.ego_hist.at2(t, 1) = p.y;
        obs.ego_hist.at2(t, 2) = frame.heading_local(s.heading);
        obs.ego_hist.at2(t, 3) = s.speed;
    }

    // Agents sorted by current distance, nearest first; ties by input order.
    std::vector<std::pair<double, int>> order;
    for (int a = 0; a < static_cast<int>(agent_hists.size()); ++a) {
        const KinematicState& s = agent_hists[static_cast<std::size_t>(a)].back();
        const double dx = s.x - now.x, dy = s.y - now.y;
        const double d = std::sqrt(dx * dx + dy * dy);
        if (d <= kObservationRadius) order.emplace_back(d, a);
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& l, const auto& r) { return l.first < r.first; });

    obs.agent_hist = Tensor({cfg.max_agents, cfg.agent_dim()});
    const int n = std::min<int>(cfg.max_agents, static_cast<int>(order.size()));
    for (int slot = 0; slot < n; ++slot) {
        const auto& hist = agent_hists[static_cast<std::size_t>(order[static_cast<std::size_t>(slot)].second)];
        if (static_cast<int>(hist.size()) != H) throw ContractError("build_observation: agent history length != H");
        for (int t = 0; t < H; ++t) {
            const KinematicState& s = hist[static_cast<std::size_t>(t)];
            const Vec2 p = frame.to_local({s.x, s.y});
            obs.agent_hist.at2(slot, t * 5 + 0) = p.x;
            obs.agent_hist.at2(slot, t * 5 + 1) = p.y;
            obs.agent_hist.at2(slot, t * 5 + 2) = frame.heading_local(s.heading);
            obs.agent_hist.at2(slot, t * 5 + 3) = s.speed;
            obs.agent_hist.at2(slot, t * 5 + 4) = 1.0;
        }
    }

    double s_ego = 0.0, tmp = 0.0;
    ego_lane.project({now.x, now.y}, &s_ego, &tmp);
    obs.lane = Tensor({cfg.lane_points, 2});
    for (int i = 0; i < cfg.lane_points; ++i) {
        const Vec2 p = frame.to_local(ego_lane.point_at(s_ego + i * kObsLaneSpacing));
        obs.lane.at2(i, 0) = p.x;
        obs.lane.at2(i, 1) = p.y;
    }
    return obs;
}

std::vector<Window> extract_windows(const Scenario& scenario, const SimStates& sim, const ModelConfig& cfg,
                                    int windows_per_scenario) {
    const int H = cfg.history_steps, T = cfg.horizon_steps;
    const int lo = H - 1;
    const int hi = sim.steps - T;
    if (hi < lo) throw ContractError("extract_windows: episode too short for H+T");
    LanePath ego_lane(scenario.ego_lane);

    std::vector<int> anchors;
    if (windows_per_scenario <= 1) {
        anchors.push_back((lo + hi) / 2);
    } else {
        for (int i = 0; i < windows_per_scenario; ++i) {
            anchors.push_back(lo + static_cast<int>(std::lround(static_cast<double>(i) * (hi - lo) /
                                                                (windows_per_scenario - 1))));
        }
    }

    auto state_at = [&](const Tensor& states, int t) {
        return KinematicState{states.at2(t, 0), states.at2(t, 1), states.at2(t, 2), states.at2(t, 3)};
    };

    std::vector<Window> windows;
    for (int anchor : anchors) {
        Window w;
        w.scenario_index = scenario.index;
        w.anchor = anchor;

        std::vector<KinematicState> ego_hist;
        for (int t = anchor - H + 1; t <= anchor; ++t) ego_hist.push_back(state_at(sim.ego_states, t));
        std::vector<std::vector<KinematicState>> agent_hists;
        for (const Tensor& ag : sim.agent_states) {
            std::vector<KinematicState> hist;
            for (int t = anchor - H + 1; t <= anchor; ++t) hist.push_back(state_at(ag, t));
            agent_hists.push_back(std::move(hist));
        }
        w.obs = build_observation(ego_lane, ego_hist, agent_hists, scenario.target_speed, cfg);

        // Joint futures in the same frame and agent order as the observation.
        EgoFrame frame(ego_hist.back());
        w.future = Tensor({cfg.max_agents, T * 2});
        w.future_valid = Tensor({cfg.max_agents});
        w.future_valid[0] = 1.0;
        for (int t = 0; t < T; ++t) {
            const Vec2 p = frame.to_local({sim.ego_states.at2(anchor + 1 + t, 0), sim.ego_states.at2(anchor + 1 + t, 1)});
            w.future.at2(0, t * 2 + 0) = p.x;
            w.future.at2(0, t * 2 + 1) = p.y;
        }
        // Reconstruct the observation's agent ordering.
        const KinematicState now = ego_hist.back();
        std::vector<std::pair<double, int>> order;
        for (int a = 0; a < static_cast<int>(agent_hists.size()); ++a) {
            const KinematicState& s = agent_hists[static_cast<std::size_t>(a)].back();
            const double dx = s.x - now.x, dy = s.y - now.y;
            const double d = std::sqrt(dx * dx + dy * dy);
            if (d <= kObservationRadius) order.emplace_back(d, a);
        }
        std::stable_sort(order.begin(), order.end(),
                         [](const auto& l, const auto& r) { return l.first < r.first; });
        const int n = std::min<int>(cfg.max_agents - 1, static_cast<int>(order.size()));
        for (int slot = 0; slot < n; ++slot) {
            const int a = order[static_cast<std::size_t>(slot)].second;
            w.future_valid[slot + 1] = 1.0;
            for (int t = 0; t < T; ++t) {
                const Tensor& ag = sim.agent_states[static_cast<std::size_t>(a)];
                const Vec2 p = frame.to_local({ag.at2(anchor + 1 + t, 0), ag.at2(anchor + 1 + t, 1)});
                w.future.at2(slot + 1, t * 2 + 0) = p.x;
                w.future.at2(slot + 1, t * 2 + 1) = p.y;
            }
        }

        double s_now = 0.0, s_end = 0.0, tmp = 0.0;
        ego_lane.project({now.x, now.y}, &s_now, &tmp);
        ego_lane.project({sim.ego_states.at2(anchor + T, 0), sim.ego_states.at2(anchor + T, 1)}, &s_end, &tmp);
        w.expert_progress = s_end - s_now;
        windows.push_back(std::move(w));
    }
    return windows;
}

Dataset make_dataset(const DomainConfig& dcfg, const ModelConfig& mcfg, int num_scenarios, int windows_per_scenario,
                     std::uint64_t seed, std::uint64_t seed_offset, std::uint64_t config_hash) {
    if (num_scenarios < 0) throw ContractError("make_dataset: negative scenario count");
    Dataset ds;
    ds.domain = dcfg.name;
    ds.seed = seed;
    ds.config_hash = config_hash;
    ds.H = mcfg.history_steps;
    ds.T = mcfg.horizon_steps;
    ds.A = mcfg.max_agents;
    ds.L = mcfg.lane_points;
    for (int i = 0; i < num_scenarios; ++i) {
        const std::uint64_t sc_seed = mix_seed(seed, seed_offset + static_cast<std::uint64_t>(i));
        Scenario sc = sample_scenario(dcfg, sc_seed);
        sc.index = static_cast<int>(seed_offset) + i;
        SimStates sim = expert_rollout(sc, kEpisodeSteps);
        for (Window& w : extract_windows(sc, sim, mcfg, windows_per_scenario)) {
            ds.windows.push_back(std::move(w));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// dataset file format

namespace {

void put_doubles(std::vector<double>& out, const Tensor& t) {
    out.insert(out.end(), t.vec().begin(), t.vec().end());
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    const int per_window = ds.H * 4 + ds.A * ds.H * 5 + ds.L * 2 + 1 + ds.A * ds.T * 2 + ds.A + 3;
    std::ostringstream header;
    header << "LORD-DATASET v1\n";
    header << "domain " << ds.domain << "\n";
    header << "seed " << ds.seed << "\n";
    header << "config_hash " << ds.config_hash << "\n";
    header << "dims " << ds.H << " " << ds.T << " " << ds.A << " " << ds.L << "\n";
    header << "windows " << ds.windows.size() << "\n";
    header << "doubles_per_window " << per_window << "\n";
    header << "END\n";

    std::vector<double> payload;
    payload.reserve(ds.windows.size() * static_cast<std::size_t>(per_window));
    for (const Window& w : ds.windows) {
        put_doubles(payload, w.obs.ego_hist);
        put_doubles(payload, w.obs.agent_hist);
        put_doubles(payload, w.obs.lane);
        payload.push_back(w.obs.target_speed);
        put_doubles(payload, w.future);
        put_doubles(payload, w.future_valid);
        payload.push_back(w.expert_progress);
        payload.push_back(static_cast<double>(w.scenario_index));
        payload.push_back(static_cast<double>(w.anchor));
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write dataset: " + path);
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!out) throw DataError("write failure: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset: " + path);
    std::string line;
    auto expect = [&](const char* prefix) {
        if (!std::getline(in, line) || line.rfind(prefix, 0) != 0) {
            throw DataError(std::string("bad dataset header (expected ") + prefix + ") in " + path);
        }
        return line.substr(std::string(prefix).size());
    };
    if (!std::getline(in, line) || line != "LORD-DATASET v1") throw DataError("bad dataset magic in " + path);
    Dataset ds;
    ds.domain = expect("domain ");
    ds.seed = std::stoull(expect("seed "));
    ds.config_hash = std::stoull(expect("config_hash "));
    {
        std::istringstream dims(expect("dims "));
        dims >> ds.H >> ds.T >> ds.A >> ds.L;
    }
    const long n = std::stol(expect("windows "));
    const int per_window = std::stoi(expect("doubles_per_window "));
    if (!std::getline(in, line) || line != "END") throw DataError("missing END in " + path);

    std::vector<double> payload(static_cast<std::size_t>(n) * per_window);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!in && n > 0) throw DataError("truncated dataset payload in " + path);

    std::size_t off = 0;
    auto take = [&](std::vector<int> shape) {
        Tensor t(std::move(shape));
        for (int i = 0; i < t.size(); ++i) t[i] = payload[off++];
        return t;
    };
    for (long i = 0; i < n; ++i) {
        Window w;
        w.obs.ego_hist = take({ds.H, 4});
        w.obs.agent_hist = take({ds.A, ds.H * 5});
        w.obs.lane = take({ds.L, 2});
        w.obs.target_speed = payload[off++];
        w.future = take({ds.A, ds.T * 2});
        w.future_valid = take({ds.A});
        w.expert_progress = payload[off++];
        w.scenario_index = static_cast<int>(payload[off++]);
        w.anchor = static_cast<int>(payload[off++]);
        ds.windows.push_back(std::move(w));
    }
    return ds;
}

void Histogram::add(double v) {
    if (counts.empty()) return;
    const int n = static_cast<int>(counts.size());
    int bin = static_cast<int>((v - lo) / (hi - lo) * n);
    bin = std::clamp(bin, 0, n - 1);
    ++counts[static_cast<std::size_t>(bin)];
    ++total;
    mean += (v - mean) / static_cast<double>(total);
}

DomainStatistics domain_statistics(const Dataset& ds) {
    if (ds.windows.empty()) throw DataError("domain_statistics: empty dataset");
    DomainStatistics st;
    st.nearest_agent_distance = {0.0, 60.0, std::vector<long>(12, 0), 0, 0.0};
    st.speeds = {0.0, 20.0, std::vector<long>(20, 0), 0, 0.0};
    st.agent_counts = {0.0, 5.0, std::vector<long>(5, 0), 0, 0.0};
    const int H = ds.H;
    for (const Window& w : ds.windows) {
        ++st.windows;
        int valid = 0;
        double nearest = 1e18;
        for (int a = 0; a < ds.A; ++a) {
            if (w.obs.agent_hist.at2(a, (H - 1) * 5 + 4) == 0.0) continue;
            ++valid;
            const double x = w.obs.agent_hist.at2(a, (H - 1) * 5 + 0);
            const double y = w.obs.agent_hist.at2(a, (H - 1) * 5 + 1);
            nearest = std::min(nearest, std::sqrt(x * x + y * y));
            st.speeds.add(w.obs.agent_hist.at2(a, (H - 1) * 5 + 3));
        }
        st.agent_counts.add(static_cast<double>(valid));
        if (valid > 0) st.nearest_agent_distance.add(nearest);
        st.speeds.add(w.obs.ego_hist.at2(H - 1, 3));
    }
    return st;
}

namespace {

void histogram_lines(std::ostringstream& os, const char* name, const Histogram& a, const Histogram& b) {
    os << name << " mean: id=" << a.mean << " ood=" << b.mean << "\n";
    os << name << " histogram (id | ood):\n";
    for (std::size_t i = 0; i < a.counts.size(); ++i) {
        const double lo = a.lo + (a.hi - a.lo) * static_cast<double>(i) / static_cast<double>(a.counts.size());
        const double hi = a.lo + (a.hi - a.lo) * static_cast<double>(i + 1) / static_cast<double>(a.counts.size());
        os << "  [" << lo << ", " << hi << "): " << a.counts[i] << " | " << b.counts[i] << "\n";
    }
}

}  // namespace

std::string statistics_report(const DomainStatistics& id_stats, const DomainStatistics& ood_stats) {
    std::ostringstream os;
    os << "domain statistics (" << id_stats.windows << " id windows, " << ood_stats.windows << " ood windows)\n";
    histogram_lines(os, "nearest-agent distance [m]", id_stats.nearest_agent_distance,
                    ood_stats.nearest_agent_distance);
    histogram_lines(os, "speed [m/s]", id_stats.speeds, ood_stats.speeds);
    histogram_lines(os, "agent count", id_stats.agent_counts, ood_stats.agent_counts);
    return os.str();
}

}  // namespace lord
