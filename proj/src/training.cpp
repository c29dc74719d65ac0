#include "lord/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lord/errors.hpp"

namespace lord {

DataMode data_mode_from_string(const std::string& s, double* alpha_out) {
    if (s == "id") return DataMode::ID;
    if (s == "ood") return DataMode::OOD;
    if (s == "mix") return DataMode::Mix;
    if (s.rfind("mix:", 0) == 0) {
        if (alpha_out) *alpha_out = std::stod(s.substr(4));
        return DataMode::Mix;
    }
    throw ConfigError("unknown data mode '" + s + "'");
}

std::string data_mode_label(DataMode mode, double alpha) {
    switch (mode) {
        case DataMode::ID: return "id";
        case DataMode::OOD: return "ood";
        case DataMode::Mix: {
            std::ostringstream os;
            os << "mix" << alpha;
            return os.str();
        }
    }
    return "?";
}

// ---------------------------------------------------------------------------
// samplers

MixtureSampler::MixtureSampler(const Dataset* id_data, const Dataset* ood_data, double alpha, std::uint64_t seed)
    : alpha_(alpha),
      coin_(mix_seed(seed, 0xC0111ull)),
      id_(mix_seed(seed, 0x1Dull)),
      ood_(mix_seed(seed, 0x00Dull)) {
    if (alpha < 0.0) throw ConfigError("MixtureSampler: alpha must be >= 0");
    if (!ood_data || ood_data->windows.empty()) throw ConfigError("MixtureSampler: OOD dataset is empty");
    if (alpha > 0.0 && (!id_data || id_data->windows.empty())) {
        throw ConfigError("MixtureSampler: alpha > 0 requires a non-empty ID dataset");
    }
    id_.data = id_data;
    ood_.data = ood_data;
}

void MixtureSampler::Stream::reshuffle() {
    const int n = static_cast<int>(data->windows.size());
    perm.resize(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)],
                                              perm[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
    pos = 0;
}

const Window& MixtureSampler::Stream::next() {
    if (pos >= perm.size()) reshuffle();
    return data->windows[static_cast<std::size_t>(perm[pos++])];
}

const Window& MixtureSampler::draw() {
    const double p_id = alpha_ / (1.0 + alpha_);
    last_was_id_ = alpha_ > 0.0 && coin_.uniform() < p_id;
    return last_was_id_ ? id_.next() : ood_.next();
}

DatasetSampler::DatasetSampler(const Dataset* data, std::uint64_t seed) : data_(data), rng_(mix_seed(seed, 0xDA7Aull)) {
    if (!data_ || data_->windows.empty()) throw ConfigError("DatasetSampler: empty dataset");
}

void DatasetSampler::reshuffle() {
    const int n = static_cast<int>(data_->windows.size());
    perm_.resize(static_cast<std::size_t>(n));
    std::iota(perm_.begin(), perm_.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(perm_[static_cast<std::size_t>(i)],
                                              perm_[static_cast<std::size_t>(rng_.uniform_int(i + 1))]);
    pos_ = 0;
}

const Window& DatasetSampler::draw() {
    if (pos_ >= perm_.size()) reshuffle();
    return data_->windows[static_cast<std::size_t>(perm_[pos_++])];
}

// ---------------------------------------------------------------------------
// history dropout

ObservationSeq history_dropout(const ObservationSeq& obs, double p, std::uint64_t seed, bool training) {
    if (p < 0.0 || p > 1.0) throw ContractError("history_dropout: p must be in [0, 1]");
    if (!training || p == 0.0) return obs;
    ObservationSeq out = obs;
    Rng rng(mix_seed(seed, 0x4157ull));
    const int A = obs.agent_hist.rows();
    const int H = obs.ego_hist.rows();
    for (int a = 0; a < A; ++a) {
        if (rng.uniform() < p) {
            for (int i = 0; i < obs.agent_hist.cols(); ++i) out.agent_hist.at2(a, i) = 0.0;
        }
    }
    for (int t = 0; t < H - 1; ++t) {
        if (rng.uniform() < p) {
            for (int i = 0; i < 4; ++i) out.ego_hist.at2(t, i) = 0.0;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// losses

namespace {

Tensor validity_mask(const Window& w, const ModelConfig& cfg) {
    Tensor mask({cfg.mode_traj_dim()});
    for (int a = 0; a < cfg.max_agents; ++a) {
        const double v = w.future_valid[a];
        for (int i = 0; i < cfg.horizon_steps * 2; ++i) mask[a * cfg.horizon_steps * 2 + i] = v;
    }
    return mask;
}

double candidate_progress(const Tensor& traj, const FeatureContext& ctx) {
    double px = ctx.start.x, py = ctx.start.y, progress = 0.0;
    for (int t = 0; t < traj.rows(); ++t) {
        progress += (traj.at2(t, 0) - px) * ctx.lane_tan.at2(t, 0) + (traj.at2(t, 1) - py) * ctx.lane_tan.at2(t, 1);
        px = traj.at2(t, 0);
        py = traj.at2(t, 1);
    }
    return progress;
}

double traj_ade(const Tensor& traj, const Tensor& gt_flat) {
    double acc = 0.0;
    const int T = traj.rows();
    for (int t = 0; t < T; ++t) {
        const double dx = traj.at2(t, 0) - gt_flat[t * 2 + 0];
        const double dy = traj.at2(t, 1) - gt_flat[t * 2 + 1];
        acc += std::sqrt(dx * dx + dy * dy);
    }
    return acc / T;
}

KinematicState ego_state_from_obs(const ObservationSeq& obs) {
    const int H = obs.ego_hist.rows();
    return {0.0, 0.0, 0.0, obs.ego_hist.at2(H - 1, 3)};
}

LanePath lane_from_obs(const ObservationSeq& obs) {
    std::vector<Vec2> pts;
    pts.reserve(static_cast<std::size_t>(obs.lane.rows()));
    for (int i = 0; i < obs.lane.rows(); ++i) pts.push_back({obs.lane.at2(i, 0), obs.lane.at2(i, 1)});
    return LanePath(std::move(pts));
}

Tensor final_output_residual_value(const ParameterStore& params, const AdapterSpec& spec, const Tensor& z) {
    // Evaluation-mode residual: no dropout.
    if (spec.full_matrix) {
        const Tensor& m = params.get(adapter_param_name(spec.attachment, "M"));
        Tensor out({m.rows()});
        for (int i = 0; i < m.rows(); ++i) {
            double acc = 0.0;
            for (int j = 0; j < m.cols(); ++j) acc += m.at2(i, j) * z[j];
            out[i] = acc;
        }
        return out;
    }
    const Tensor& a = params.get(adapter_param_name(spec.attachment, "A"));
    const Tensor& b = params.get(adapter_param_name(spec.attachment, "B"));
    Tensor az({a.rows()});
    for (int i = 0; i < a.rows(); ++i) {
        double acc = 0.0;
        for (int j = 0; j < a.cols(); ++j) acc += a.at2(i, j) * z[j];
        az[i] = acc;
    }
    Tensor out({b.rows()});
    for (int i = 0; i < b.rows(); ++i) {
        double acc = 0.0;
        for (int j = 0; j < b.cols(); ++j) acc += b.at2(i, j) * az[j];
        out[i] = acc;
    }
    return out;
}

}  // namespace

Var reward_regularization(Tape& tape, Var probs, const CandidateSet& candidates, const FeatureContext& ctx,
                          double expert_progress, const LossConfig& lcfg, LossBreakdown* breakdown) {
    const int K = candidates.size();
    Tensor shortfalls({K});
    Tensor proximities({K});
    for (int k = 0; k < K; ++k) {
        const Tensor& traj = candidates.trajectories[static_cast<std::size_t>(k)];
        shortfalls[k] = std::max(0.0, expert_progress - candidate_progress(traj, ctx));
        proximities[k] = cost_features(traj, ctx, {0.0, 0.0})[5];
    }
    Var prog = tape.dot(probs, tape.constant(std::move(shortfalls)));
    Var coll = tape.dot(probs, tape.constant(std::move(proximities)));
    if (breakdown) {
        breakdown->progress_reg = tape.value(prog).item();
        breakdown->collision_reg = tape.value(coll).item();
    }
    return tape.add(tape.scale_const(prog, lcfg.w_progress), tape.scale_const(coll, lcfg.w_collision));
}

Var imitation_loss(Tape& tape, const ParameterStore& params, const PolicyGraph& g, const Window& window,
                   const ModelConfig& mcfg, const PlannerConfig& pcfg, const LossConfig& lcfg,
                   const AdapterSet* adapters, const ForwardOptions& opts, LossBreakdown* breakdown) {
    const int T = mcfg.horizon_steps;
    double valid_count = 0.0;
    for (int a = 0; a < mcfg.max_agents; ++a) valid_count += window.future_valid[a];
    if (valid_count < 1.0) throw DataError("imitation_loss: window has no valid agents");

    // Winner-takes-all joint regression over valid agents.
    Var gt = tape.constant(Tensor({mcfg.mode_traj_dim()}, window.future.vec()));
    Var mask = tape.constant(validity_mask(window, mcfg));
    std::vector<Var> mode_msd;
    for (int m = 0; m < mcfg.num_modes; ++m) {
        Var diff = tape.sub(tape.row(g.joint_modes, m), gt);
        Var sq = tape.mul(tape.square(diff), mask);
        mode_msd.push_back(tape.scale_const(tape.sum(sq), 1.0 / (valid_count * T)));
    }
    int best = 0;
    for (int m = 1; m < mcfg.num_modes; ++m) {
        if (tape.value(mode_msd[static_cast<std::size_t>(m)]).item() <
            tape.value(mode_msd[static_cast<std::size_t>(best)]).item()) {
            best = m;
        }
    }
    Var reg = mode_msd[static_cast<std::size_t>(best)];
    Var mode_ce = tape.neg(tape.at(tape.log_softmax(g.mode_logits), best));

    Var total = tape.add(tape.scale_const(reg, lcfg.w_regression), tape.scale_const(mode_ce, lcfg.w_mode_ce));
    if (breakdown) {
        breakdown->regression = tape.value(reg).item();
        breakdown->mode_ce = tape.value(mode_ce).item();
    }

    Tensor ego_future({T * 2});
    for (int i = 0; i < T * 2; ++i) ego_future[i] = window.future.at2(0, i);

    const bool sampling = mcfg.plan_mode == PlanMode::StructuredSampling && g.has_game_params;
    const bool unrolled = mcfg.plan_mode == PlanMode::StructuredUnrolled && g.has_game_params;

    CandidateSet candidates;
    FeatureContext ctx;
    if (sampling || unrolled || (adapters && adapters->has(Attachment::FinalOutput))) {
        LanePath lane = lane_from_obs(window.obs);
        candidates = generate_candidates(ego_state_from_obs(window.obs), lane, pcfg, T, mcfg.dt);
        ctx = make_feature_context(window.obs, mcfg, pcfg);
    }

    if (sampling) {
        Var goal = tape.slice(g.goals, 0, 2);  // SDV goal
        std::vector<Var> energies = candidate_energies_graph(tape, g.cost_weights_raw, goal, candidates, ctx);
        Var e_stack = tape.stack(energies);
        Var logits = tape.scale_const(e_stack, -1.0 / pcfg.temperature);
        int target = 0;
        double best_ade = 1e300;
        for (int k = 0; k < candidates.size(); ++k) {
            const double ade = traj_ade(candidates.trajectories[static_cast<std::size_t>(k)], ego_future);
            if (ade < best_ade) {
                best_ade = ade;
                target = k;
            }
        }
        Var cand_ce = tape.neg(tape.at(tape.log_softmax(logits), target));
        total = tape.add(total, tape.scale_const(cand_ce, lcfg.w_candidate_ce));
        if (breakdown) breakdown->candidate_ce = tape.value(cand_ce).item();

        if (lcfg.w_progress > 0.0 || lcfg.w_collision > 0.0) {
            Var probs = tape.softmax(logits);
            total = tape.add(total, reward_regularization(tape, probs, candidates, ctx, window.expert_progress, lcfg,
                                                          breakdown));
        }
    }

    if (g.has_game_params && lcfg.w_init > 0.0) {
        Var diff = tape.sub(g.init_trajectory, tape.constant(ego_future));
        Var term = tape.scale_const(tape.sum(tape.square(diff)), 1.0 / T);
        total = tape.add(total, tape.scale_const(term, lcfg.w_init));
        if (breakdown) breakdown->init = tape.value(term).item();
    }
    if (g.has_sdv && lcfg.w_sdv > 0.0) {
        Var diff = tape.sub(g.sdv_trajectory, tape.constant(ego_future));
        Var term = tape.scale_const(tape.sum(tape.square(diff)), 1.0 / T);
        total = tape.add(total, tape.scale_const(term, lcfg.w_sdv));
        if (breakdown) breakdown->sdv = tape.value(term).item();
    }

    if (unrolled) {
        Var goal = tape.slice(g.goals, 0, 2);
        Var a0 = tape.reshape(g.init_trajectory, {T, 2});
        Var plan = unrolled_descent(tape, g.cost_weights_raw, a0, goal, ctx, pcfg.unroll_steps,
                                    pcfg.unroll_step_size, pcfg.unroll_clamp);
        Var diff = tape.sub(tape.reshape(plan, {T * 2}), tape.constant(ego_future));
        Var term = tape.scale_const(tape.sum(tape.square(diff)), 1.0 / T);
        total = tape.add(total, tape.scale_const(term, lcfg.w_unrolled));
        if (breakdown) breakdown->unrolled = tape.value(term).item();
    }

    if (adapters && adapters->has(Attachment::FinalOutput) && g.has_game_params) {
        // Residual on the selected plan; the base plan is a constant, the
        // residual trains through the latent code.
        CostWeights w{tape.value(g.cost_weights_raw)};
        const Tensor w_eff = w.effective();
        Vec2 goal_pred{tape.value(g.goals)[0], tape.value(g.goals)[1]};
        EnergyTable table;
        table.temperature = pcfg.temperature;
        for (const Tensor& traj : candidates.trajectories) {
            auto phi = cost_features(traj, ctx, goal_pred);
            double e = 0.0;
            for (int i = 0; i < kNumCostFeatures; ++i) e += w_eff[i] * phi[static_cast<std::size_t>(i)];
            table.energies.push_back(e);
        }
        auto [idx, plan] = select_argmin(table, candidates);
        (void)idx;
        Var base = tape.constant(Tensor({T * 2}, plan.vec()));
        ForwardOptions res_opts = opts;
        res_opts.seed = mix_seed(opts.seed, 0xF1A1ull);
        Var adjusted = apply_residual(tape, params, *adapters->find(Attachment::FinalOutput), g.latent, base, res_opts);
        Var diff = tape.sub(adjusted, tape.constant(ego_future));
        Var term = tape.scale_const(tape.sum(tape.square(diff)), 1.0 / T);
        total = tape.add(total, tape.scale_const(term, lcfg.w_final_plan));
        if (breakdown) breakdown->final_plan = tape.value(term).item();
    }

    if (breakdown) breakdown->total = tape.value(total).item();
    return total;
}

// ---------------------------------------------------------------------------
// plan extraction

Tensor plan_trajectory(const ParameterStore& params, const AdapterSet* adapters, const ModelConfig& mcfg,
                       const PlannerConfig& pcfg, const ObservationSeq& obs) {
    Tape tape;
    ForwardOptions opts;  // evaluation mode
    PolicyGraph g = policy_forward(tape, params, mcfg, obs, opts, adapters);
    const int T = mcfg.horizon_steps;

    Tensor plan;
    switch (mcfg.plan_mode) {
        case PlanMode::StructuredSampling: {
            if (!g.has_game_params) throw ConfigError("sampling plan mode requires game-parameter heads");
            LanePath lane = lane_from_obs(obs);
            CandidateSet candidates = generate_candidates(ego_state_from_obs(obs), lane, pcfg, T, mcfg.dt);
            FeatureContext ctx = make_feature_context(obs, mcfg, pcfg);
            CostWeights w{tape.value(g.cost_weights_raw)};
            const Tensor w_eff = w.effective();
            Vec2 goal{tape.value(g.goals)[0], tape.value(g.goals)[1]};
            EnergyTable table;
            table.temperature = pcfg.temperature;
            for (const Tensor& traj : candidates.trajectories) {
                auto phi = cost_features(traj, ctx, goal);
                double e = 0.0;
                for (int i = 0; i < kNumCostFeatures; ++i) e += w_eff[i] * phi[static_cast<std::size_t>(i)];
                table.energies.push_back(e);
            }
            plan = select_argmin(table, candidates).second;
            break;
        }
        case PlanMode::StructuredUnrolled: {
            if (!g.has_game_params) throw ConfigError("unrolled plan mode requires game-parameter heads");
            FeatureContext ctx = make_feature_context(obs, mcfg, pcfg);
            Var goal = tape.slice(g.goals, 0, 2);
            Var a0 = tape.reshape(g.init_trajectory, {T, 2});
            Var out = unrolled_descent(tape, g.cost_weights_raw, a0, goal, ctx, pcfg.unroll_steps,
                                       pcfg.unroll_step_size, pcfg.unroll_clamp);
            plan = tape.value(out);
            break;
        }
        case PlanMode::Unstructured: {
            if (!g.has_sdv) throw ConfigError("unstructured plan mode requires the sdv head");
            plan = Tensor({T, 2}, tape.value(g.sdv_trajectory).vec());
            break;
        }
    }

    if (adapters) {
        if (const AdapterSpec* spec = adapters->find(Attachment::FinalOutput)) {
            const Tensor res = final_output_residual_value(params, *spec, tape.value(g.latent));
            Tensor adjusted({T, 2}, plan.vec());
            for (int i = 0; i < adjusted.size(); ++i) adjusted[i] += res[i];
            plan = std::move(adjusted);
        }
    }
    if (plan.ndim() == 1) plan = Tensor({T, 2}, plan.vec());
    return plan;
}

// ---------------------------------------------------------------------------
// training loop

TrainResult train(const TrainRun& run, ParameterStore& params, const AdapterSet& adapters, const ModelConfig& mcfg,
                  const PlannerConfig& pcfg, const LossConfig& lcfg, const Dataset* id_train, const Dataset* ood_train,
                  const Dataset* val, const TrainPaths& paths) {
    TrainableMask mask = trainable_mask(params, adapters, run.strategy);
    Adam adam(run.adam);

    std::optional<DatasetSampler> single;
    std::optional<MixtureSampler> mixture;
    switch (run.mode) {
        case DataMode::ID:
            single.emplace(id_train, run.seed);
            break;
        case DataMode::OOD:
            single.emplace(ood_train, run.seed);
            break;
        case DataMode::Mix:
            mixture.emplace(id_train, ood_train, run.alpha, run.seed);
            break;
    }
    auto draw = [&]() -> const Window& { return single ? single->draw() : mixture->draw(); };

    std::ofstream log;
    if (!paths.log_csv.empty()) {
        log.open(paths.log_csv, std::ios::trunc);
        if (!log) throw DataError("cannot write training log: " + paths.log_csv);
        log << "# " << paths.meta << "\n";
        log << "step,loss,regression,mode_ce,candidate_ce,init,sdv,unrolled,final_plan,progress_reg,collision_reg,"
               "lr,wall_ms\n";
    }

    auto validate = [&]() {
        if (!val || val->windows.empty()) return -1.0;
        double acc = 0.0;
        for (const Window& w : val->windows) {
            Tensor plan = plan_trajectory(params, &adapters, mcfg, pcfg, w.obs);
            Tensor ego_future({mcfg.horizon_steps * 2});
            for (int i = 0; i < ego_future.size(); ++i) ego_future[i] = w.future.at2(0, i);
            acc += traj_ade(plan, ego_future);
        }
        return acc / static_cast<double>(val->windows.size());
    };

    TrainResult result;
    double best_val = validate();
    result.best_val = best_val;
    result.best_step = 0;
    result.best_params = params;

    const auto t0 = std::chrono::steady_clock::now();
    for (int step = 1; step <= run.steps; ++step) {
        Tape tape;
        std::vector<Var> losses;
        LossBreakdown bd_acc;
        for (int b = 0; b < run.batch_size; ++b) {
            const Window& w = draw();
            const std::uint64_t sample_seed =
                mix_seed(run.seed, static_cast<std::uint64_t>(step) * 1000003ull + static_cast<std::uint64_t>(b));
            ObservationSeq obs = history_dropout(w.obs, lcfg.history_dropout, sample_seed, true);
            Window dropped = w;
            dropped.obs = std::move(obs);
            ForwardOptions opts;
            opts.training = true;
            opts.seed = sample_seed;
            PolicyGraph g = policy_forward(tape, params, mcfg, dropped.obs, opts, adapters.empty() ? nullptr : &adapters);
            LossBreakdown bd;
            losses.push_back(imitation_loss(tape, params, g, dropped, mcfg, pcfg, lcfg,
                                            adapters.empty() ? nullptr : &adapters, opts, &bd));
            bd_acc.total += bd.total;
            bd_acc.regression += bd.regression;
            bd_acc.mode_ce += bd.mode_ce;
            bd_acc.candidate_ce += bd.candidate_ce;
            bd_acc.init += bd.init;
            bd_acc.sdv += bd.sdv;
            bd_acc.unrolled += bd.unrolled;
            bd_acc.final_plan += bd.final_plan;
            bd_acc.progress_reg += bd.progress_reg;
            bd_acc.collision_reg += bd.collision_reg;
        }
        Var total = losses[0];
        for (std::size_t i = 1; i < losses.size(); ++i) total = tape.add(total, losses[i]);
        total = tape.scale_const(total, 1.0 / static_cast<double>(run.batch_size));
        const double loss_value = tape.value(total).item();
        if (std::isnan(loss_value)) {
            throw NumericError("train: NaN loss at step " + std::to_string(step) + ", seed " +
                               std::to_string(run.seed) + ", strategy " + run.strategy.label());
        }
        if (step == 1) result.first_loss = loss_value;
        result.last_loss = loss_value;

        auto grads = tape.backward(total);
        adam.step(params, grads, &mask);

        if (log && (step % run.log_every == 0 || step == run.steps)) {
            const double wall =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            const double inv_b = 1.0 / static_cast<double>(run.batch_size);
            log << step << "," << loss_value << "," << bd_acc.regression * inv_b << "," << bd_acc.mode_ce * inv_b
                << "," << bd_acc.candidate_ce * inv_b << "," << bd_acc.init * inv_b << "," << bd_acc.sdv * inv_b << ","
                << bd_acc.unrolled * inv_b << "," << bd_acc.final_plan * inv_b << "," << bd_acc.progress_reg * inv_b
                << "," << bd_acc.collision_reg * inv_b << "," << run.adam.lr << "," << wall << "\n";
        }

        if ((run.val_every > 0 && step % run.val_every == 0) || step == run.steps) {
            const double v = validate();
            if (v >= 0.0 && (result.best_step < 0 || v < result.best_val)) {
                result.best_val = v;
                result.best_step = step;
                result.best_params = params;
            }
        }
    }
    if (result.best_step < 0) {
        result.best_params = params;
        result.best_step = run.steps;
    }

    if (!paths.final_ckpt.empty()) save_checkpoint(params, paths.final_ckpt, paths.meta);
    if (!paths.best_ckpt.empty()) save_checkpoint(result.best_params, paths.best_ckpt, paths.meta);
    return result;
}

}  // namespace lord
