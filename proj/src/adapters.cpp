#include "lord/adapters.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

#include "lord/errors.hpp"
#include "lord/rng.hpp"

namespace lord {

const char* attachment_name(Attachment a) {
    switch (a) {
        case Attachment::CostWeights: return "cost_weights";
        case Attachment::Goals: return "goals";
        case Attachment::InitTrajectory: return "init_trajectory";
        case Attachment::PredictedAgentTraj: return "predicted_agent_traj";
        case Attachment::SdvTrajectory: return "sdv_trajectory";
        case Attachment::EncoderFusion: return "encoder_fusion";
        case Attachment::EncoderAgent: return "encoder_agent";
        case Attachment::FinalOutput: return "final_output";
    }
    return "?";
}

Attachment attachment_from_string(const std::string& s) {
    for (Attachment a : all_attachments()) {
        if (s == attachment_name(a)) return a;
    }
    throw ConfigError("unknown attachment '" + s + "'");
}

std::vector<Attachment> all_attachments() {
    return {Attachment::CostWeights,   Attachment::Goals,         Attachment::InitTrajectory,
            Attachment::PredictedAgentTraj, Attachment::SdvTrajectory, Attachment::EncoderFusion,
            Attachment::EncoderAgent,  Attachment::FinalOutput};
}

std::pair<int, int> attachment_dims(Attachment a, const ModelConfig& cfg) {
    switch (a) {
        case Attachment::CostWeights: return {cfg.num_cost_weights, cfg.latent_dim};
        case Attachment::Goals: return {cfg.goals_dim(), cfg.latent_dim};
        case Attachment::InitTrajectory: return {cfg.traj_dim(), cfg.latent_dim};
        case Attachment::PredictedAgentTraj: return {cfg.joint_dim(), cfg.latent_dim};
        case Attachment::SdvTrajectory: return {cfg.traj_dim(), cfg.latent_dim};
        case Attachment::FinalOutput: return {cfg.traj_dim(), cfg.latent_dim};
        case Attachment::EncoderFusion: return {cfg.fusion_hidden, cfg.fusion_dim()};
        case Attachment::EncoderAgent: return {cfg.enc_hidden, cfg.agent_dim()};
    }
    throw ContractError("attachment_dims: bad attachment");
}

bool AdapterSet::has(Attachment a) const { return find(a) != nullptr; }

const AdapterSpec* AdapterSet::find(Attachment a) const {
    for (const auto& s : specs) {
        if (s.attachment == a) return &s;
    }
    return nullptr;
}

std::string adapter_param_name(Attachment a, const char* which) {
    return std::string("adapter/") + attachment_name(a) + "/" + which;
}

void init_adapter(ParameterStore& params, const AdapterSpec& spec, const ModelConfig& cfg, std::uint64_t seed) {
    const auto [n_b, n_a] = attachment_dims(spec.attachment, cfg);
    if (spec.full_matrix) {
        // Dense residual matrix, zero so the residual starts with no influence.
        params.add(adapter_param_name(spec.attachment, "M"), Tensor({n_b, n_a}));
        return;
    }
    if (spec.rank < 1 || spec.rank >= std::min(n_a, n_b)) {
        throw ConfigError("adapter rank " + std::to_string(spec.rank) + " violates 1 <= r < min(" +
                          std::to_string(n_a) + "," + std::to_string(n_b) + ") at attachment " +
                          attachment_name(spec.attachment));
    }
    Rng rng(mix_seed(seed, 0xADA7ull + static_cast<std::uint64_t>(spec.attachment)));
    Tensor a({spec.rank, n_a});
    for (int i = 0; i < a.size(); ++i) a[i] = rng.normal(0.0, 0.02);
    params.add(adapter_param_name(spec.attachment, "B"), Tensor({n_b, spec.rank}));
    params.add(adapter_param_name(spec.attachment, "A"), std::move(a));
}

void init_adapter_set(ParameterStore& params, const AdapterSet& set, const ModelConfig& cfg, std::uint64_t seed) {
    for (const auto& spec : set.specs) init_adapter(params, spec, cfg, seed);
}

long adapter_param_count(const AdapterSpec& spec, const ModelConfig& cfg) {
    const auto [n_b, n_a] = attachment_dims(spec.attachment, cfg);
    if (spec.full_matrix) return static_cast<long>(n_b) * n_a;
    return static_cast<long>(spec.rank) * (n_a + n_b);
}

long adapter_set_param_count(const AdapterSet& set, const ModelConfig& cfg) {
    long n = 0;
    for (const auto& spec : set.specs) n += adapter_param_count(spec, cfg);
    return n;
}

Var apply_residual(Tape& tape, const ParameterStore& params, const AdapterSpec& spec, Var input, Var base,
                   const ForwardOptions& opts) {
    Var x = tape.dropout(input, spec.p_drop, mix_seed(opts.seed, 0xD0ull), opts.training);
    Var res;
    if (spec.full_matrix) {
        Var m = tape.named_leaf(adapter_param_name(spec.attachment, "M"),
                                params.get(adapter_param_name(spec.attachment, "M")));
        res = tape.matvec(m, x);
    } else {
        Var a = tape.named_leaf(adapter_param_name(spec.attachment, "A"),
                                params.get(adapter_param_name(spec.attachment, "A")));
        Var b = tape.named_leaf(adapter_param_name(spec.attachment, "B"),
                                params.get(adapter_param_name(spec.attachment, "B")));
        res = tape.matvec(b, tape.matvec(a, x));
    }
    return tape.add(base, res);
}

const char* strategy_name(FineTuneStrategy s) {
    switch (s) {
        case FineTuneStrategy::FullFT: return "full";
        case FineTuneStrategy::PartialFT: return "partial";
        case FineTuneStrategy::MosaF: return "mosa_f";
        case FineTuneStrategy::MosaAF: return "mosa_af";
        case FineTuneStrategy::ParallelAdapter: return "pa";
        case FineTuneStrategy::FtLord: return "ftlord";
        case FineTuneStrategy::FtLordVariant: return "ftlord_variant";
    }
    return "?";
}

std::string StrategySpec::label() const {
    if (kind != FineTuneStrategy::FtLordVariant) return strategy_name(kind);
    std::string s = "ftlord_";
    for (std::size_t i = 0; i < variant_attachments.size(); ++i) {
        if (i) s += "+";
        s += attachment_name(variant_attachments[i]);
    }
    if (variant_full_matrix) s += "_dense";
    return s;
}

StrategySpec StrategySpec::parse(const std::string& text) {
    StrategySpec spec;
    if (text == "full") {
        spec.kind = FineTuneStrategy::FullFT;
    } else if (text == "partial") {
        spec.kind = FineTuneStrategy::PartialFT;
    } else if (text == "mosa_f") {
        spec.kind = FineTuneStrategy::MosaF;
    } else if (text == "mosa_af") {
        spec.kind = FineTuneStrategy::MosaAF;
    } else if (text == "pa") {
        spec.kind = FineTuneStrategy::ParallelAdapter;
    } else if (text == "ftlord") {
        spec.kind = FineTuneStrategy::FtLord;
    } else if (text.rfind("ftlord:", 0) == 0) {
        spec.kind = FineTuneStrategy::FtLordVariant;
        std::string rest = text.substr(7);
        const std::string full_suffix = ":full";
        if (rest.size() > full_suffix.size() &&
            rest.compare(rest.size() - full_suffix.size(), full_suffix.size(), full_suffix) == 0) {
            spec.variant_full_matrix = true;
            rest = rest.substr(0, rest.size() - full_suffix.size());
        }
        std::stringstream ss(rest);
        std::string tok;
        while (std::getline(ss, tok, '+')) {
            if (!tok.empty()) spec.variant_attachments.push_back(attachment_from_string(tok));
        }
        if (spec.variant_attachments.empty()) throw ConfigError("ftlord variant needs at least one attachment");
    } else {
        throw ConfigError("unknown fine-tuning strategy '" + text + "'");
    }
    return spec;
}

namespace {

std::vector<Attachment> strategy_attachments(const StrategySpec& spec) {
    switch (spec.kind) {
        case FineTuneStrategy::FullFT:
        case FineTuneStrategy::PartialFT: return {};
        case FineTuneStrategy::MosaF: return {Attachment::EncoderFusion};
        case FineTuneStrategy::MosaAF: return {Attachment::EncoderAgent, Attachment::EncoderFusion};
        case FineTuneStrategy::ParallelAdapter: return {Attachment::EncoderAgent, Attachment::EncoderFusion};
        case FineTuneStrategy::FtLord:
            return {Attachment::CostWeights, Attachment::Goals, Attachment::InitTrajectory};
        case FineTuneStrategy::FtLordVariant: return spec.variant_attachments;
    }
    return {};
}

bool is_encoder_attachment(Attachment a) {
    return a == Attachment::EncoderFusion || a == Attachment::EncoderAgent;
}

}  // namespace

AdapterSet strategy_adapters(const StrategySpec& spec, int rank, double p_drop) {
    AdapterSet set;
    for (Attachment a : strategy_attachments(spec)) {
        AdapterSpec s;
        s.attachment = a;
        s.rank = rank;
        s.p_drop = p_drop;
        s.full_matrix = spec.kind == FineTuneStrategy::FtLordVariant && spec.variant_full_matrix;
        set.specs.push_back(s);
    }
    return set;
}

TrainableMask trainable_mask(const ParameterStore& params, const AdapterSet& adapters, const StrategySpec& spec) {
    // Validate the strategy/adapter pairing first.
    const std::vector<Attachment> want = strategy_attachments(spec);
    if (adapters.specs.size() != want.size()) {
        throw ConfigError(std::string("strategy ") + spec.label() + " expects " + std::to_string(want.size()) +
                          " adapters, got " + std::to_string(adapters.specs.size()));
    }
    for (Attachment a : want) {
        if (!adapters.has(a)) {
            throw ConfigError(std::string("strategy ") + spec.label() + " requires adapter at " + attachment_name(a));
        }
    }
    if (spec.kind == FineTuneStrategy::MosaF || spec.kind == FineTuneStrategy::MosaAF ||
        spec.kind == FineTuneStrategy::ParallelAdapter) {
        for (const auto& s : adapters.specs) {
            if (!is_encoder_attachment(s.attachment)) {
                throw ConfigError(std::string("strategy ") + spec.label() + " cannot use decoder attachment " +
                                  attachment_name(s.attachment));
            }
        }
    }

    const bool base_trainable = spec.kind == FineTuneStrategy::FullFT ||
                                spec.kind == FineTuneStrategy::ParallelAdapter ||
                                spec.kind == FineTuneStrategy::FtLord ||
                                spec.kind == FineTuneStrategy::FtLordVariant;
    const bool adapters_trainable = !adapters.empty();

    TrainableMask mask;
    for (const auto& name : params.names()) {
        bool on = false;
        if (name.rfind("adapter/", 0) == 0) {
            on = adapters_trainable;
        } else if (spec.kind == FineTuneStrategy::PartialFT) {
            on = name.rfind("dec/", 0) == 0 && name.find("/l2/") != std::string::npos;
        } else {
            on = base_trainable;
        }
        mask.flags[name] = on;
    }
    mask.validate_partition(params);
    return mask;
}

OverheadReport overhead(const ParameterStore& params, const AdapterSet& set, const ModelConfig& cfg,
                        int iterations) {
    iterations = std::max(iterations, 1);
    OverheadReport rep;
    rep.base_params = params.total_size() - params.total_size_with_prefix("adapter/");
    rep.adapter_params = params.total_size_with_prefix("adapter/");
    rep.param_fraction =
        rep.base_params > 0 ? static_cast<double>(rep.adapter_params) / static_cast<double>(rep.base_params) : 0.0;

    // Timed inference on a fixed synthetic observation.
    ObservationSeq obs;
    obs.ego_hist = Tensor({cfg.history_steps, 4});
    obs.agent_hist = Tensor({cfg.max_agents, cfg.agent_dim()});
    obs.lane = Tensor({cfg.lane_points, 2});
    Rng rng(0xBEEFull);
    for (int i = 0; i < obs.ego_hist.size(); ++i) obs.ego_hist[i] = rng.uniform(-1.0, 1.0);
    for (int a = 0; a < cfg.max_agents; ++a) {
        for (int i = 0; i < cfg.agent_dim(); ++i) obs.agent_hist.at2(a, i) = rng.uniform(-1.0, 1.0);
        obs.agent_hist.at2(a, (cfg.history_steps - 1) * 5 + 4) = 1.0;
    }
    for (int i = 0; i < obs.lane.size(); ++i) obs.lane[i] = rng.uniform(0.0, 40.0);
    obs.target_speed = 10.0;

    auto time_forward = [&](const AdapterSet* adapters) {
        const auto start = std::chrono::steady_clock::now();
        for (int i = 0; i < iterations; ++i) {
            Tape tape;
            ForwardOptions opts;
            opts.training = false;
            opts.seed = static_cast<std::uint64_t>(i);
            policy_forward(tape, params, cfg, obs, opts, adapters);
        }
        const auto end = std::chrono::steady_clock::now();
        return std::chrono::duration<double, std::milli>(end - start).count() / iterations;
    };

    rep.base_ms_per_call = time_forward(nullptr);
    rep.adapted_ms_per_call = set.empty() ? rep.base_ms_per_call : time_forward(&set);
    rep.time_fraction =
        rep.base_ms_per_call > 0.0 ? (rep.adapted_ms_per_call - rep.base_ms_per_call) / rep.base_ms_per_call : 0.0;
    return rep;
}

}  // namespace lord
