#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lord/adapters.hpp"
#include "lord/domains.hpp"
#include "lord/model.hpp"
#include "lord/optim.hpp"
#include "lord/planner.hpp"

namespace lord {

enum class DataMode { ID, OOD, Mix };

DataMode data_mode_from_string(const std::string& s, double* alpha_out);
std::string data_mode_label(DataMode mode, double alpha);

struct LossConfig {
    double w_regression = 1.0;    // winner-takes-all joint regression
    double w_mode_ce = 1.0;       // mode classification
    double w_candidate_ce = 1.0;  // structured-sampling classification
    double w_init = 0.5;          // initial-trajectory regression
    double w_sdv = 0.5;           // unstructured head regression
    double w_unrolled = 1.0;      // unrolled-plan regression (unrolled mode)
    double w_final_plan = 1.0;    // plan regression when a FinalOutput adapter exists
    double w_progress = 0.0;      // closed-loop regularization: progress reward
    double w_collision = 0.0;     // closed-loop regularization: collision reward
    double history_dropout = 0.0;
};

struct TrainRun {
    StrategySpec strategy{};
    DataMode mode = DataMode::ID;
    double alpha = 0.25;  // Mix only
    int steps = 1500;
    int batch_size = 8;
    AdamConfig adam{};
    int val_every = 100;
    int log_every = 25;
    std::uint64_t seed = 0;
};

// Samples ID with probability alpha/(1+alpha), OOD otherwise; within each
// dataset, draws follow a seeded epoch permutation.
class MixtureSampler {
public:
    MixtureSampler(const Dataset* id_data, const Dataset* ood_data, double alpha, std::uint64_t seed);

    const Window& draw();
    bool last_was_id() const { return last_was_id_; }
    double id_fraction() const { return alpha_ / (1.0 + alpha_); }

private:
    struct Stream {
        const Dataset* data = nullptr;
        std::vector<int> perm;
        std::size_t pos = 0;
        Rng rng;

        explicit Stream(std::uint64_t seed) : rng(seed) {}
        const Window& next();
        void reshuffle();
    };

    double alpha_;
    Rng coin_;
    Stream id_, ood_;
    bool last_was_id_ = false;
};

// Single-dataset epoch-permutation sampler (ID-only / OOD-only runs).
class DatasetSampler {
public:
    DatasetSampler(const Dataset* data, std::uint64_t seed);
    const Window& draw();

private:
    const Dataset* data_;
    std::vector<int> perm_;
    std::size_t pos_ = 0;
    Rng rng_;
    void reshuffle();
};

// Training-time masking against causal shortcuts: whole non-ego histories
// dropped with probability p, past ego steps zeroed with the same
// probability. Identity in evaluation mode.
ObservationSeq history_dropout(const ObservationSeq& obs, double p, std::uint64_t seed, bool training);

struct LossBreakdown {
    double total = 0.0;
    double regression = 0.0;
    double mode_ce = 0.0;
    double candidate_ce = 0.0;
    double init = 0.0;
    double sdv = 0.0;
    double unrolled = 0.0;
    double final_plan = 0.0;
    double progress_reg = 0.0;
    double collision_reg = 0.0;
};

// Builds the per-sample loss graph. Returns the scalar Var and numeric
// component values for logging.
Var imitation_loss(Tape& tape, const ParameterStore& params, const PolicyGraph& g, const Window& window,
                   const ModelConfig& mcfg, const PlannerConfig& pcfg, const LossConfig& lcfg,
                   const AdapterSet* adapters, const ForwardOptions& opts, LossBreakdown* breakdown);

// Reward regularization under the candidate Gibbs distribution: expected
// progress shortfall against the expert plus expected proximity feature.
Var reward_regularization(Tape& tape, Var probs, const CandidateSet& candidates, const FeatureContext& ctx,
                          double expert_progress, const LossConfig& lcfg, LossBreakdown* breakdown);

struct TrainPaths {
    std::string log_csv;     // empty -> no log file
    std::string best_ckpt;   // empty -> no best checkpoint file
    std::string final_ckpt;  // empty -> no final checkpoint file
    std::string meta;        // embedded in checkpoint headers
};

struct TrainResult {
    double best_val = 0.0;
    int best_step = -1;
    double first_loss = 0.0;
    double last_loss = 0.0;
    ParameterStore best_params;  // deep copy at the best validation step
};

// Deterministic training loop. Only parameters inside the strategy's
// trainable mask change; everything else is bit-identical afterwards.
// Validation metric: plan ADE on `val` (falls back to loss when val empty).
TrainResult train(const TrainRun& run, ParameterStore& params, const AdapterSet& adapters, const ModelConfig& mcfg,
                  const PlannerConfig& pcfg, const LossConfig& lcfg, const Dataset* id_train, const Dataset* ood_train,
                  const Dataset* val, const TrainPaths& paths);

// Plan produced by the configured policy head for one observation (numeric).
Tensor plan_trajectory(const ParameterStore& params, const AdapterSet* adapters, const ModelConfig& mcfg,
                       const PlannerConfig& pcfg, const ObservationSeq& obs);

}  // namespace lord
