#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lord/checkpoint.hpp"
#include "lord/model.hpp"
#include "lord/tape.hpp"

namespace lord {

// Where a residual decoder attaches. Decoder attachments read the latent code;
// encoder attachments read the wrapped layer's input.
enum class Attachment {
    CostWeights,
    Goals,
    InitTrajectory,
    PredictedAgentTraj,
    SdvTrajectory,
    EncoderFusion,
    EncoderAgent,
    FinalOutput,
};

const char* attachment_name(Attachment a);
Attachment attachment_from_string(const std::string& s);
std::vector<Attachment> all_attachments();

// (n_B, n_A): flattened output width and adapter input width.
std::pair<int, int> attachment_dims(Attachment a, const ModelConfig& cfg);

struct AdapterSpec {
    Attachment attachment = Attachment::CostWeights;
    int rank = 4;
    double p_drop = 0.1;
    bool full_matrix = false;  // "no low-rank" ablation: one dense n_B x n_A matrix
};

struct AdapterSet {
    std::vector<AdapterSpec> specs;

    bool has(Attachment a) const;
    const AdapterSpec* find(Attachment a) const;
    bool empty() const { return specs.empty(); }
};

std::string adapter_param_name(Attachment a, const char* which);

// Adds the adapter's parameters to the store. B starts all-zero so that a
// fresh adapter cannot influence any output; A is N(0, 0.02^2) so B receives
// gradient from the first step on. Full-matrix variants use a single all-zero
// matrix. Rank must satisfy 1 <= r < min(n_A, n_B).
void init_adapter(ParameterStore& params, const AdapterSpec& spec, const ModelConfig& cfg, std::uint64_t seed);
void init_adapter_set(ParameterStore& params, const AdapterSet& set, const ModelConfig& cfg, std::uint64_t seed);

long adapter_param_count(const AdapterSpec& spec, const ModelConfig& cfg);
long adapter_set_param_count(const AdapterSet& set, const ModelConfig& cfg);

// out = base + B * A * dropout(input). Differentiable in A, B, input and base.
Var apply_residual(Tape& tape, const ParameterStore& params, const AdapterSpec& spec, Var input, Var base,
                   const ForwardOptions& opts);

// ---------------------------------------------------------------------------
// fine-tuning strategies

enum class FineTuneStrategy { FullFT, PartialFT, MosaF, MosaAF, ParallelAdapter, FtLord, FtLordVariant };

const char* strategy_name(FineTuneStrategy s);

struct StrategySpec {
    FineTuneStrategy kind = FineTuneStrategy::FullFT;
    // FtLordVariant only: explicit attachment list and the full-matrix toggle.
    std::vector<Attachment> variant_attachments;
    bool variant_full_matrix = false;

    std::string label() const;
    // Accepts "full", "partial", "mosa_f", "mosa_af", "pa", "ftlord" and
    // "ftlord:<att>[+<att>...]" with optional ":full" suffix.
    static StrategySpec parse(const std::string& text);
};

// Adapters a strategy requires (possibly none).
AdapterSet strategy_adapters(const StrategySpec& spec, int rank, double p_drop);

// Which parameters the strategy trains. Validates the strategy/adapter
// pairing and covers every parameter in the store exactly once.
TrainableMask trainable_mask(const ParameterStore& params, const AdapterSet& adapters, const StrategySpec& spec);

// ---------------------------------------------------------------------------
// overhead accounting

struct OverheadReport {
    long base_params = 0;
    long adapter_params = 0;
    double param_fraction = 0.0;
    double time_fraction = 0.0;
    double base_ms_per_call = 0.0;
    double adapted_ms_per_call = 0.0;
};

// Parameter and wall-time overhead of the adapter set relative to the base
// model, timed over `iterations` seeded inferences (>= 1).
OverheadReport overhead(const ParameterStore& params, const AdapterSet& set, const ModelConfig& cfg,
                        int iterations = 1000);

}  // namespace lord
