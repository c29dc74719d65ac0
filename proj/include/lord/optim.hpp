#pragma once

#include <map>
#include <string>

#include "lord/checkpoint.hpp"
#include "lord/tensor.hpp"

namespace lord {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 5.0;  // global-norm gradient clipping; <= 0 disables
};

// Adam with optional global-norm clipping. Moments are kept per parameter
// name; parameters outside the mask are never touched and never gain state.
class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    long step_count() const { return t_; }

    void step(ParameterStore& params, const std::map<std::string, Tensor>& grads,
              const TrainableMask* mask = nullptr);

private:
    AdamConfig cfg_;
    long t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

}  // namespace lord
