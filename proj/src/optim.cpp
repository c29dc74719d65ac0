#include "lord/optim.hpp"

#include <cmath>

#include "lord/errors.hpp"

namespace lord {

void Adam::step(ParameterStore& params, const std::map<std::string, Tensor>& grads, const TrainableMask* mask) {
    // Collect the gradients that will actually be applied.
    std::vector<std::pair<std::string, const Tensor*>> applied;
    for (const auto& [name, g] : grads) {
        if (mask && !mask->trainable(name)) continue;
        if (!params.has(name)) throw ContractError("Adam: gradient for unknown parameter '" + name + "'");
        if (!params.get(name).same_shape(g)) throw ContractError("Adam: gradient shape mismatch for '" + name + "'");
        for (int i = 0; i < g.size(); ++i) {
            if (std::isnan(g[i])) throw NumericError("Adam: NaN gradient in parameter '" + name + "'");
        }
        applied.emplace_back(name, &g);
    }
    if (applied.empty()) return;

    double scale = 1.0;
    if (cfg_.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& [name, g] : applied) {
            for (int i = 0; i < g->size(); ++i) sq += (*g)[i] * (*g)[i];
        }
        const double norm = std::sqrt(sq);
        if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& [name, gp] : applied) {
        Tensor& p = params.get(name);
        Tensor& m = m_.try_emplace(name, Tensor(p.shape())).first->second;
        Tensor& v = v_.try_emplace(name, Tensor(p.shape())).first->second;
        for (int i = 0; i < p.size(); ++i) {
            const double g = (*gp)[i] * scale;
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace lord
