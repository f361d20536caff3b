#pragma once

// Training hyperparameters, warmup+cosine schedule, global-norm gradient
// clipping, and AdamW with decoupled weight decay.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "cog/errors.hpp"
#include "cog/model.hpp"

namespace cog {

struct TrainConfig {
    std::int64_t batch_tokens = 8192;  ///< target tokens per optimizer step
    double lr_peak = 2e-4;
    int warmup_steps = 200;
    int total_steps = 3000;
    double final_lr_fraction = 0.04;  ///< cosine decays to this fraction of peak
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.1;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;  ///< batch-order shuffling seed
    int log_every = 10;
    int ckpt_every = 500;

    void validate() const {
        if (batch_tokens < 1) throw config_error("train config: batch_tokens must be >= 1");
        if (!(lr_peak > 0)) throw config_error("train config: lr_peak must be > 0");
        if (warmup_steps < 1) throw config_error("train config: warmup_steps must be >= 1");
        if (total_steps <= warmup_steps)
            throw config_error("train config: total_steps must exceed warmup_steps");
        if (!(final_lr_fraction > 0) || final_lr_fraction > 1)
            throw config_error("train config: final_lr_fraction must be in (0, 1]");
        if (!(beta1 >= 0) || beta1 >= 1 || !(beta2 >= 0) || beta2 >= 1)
            throw config_error("train config: betas must be in [0, 1)");
        if (weight_decay < 0) throw config_error("train config: weight_decay must be >= 0");
        if (!(clip_norm > 0)) throw config_error("train config: clip_norm must be > 0");
        if (log_every < 1) throw config_error("train config: log_every must be >= 1");
        if (ckpt_every < 1) throw config_error("train config: ckpt_every must be >= 1");
    }
};

/// Learning rate for a step index in [0, total_steps]: linear warmup to the
/// peak over warmup_steps, then cosine decay reaching final_lr_fraction *
/// lr_peak at step == total_steps. Both branches give lr_peak at the
/// boundary.
inline double lr_at(int step, const TrainConfig& cfg) {
    if (step < 0 || step > cfg.total_steps)
        throw config_error("lr_at: step " + std::to_string(step) + " outside [0, " +
                           std::to_string(cfg.total_steps) + "]");
    if (step < cfg.warmup_steps)
        return cfg.lr_peak * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    const double lr_final = cfg.final_lr_fraction * cfg.lr_peak;
    return lr_final + (cfg.lr_peak - lr_final) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Scales all gradients in place so their global L2 norm is at most
/// max_norm. Returns the pre-clip norm. Non-finite gradients are an error.
template <typename Scalar>
double clip_grad_norm(Cogformer<Scalar>& grads, double max_norm) {
    double sq_sum = 0.0;
    for (auto& ref : param_refs(grads)) {
        if (!ref.tensor->allFinite())
            throw numeric_error("non-finite gradient in " + ref.name);
        sq_sum += ref.tensor->template cast<double>().squaredNorm();
    }
    const double norm = std::sqrt(sq_sum);
    if (norm > max_norm) {
        const Scalar scale = static_cast<Scalar>(max_norm / norm);
        for (auto& ref : param_refs(grads)) *ref.tensor *= scale;
    }
    return norm;
}

/// First/second moment accumulators, one pair per parameter tensor in
/// param_refs order, plus the shared update counter.
template <typename Scalar>
struct OptimState {
    std::vector<Matrix<Scalar>> m;
    std::vector<Matrix<Scalar>> v;
    std::int64_t step = 0;

    static OptimState zero_like(Cogformer<Scalar>& model) {
        OptimState st;
        for (auto& ref : param_refs(model)) {
            st.m.push_back(Matrix<Scalar>::Zero(ref.tensor->rows(), ref.tensor->cols()));
            st.v.push_back(Matrix<Scalar>::Zero(ref.tensor->rows(), ref.tensor->cols()));
        }
        return st;
    }
};

/// One AdamW update over every parameter: bias-corrected moments with
/// eps 1e-8 inside the denominator and weight decay applied directly to the
/// parameter (decoupled from the adaptive term).
template <typename Scalar>
void adamw_step(Cogformer<Scalar>& model, Cogformer<Scalar>& grads, OptimState<Scalar>& optim,
                double lr, const TrainConfig& cfg) {
    auto params = param_refs(model);
    auto gradrefs = param_refs(grads);
    if (params.size() != gradrefs.size() || params.size() != optim.m.size())
        throw std::invalid_argument("adamw_step: model/grads/state are misaligned");
    optim.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(optim.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(optim.step));
    const Scalar b1 = static_cast<Scalar>(cfg.beta1);
    const Scalar b2 = static_cast<Scalar>(cfg.beta2);
    const Scalar eps = static_cast<Scalar>(1e-8);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != gradrefs[i].name)
            throw std::invalid_argument("adamw_step: gradient order mismatch at " + params[i].name);
        auto& p = *params[i].tensor;
        const auto& g = *gradrefs[i].tensor;
        auto& m = optim.m[i];
        auto& v = optim.v[i];
        m = b1 * m + (Scalar(1) - b1) * g;
        v = (b2 * v.array() + (Scalar(1) - b2) * g.array().square()).matrix();
        const auto m_hat = m.array() / static_cast<Scalar>(bc1);
        const auto v_hat = v.array() / static_cast<Scalar>(bc2);
        p.array() -= static_cast<Scalar>(lr) *
                     (m_hat / (v_hat.sqrt() + eps) +
                      static_cast<Scalar>(cfg.weight_decay) * p.array());
        if (!p.allFinite())
            throw numeric_error("non-finite parameter after update in " + params[i].name);
    }
}

}  // namespace cog
