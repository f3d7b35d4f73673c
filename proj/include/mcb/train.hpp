#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "mcb/bleu.hpp"
#include "mcb/model.hpp"
#include "mcb/tensor.hpp"

namespace mcb {

/// Adam moments keyed like the parameter map, plus hyperparameters.
struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    std::uint64_t t = 0;
    double alpha = 0.0007;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState make(const std::map<std::string, Tensor>& params, double alpha = 0.0007) {
        AdamState s;
        s.alpha = alpha;
        for (const auto& [name, p] : params) {
            s.m.emplace(name, Tensor::zeros(p.shape));
            s.v.emplace(name, Tensor::zeros(p.shape));
        }
        return s;
    }
};

/// One Adam update with optional coupled L2: g' = g + 2*l2*w for regularized
/// tensors, then the standard bias-corrected moment recurrences.
inline void adam_step(std::map<std::string, Tensor>& params, const GradMap& grads, AdamState& state,
                      double l2 = 0.0) {
    if (grads.size() != params.size()) throw std::invalid_argument("adam_step: grad/param key mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, double(state.t));
    for (auto& [name, w] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) throw std::invalid_argument("adam_step: missing grad for " + name);
        const Tensor& g = git->second;
        if (!g.finite()) throw std::runtime_error("adam_step: non-finite gradient for " + name);
        Tensor& m = state.m.at(name);
        Tensor& v = state.v.at(name);
        const bool reg = l2 != 0.0 && ModelParams::regularized(name, w);
        for (std::size_t i = 0; i < w.size(); ++i) {
            double gi = g[i];
            if (reg) gi += 2.0 * l2 * double(w[i]);
            const double mi = state.beta1 * double(m[i]) + (1.0 - state.beta1) * gi;
            const double vi = state.beta2 * double(v[i]) + (1.0 - state.beta2) * gi * gi;
            m[i] = real(mi);
            v[i] = real(vi);
            w[i] -= real(state.alpha * (mi / bc1) / (std::sqrt(vi / bc2) + state.eps));
        }
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
inline double clip_grads(GradMap& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
        for (std::size_t i = 0; i < g.size(); ++i) sq += double(g[i]) * double(g[i]);
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& [name, g] : grads)
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = real(double(g[i]) * s);
    }
    return norm;
}

struct TrainConfig {
    std::size_t batch_size = 32;
    double l2 = 1e-5;
    double lr = 0.0007;
    std::size_t patience = 10000;       // steps without val improvement
    std::size_t eval_interval = 100;
    std::size_t max_steps = 100000;
    double clip_norm = 5.0;             // 0 disables clipping
    std::uint64_t seed = 0;
    std::size_t bleu_subset = 200;      // val examples used for greedy BLEU (0 disables)
};

struct LogEntry {
    std::size_t step = 0;
    std::string split;
    double loss = 0.0;
    double bleu = -1.0;  // -1 means not computed
    double acc = -1.0;
    double img_acc = -1.0;
};

/// Line-delimited record with fixed key order (step, split, loss, bleu,
/// then the accuracy extras). %.17g keeps logs bitwise reproducible.
inline std::string format_log_entry(const LogEntry& e) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "{\"step\":%zu,\"split\":\"%s\",\"loss\":%.17g,\"bleu\":%.17g,\"acc\":%.17g,\"img_acc\":%.17g}",
                  e.step, e.split.c_str(), e.loss, e.bleu, e.acc, e.img_acc);
    return buf;
}

struct TrainResult {
    ModelParams best;
    std::vector<LogEntry> log;
    double best_val_loss = 0.0;
    std::size_t best_step = 0;
    EvalResult best_eval;
};

namespace detail {

inline double val_bleu(const ModelParams& p, const std::vector<Example>& val, std::size_t cap) {
    std::vector<std::vector<int>> hyps, refs;
    const std::size_t n = std::min(cap, val.size());
    for (std::size_t i = 0; i < n; ++i) {
        hyps.push_back(greedy_translate(val[i].src, val[i].fmap, p));
        std::vector<int> ref = val[i].tgt;
        while (!ref.empty() && (ref.back() == kEos || ref.back() == kPad)) ref.pop_back();
        refs.push_back(std::move(ref));
    }
    return bleu_corpus(hyps, refs);
}

}  // namespace detail

/// Mini-batch Adam training with deterministic shuffling, periodic
/// validation, best-checkpoint tracking, and step-based early stopping.
inline TrainResult train_loop(const ModelConfig& config, const std::vector<Example>& train_set,
                              const std::vector<Example>& val_set, const TrainConfig& tc,
                              bool verbose = false) {
    if (train_set.empty() || val_set.empty()) throw std::invalid_argument("train_loop: empty dataset");
    ModelParams params = init_model_params(config, tc.seed);
    AdamState adam = AdamState::make(params.tensors, tc.lr);
    Rng shuffle_rng(tc.seed ^ 0x5DEECE66Dull);
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();  // forces a shuffle before the first batch

    TrainResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    for (std::size_t step = 1; step <= tc.max_steps; ++step) {
        std::vector<Example> batch;
        for (std::size_t b = 0; b < tc.batch_size; ++b) {
            if (cursor == order.size()) {
                for (std::size_t i = order.size(); i-- > 1;)
                    std::swap(order[i], order[shuffle_rng.below(i + 1)]);
                cursor = 0;
            }
            batch.push_back(train_set[order[cursor++]]);
        }
        LossResult lr = forward_loss(batch, params, tc.l2);
        clip_grads(lr.grads, tc.clip_norm);
        adam_step(params.tensors, lr.grads, adam, 0.0);  // L2 already in the grads
        if (step % tc.eval_interval == 0 || step == tc.max_steps) {
            LogEntry te{step, "train", lr.loss, -1.0, double(lr.correct) / double(lr.tokens), -1.0};
            result.log.push_back(te);
            EvalResult ev = evaluate(val_set, params);
            LogEntry ve{step, "val", ev.loss, -1.0, ev.accuracy(), ev.img_dep_accuracy()};
            if (tc.bleu_subset > 0) ve.bleu = detail::val_bleu(params, val_set, tc.bleu_subset);
            result.log.push_back(ve);
            if (verbose) std::fprintf(stderr, "%s\n", format_log_entry(ve).c_str());
            if (ev.loss < result.best_val_loss) {
                result.best_val_loss = ev.loss;
                result.best_step = step;
                result.best = params;
                result.best_eval = ev;
            }
            if (step - result.best_step >= tc.patience) break;
        }
    }
    if (result.best.tensors.empty()) result.best = params;
    return result;
}

}  // namespace mcb
