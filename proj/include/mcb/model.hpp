#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcb/attention.hpp"
#include "mcb/layers.hpp"
#include "mcb/sketch.hpp"
#include "mcb/tensor.hpp"

namespace mcb {

// Reserved token ids shared by the whole pipeline.
constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;
constexpr int kUnk = 3;

struct ModelConfig {
    std::size_t L = 512;
    std::size_t E = 512;
    std::size_t src_vocab = 0;
    std::size_t tgt_vocab = 0;
    FusionKind fusion = FusionKind::Concat;
    bool pre_attention = false;
    std::size_t d = 0;           // sketch dim for MCB fusion and pre-attention pooling
    std::size_t G = 196;         // visual grid cells
    std::size_t C = 1024;        // visual channels
    std::size_t pre_hidden = 512;
    std::size_t max_decode_len = 50;
    bool text_only = false;
    bool mcb_normalize = false;

    void validate() const {
        if (L == 0 || E == 0 || src_vocab == 0 || tgt_vocab == 0 || G == 0 || C == 0 || max_decode_len == 0)
            throw std::invalid_argument("ModelConfig: all dimensions must be positive");
        if (fusion == FusionKind::Mcb && d == 0)
            throw std::invalid_argument("ModelConfig: MCB fusion requires sketch dim d");
        if (pre_attention && d == 0)
            throw std::invalid_argument("ModelConfig: pre-attention requires sketch dim d");
        if (!text_only && (fusion == FusionKind::Sum || fusion == FusionKind::Product) && C != 2 * L)
            throw std::invalid_argument("ModelConfig: Sum/Product fusion needs C == 2L");
    }

    /// Dimension of the fused context c_t fed to input feeding and W_proj.
    std::size_t context_dim() const {
        if (text_only) return 2 * L;
        switch (fusion) {
            case FusionKind::Concat: return 2 * L + C;
            case FusionKind::Sum:
            case FusionKind::Product: return 2 * L;
            case FusionKind::Mcb: return d;
        }
        throw std::logic_error("ModelConfig: unknown fusion");
    }
};

/// Baseline config that bypasses visual attention and fusion (c_t = c_text).
inline ModelConfig text_only_mode(ModelConfig config) {
    config.text_only = true;
    return config;
}

/// One training/evaluation triple. tgt ends with EOS; PAD may follow.
/// img_dep lists target positions whose correct token is recoverable only
/// from the feature map (synthetic-task bookkeeping).
struct Example {
    std::vector<int> src;
    std::vector<int> tgt;
    Tensor fmap;  // G x C
    std::vector<int> img_dep;
};

/// Every learnable weight, addressable by a stable name for optimizer-state
/// keying, plus the frozen sketch tables.
struct ModelParams {
    std::map<std::string, Tensor> tensors;
    McbPooler fusion_pooler;  // valid when config.fusion == Mcb
    McbPooler pre_pooler;     // valid when config.pre_attention
    ModelConfig config;

    Tensor& at(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::out_of_range("ModelParams: no tensor named " + name);
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::out_of_range("ModelParams: no tensor named " + name);
        return it->second;
    }

    /// Weight matrices subject to L2 regularization: rank-2 tensors that are
    /// not embedding tables.
    static bool regularized(const std::string& name, const Tensor& t) {
        return t.rank() == 2 && name.rfind("emb.", 0) != 0;
    }
};

using GradMap = std::map<std::string, Tensor>;

inline GradMap zero_grads(const ModelParams& p) {
    GradMap g;
    for (const auto& [name, t] : p.tensors) g.emplace(name, Tensor::zeros(t.shape));
    return g;
}

/// Xavier/Glorot uniform init for a rank-2 shape (fan_out, fan_in).
inline Tensor xavier_init(const std::vector<std::size_t>& shape, std::uint64_t seed) {
    if (shape.size() != 2) throw std::invalid_argument("xavier_init: rank-2 shape required");
    const double bound = std::sqrt(6.0 / double(shape[0] + shape[1]));
    Tensor t = Tensor::zeros(shape);
    Rng rng(seed);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<real>(rng.uniform(-bound, bound));
    return t;
}

inline ModelParams init_model_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams p;
    p.config = config;
    const std::size_t L = config.L, E = config.E, twoL = 2 * L;
    const std::size_t Dc = config.context_dim();
    std::uint64_t k = 0;
    auto mat = [&](const std::string& name, std::size_t r, std::size_t c) {
        p.tensors.emplace(name, xavier_init({r, c}, seed * 1000003ull + (++k)));
    };
    auto vec0 = [&](const std::string& name, std::size_t n) { p.tensors.emplace(name, Tensor::zeros({n})); };
    auto lstm = [&](const std::string& prefix, std::size_t din) {
        mat(prefix + ".Wx", 4 * L, din);
        mat(prefix + ".Wh", 4 * L, L);
        Tensor b = Tensor::zeros({4 * L});
        for (std::size_t i = L; i < 2 * L; ++i) b[i] = real(1.0);  // forget-gate bias
        p.tensors.emplace(prefix + ".b", std::move(b));
    };
    mat("emb.src", config.src_vocab, E);
    mat("emb.tgt", config.tgt_vocab, E);
    lstm("enc.fwd", E);
    lstm("enc.bwd", E);
    lstm("dec", E);
    mat("init.W", L, twoL);
    vec0("init.b", L);
    mat("in.W", E, E + Dc);
    vec0("in.b", E);
    mat("att.text.W1", L, twoL);
    vec0("att.text.v", L);
    vec0("att.text.b", L);
    mat("att.W2", L, L);
    mat("proj.W", L, L + Dc);
    vec0("proj.b", L);
    mat("out.W", config.tgt_vocab, L);
    vec0("out.b", config.tgt_vocab);
    if (!config.text_only) {
        mat("att.vis.W1", L, config.C);
        vec0("att.vis.v", L);
        vec0("att.vis.b", L);
        if (config.fusion == FusionKind::Mcb)
            p.fusion_pooler = McbPooler::make(twoL, config.C, config.d, seed ^ 0xA5A5A5A5ull,
                                              seed ^ 0x5A5A5A5Aull, config.mcb_normalize);
        if (config.pre_attention) {
            p.pre_pooler = McbPooler::make(twoL, config.C, config.d, seed ^ 0xC3C3C3C3ull,
                                           seed ^ 0x3C3C3C3Cull, false);
            mat("pre.W1", config.pre_hidden, config.d);
            vec0("pre.b1", config.pre_hidden);
            mat("pre.W2", 1, config.pre_hidden);
            vec0("pre.b2", 1);
        }
    }
    // Initialize all v-from-xavier score vectors: rank-1 but benefit from
    // nonzero init so attention scores break symmetry at step 0.
    for (const char* vn : {"att.text.v", "att.vis.v"}) {
        auto it = p.tensors.find(vn);
        if (it == p.tensors.end()) continue;
        Rng rng(seed * 7919ull + (++k));
        const double bound = std::sqrt(6.0 / double(1 + L));
        for (std::size_t i = 0; i < it->second.size(); ++i)
            it->second[i] = static_cast<real>(rng.uniform(-bound, bound));
    }
    return p;
}

namespace detail {

inline LstmCellParams lstm_view(const ModelParams& p, const std::string& prefix) {
    return LstmCellParams{p.at(prefix + ".Wx"), p.at(prefix + ".Wh"), p.at(prefix + ".b")};
}

inline AttentionHead head_view(const ModelParams& p, const std::string& mod) {
    return AttentionHead{p.at("att." + mod + ".W1"), p.at("att.W2"), p.at("att." + mod + ".v"),
                         p.at("att." + mod + ".b")};
}

}  // namespace detail

/// s_0 = tanh(W_init h_T + b_init).
inline Tensor init_decoder_state(const Tensor& h_T, const DenseParams& p) {
    Tensor s0 = dense_forward(h_T, p);
    for (std::size_t i = 0; i < s0.size(); ++i) s0[i] = static_cast<real>(std::tanh(double(s0[i])));
    return s0;
}

struct StepCache {
    int y_prev = 0;
    int target = 0;
    Tensor in_vec;   // [e_prev; c_prev]
    Tensor u;        // W_in output (LSTM input)
    LstmCache lstm;
    Tensor s;        // decoder state after the cell (= o_t)
    AttendCache att_text, att_vis;
    Tensor ctx_text, ctx_vis;
    Tensor c_fused;
    Tensor proj_in;  // [o_t; c_t]
    Tensor otil;
    Tensor probs;    // softmax over target vocab
};

struct ForwardCache {
    Tensor X;  // embedded source
    BilstmCache enc;
    Tensor A_text;
    Tensor A_vis;  // reweighted feature map, or raw fmap
    PreAttendCache pre;
    bool used_pre = false;
    Tensor h_T;
    Tensor s0;
    std::vector<StepCache> steps;
    double nll = 0.0;       // summed over non-pad tokens
    std::size_t tokens = 0; // non-pad token count
    std::size_t correct = 0;
    std::size_t img_dep_tokens = 0;
    std::size_t img_dep_correct = 0;
};

namespace detail {

/// One decoder step given frozen annotations. Fills the step cache.
inline void decode_step_impl(const ModelParams& p, const Tensor& A_text, const Tensor& A_vis,
                             const Tensor& e_prev, const Tensor& c_prev, const Tensor& s_prev,
                             const Tensor& cell_prev, StepCache& sc, Tensor& cell_out) {
    const ModelConfig& cfg = p.config;
    sc.in_vec = concat(e_prev, c_prev);
    sc.u = dense_forward(sc.in_vec, DenseParams{p.at("in.W"), p.at("in.b")});
    auto [h, cell] = lstm_cell_forward(sc.u, s_prev, cell_prev, lstm_view(p, "dec"), sc.lstm);
    sc.s = h;
    cell_out = cell;
    auto rt = attend(A_text, sc.s, head_view(p, "text"), sc.att_text);
    sc.ctx_text = rt.context;
    if (cfg.text_only) {
        sc.c_fused = sc.ctx_text;
    } else {
        auto rv = attend(A_vis, sc.s, head_view(p, "vis"), sc.att_vis);
        sc.ctx_vis = rv.context;
        FusionStrategy f{cfg.fusion, p.fusion_pooler};
        sc.c_fused = fuse(sc.ctx_text, sc.ctx_vis, f);
    }
    sc.proj_in = concat(sc.s, sc.c_fused);
    sc.otil = dense_forward(sc.proj_in, DenseParams{p.at("proj.W"), p.at("proj.b")});
    Tensor logits = dense_forward(sc.otil, DenseParams{p.at("out.W"), p.at("out.b")});
    sc.probs = softmax(logits);
}

/// Encode source text and the feature map into annotation sets.
inline void encode_impl(const ModelParams& p, const Example& ex, ForwardCache& fc) {
    const ModelConfig& cfg = p.config;
    if (ex.src.empty()) throw std::invalid_argument("model: empty source sequence");
    fc.X = embed(ex.src, EmbeddingParams{p.at("emb.src")});
    fc.A_text = bilstm_encode(fc.X, lstm_view(p, "enc.fwd"), lstm_view(p, "enc.bwd"), fc.enc);
    fc.h_T = fc.A_text.row(fc.A_text.rows() - 1);
    fc.used_pre = false;
    if (!cfg.text_only) {
        if (ex.fmap.rank() != 2 || ex.fmap.rows() != cfg.G || ex.fmap.cols() != cfg.C)
            throw std::invalid_argument("model: feature map shape mismatch");
        if (cfg.pre_attention) {
            PreAttentionParams pp{p.pre_pooler,
                                  ConvParams{p.at("pre.W1"), p.at("pre.b1"), p.at("pre.W2"), p.at("pre.b2")}};
            auto r = pre_attend(ex.fmap, fc.h_T, pp, fc.pre);
            fc.A_vis = r.F_reweighted;
            fc.used_pre = true;
        } else {
            fc.A_vis = ex.fmap;
        }
    }
    fc.s0 = init_decoder_state(fc.h_T, DenseParams{p.at("init.W"), p.at("init.b")});
}

}  // namespace detail

/// Public single-step decode for greedy translation and the step oracle
/// tests. State in, state out; annotations are fixed for the sentence.
struct DecodeStepResult {
    Tensor s;
    Tensor cell;
    Tensor c;
    Tensor logits_probs;  // softmax over target vocab
};

inline DecodeStepResult decode_step(const ModelParams& p, const Tensor& A_text, const Tensor& A_vis,
                                    const Tensor& e_prev, const Tensor& c_prev, const Tensor& s_prev,
                                    const Tensor& cell_prev) {
    StepCache sc;
    Tensor cell;
    detail::decode_step_impl(p, A_text, A_vis, e_prev, c_prev, s_prev, cell_prev, sc, cell);
    return DecodeStepResult{sc.s, cell, sc.c_fused, sc.probs};
}

/// Teacher-forced forward over one example. PAD targets after EOS are
/// skipped entirely, so appended padding never changes the loss.
inline void forward_example(const ModelParams& p, const Example& ex, ForwardCache& fc) {
    const ModelConfig& cfg = p.config;
    if (ex.tgt.empty()) throw std::invalid_argument("model: empty target sequence");
    detail::encode_impl(p, ex, fc);
    const std::size_t Dc = cfg.context_dim();
    Tensor s = fc.s0;
    Tensor cell = Tensor::zeros({cfg.L});
    Tensor c_prev = Tensor::zeros({Dc});  // attention vector before the first step
    const Tensor& emb_tgt = p.at("emb.tgt");
    fc.steps.clear();
    fc.nll = 0.0;
    fc.tokens = fc.correct = fc.img_dep_tokens = fc.img_dep_correct = 0;
    for (std::size_t t = 0; t < ex.tgt.size(); ++t) {
        const int target = ex.tgt[t];
        if (target == kPad) break;
        if (target < 0 || std::size_t(target) >= cfg.tgt_vocab)
            throw std::out_of_range("model: target token out of vocab");
        StepCache sc;
        sc.y_prev = t == 0 ? kBos : ex.tgt[t - 1];
        sc.target = target;
        Tensor e_prev = emb_tgt.row(std::size_t(sc.y_prev));
        Tensor cell_out;
        detail::decode_step_impl(p, fc.A_text, fc.A_vis, e_prev, c_prev, s, cell, sc, cell_out);
        const double pt = sc.probs[std::size_t(target)];
        fc.nll += -std::log(std::max(pt, 1e-300));
        fc.tokens += 1;
        std::size_t am = 0;
        for (std::size_t j = 1; j < sc.probs.size(); ++j)
            if (double(sc.probs[j]) > double(sc.probs[am])) am = j;
        const bool hit = int(am) == target;
        if (hit) fc.correct += 1;
        for (int pos : ex.img_dep)
            if (std::size_t(pos) == t) {
                fc.img_dep_tokens += 1;
                if (hit) fc.img_dep_correct += 1;
            }
        s = sc.s;
        cell = cell_out;
        c_prev = sc.c_fused;
        fc.steps.push_back(std::move(sc));
    }
    if (fc.tokens == 0) throw std::invalid_argument("model: target has no non-pad tokens");
}

/// Reverse pass over a cached forward; accumulates into `grads`.
/// `scale` multiplies the per-token cross-entropy gradient (1 / total batch
/// tokens for a mean-per-token loss).
inline void backward_example(const ModelParams& p, const Example& ex, const ForwardCache& fc, double scale,
                             GradMap& grads) {
    const ModelConfig& cfg = p.config;
    const std::size_t L = cfg.L, Dc = cfg.context_dim(), E = cfg.E;
    DenseParams out_p{p.at("out.W"), p.at("out.b")};
    DenseParams proj_p{p.at("proj.W"), p.at("proj.b")};
    DenseParams in_p{p.at("in.W"), p.at("in.b")};
    DenseGrads out_g{grads.at("out.W"), grads.at("out.b")};
    DenseGrads proj_g{grads.at("proj.W"), grads.at("proj.b")};
    DenseGrads in_g{grads.at("in.W"), grads.at("in.b")};
    LstmCellParams dec_p = detail::lstm_view(p, "dec");
    LstmCellGrads dec_g{grads.at("dec.Wx"), grads.at("dec.Wh"), grads.at("dec.b")};
    AttentionHead head_t = detail::head_view(p, "text");
    AttentionHeadGrads head_t_g{grads.at("att.text.W1"), grads.at("att.W2"), grads.at("att.text.v"),
                                grads.at("att.text.b")};
    Tensor grad_A_text = Tensor::zeros(fc.A_text.shape);
    Tensor grad_A_vis;
    if (!cfg.text_only) grad_A_vis = Tensor::zeros(fc.A_vis.shape);

    Tensor ds = Tensor::zeros({L});       // grad into s_t from step t+1
    Tensor dcell = Tensor::zeros({L});
    Tensor dc_feed = Tensor::zeros({Dc}); // grad into c_t from step t+1 input feeding
    for (std::size_t ti = fc.steps.size(); ti-- > 0;) {
        const StepCache& sc = fc.steps[ti];
        // cross-entropy through softmax
        Tensor dlogits = sc.probs;
        for (std::size_t j = 0; j < dlogits.size(); ++j) dlogits[j] = real(double(dlogits[j]) * scale);
        dlogits[std::size_t(sc.target)] -= real(scale);
        Tensor dotil = dense_backward(dlogits, sc.otil, out_p, out_g);
        Tensor dproj_in = dense_backward(dotil, sc.proj_in, proj_p, proj_g);
        Tensor dh = Tensor::zeros({L});
        Tensor dc = dc_feed;
        for (std::size_t j = 0; j < L; ++j) dh[j] = dproj_in[j];
        for (std::size_t j = 0; j < Dc; ++j) dc[j] += dproj_in[L + j];
        // fusion and the two attention heads
        Tensor dctx_text;
        if (cfg.text_only) {
            dctx_text = dc;
        } else {
            FusionStrategy f{cfg.fusion, p.fusion_pooler};
            auto [dt, dv] = fuse_backward(dc, sc.ctx_text, sc.ctx_vis, f);
            dctx_text = dt;
            AttentionHeadGrads head_v_g{grads.at("att.vis.W1"), grads.at("att.W2"), grads.at("att.vis.v"),
                                        grads.at("att.vis.b")};
            auto rv = attend_backward(dv, sc.att_vis, detail::head_view(p, "vis"), head_v_g);
            axpy(grad_A_vis, 1.0, rv.grad_A);
            axpy(dh, 1.0, rv.grad_s);
        }
        auto rt = attend_backward(dctx_text, sc.att_text, head_t, head_t_g);
        axpy(grad_A_text, 1.0, rt.grad_A);
        axpy(dh, 1.0, rt.grad_s);
        axpy(dh, 1.0, ds);
        // decoder cell
        auto lb = lstm_cell_backward(dh, dcell, sc.lstm, dec_p, dec_g);
        ds = lb.grad_h_prev;
        dcell = lb.grad_c_prev;
        Tensor din_vec = dense_backward(lb.grad_x, sc.in_vec, in_p, in_g);
        // split [e_prev; c_prev]
        Tensor& emb_g = grads.at("emb.tgt");
        for (std::size_t j = 0; j < E; ++j) emb_g(std::size_t(sc.y_prev), j) += din_vec[j];
        dc_feed = Tensor::zeros({Dc});
        if (ti > 0)
            for (std::size_t j = 0; j < Dc; ++j) dc_feed[j] = din_vec[E + j];
    }
    // decoder init: s0 = tanh(init.W h_T + init.b)
    Tensor ds0pre = Tensor::zeros({L});
    for (std::size_t j = 0; j < L; ++j)
        ds0pre[j] = real(double(ds[j]) * (1.0 - double(fc.s0[j]) * double(fc.s0[j])));
    DenseGrads init_g{grads.at("init.W"), grads.at("init.b")};
    Tensor dh_T = dense_backward(ds0pre, fc.h_T, DenseParams{p.at("init.W"), p.at("init.b")}, init_g);
    const std::size_t T = fc.A_text.rows();
    for (std::size_t j = 0; j < 2 * L; ++j) grad_A_text(T - 1, j) += dh_T[j];
    // pre-attention pulls gradient into the tiled text vector (= h_T)
    if (fc.used_pre) {
        PreAttentionParams pp{p.pre_pooler,
                              ConvParams{p.at("pre.W1"), p.at("pre.b1"), p.at("pre.W2"), p.at("pre.b2")}};
        PreAttentionGrads pg{ConvGrads{grads.at("pre.W1"), grads.at("pre.b1"), grads.at("pre.W2"),
                                       grads.at("pre.b2")}};
        Tensor dtext = pre_attend_backward(grad_A_vis, fc.pre, pp, pg);
        for (std::size_t j = 0; j < 2 * L; ++j) grad_A_text(T - 1, j) += dtext[j];
    }
    // encoder
    LstmCellGrads fwd_g{grads.at("enc.fwd.Wx"), grads.at("enc.fwd.Wh"), grads.at("enc.fwd.b")};
    LstmCellGrads bwd_g{grads.at("enc.bwd.Wx"), grads.at("enc.bwd.Wh"), grads.at("enc.bwd.b")};
    Tensor grad_X = bilstm_backward(grad_A_text, fc.enc, detail::lstm_view(p, "enc.fwd"),
                                    detail::lstm_view(p, "enc.bwd"), fwd_g, bwd_g);
    embed_backward(grad_X, ex.src, grads.at("emb.src"));
}

struct LossResult {
    double loss = 0.0;  // mean NLL per token + L2 penalty
    GradMap grads;
    std::size_t tokens = 0;
    std::size_t correct = 0;
};

/// Mean per-token teacher-forced NLL over the batch plus
/// l2 * sum ||W||^2 over weight matrices; gradients match the returned loss.
inline LossResult forward_loss(const std::vector<Example>& batch, const ModelParams& p, double l2 = 0.0) {
    if (batch.empty()) throw std::invalid_argument("forward_loss: empty batch");
    std::vector<ForwardCache> caches(batch.size());
    double nll = 0.0;
    std::size_t tokens = 0, correct = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        forward_example(p, batch[i], caches[i]);
        nll += caches[i].nll;
        tokens += caches[i].tokens;
        correct += caches[i].correct;
    }
    LossResult r;
    r.tokens = tokens;
    r.correct = correct;
    r.grads = zero_grads(p);
    const double scale = 1.0 / double(tokens);
    for (std::size_t i = 0; i < batch.size(); ++i) backward_example(p, batch[i], caches[i], scale, r.grads);
    r.loss = nll * scale;
    if (l2 > 0.0) {
        double penalty = 0.0;
        for (const auto& [name, t] : p.tensors) {
            if (!ModelParams::regularized(name, t)) continue;
            Tensor& g = r.grads.at(name);
            for (std::size_t j = 0; j < t.size(); ++j) {
                penalty += double(t[j]) * double(t[j]);
                g[j] += real(2.0 * l2 * double(t[j]));
            }
        }
        r.loss += l2 * penalty;
    }
    if (!std::isfinite(r.loss)) throw std::runtime_error("forward_loss: non-finite loss");
    return r;
}

struct EvalResult {
    double loss = 0.0;
    std::size_t tokens = 0, correct = 0;
    std::size_t img_dep_tokens = 0, img_dep_correct = 0;

    double accuracy() const { return tokens ? double(correct) / double(tokens) : 0.0; }
    double img_dep_accuracy() const {
        return img_dep_tokens ? double(img_dep_correct) / double(img_dep_tokens) : 0.0;
    }
};

/// Teacher-forced evaluation (no gradients): mean NLL per token, token
/// accuracy, and accuracy restricted to image-dependent positions.
inline EvalResult evaluate(const std::vector<Example>& examples, const ModelParams& p) {
    EvalResult r;
    double nll = 0.0;
    for (const Example& ex : examples) {
        ForwardCache fc;
        forward_example(p, ex, fc);
        nll += fc.nll;
        r.tokens += fc.tokens;
        r.correct += fc.correct;
        r.img_dep_tokens += fc.img_dep_tokens;
        r.img_dep_correct += fc.img_dep_correct;
    }
    r.loss = r.tokens ? nll / double(r.tokens) : 0.0;
    return r;
}

/// Greedy argmax decoding with input feeding; ties break toward the lowest
/// token id. Stops at EOS or max_decode_len. Returns target ids without EOS.
inline std::vector<int> greedy_translate(const std::vector<int>& src, const Tensor& fmap, const ModelParams& p) {
    const ModelConfig& cfg = p.config;
    Example ex;
    ex.src = src;
    ex.fmap = fmap;
    ForwardCache fc;
    detail::encode_impl(p, ex, fc);
    const std::size_t Dc = cfg.context_dim();
    Tensor s = fc.s0;
    Tensor cell = Tensor::zeros({cfg.L});
    Tensor c_prev = Tensor::zeros({Dc});
    const Tensor& emb_tgt = p.at("emb.tgt");
    std::vector<int> out;
    int y_prev = kBos;
    for (std::size_t t = 0; t < cfg.max_decode_len; ++t) {
        auto r = decode_step(p, fc.A_text, fc.A_vis, emb_tgt.row(std::size_t(y_prev)), c_prev, s, cell);
        std::size_t am = 0;
        for (std::size_t j = 1; j < r.logits_probs.size(); ++j)
            if (double(r.logits_probs[j]) > double(r.logits_probs[am])) am = j;
        const int tok = int(am);
        if (tok == kEos) break;
        out.push_back(tok);
        y_prev = tok;
        s = r.s;
        cell = r.cell;
        c_prev = r.c;
    }
    return out;
}

}  // namespace mcb
