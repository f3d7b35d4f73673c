#pragma once

#include <stdexcept>
#include <vector>

#include "mcb/layers.hpp"
#include "mcb/sketch.hpp"
#include "mcb/tensor.hpp"

namespace mcb {

/// Score parameters for one modality plus the shared decoder-state
/// projection W2 (shared across modalities by contract; the model stores one
/// W2 tensor and passes it to both attend calls).
struct AttentionHead {
    const Tensor& W1;  // att x annotation-dim
    const Tensor& W2;  // att x state-dim (shared)
    const Tensor& v;   // att
    const Tensor& b;   // att
};

struct AttentionHeadGrads {
    Tensor& W1;
    Tensor& W2;
    Tensor& v;
    Tensor& b;
};

struct AttendCache {
    Tensor A;      // N x Da annotations
    Tensor s;      // decoder state
    Tensor U;      // N x att, tanh pre-score activations
    Tensor alpha;  // N
};

struct AttendResult {
    Tensor alpha;
    Tensor context;
};

/// alpha = softmax(v^T tanh(W1 a_i + W2 s + b)); context = sum_i alpha_i a_i.
inline AttendResult attend(const Tensor& A, const Tensor& s, const AttentionHead& p, AttendCache& cache) {
    if (A.rank() != 2 || A.rows() == 0) throw std::invalid_argument("attend: empty annotation set");
    const std::size_t N = A.rows(), att = p.v.size();
    Tensor w2s = matvec(p.W2, s);
    Tensor scores = Tensor::zeros({N});
    cache.U = Tensor::zeros({N, att});
    for (std::size_t i = 0; i < N; ++i) {
        Tensor u = matvec(p.W1, A.row(i));
        double e = 0.0;
        for (std::size_t k = 0; k < att; ++k) {
            const double t = std::tanh(double(u[k]) + double(w2s[k]) + double(p.b[k]));
            cache.U(i, k) = real(t);
            e += double(p.v[k]) * t;
        }
        scores[i] = real(e);
    }
    AttendResult r;
    r.alpha = softmax(scores);
    r.context = Tensor::zeros({A.cols()});
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < A.cols(); ++j) r.context[j] += real(double(r.alpha[i]) * double(A(i, j)));
    cache.A = A;
    cache.s = s;
    cache.alpha = r.alpha;
    return r;
}

struct AttendBackwardResult {
    Tensor grad_A;
    Tensor grad_s;
};

inline AttendBackwardResult attend_backward(const Tensor& grad_context, const AttendCache& cache,
                                            const AttentionHead& p, AttentionHeadGrads& g) {
    const std::size_t N = cache.A.rows(), Da = cache.A.cols(), att = p.v.size();
    AttendBackwardResult out;
    out.grad_A = Tensor::zeros({N, Da});
    out.grad_s = Tensor::zeros(cache.s.shape);
    Tensor dalpha = Tensor::zeros({N});
    for (std::size_t i = 0; i < N; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < Da; ++j) {
            acc += double(grad_context[j]) * double(cache.A(i, j));
            out.grad_A(i, j) += real(double(cache.alpha[i]) * double(grad_context[j]));
        }
        dalpha[i] = real(acc);
    }
    Tensor de = softmax_backward(cache.alpha, dalpha);
    for (std::size_t i = 0; i < N; ++i) {
        Tensor dpre = Tensor::zeros({att});
        for (std::size_t k = 0; k < att; ++k) {
            const double u = cache.U(i, k);
            g.v[k] += real(double(de[i]) * u);
            dpre[k] = real(double(de[i]) * double(p.v[k]) * (1.0 - u * u));
        }
        Tensor ai = cache.A.row(i);
        add_outer(g.W1, dpre, ai);
        add_outer(g.W2, dpre, cache.s);
        axpy(g.b, 1.0, dpre);
        Tensor da = matvec_t(p.W1, dpre);
        for (std::size_t j = 0; j < Da; ++j) out.grad_A(i, j) += da[j];
        axpy(out.grad_s, 1.0, matvec_t(p.W2, dpre));
    }
    return out;
}

enum class FusionKind { Concat, Sum, Product, Mcb };

/// Selects how the two per-step context vectors combine into c_t.
struct FusionStrategy {
    FusionKind kind;
    const McbPooler& pooler;  // used only when kind == Mcb

    std::size_t output_dim(std::size_t n_text, std::size_t n_vis) const {
        switch (kind) {
            case FusionKind::Concat: return n_text + n_vis;
            case FusionKind::Sum:
            case FusionKind::Product:
                if (n_text != n_vis) throw std::invalid_argument("fuse: Sum/Product need equal context dims");
                return n_text;
            case FusionKind::Mcb: return pooler.d;
        }
        throw std::logic_error("fuse: unknown kind");
    }
};

inline Tensor fuse(const Tensor& c_text, const Tensor& c_vis, const FusionStrategy& f) {
    switch (f.kind) {
        case FusionKind::Concat: return concat(c_text, c_vis);
        case FusionKind::Sum: {
            if (!c_text.same_shape(c_vis)) throw std::invalid_argument("fuse: dim mismatch for Sum");
            Tensor r = c_text;
            axpy(r, 1.0, c_vis);
            return r;
        }
        case FusionKind::Product: {
            if (!c_text.same_shape(c_vis)) throw std::invalid_argument("fuse: dim mismatch for Product");
            Tensor r = c_text;
            for (std::size_t i = 0; i < r.size(); ++i) r[i] = real(double(r[i]) * double(c_vis[i]));
            return r;
        }
        case FusionKind::Mcb: return mcb_pool(c_text, c_vis, f.pooler);
    }
    throw std::logic_error("fuse: unknown kind");
}

inline std::pair<Tensor, Tensor> fuse_backward(const Tensor& grad_out, const Tensor& c_text, const Tensor& c_vis,
                                               const FusionStrategy& f) {
    switch (f.kind) {
        case FusionKind::Concat: {
            Tensor gt = Tensor::zeros(c_text.shape), gv = Tensor::zeros(c_vis.shape);
            for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = grad_out[i];
            for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = grad_out[gt.size() + i];
            return {gt, gv};
        }
        case FusionKind::Sum: return {grad_out, grad_out};
        case FusionKind::Product: {
            Tensor gt = Tensor::zeros(c_text.shape), gv = Tensor::zeros(c_vis.shape);
            for (std::size_t i = 0; i < gt.size(); ++i) {
                gt[i] = real(double(grad_out[i]) * double(c_vis[i]));
                gv[i] = real(double(grad_out[i]) * double(c_text[i]));
            }
            return {gt, gv};
        }
        case FusionKind::Mcb: return mcb_backward(grad_out, c_text, c_vis, f.pooler);
    }
    throw std::logic_error("fuse: unknown kind");
}

/// Once-per-sentence grid reweighting: each grid cell is MCB-pooled with the
/// sentence vector, two 1x1 conv layers predict a logit per cell, softmax
/// gives the map, and the feature map rows are scaled by it.
struct PreAttentionParams {
    const McbPooler& pooler;  // text side n = tiled text-vector dim, vis side n = channels
    ConvParams conv;
};

struct PreAttentionGrads {
    ConvGrads conv;
};

struct PreAttendCache {
    Tensor F;         // G x C
    Tensor text_vec;  // tiled sentence representation
    Tensor pooled;    // G x d
    Tensor weights;   // G
    ConvCache conv;
};

struct PreAttendResult {
    Tensor weights;       // G, sums to 1
    Tensor F_reweighted;  // G x C
};

inline PreAttendResult pre_attend(const Tensor& F, const Tensor& text_vec, const PreAttentionParams& p,
                                  PreAttendCache& cache) {
    if (F.rank() != 2 || F.rows() == 0) throw std::invalid_argument("pre_attend: empty grid");
    if (F.cols() != p.pooler.params_vis.n || text_vec.size() != p.pooler.params_text.n)
        throw std::invalid_argument("pre_attend: dim mismatch");
    const std::size_t G = F.rows();
    cache.pooled = Tensor::zeros({G, p.pooler.d});
    for (std::size_t g = 0; g < G; ++g)
        cache.pooled.set_row(g, mcb_pool(text_vec, F.row(g), p.pooler));
    Tensor logits = conv1x1_forward(cache.pooled, p.conv, cache.conv);
    PreAttendResult r;
    r.weights = softmax(logits);
    r.F_reweighted = Tensor::zeros(F.shape);
    for (std::size_t g = 0; g < G; ++g)
        for (std::size_t j = 0; j < F.cols(); ++j)
            r.F_reweighted(g, j) = real(double(r.weights[g]) * double(F(g, j)));
    cache.F = F;
    cache.text_vec = text_vec;
    cache.weights = r.weights;
    return r;
}

/// Returns grad wrt text_vec; the raw feature map is input data and gets no
/// gradient.
inline Tensor pre_attend_backward(const Tensor& grad_F_reweighted, const PreAttendCache& cache,
                                  const PreAttentionParams& p, PreAttentionGrads& g) {
    const std::size_t G = cache.F.rows();
    Tensor dweights = Tensor::zeros({G});
    for (std::size_t gi = 0; gi < G; ++gi) {
        double acc = 0.0;
        for (std::size_t j = 0; j < cache.F.cols(); ++j)
            acc += double(grad_F_reweighted(gi, j)) * double(cache.F(gi, j));
        dweights[gi] = real(acc);
    }
    Tensor dlogits = softmax_backward(cache.weights, dweights);
    Tensor dpooled = conv1x1_backward(dlogits, p.conv, cache.conv, g.conv);
    Tensor grad_text = Tensor::zeros(cache.text_vec.shape);
    for (std::size_t gi = 0; gi < G; ++gi) {
        auto [dt, dv] = mcb_backward(dpooled.row(gi), cache.text_vec, cache.F.row(gi), p.pooler);
        (void)dv;
        axpy(grad_text, 1.0, dt);
    }
    return grad_text;
}

}  // namespace mcb
