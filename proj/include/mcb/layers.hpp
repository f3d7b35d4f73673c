#pragma once

#include <stdexcept>
#include <vector>

#include "mcb/tensor.hpp"

namespace mcb {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Parameter structs are lightweight views over tensors owned elsewhere
// (the model's named-tensor map or test locals); grads structs reference the
// accumulation targets.
struct DenseParams {
    const Tensor& W;  // out x in
    const Tensor& b;  // out
};

struct DenseGrads {
    Tensor& W;
    Tensor& b;
};

inline Tensor dense_forward(const Tensor& x, const DenseParams& p) {
    Tensor y = matvec(p.W, x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += p.b[i];
    return y;
}

/// Accumulates parameter grads, returns grad wrt x.
inline Tensor dense_backward(const Tensor& grad_y, const Tensor& x, const DenseParams& p, DenseGrads& g) {
    add_outer(g.W, grad_y, x);
    axpy(g.b, 1.0, grad_y);
    return matvec_t(p.W, grad_y);
}

/// Standard no-peephole LSTM cell. Gate blocks are stacked row-wise in the
/// order input, forget, output, candidate; Wx is (4L x Din), Wh is (4L x L).
struct LstmCellParams {
    const Tensor& Wx;
    const Tensor& Wh;
    const Tensor& b;

    std::size_t hidden() const { return Wh.cols(); }
    std::size_t input() const { return Wx.cols(); }
};

struct LstmCellGrads {
    Tensor& Wx;
    Tensor& Wh;
    Tensor& b;
};

struct LstmCache {
    Tensor x, h_prev, c_prev;
    Tensor i, f, o, g;  // post-activation gate values
    Tensor c;           // new cell state
};

inline std::pair<Tensor, Tensor> lstm_cell_forward(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                                                   const LstmCellParams& p, LstmCache& cache) {
    const std::size_t L = p.hidden();
    if (x.size() != p.input() || h_prev.size() != L || c_prev.size() != L)
        throw std::invalid_argument("lstm_cell_forward: shape mismatch");
    Tensor z = matvec(p.Wx, x);
    Tensor zh = matvec(p.Wh, h_prev);
    cache.i = Tensor::zeros({L});
    cache.f = Tensor::zeros({L});
    cache.o = Tensor::zeros({L});
    cache.g = Tensor::zeros({L});
    cache.c = Tensor::zeros({L});
    Tensor h = Tensor::zeros({L});
    for (std::size_t k = 0; k < L; ++k) {
        const double zi = double(z[k]) + double(zh[k]) + double(p.b[k]);
        const double zf = double(z[L + k]) + double(zh[L + k]) + double(p.b[L + k]);
        const double zo = double(z[2 * L + k]) + double(zh[2 * L + k]) + double(p.b[2 * L + k]);
        const double zg = double(z[3 * L + k]) + double(zh[3 * L + k]) + double(p.b[3 * L + k]);
        const double iv = sigmoid(zi), fv = sigmoid(zf), ov = sigmoid(zo), gv = std::tanh(zg);
        const double cv = fv * double(c_prev[k]) + iv * gv;
        cache.i[k] = real(iv);
        cache.f[k] = real(fv);
        cache.o[k] = real(ov);
        cache.g[k] = real(gv);
        cache.c[k] = real(cv);
        h[k] = real(ov * std::tanh(cv));
        if (!std::isfinite(double(h[k]))) throw std::runtime_error("lstm_cell_forward: non-finite activation");
    }
    cache.x = x;
    cache.h_prev = h_prev;
    cache.c_prev = c_prev;
    return {h, cache.c};
}

struct LstmBackwardResult {
    Tensor grad_x;
    Tensor grad_h_prev;
    Tensor grad_c_prev;
};

inline LstmBackwardResult lstm_cell_backward(const Tensor& grad_h, const Tensor& grad_c, const LstmCache& cache,
                                             const LstmCellParams& p, LstmCellGrads& g) {
    const std::size_t L = p.hidden();
    if (grad_h.size() != L || grad_c.size() != L || cache.c.size() != L)
        throw std::invalid_argument("lstm_cell_backward: stale or mismatched cache");
    Tensor dz = Tensor::zeros({4 * L});
    LstmBackwardResult out;
    out.grad_c_prev = Tensor::zeros({L});
    for (std::size_t k = 0; k < L; ++k) {
        const double tc = std::tanh(double(cache.c[k]));
        const double ov = cache.o[k], iv = cache.i[k], fv = cache.f[k], gv = cache.g[k];
        const double dc = double(grad_c[k]) + double(grad_h[k]) * ov * (1.0 - tc * tc);
        const double do_ = double(grad_h[k]) * tc;
        const double di = dc * gv;
        const double df = dc * double(cache.c_prev[k]);
        const double dg = dc * iv;
        out.grad_c_prev[k] = real(dc * fv);
        dz[k] = real(di * iv * (1.0 - iv));
        dz[L + k] = real(df * fv * (1.0 - fv));
        dz[2 * L + k] = real(do_ * ov * (1.0 - ov));
        dz[3 * L + k] = real(dg * (1.0 - gv * gv));
    }
    add_outer(g.Wx, dz, cache.x);
    add_outer(g.Wh, dz, cache.h_prev);
    axpy(g.b, 1.0, dz);
    out.grad_x = matvec_t(p.Wx, dz);
    out.grad_h_prev = matvec_t(p.Wh, dz);
    return out;
}

struct EmbeddingParams {
    const Tensor& table;  // vocab x E
};

/// Row lookup for a token sequence; output is T x E.
inline Tensor embed(const std::vector<int>& tokens, const EmbeddingParams& p) {
    const std::size_t V = p.table.rows(), E = p.table.cols();
    Tensor out = Tensor::zeros({std::max<std::size_t>(tokens.size(), 1), E});
    out.shape[0] = tokens.size();
    out.data.resize(tokens.size() * E, real(0));
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (tokens[t] < 0 || std::size_t(tokens[t]) >= V) throw std::out_of_range("embed: token id out of range");
        for (std::size_t j = 0; j < E; ++j) out(t, j) = p.table(std::size_t(tokens[t]), j);
    }
    return out;
}

/// Scatters upstream row grads into the touched table rows.
inline void embed_backward(const Tensor& grad_out, const std::vector<int>& tokens, Tensor& grad_table) {
    for (std::size_t t = 0; t < tokens.size(); ++t)
        for (std::size_t j = 0; j < grad_table.cols(); ++j)
            grad_table(std::size_t(tokens[t]), j) += grad_out(t, j);
}

/// Two 1x1 convolutions with a ReLU in between; position-wise over the grid.
struct ConvParams {
    const Tensor& W1;  // hidden_ch x in_ch
    const Tensor& b1;  // hidden_ch
    const Tensor& W2;  // 1 x hidden_ch
    const Tensor& b2;  // 1
};

struct ConvGrads {
    Tensor& W1;
    Tensor& b1;
    Tensor& W2;
    Tensor& b2;
};

struct ConvCache {
    Tensor input;   // G x in_ch
    Tensor hidden;  // G x hidden_ch, post-ReLU
};

/// Per-grid-cell two-layer perceptron producing one logit per cell.
inline Tensor conv1x1_forward(const Tensor& feature_map, const ConvParams& p, ConvCache& cache) {
    if (feature_map.rank() != 2 || feature_map.cols() != p.W1.cols())
        throw std::invalid_argument("conv1x1_forward: channel mismatch");
    const std::size_t G = feature_map.rows(), H = p.W1.rows();
    cache.input = feature_map;
    cache.hidden = Tensor::zeros({G, H});
    Tensor logits = Tensor::zeros({G});
    for (std::size_t g = 0; g < G; ++g) {
        Tensor x = feature_map.row(g);
        Tensor h = dense_forward(x, DenseParams{p.W1, p.b1});
        for (std::size_t k = 0; k < H; ++k) h[k] = h[k] > 0 ? h[k] : real(0);
        cache.hidden.set_row(g, h);
        logits[g] = static_cast<real>(dot(p.W2.row(0), h) + double(p.b2[0]));
    }
    return logits;
}

/// Returns grad wrt the input feature map.
inline Tensor conv1x1_backward(const Tensor& grad_logits, const ConvParams& p, const ConvCache& cache,
                               ConvGrads& g) {
    const std::size_t G = cache.input.rows(), H = p.W1.rows();
    Tensor grad_in = Tensor::zeros(cache.input.shape);
    for (std::size_t gi = 0; gi < G; ++gi) {
        const double dl = grad_logits[gi];
        Tensor h = cache.hidden.row(gi);
        g.b2[0] += real(dl);
        Tensor dh = Tensor::zeros({H});
        for (std::size_t k = 0; k < H; ++k) {
            g.W2(0, k) += real(dl * double(h[k]));
            dh[k] = real(dl * double(p.W2(0, k)));
            if (h[k] <= 0) dh[k] = 0;  // ReLU mask
        }
        Tensor x = cache.input.row(gi);
        add_outer(g.W1, dh, x);
        axpy(g.b1, 1.0, dh);
        Tensor dx = matvec_t(p.W1, dh);
        for (std::size_t j = 0; j < dx.size(); ++j) grad_in(gi, j) += dx[j];
    }
    return grad_in;
}

/// Bi-directional LSTM encoder. Annotation i concatenates the forward hidden
/// state at i and the backward hidden state at i; shape T x 2L.
struct BilstmCache {
    std::vector<LstmCache> fwd;
    std::vector<LstmCache> bwd;
};

inline Tensor bilstm_encode(const Tensor& X, const LstmCellParams& p_fwd, const LstmCellParams& p_bwd,
                            BilstmCache& cache) {
    if (X.rank() != 2 || X.rows() == 0) throw std::invalid_argument("bilstm_encode: empty sequence");
    const std::size_t T = X.rows(), L = p_fwd.hidden();
    cache.fwd.assign(T, LstmCache{});
    cache.bwd.assign(T, LstmCache{});
    Tensor A = Tensor::zeros({T, 2 * L});
    Tensor h = Tensor::zeros({L}), c = Tensor::zeros({L});
    for (std::size_t t = 0; t < T; ++t) {
        auto [nh, nc] = lstm_cell_forward(X.row(t), h, c, p_fwd, cache.fwd[t]);
        h = nh;
        c = nc;
        for (std::size_t j = 0; j < L; ++j) A(t, j) = h[j];
    }
    h = Tensor::zeros({L});
    c = Tensor::zeros({L});
    for (std::size_t ti = T; ti-- > 0;) {
        auto [nh, nc] = lstm_cell_forward(X.row(ti), h, c, p_bwd, cache.bwd[ti]);
        h = nh;
        c = nc;
        for (std::size_t j = 0; j < L; ++j) A(ti, L + j) = h[j];
    }
    return A;
}

/// Backward through both directions; returns grad wrt the embedded input X.
inline Tensor bilstm_backward(const Tensor& grad_A, const BilstmCache& cache, const LstmCellParams& p_fwd,
                              const LstmCellParams& p_bwd, LstmCellGrads& g_fwd, LstmCellGrads& g_bwd) {
    const std::size_t T = grad_A.rows(), L = p_fwd.hidden();
    Tensor grad_X = Tensor::zeros({T, p_fwd.input()});
    Tensor dh = Tensor::zeros({L}), dc = Tensor::zeros({L});
    for (std::size_t t = T; t-- > 0;) {
        for (std::size_t j = 0; j < L; ++j) dh[j] += grad_A(t, j);
        auto r = lstm_cell_backward(dh, dc, cache.fwd[t], p_fwd, g_fwd);
        dh = r.grad_h_prev;
        dc = r.grad_c_prev;
        for (std::size_t j = 0; j < r.grad_x.size(); ++j) grad_X(t, j) += r.grad_x[j];
    }
    dh = Tensor::zeros({L});
    dc = Tensor::zeros({L});
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < L; ++j) dh[j] += grad_A(t, L + j);
        auto r = lstm_cell_backward(dh, dc, cache.bwd[t], p_bwd, g_bwd);
        dh = r.grad_h_prev;
        dc = r.grad_c_prev;
        for (std::size_t j = 0; j < r.grad_x.size(); ++j) grad_X(t, j) += r.grad_x[j];
    }
    return grad_X;
}

}  // namespace mcb
