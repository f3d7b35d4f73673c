#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "mcb/fft.hpp"
#include "mcb/tensor.hpp"

namespace mcb {

/// Frozen count-sketch tables for one input modality. Tables are sampled
/// once from the seed and never updated by training.
struct SketchParams {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<std::uint32_t> h;  // bucket index per input coordinate, in [0, d)
    std::vector<std::int8_t> s;    // sign per input coordinate, -1 or +1
    std::uint64_t seed = 0;
};

inline SketchParams sample_sketch_params(std::size_t n, std::size_t d, std::uint64_t seed) {
    if (n == 0 || d == 0) throw std::invalid_argument("sample_sketch_params: n and d must be positive");
    SketchParams p;
    p.n = n;
    p.d = d;
    p.seed = seed;
    p.h.resize(n);
    p.s.resize(n);
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) p.h[i] = static_cast<std::uint32_t>(rng.below(d));
    for (std::size_t i = 0; i < n; ++i) p.s[i] = rng.below(2) == 0 ? std::int8_t(-1) : std::int8_t(1);
    return p;
}

/// Count sketch projection: y[h[i]] += s[i] * v[i].
inline Tensor count_sketch(const Tensor& v, const SketchParams& p) {
    if (v.rank() != 1 || v.size() != p.n) throw std::invalid_argument("count_sketch: dimension mismatch");
    Tensor y = Tensor::zeros({p.d});
    for (std::size_t i = 0; i < p.n; ++i) y[p.h[i]] += static_cast<real>(int(p.s[i]) * double(v[i]));
    return y;
}

/// Adjoint of count_sketch: x[i] = s[i] * y[h[i]].
inline Tensor count_sketch_adjoint(const Tensor& y, const SketchParams& p) {
    if (y.rank() != 1 || y.size() != p.d) throw std::invalid_argument("count_sketch_adjoint: dimension mismatch");
    Tensor x = Tensor::zeros({p.n});
    for (std::size_t i = 0; i < p.n; ++i) x[i] = static_cast<real>(int(p.s[i]) * double(y[p.h[i]]));
    return x;
}

/// Tensor-sketch pooler for two modalities sharing an output dimension d.
/// Applying signed-sqrt + L2 normalization after pooling is off by default.
struct McbPooler {
    SketchParams params_text;
    SketchParams params_vis;
    std::size_t d = 0;
    bool normalize = false;

    static McbPooler make(std::size_t n_text, std::size_t n_vis, std::size_t d,
                          std::uint64_t seed_text, std::uint64_t seed_vis, bool normalize = false) {
        McbPooler p;
        p.params_text = sample_sketch_params(n_text, d, seed_text);
        p.params_vis = sample_sketch_params(n_vis, d, seed_vis);
        p.d = d;
        p.normalize = normalize;
        return p;
    }
};

namespace detail {

// Forward of the optional signed-sqrt + L2 normalization, with cache.
struct NormCache {
    Tensor ssq;      // signed sqrt of input
    double norm = 0; // L2 norm of ssq (clamped away from 0)
    Tensor in;
};

inline Tensor norm_forward(const Tensor& x, NormCache& cache) {
    cache.in = x;
    cache.ssq = Tensor::zeros(x.shape);
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        const double y = (v >= 0 ? 1.0 : -1.0) * std::sqrt(std::abs(v));
        cache.ssq[i] = static_cast<real>(y);
        sq += y * y;
    }
    cache.norm = std::max(std::sqrt(sq), 1e-12);
    Tensor out = Tensor::zeros(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<real>(double(cache.ssq[i]) / cache.norm);
    return out;
}

inline Tensor norm_backward(const Tensor& grad_out, const NormCache& c) {
    // out = u / |u| with u = signed sqrt of x; du_i/dx_i = 1 / (2 sqrt(|x_i|)).
    const std::size_t n = grad_out.size();
    double gdotu = 0.0;
    for (std::size_t i = 0; i < n; ++i) gdotu += double(grad_out[i]) * double(c.ssq[i]);
    Tensor dx = Tensor::zeros(grad_out.shape);
    for (std::size_t i = 0; i < n; ++i) {
        const double du = double(grad_out[i]) / c.norm - gdotu * double(c.ssq[i]) / (c.norm * c.norm * c.norm);
        const double dsq = du / (2.0 * std::max(std::sqrt(std::abs(double(c.in[i]))), 1e-8));
        dx[i] = static_cast<real>(dsq);
    }
    return dx;
}

}  // namespace detail

/// Phi(v1, v2) = FFT^{-1}(FFT(Psi1(v1)) . FFT(Psi2(v2))), the count sketch of
/// the outer product v1 (x) v2 under the pair hash (h1[i]+h2[j]) mod d and
/// sign s1[i]*s2[j].
inline Tensor mcb_pool(const Tensor& v1, const Tensor& v2, const McbPooler& pooler) {
    Tensor psi1 = count_sketch(v1, pooler.params_text);
    Tensor psi2 = count_sketch(v2, pooler.params_vis);
    Tensor out = circular_convolution(psi1, psi2);
    if (pooler.normalize) {
        detail::NormCache cache;
        out = detail::norm_forward(out, cache);
    }
    return out;
}

/// Gradients of mcb_pool with respect to both inputs. Hash and sign tables
/// receive no gradient. grad_v1 = Psi1^T(grad_out (star) Psi2(v2)) where
/// (star) is circular correlation, and symmetrically for v2.
inline std::pair<Tensor, Tensor> mcb_backward(const Tensor& grad_out, const Tensor& v1, const Tensor& v2,
                                              const McbPooler& pooler) {
    if (grad_out.rank() != 1 || grad_out.size() != pooler.d)
        throw std::invalid_argument("mcb_backward: grad_out length must equal d");
    Tensor psi1 = count_sketch(v1, pooler.params_text);
    Tensor psi2 = count_sketch(v2, pooler.params_vis);
    Tensor g = grad_out;
    if (pooler.normalize) {
        detail::NormCache cache;
        (void)detail::norm_forward(circular_convolution(psi1, psi2), cache);
        g = detail::norm_backward(grad_out, cache);
    }
    Tensor grad_psi1 = circular_correlation(g, psi2);
    Tensor grad_psi2 = circular_correlation(g, psi1);
    return {count_sketch_adjoint(grad_psi1, pooler.params_text),
            count_sketch_adjoint(grad_psi2, pooler.params_vis)};
}

/// Size of the full bilinear map W in c = W [v1 (x) v2]; exists to document
/// why the explicit map is infeasible (n1 = n2 = 1024, d = 512 gives ~537M).
inline std::uint64_t bilinear_param_count(std::uint64_t n1, std::uint64_t n2, std::uint64_t d) {
    if (n1 == 0 || n2 == 0 || d == 0) throw std::invalid_argument("bilinear_param_count: positive inputs required");
    std::uint64_t ab = 0, abc = 0;
    if (__builtin_mul_overflow(n1, n2, &ab) || __builtin_mul_overflow(ab, d, &abc))
        throw std::overflow_error("bilinear_param_count: product overflows 64 bits");
    return abc;
}

}  // namespace mcb
