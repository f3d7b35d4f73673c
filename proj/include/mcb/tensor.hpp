#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcb {

#ifdef MCB_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

/// Dense row-major tensor. Shapes are immutable after construction;
/// operations return new values.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<real> data;

    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape) {
        Tensor t;
        std::size_t n = 1;
        for (std::size_t s : shape) {
            if (s == 0) throw std::invalid_argument("Tensor: zero extent");
            n *= s;
        }
        t.shape = std::move(shape);
        t.data.assign(n, real(0));
        return t;
    }

    static Tensor from(std::vector<std::size_t> shape, std::vector<real> values) {
        Tensor t = zeros(std::move(shape));
        if (values.size() != t.data.size())
            throw std::invalid_argument("Tensor: data length does not match shape");
        t.data = std::move(values);
        return t;
    }

    static Tensor vec(std::vector<real> values) {
        const std::size_t n = values.size();
        return from({n}, std::move(values));
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t rows() const {
        if (rank() != 2) throw std::invalid_argument("Tensor: rows() on non-matrix");
        return shape[0];
    }
    std::size_t cols() const {
        if (rank() != 2) throw std::invalid_argument("Tensor: cols() on non-matrix");
        return shape[1];
    }

    real& operator[](std::size_t i) { return data[i]; }
    real operator[](std::size_t i) const { return data[i]; }

    real& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    real operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool finite() const {
        for (real v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void check_finite(const char* where) const {
        if (!finite()) throw std::runtime_error(std::string(where) + ": non-finite value");
    }

    /// Row i of a matrix as a fresh vector tensor.
    Tensor row(std::size_t i) const {
        Tensor r = zeros({cols()});
        for (std::size_t j = 0; j < cols(); ++j) r[j] = (*this)(i, j);
        return r;
    }

    void set_row(std::size_t i, const Tensor& v) {
        if (v.size() != cols()) throw std::invalid_argument("Tensor: set_row length mismatch");
        for (std::size_t j = 0; j < cols(); ++j) (*this)(i, j) = v[j];
    }
};

/// Deterministic PRNG wrapper. All randomness in the project flows through
/// std::mt19937_64 with explicit output mapping, so streams are identical
/// across platforms and standard-library versions.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, n). Modulo mapping; bias is < n / 2^64, negligible for
    /// the table sizes used here.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below(0)");
        return gen_() % n;
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (no caching, two draws per call).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

  private:
    std::mt19937_64 gen_;
};

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw std::invalid_argument("matmul: rank-2 inputs required");
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions disagree");
    Tensor c = Tensor::zeros({a.rows(), b.cols()});
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a(i, p);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j)
                c(i, j) += static_cast<real>(av * b(p, j));
        }
    return c;
}

/// y = W x  for rank-2 W and rank-1 x.
inline Tensor matvec(const Tensor& w, const Tensor& x) {
    if (w.rank() != 2 || x.rank() != 1) throw std::invalid_argument("matvec: shape mismatch");
    if (w.cols() != x.size()) throw std::invalid_argument("matvec: inner dimensions disagree");
    Tensor y = Tensor::zeros({w.rows()});
    for (std::size_t i = 0; i < w.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) acc += double(w(i, j)) * double(x[j]);
        y[i] = static_cast<real>(acc);
    }
    return y;
}

/// y = W^T x.
inline Tensor matvec_t(const Tensor& w, const Tensor& x) {
    if (w.rank() != 2 || x.rank() != 1 || w.rows() != x.size())
        throw std::invalid_argument("matvec_t: shape mismatch");
    Tensor y = Tensor::zeros({w.cols()});
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        for (std::size_t j = 0; j < w.cols(); ++j) y[j] += static_cast<real>(xi * w(i, j));
    }
    return y;
}

/// grad_W += g x^T (outer-product accumulation used by every dense backward).
inline void add_outer(Tensor& gw, const Tensor& g, const Tensor& x) {
    if (gw.rows() != g.size() || gw.cols() != x.size())
        throw std::invalid_argument("add_outer: shape mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        for (std::size_t j = 0; j < x.size(); ++j) gw(i, j) += static_cast<real>(gi * x[j]);
    }
}

inline void axpy(Tensor& y, double alpha, const Tensor& x) {
    if (!y.same_shape(x)) throw std::invalid_argument("axpy: shape mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += static_cast<real>(alpha * x[i]);
}

inline Tensor concat(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1) throw std::invalid_argument("concat: rank-1 inputs required");
    Tensor c = Tensor::zeros({a.size() + b.size()});
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i];
    for (std::size_t i = 0; i < b.size(); ++i) c[a.size() + i] = b[i];
    return c;
}

inline double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
    return acc;
}

/// Numerically stable softmax over a rank-1 tensor.
inline Tensor softmax(const Tensor& x) {
    if (x.rank() != 1 || x.size() == 0) throw std::invalid_argument("softmax: nonempty rank-1 input required");
    x.check_finite("softmax");
    double mx = x[0];
    for (std::size_t i = 1; i < x.size(); ++i) mx = std::max(mx, double(x[i]));
    Tensor y = Tensor::zeros({x.size()});
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double e = std::exp(double(x[i]) - mx);
        y[i] = static_cast<real>(e);
        sum += e;
    }
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<real>(double(y[i]) / sum);
    return y;
}

/// Backward of y = softmax(x): dx_i = y_i (dy_i - sum_j y_j dy_j).
inline Tensor softmax_backward(const Tensor& y, const Tensor& dy) {
    if (!y.same_shape(dy)) throw std::invalid_argument("softmax_backward: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += double(y[i]) * double(dy[i]);
    Tensor dx = Tensor::zeros(y.shape);
    for (std::size_t i = 0; i < y.size(); ++i)
        dx[i] = static_cast<real>(double(y[i]) * (double(dy[i]) - s));
    return dx;
}

}  // namespace mcb
