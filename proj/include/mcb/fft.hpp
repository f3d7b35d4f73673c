#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mcb/tensor.hpp"

namespace mcb {

/// Split-layout complex vector used by the FFT routines.
struct ComplexVector {
    std::vector<double> re;
    std::vector<double> im;

    ComplexVector() = default;
    explicit ComplexVector(std::size_t n) : re(n, 0.0), im(n, 0.0) {}
    ComplexVector(std::vector<double> r, std::vector<double> i) : re(std::move(r)), im(std::move(i)) {
        if (re.size() != im.size()) throw std::invalid_argument("ComplexVector: length mismatch");
    }

    std::size_t size() const { return re.size(); }

    void check() const {
        if (re.size() != im.size()) throw std::invalid_argument("ComplexVector: length mismatch");
        if (re.empty()) throw std::invalid_argument("ComplexVector: empty");
        for (std::size_t i = 0; i < re.size(); ++i)
            if (!std::isfinite(re[i]) || !std::isfinite(im[i]))
                throw std::invalid_argument("ComplexVector: non-finite entry");
    }
};

namespace detail {

constexpr double kTwoPi = 6.283185307179586476925286766559;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

/// In-place iterative radix-2 Cooley-Tukey. sign = -1 forward, +1 inverse
/// (no normalization here).
inline void fft_pow2(std::vector<double>& re, std::vector<double>& im, int sign) {
    const std::size_t n = re.size();
    // bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * kTwoPi / double(len);
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (std::size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::size_t a = i + k, b = i + k + len / 2;
                const double tr = re[b] * cr - im[b] * ci;
                const double ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

/// Bluestein's chirp-z transform for arbitrary n. Chirp phases use
/// j^2 mod 2n so the angle argument stays small for large j.
inline void fft_bluestein(std::vector<double>& re, std::vector<double>& im, int sign) {
    const std::size_t n = re.size();
    const std::size_t m = next_pow2(2 * n - 1);
    std::vector<double> wr(n), wi(n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t q = (j * j) % (2 * n);
        const double ang = sign * kTwoPi * 0.5 * double(q) / double(n);
        wr[j] = std::cos(ang);
        wi[j] = std::sin(ang);
    }
    std::vector<double> ar(m, 0.0), ai(m, 0.0), br(m, 0.0), bi(m, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        ar[j] = re[j] * wr[j] - im[j] * wi[j];
        ai[j] = re[j] * wi[j] + im[j] * wr[j];
    }
    br[0] = wr[0];
    bi[0] = -wi[0];
    for (std::size_t j = 1; j < n; ++j) {
        br[j] = br[m - j] = wr[j];
        bi[j] = bi[m - j] = -wi[j];
    }
    fft_pow2(ar, ai, -1);
    fft_pow2(br, bi, -1);
    for (std::size_t j = 0; j < m; ++j) {
        const double r = ar[j] * br[j] - ai[j] * bi[j];
        const double i = ar[j] * bi[j] + ai[j] * br[j];
        ar[j] = r;
        ai[j] = i;
    }
    fft_pow2(ar, ai, +1);
    const double inv_m = 1.0 / double(m);
    for (std::size_t j = 0; j < n; ++j) {
        const double cr = ar[j] * inv_m, ci = ai[j] * inv_m;
        re[j] = cr * wr[j] - ci * wi[j];
        im[j] = cr * wi[j] + ci * wr[j];
    }
}

inline void transform(std::vector<double>& re, std::vector<double>& im, int sign) {
    if (re.size() == 1) return;
    if (is_pow2(re.size()))
        fft_pow2(re, im, sign);
    else
        fft_bluestein(re, im, sign);
}

}  // namespace detail

/// Discrete Fourier transform, X[k] = sum_j x[j] e^{-2*pi*i*j*k/n}.
/// Radix-2 for powers of two, Bluestein otherwise.
inline ComplexVector fft(const ComplexVector& x) {
    x.check();
    ComplexVector y(x.re, x.im);
    detail::transform(y.re, y.im, -1);
    return y;
}

/// Inverse DFT with 1/n normalization; ifft(fft(x)) == x.
inline ComplexVector ifft(const ComplexVector& x) {
    x.check();
    ComplexVector y(x.re, x.im);
    detail::transform(y.re, y.im, +1);
    const double inv_n = 1.0 / double(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        y.re[i] *= inv_n;
        y.im[i] *= inv_n;
    }
    return y;
}

namespace detail {

inline Tensor real_of_product_transform(const Tensor& a, const Tensor& b, bool conjugate_b) {
    if (a.rank() != 1 || b.rank() != 1) throw std::invalid_argument("circular op: rank-1 inputs required");
    if (a.size() != b.size()) throw std::invalid_argument("circular op: length mismatch");
    const std::size_t n = a.size();
    ComplexVector fa(n), fb(n);
    for (std::size_t i = 0; i < n; ++i) {
        fa.re[i] = a[i];
        fb.re[i] = b[i];
    }
    fa = fft(fa);
    fb = fft(fb);
    ComplexVector prod(n);
    const double sb = conjugate_b ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        prod.re[i] = fa.re[i] * fb.re[i] - fa.im[i] * (sb * fb.im[i]);
        prod.im[i] = fa.re[i] * (sb * fb.im[i]) + fa.im[i] * fb.re[i];
    }
    ComplexVector c = ifft(prod);
    double mx = 1.0, mi = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx = std::max(mx, std::abs(c.re[i]));
        mi = std::max(mi, std::abs(c.im[i]));
    }
    if (mi >= 1e-6 * mx) throw std::runtime_error("circular op: imaginary residue too large");
    Tensor out = Tensor::zeros({n});
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<real>(c.re[i]);
    return out;
}

}  // namespace detail

/// c[k] = sum_j a[j] b[(k-j) mod n], via FFT.
inline Tensor circular_convolution(const Tensor& a, const Tensor& b) {
    return detail::real_of_product_transform(a, b, false);
}

/// c[k] = sum_j a[j] b[(j-k) mod n] (circular cross-correlation), via FFT.
inline Tensor circular_correlation(const Tensor& a, const Tensor& b) {
    return detail::real_of_product_transform(a, b, true);
}

}  // namespace mcb
