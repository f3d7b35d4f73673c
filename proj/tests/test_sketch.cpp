#include <catch2/catch_amalgamated.hpp>

#include "mcb/sketch.hpp"

using namespace mcb;

namespace {

Tensor random_vec(std::size_t n, Rng& rng) {
    Tensor t = Tensor::zeros({n});
    for (auto& v : t.data) v = real(rng.uniform(-1, 1));
    return t;
}

/// Brute-force count sketch of the flattened outer product v1 (x) v2 under
/// the combined hash (h1[i]+h2[j]) mod d and sign s1[i]*s2[j].
Tensor outer_product_sketch(const Tensor& v1, const Tensor& v2, const McbPooler& p) {
    Tensor y = Tensor::zeros({p.d});
    for (std::size_t i = 0; i < v1.size(); ++i)
        for (std::size_t j = 0; j < v2.size(); ++j) {
            const std::size_t bucket = (p.params_text.h[i] + p.params_vis.h[j]) % p.d;
            const double sign = int(p.params_text.s[i]) * int(p.params_vis.s[j]);
            y[bucket] += real(sign * double(v1[i]) * double(v2[j]));
        }
    return y;
}

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (auto v : t.data) m = std::max(m, std::abs(double(v)));
    return m;
}

}  // namespace

TEST_CASE("sample_sketch_params determinism and range") {
    auto a = sample_sketch_params(8, 4, 42);
    auto b = sample_sketch_params(8, 4, 42);
    CHECK(a.h == b.h);
    CHECK(a.s == b.s);
    for (std::size_t i = 0; i < a.n; ++i) {
        CHECK(a.h[i] < 4);
        CHECK((a.s[i] == 1 || a.s[i] == -1));
    }
    CHECK_THROWS(sample_sketch_params(0, 4, 1));
    CHECK_THROWS(sample_sketch_params(4, 0, 1));
}

TEST_CASE("sample_sketch_params bucket uniformity (chi-square)") {
    const std::size_t n = 100000, d = 16;
    auto p = sample_sketch_params(n, d, 12345);
    std::vector<double> counts(d, 0.0);
    for (auto h : p.h) counts[h] += 1.0;
    const double expected = double(n) / double(d);
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // 99% critical value for 15 degrees of freedom
    CHECK(chi2 < 30.578);
    // signs roughly balanced too
    long long sum = 0;
    for (auto s : p.s) sum += s;
    CHECK(std::abs(sum) < 4 * std::sqrt(double(n)));
}

TEST_CASE("count_sketch hand example and linearity") {
    SketchParams p;
    p.n = 3;
    p.d = 2;
    p.h = {0, 1, 0};
    p.s = {1, -1, 1};
    Tensor y = count_sketch(Tensor::vec({1, 2, 3}), p);
    CHECK(double(y[0]) == 4.0);
    CHECK(double(y[1]) == -2.0);

    Tensor zero = count_sketch(Tensor::vec({0, 0, 0}), p);
    CHECK(max_abs(zero) == 0.0);

    Rng rng(1);
    auto q = sample_sketch_params(20, 8, 5);
    Tensor u = random_vec(20, rng), v = random_vec(20, rng);
    Tensor lin = Tensor::zeros({20});
    const double alpha = 2.5, beta = -1.25;
    for (std::size_t i = 0; i < 20; ++i) lin[i] = real(alpha * double(u[i]) + beta * double(v[i]));
    Tensor left = count_sketch(lin, q);
    Tensor su = count_sketch(u, q), sv = count_sketch(v, q);
    for (std::size_t i = 0; i < 8; ++i)
        CHECK(double(left[i]) == Catch::Approx(alpha * double(su[i]) + beta * double(sv[i])).margin(1e-12));
    CHECK_THROWS(count_sketch(Tensor::vec({1, 2}), q));
}

TEST_CASE("mcb_pool equals outer-product sketch oracle") {
    Rng rng(99);
    auto pooler = McbPooler::make(20, 30, 64, 7, 8);
    Tensor v1 = random_vec(20, rng), v2 = random_vec(30, rng);
    Tensor got = mcb_pool(v1, v2, pooler);
    Tensor want = outer_product_sketch(v1, v2, pooler);
    const double scale = std::max(max_abs(want), 1e-12);
    for (std::size_t i = 0; i < 64; ++i)
        CHECK(std::abs(double(got[i]) - double(want[i])) / scale < 1e-8);

    Tensor zero = mcb_pool(Tensor::zeros({20}), v2, pooler);
    CHECK(max_abs(zero) < 1e-12);
}

TEST_CASE("mcb_pool accepts the paper-scale dims") {
    auto pooler = McbPooler::make(1024, 1024, 512, 1, 2);
    Rng rng(2);
    Tensor v1 = random_vec(1024, rng), v2 = random_vec(1024, rng);
    Tensor out = mcb_pool(v1, v2, pooler);
    CHECK(out.size() == 512);
    CHECK(out.finite());
}

TEST_CASE("mcb_backward matches finite differences") {
    Rng rng(17);
    auto pooler = McbPooler::make(7, 5, 8, 3, 4);
    Tensor v1 = random_vec(7, rng), v2 = random_vec(5, rng), g = random_vec(8, rng);
    auto [g1, g2] = mcb_backward(g, v1, v2, pooler);
    const double eps = 1e-6;
    auto loss = [&](const Tensor& a, const Tensor& b) { return dot(mcb_pool(a, b, pooler), g); };
    for (std::size_t i = 0; i < 7; ++i) {
        Tensor up = v1, dn = v1;
        up[i] += real(eps);
        dn[i] -= real(eps);
        const double fd = (loss(up, v2) - loss(dn, v2)) / (2 * eps);
        CHECK(double(g1[i]) == Catch::Approx(fd).margin(1e-6).epsilon(1e-6));
    }
    for (std::size_t j = 0; j < 5; ++j) {
        Tensor up = v2, dn = v2;
        up[j] += real(eps);
        dn[j] -= real(eps);
        const double fd = (loss(v1, up) - loss(v1, dn)) / (2 * eps);
        CHECK(double(g2[j]) == Catch::Approx(fd).margin(1e-6).epsilon(1e-6));
    }
    // trivials: zero upstream grad, linear scaling
    auto [z1, z2] = mcb_backward(Tensor::zeros({8}), v1, v2, pooler);
    CHECK(max_abs(z1) == 0.0);
    CHECK(max_abs(z2) == 0.0);
    Tensor g2x = g;
    for (auto& v : g2x.data) v *= 2;
    auto [d1, d2] = mcb_backward(g2x, v1, v2, pooler);
    for (std::size_t i = 0; i < 7; ++i) CHECK(double(d1[i]) == Catch::Approx(2 * double(g1[i])).margin(1e-10));
    for (std::size_t j = 0; j < 5; ++j) CHECK(double(d2[j]) == Catch::Approx(2 * double(g2[j])).margin(1e-10));
}

TEST_CASE("mcb_backward with normalization matches finite differences") {
    Rng rng(23);
    auto pooler = McbPooler::make(6, 6, 8, 11, 12, true);
    Tensor v1 = random_vec(6, rng), v2 = random_vec(6, rng), g = random_vec(8, rng);
    auto [g1, g2] = mcb_backward(g, v1, v2, pooler);
    const double eps = 1e-6;
    auto loss = [&](const Tensor& a, const Tensor& b) { return dot(mcb_pool(a, b, pooler), g); };
    for (std::size_t i = 0; i < 6; ++i) {
        Tensor up = v1, dn = v1;
        up[i] += real(eps);
        dn[i] -= real(eps);
        const double fd = (loss(up, v2) - loss(dn, v2)) / (2 * eps);
        CHECK(double(g1[i]) == Catch::Approx(fd).margin(1e-4).epsilon(1e-4));
    }
}

TEST_CASE("unbiased inner-product estimation") {
    Rng rng(31);
    const std::size_t n = 16, d = 64, poolers = 1000;
    Tensor u1 = random_vec(n, rng), u2 = random_vec(n, rng), v1 = random_vec(n, rng), v2 = random_vec(n, rng);
    const double exact = dot(u1, v1) * dot(u2, v2);
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t k = 0; k < poolers; ++k) {
        auto pooler = McbPooler::make(n, n, d, 1000 + 2 * k, 1001 + 2 * k);
        const double est = dot(mcb_pool(u1, u2, pooler), mcb_pool(v1, v2, pooler));
        sum += est;
        sumsq += est * est;
    }
    const double mean = sum / poolers;
    const double var = sumsq / poolers - mean * mean;
    const double se = std::sqrt(var / poolers);
    CHECK(std::abs(mean - exact) < 3 * se);
}

TEST_CASE("estimator std is non-increasing in d") {
    Rng rng(37);
    const std::size_t n = 16, poolers = 400;
    Tensor u1 = random_vec(n, rng), u2 = random_vec(n, rng), v1 = random_vec(n, rng), v2 = random_vec(n, rng);
    std::vector<double> stds;
    for (std::size_t d : {64ul, 256ul, 1024ul}) {
        double sum = 0.0, sumsq = 0.0;
        for (std::size_t k = 0; k < poolers; ++k) {
            auto pooler = McbPooler::make(n, n, d, d * 10000 + 2 * k, d * 10000 + 2 * k + 1);
            const double est = dot(mcb_pool(u1, u2, pooler), mcb_pool(v1, v2, pooler));
            sum += est;
            sumsq += est * est;
        }
        const double mean = sum / poolers;
        stds.push_back(std::sqrt(std::max(0.0, sumsq / poolers - mean * mean)));
    }
    CHECK(stds[1] <= stds[0] * 1.1);
    CHECK(stds[2] <= stds[1] * 1.1);
}

TEST_CASE("bilinear_param_count") {
    CHECK(bilinear_param_count(1024, 1024, 512) == 536870912ull);
    CHECK(bilinear_param_count(1, 1, 1) == 1ull);
    CHECK(bilinear_param_count(2, 3, 4) == 24ull);
    CHECK_THROWS_AS(bilinear_param_count(1ull << 40, 1ull << 40, 2), std::overflow_error);
    CHECK_THROWS(bilinear_param_count(0, 1, 1));
}
