#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include <polyalign/numerics.hpp>
#include <polyalign/rng.hpp>

using namespace polyalign;
using Catch::Matchers::WithinAbs;

namespace {

Vec random_vec(std::mt19937_64& rng, std::size_t d) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec v(d);
    for (double& x : v) x = n(rng);
    return v;
}

} // namespace

TEST_CASE("cosine similarity examples") {
    CHECK(cosine_sim(Vec{3, 4}, Vec{3, 4}) == Catch::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_sim(Vec{1, 0}, Vec{0, 1}) == 0.0);
    CHECK_THAT(cosine_sim(Vec{1, 1}, Vec{1, 0}), WithinAbs(0.70710678118654752, 1e-15));
}

TEST_CASE("cosine similarity rejects zero norm and mismatched dims") {
    CHECK_THROWS_AS(cosine_sim(Vec{0, 0}, Vec{1, 0}), DegenerateInputError);
    CHECK_THROWS_AS(cosine_sim(Vec{1, 0}, Vec{0, 0}), DegenerateInputError);
    CHECK_THROWS_AS(cosine_sim(Vec{1, 0}, Vec{1, 0, 0}), DimensionError);
}

TEST_CASE("cosine similarity is symmetric and scale invariant") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> pos(0.1, 10.0);
    for (int t = 0; t < 200; ++t) {
        Vec u = random_vec(rng, 7), v = random_vec(rng, 7);
        const double s = cosine_sim(u, v);
        CHECK(s >= -1.0 - 1e-12);
        CHECK(s <= 1.0 + 1e-12);
        CHECK_THAT(cosine_sim(v, u), WithinAbs(s, 1e-12));
        const double a = pos(rng), b = pos(rng);
        for (double& x : u) x *= a;
        for (double& x : v) x *= b;
        CHECK_THAT(cosine_sim(u, v), WithinAbs(s, 1e-12));
    }
}

TEST_CASE("sim_matrix examples and loop oracle") {
    const auto one = sim_matrix({Vec{2, 0}}, {Vec{5, 0}});
    CHECK(one.rows() == 1);
    CHECK(one(0, 0) == 1.0);

    const std::vector<Vec> basis{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    const auto id = sim_matrix(basis, basis);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(id(i, j) == (i == j ? 1.0 : 0.0));

    std::mt19937_64 rng(3);
    std::vector<Vec> q, c;
    for (int i = 0; i < 4; ++i) {
        q.push_back(random_vec(rng, 5));
        c.push_back(random_vec(rng, 5));
    }
    const auto s = sim_matrix(q, c);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(s(i, j) == cosine_sim(q[i], c[j]));
}

TEST_CASE("sim_matrix reports the offending index") {
    try {
        sim_matrix({Vec{1, 0}}, {Vec{1, 1}, Vec{0, 0}, Vec{1, 0}});
        FAIL("expected DegenerateInputError");
    } catch (const DegenerateInputError& e) {
        CHECK(e.index() == 1);
    }
    CHECK_THROWS_AS(sim_matrix({Vec{1, 0}}, {Vec{1, 0, 0}}), DimensionError);
    CHECK_THROWS_AS(sim_matrix({}, {Vec{1, 0}}), DimensionError);
}

TEST_CASE("log_softmax_row examples") {
    for (double tau : {0.07, 1.0, 5.0}) {
        const auto z = log_softmax_row(Vec{0.3, 0.3, 0.3, 0.3}, tau);
        for (double v : z) CHECK_THAT(v, WithinAbs(-1.3862943611198906, 1e-12));
    }
    const auto single = log_softmax_row(Vec{42.0}, 0.07);
    CHECK(single.size() == 1);
    CHECK(single[0] == 0.0);

    // Extended-precision oracle for (1, 0) at tau = 0.07.
    const long double t = 0.07L;
    const long double e1 = std::exp(1.0L / t);
    const long double denom = e1 + 1.0L;
    const auto z = log_softmax_row(Vec{1.0, 0.0}, 0.07);
    CHECK_THAT(z[0], WithinAbs(static_cast<double>(std::log(e1 / denom)), 1e-12));
    CHECK_THAT(z[1], WithinAbs(static_cast<double>(std::log(1.0L / denom)), 1e-12));
}

TEST_CASE("log_softmax_row errors") {
    CHECK_THROWS_AS(log_softmax_row(Vec{1, 2}, 0.0), ConfigError);
    CHECK_THROWS_AS(log_softmax_row(Vec{1, 2}, -1.0), ConfigError);
    CHECK_THROWS_AS(log_softmax_row(Vec{1, NAN}, 1.0), NumericError);
}

TEST_CASE("log_softmax_row normalizes, is shift invariant and never overflows") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> shift(-1e3, 1e3);
    for (int t = 0; t < 200; ++t) {
        Vec s = random_vec(rng, 1 + t % 9);
        for (double& x : s) x *= 50.0;
        const double tau = 0.01 + 0.1 * (t % 7);
        const auto z = log_softmax_row(s, tau);
        double total = 0.0;
        for (double v : z) total += std::exp(v);
        CHECK_THAT(total, WithinAbs(1.0, 1e-12));
        CHECK(all_finite(z));

        const double c = shift(rng);
        Vec s2 = s;
        for (double& x : s2) x += c * tau;  // keep the shifted scores' magnitude comparable
        const auto z2 = log_softmax_row(s2, tau);
        for (std::size_t i = 0; i < z.size(); ++i) CHECK_THAT(z2[i], WithinAbs(z[i], 1e-9 * std::max(1.0, std::abs(z[i]))));
    }
    const auto big = softmax_row(Vec{1e4, 0.0}, 0.07);
    CHECK(big[0] == 1.0);
    CHECK(big[1] == 0.0);
}

TEST_CASE("shift invariance at unit scale holds to 1e-12") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 100; ++t) {
        const Vec s = random_vec(rng, 6);
        Vec s2 = s;
        for (double& x : s2) x += 0.75;
        const auto a = log_softmax_row(s, 1.0), b = log_softmax_row(s2, 1.0);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK_THAT(a[i], WithinAbs(b[i], 1e-12));
    }
}

TEST_CASE("named streams are independent of each other and reproducible") {
    auto a = named_stream(3, "corpus"), b = named_stream(3, "corpus"), c = named_stream(3, "init");
    const auto x = a(), y = b(), z = c();
    CHECK(x == y);
    CHECK(x != z);
    CHECK(named_stream(4, "corpus")() != x);
}
