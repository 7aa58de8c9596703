#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "roleattn/attention.hpp"
#include "roleattn/errors.hpp"

using namespace roleattn;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c) {
    return oracle::to_tensor(oracle::random_matrix(rng, r, c));
}

// Random padding/role masks at width n for `valid` real tokens.
MaskSet random_masks(Rng& rng, std::size_t valid, std::size_t n, const std::vector<Role>& roles) {
    MaskSet ms;
    ms.padding = padding_mask(valid, n).values;
    for (Role r : roles) {
        if (r == Role::Padding) continue;
        RoleMask m{r, oracle::additive_mask(oracle::random_allowed(rng, valid))};
        ms.roles[r] = combine(pad_to_width(m, n), padding_mask(valid, n)).values;
    }
    return ms;
}

std::vector<std::vector<bool>> allowed_of(const Tensor& mask) {
    std::vector<std::vector<bool>> a(mask.rows(), std::vector<bool>(mask.cols()));
    for (std::size_t i = 0; i < mask.rows(); ++i)
        for (std::size_t j = 0; j < mask.cols(); ++j) a[i][j] = mask.at(i, j) == 0.0;
    return a;
}

oracle::Matrix block(const oracle::Matrix& m, std::size_t first, std::size_t count) {
    oracle::Matrix out(m.size());
    for (std::size_t i = 0; i < m.size(); ++i)
        out[i].assign(m[i].begin() + static_cast<std::ptrdiff_t>(first),
                      m[i].begin() + static_cast<std::ptrdiff_t>(first + count));
    return out;
}

}  // namespace

TEST_CASE("masked attention agrees with the restricted softmax") {
    Rng rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(6), dk = 1 + rng.below(4), dv = 1 + rng.below(4);
        auto q = oracle::random_matrix(rng, n, dk, -2, 2);
        auto k = oracle::random_matrix(rng, n, dk, -2, 2);
        auto v = oracle::random_matrix(rng, n, dv, -2, 2);
        auto allowed = oracle::random_allowed(rng, n);
        auto want = oracle::restricted_attention(q, k, v, allowed);

        Tape t;
        AttentionOutput got = masked_attention(t.constant(oracle::to_tensor(q)), t.constant(oracle::to_tensor(k)),
                                               t.constant(oracle::to_tensor(v)), oracle::additive_mask(allowed));
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (!allowed[i][j]) CHECK(got.weights.at(i, j) == 0.0);
                CHECK(std::abs(got.weights.at(i, j) - want.weights[i][j]) <= 1e-12);
                row += got.weights.at(i, j);
            }
            CHECK(std::abs(row - 1.0) <= 1e-12);
            for (std::size_t c = 0; c < dv; ++c) CHECK(std::abs(got.output.value().at(i, c) - want.output[i][c]) <= 1e-12);
        }
    }
}

TEST_CASE("an all-zero mask reproduces unmasked attention bit for bit") {
    Rng rng(8);
    Tape t;
    Var q = t.constant(random_tensor(rng, 5, 3));
    Var k = t.constant(random_tensor(rng, 5, 3));
    Var v = t.constant(random_tensor(rng, 5, 2));
    auto plain = scaled_dot_attention(q, k, v);
    auto masked = masked_attention(q, k, v, Tensor::matrix(5, 5));
    CHECK(plain.weights == masked.weights);
    CHECK(plain.output.value() == masked.output.value());
}

TEST_CASE("masks must match and be row-feasible") {
    Tape t;
    Var x = t.constant(Tensor::matrix(3, 2, 0.5));
    CHECK_THROWS_AS(masked_attention(x, x, x, Tensor::matrix(2, 2)), ShapeError);
    Tensor bad = Tensor::matrix(3, 3);
    for (std::size_t j = 0; j < 3; ++j) bad.at(1, j) = -kInf;
    CHECK_THROWS_AS(masked_attention(x, x, x, bad), DegenerateRowError);
    Var y = t.constant(Tensor::matrix(3, 4));
    CHECK_THROWS_AS(scaled_dot_attention(x, y, x), ShapeError);
}

TEST_CASE("head configuration checks") {
    auto validate = [](std::size_t d, std::size_t h, std::vector<Role> roles) {
        HeadConfig{d, h, std::move(roles)}.validate();
    };
    CHECK_NOTHROW(validate(24, 6, {Role::RareW, Role::RelPos}));
    CHECK_THROWS_AS(validate(10, 3, {}), ConfigError);
    CHECK_THROWS_AS(validate(8, 2, {Role::RareW, Role::Seprat, Role::RelPos}), ConfigError);
    CHECK_THROWS_AS(validate(8, 4, {Role::RareW, Role::RareW}), ConfigError);
    CHECK_NOTHROW(validate(8, 4, {Role::Padding, Role::Padding}));
    CHECK(HeadConfig{24, 6, {}}.d_k() == 4);
}

TEST_CASE("multi-head output is the projected concatenation of per-head oracles") {
    Rng rng(77);
    const std::size_t n = 6, valid = 4, d = 8;
    HeadConfig cfg{d, 4, {Role::DepSyn, Role::RelPos, Role::Padding}};
    MaskSet ms = random_masks(rng, valid, n, {Role::DepSyn, Role::RelPos});
    auto x = oracle::random_matrix(rng, n, d);
    auto wq = oracle::random_matrix(rng, d, d), wk = oracle::random_matrix(rng, d, d);
    auto wv = oracle::random_matrix(rng, d, d), wo = oracle::random_matrix(rng, d, d);

    Tape t;
    HeadWeights w{t.constant(oracle::to_tensor(wq)), t.constant(oracle::to_tensor(wk)),
                  t.constant(oracle::to_tensor(wv)), t.constant(oracle::to_tensor(wo))};
    MultiHeadOutput got = multi_head(t.constant(oracle::to_tensor(x)), w, cfg, ms);
    REQUIRE(got.weights.size() == 4);
    REQUIRE(got.heads.size() == 4);

    auto q = oracle::matmul(x, wq), k = oracle::matmul(x, wk), v = oracle::matmul(x, wv);
    const Tensor* head_masks[] = {&ms.roles.at(Role::DepSyn), &ms.roles.at(Role::RelPos), &ms.padding, &ms.padding};
    oracle::Matrix concat(n);
    for (std::size_t h = 0; h < 4; ++h) {
        auto r = oracle::restricted_attention(block(q, h * 2, 2), block(k, h * 2, 2), block(v, h * 2, 2),
                                              allowed_of(*head_masks[h]));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) CHECK(std::abs(got.weights[h].at(i, j) - r.weights[i][j]) <= 1e-12);
            concat[i].insert(concat[i].end(), r.output[i].begin(), r.output[i].end());
        }
    }
    auto want = oracle::matmul(concat, wo);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(got.output.value().at(i, c) - want[i][c]) <= 1e-11);
}

TEST_CASE("multi-head gradients match central differences") {
    Rng rng(5);
    const std::size_t n = 5, valid = 4, d = 6;
    HeadConfig cfg{d, 3, {Role::MajRel, Role::Seprat}};
    MaskSet ms = random_masks(rng, valid, n, cfg.roles);
    ParameterSet ps;
    auto& x = ps.add("x", random_tensor(rng, n, d));
    auto& wq = ps.add("wq", random_tensor(rng, d, d));
    auto& wk = ps.add("wk", random_tensor(rng, d, d));
    auto& wv = ps.add("wv", random_tensor(rng, d, d));
    auto& wo = ps.add("wo", random_tensor(rng, d, d));
    Tensor weights = random_tensor(rng, n, d);
    auto r = oracle::check_gradients(ps, [&](Tape& t) {
        HeadWeights w{t.parameter(wq), t.parameter(wk), t.parameter(wv), t.parameter(wo)};
        return ops::sum(ops::mul_constant(multi_head(t.parameter(x), w, cfg, ms).output, weights));
    });
    CHECK(r.worst < 1e-7);
}

TEST_CASE("keys masked for every query have no influence and no gradient") {
    Rng rng(31);
    const std::size_t n = 5, d = 4;
    HeadConfig cfg{d, 2, {Role::RelPos}};
    // key 4 is blocked for every query in both masks
    MaskSet ms;
    ms.padding = padding_mask(4, n).values;
    RoleMask rel = relative_position_mask(n);
    for (std::size_t i = 0; i < n; ++i) rel.values.at(i, 4) = -kInf;
    ms.roles[Role::RelPos] = apply_fallback(rel, n).values;

    ParameterSet ps;
    auto& x = ps.add("x", random_tensor(rng, n, d));
    Tensor wq = random_tensor(rng, d, d), wk = random_tensor(rng, d, d), wv = random_tensor(rng, d, d),
           wo = random_tensor(rng, d, d);
    auto run = [&](Tape& t) {
        HeadWeights w{t.constant(wq), t.constant(wk), t.constant(wv), t.constant(wo)};
        return multi_head(t.parameter(x), w, cfg, ms).output;
    };
    Tensor before;
    {
        Tape t;
        before = run(t).value();
    }
    // position 4 is also a query and its own row sees itself through the
    // residual-free projection, so the gradient is taken through rows 0..3.
    {
        Tape t;
        Tensor keep = Tensor::matrix(n, d, 1.0);
        for (std::size_t c = 0; c < d; ++c) keep.at(4, c) = 0.0;
        t.backward(ops::sum(ops::mul_constant(run(t), keep)));
    }
    for (std::size_t c = 0; c < d; ++c) CHECK(x.grad.at(4, c) == 0.0);
    for (std::size_t c = 0; c < d; ++c) x.value.at(4, c) += 10.0 * (c + 1);
    Tape t;
    Tensor after = run(t).value();
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < d; ++c) CHECK(after.at(i, c) == before.at(i, c));
}

TEST_CASE("dropout") {
    Rng rng(1);
    Tape t;
    Var x = t.constant(Tensor::matrix(40, 50, 1.0));
    CHECK(Dropout(0.0, &rng).apply(x).id == x.id);
    CHECK(Dropout(0.5, nullptr).apply(x).id == x.id);
    Rng a(9), b(9);
    Tensor ya = Dropout(0.25, &a).apply(x).value();
    Tensor yb = Dropout(0.25, &b).apply(x).value();
    CHECK(ya == yb);
    std::size_t dropped = 0;
    double total = 0.0;
    for (double v : ya.data()) {
        CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
        dropped += v == 0.0;
        total += v;
    }
    CHECK(dropped > 400);
    CHECK(dropped < 600);
    CHECK(total / 2000.0 == doctest::Approx(1.0).epsilon(0.05));
}
