#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "oracles.hpp"
#include "roleattn/autograd.hpp"
#include "roleattn/errors.hpp"
#include "roleattn/random.hpp"
#include "roleattn/tensor.hpp"

using namespace roleattn;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_close(const Tensor& got, const oracle::Matrix& want, double tol) {
    REQUIRE(got.rows() == want.size());
    REQUIRE(got.cols() == want[0].size());
    for (std::size_t i = 0; i < want.size(); ++i)
        for (std::size_t j = 0; j < want[0].size(); ++j)
            CHECK(std::abs(got.at(i, j) - want[i][j]) <= tol * std::max(1.0, std::abs(want[i][j])));
}

oracle::Matrix transpose(const oracle::Matrix& a) {
    oracle::Matrix t(a[0].size(), std::vector<double>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
    return t;
}

// Weighted sum so that every output entry gets a distinct upstream gradient.
Var weighted_sum(Var x, std::uint64_t seed) {
    Rng rng(seed);
    Tensor w(x.value().shape());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1.0, 1.0);
    return ops::sum(ops::mul_constant(x, w));
}

}  // namespace

TEST_CASE("matmul kernels agree with the triple loop") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng.below(5), k = 1 + rng.below(5), n = 1 + rng.below(5);
        auto a = oracle::random_matrix(rng, m, k);
        auto b = oracle::random_matrix(rng, k, n);
        auto want = oracle::matmul(a, b);
        check_close(matmul(oracle::to_tensor(a), oracle::to_tensor(b)), want, 1e-12);
        check_close(matmul_nt(oracle::to_tensor(a), oracle::to_tensor(transpose(b))), want, 1e-12);
        check_close(matmul_tn(oracle::to_tensor(transpose(a)), oracle::to_tensor(b)), want, 1e-12);
        check_close(roleattn::transpose(oracle::to_tensor(a)), transpose(a), 0.0);
    }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    CHECK_THROWS_AS(matmul(Tensor::matrix(2, 3), Tensor::matrix(2, 3)), ShapeError);
    CHECK_THROWS_AS(matmul_nt(Tensor::matrix(2, 3), Tensor::matrix(2, 4)), ShapeError);
    CHECK_THROWS_AS(matmul_tn(Tensor::matrix(2, 3), Tensor::matrix(3, 3)), ShapeError);
}

TEST_CASE("softmax matches exp/sum and ignores -inf") {
    Rng rng(5);
    auto x = oracle::random_matrix(rng, 4, 6, -3.0, 3.0);
    x[1][2] = -kInf;
    x[3][0] = -kInf;
    x[3][5] = -kInf;
    Tensor got = softmax_rows(oracle::to_tensor(x));
    for (std::size_t i = 0; i < 4; ++i) {
        auto want = oracle::softmax(x[i]);
        double total = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
            CHECK(got.at(i, j) == doctest::Approx(want[j]).epsilon(1e-13));
            total += got.at(i, j);
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }
    CHECK(got.at(1, 2) == 0.0);
    CHECK(got.at(3, 0) == 0.0);
    CHECK(got.at(3, 5) == 0.0);
}

TEST_CASE("softmax is stable for large logits") {
    Tensor got = softmax_rows(Tensor::from_rows({{1000.0, 1000.0, -kInf}, {-1e300, 0.0, 1e3}}));
    CHECK(got.all_finite());
    CHECK(got.at(0, 0) == doctest::Approx(0.5));
    CHECK(got.at(0, 2) == 0.0);
    CHECK(got.at(1, 2) == doctest::Approx(1.0));
}

TEST_CASE("softmax of an all -inf row is an error") {
    CHECK_THROWS_AS(softmax_rows(Tensor::from_rows({{0.0, 1.0}, {-kInf, -kInf}})), DegenerateRowError);
}

TEST_CASE("layer norm matches mean/variance formula") {
    Rng rng(3);
    auto x = oracle::random_matrix(rng, 3, 5, -2.0, 2.0);
    auto gain = oracle::random_matrix(rng, 1, 5);
    auto bias = oracle::random_matrix(rng, 1, 5);
    const double eps = 1e-5;
    Tensor got = layer_norm(oracle::to_tensor(x), oracle::to_tensor(gain), oracle::to_tensor(bias), eps);
    for (std::size_t i = 0; i < 3; ++i) {
        double mean = 0.0, var = 0.0;
        for (double v : x[i]) mean += v / 5.0;
        for (double v : x[i]) var += (v - mean) * (v - mean) / 5.0;
        for (std::size_t j = 0; j < 5; ++j) {
            const double want = gain[0][j] * (x[i][j] - mean) / std::sqrt(var + eps) + bias[0][j];
            CHECK(got.at(i, j) == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("gradients of every op match central differences") {
    Rng rng(21);
    ParameterSet ps;
    auto& a = ps.add("a", oracle::to_tensor(oracle::random_matrix(rng, 3, 4)));
    auto& b = ps.add("b", oracle::to_tensor(oracle::random_matrix(rng, 4, 2)));
    auto& c = ps.add("c", oracle::to_tensor(oracle::random_matrix(rng, 3, 4)));
    auto& bias = ps.add("bias", oracle::to_tensor(oracle::random_matrix(rng, 1, 4)));
    auto& gain = ps.add("gain", oracle::to_tensor(oracle::random_matrix(rng, 1, 4, 0.5, 1.5)));
    Tensor mask = Tensor::matrix(3, 3);
    mask.at(0, 2) = -kInf;
    mask.at(2, 0) = -kInf;
    const std::vector<std::size_t> ids = {2, 0, 2, 1};
    const std::vector<std::size_t> labels = {1, 0, 3};

    auto check = [&](const char* what, std::function<Var(Tape&)> f) {
        INFO(what);
        auto r = oracle::check_gradients(ps, f);
        CHECK(r.worst < 1e-7);
    };
    check("matmul", [&](Tape& t) { return weighted_sum(ops::matmul(t.parameter(a), t.parameter(b)), 1); });
    check("matmul_nt", [&](Tape& t) { return weighted_sum(ops::matmul_nt(t.parameter(a), t.parameter(c)), 2); });
    check("add", [&](Tape& t) { return weighted_sum(ops::add(t.parameter(a), t.parameter(c)), 3); });
    check("add_row_bias", [&](Tape& t) { return weighted_sum(ops::add_row_bias(t.parameter(a), t.parameter(bias)), 4); });
    check("scale", [&](Tape& t) { return weighted_sum(ops::scale(t.parameter(a), -0.7), 5); });
    check("relu", [&](Tape& t) { return weighted_sum(ops::relu(t.parameter(a)), 6); });
    check("masked softmax", [&](Tape& t) {
        Var s = ops::matmul_nt(t.parameter(a), t.parameter(c));
        return weighted_sum(ops::softmax_rows(ops::add_constant(s, mask)), 7);
    });
    check("layer_norm", [&](Tape& t) {
        return weighted_sum(ops::layer_norm(t.parameter(a), t.parameter(gain), t.parameter(bias), 1e-5), 8);
    });
    check("columns/concat", [&](Tape& t) {
        Var x = t.parameter(a);
        std::vector<Var> parts = {ops::columns(x, 2, 2), ops::columns(x, 0, 1)};
        Var cols = ops::concat_columns(parts);
        std::vector<Var> rows = {cols, ops::columns(t.parameter(c), 1, 3)};
        return weighted_sum(ops::concat_rows(rows), 9);
    });
    check("gather_rows", [&](Tape& t) { return weighted_sum(ops::gather_rows(t.parameter(a), ids), 10); });
    check("mean_rows", [&](Tape& t) { return weighted_sum(ops::mean_rows(t.parameter(a), 2), 11); });
    check("cross entropy", [&](Tape& t) { return ops::softmax_cross_entropy(t.parameter(c), labels); });
}

TEST_CASE("cross entropy value matches the definition") {
    Tensor logits = Tensor::from_rows({{0.5, -1.0, 2.0}, {0.0, 0.0, 0.0}});
    Tape t;
    std::vector<std::size_t> labels = {2, 1};
    Var loss = ops::softmax_cross_entropy(t.constant(logits), labels);
    auto p0 = oracle::softmax({0.5, -1.0, 2.0});
    const double want = (-std::log(p0[2]) - std::log(1.0 / 3.0)) / 2.0;
    CHECK(loss.value()[0] == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("masked scores receive exactly zero gradient") {
    ParameterSet ps;
    auto& s = ps.add("s", Tensor::from_rows({{0.3, -0.2, 1.1}, {0.5, 0.9, -0.4}}));
    Tensor mask = Tensor::from_rows({{0.0, -kInf, 0.0}, {-kInf, 0.0, 0.0}});
    Tape t;
    t.backward(weighted_sum(ops::softmax_rows(ops::add_constant(t.parameter(s), mask)), 3));
    CHECK(s.grad.at(0, 1) == 0.0);
    CHECK(s.grad.at(1, 0) == 0.0);
    CHECK(s.grad.at(0, 0) != 0.0);
    CHECK(!t.first_non_finite());
}

TEST_CASE("backward requires a scalar and accumulates into parameters") {
    ParameterSet ps;
    auto& a = ps.add("a", Tensor::from_rows({{1.0, 2.0}}));
    {
        Tape t;
        CHECK_THROWS_AS(t.backward(t.parameter(a)), ShapeError);
    }
    for (int k = 0; k < 2; ++k) {
        Tape t;
        t.backward(ops::sum(t.parameter(a)));
    }
    CHECK(a.grad.at(0, 0) == 2.0);
    ps.zero_grad();
    CHECK(a.grad.at(0, 1) == 0.0);
}

TEST_CASE("nodes the loss does not use get a zero gradient") {
    Tape t;
    Var x = t.constant(Tensor::from_rows({{1.0}}));
    Var unused = t.constant(Tensor::from_rows({{4.0, 5.0}}));
    t.backward(ops::scale(x, 3.0));
    CHECK(t.grad(x).at(0, 0) == 3.0);
    CHECK(t.grad(unused) == Tensor::matrix(1, 2));
}

TEST_CASE("non-finite values are located") {
    Tape t;
    t.constant(Tensor::from_rows({{1.0}}));
    t.constant(Tensor::from_rows({{std::nan("")}}));
    auto where = t.first_non_finite();
    REQUIRE(where);
    CHECK(where->find("node 1 ") == 0);
}

TEST_CASE("rng streams are reproducible and in range") {
    Rng a(99), b(99);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
    Rng r(1);
    std::set<std::size_t> seen;
    for (int i = 0; i < 1000; ++i) {
        auto v = r.below(7);
        CHECK(v < 7);
        seen.insert(v);
        double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    CHECK(seen.size() == 7);
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}
