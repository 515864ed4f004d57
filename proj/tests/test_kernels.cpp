#include <vector>

#include "doctest.h"
#include "mga/kernels.hpp"
#include "mga/rng.hpp"
#include "oracles.hpp"

using namespace mga;

namespace {

std::vector<double> random_values(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-2.0, 2.0);
    return v;
}

} // namespace

// The parallel kernels must be bitwise identical to their serial references:
// every output element is produced by the same serial accumulation.
TEST_CASE("parallel matmul kernels match their serial references bitwise") {
    Rng rng(17);
    for (auto [m, k, n] : {std::tuple<std::size_t, std::size_t, std::size_t>{3, 5, 2},
                           {64, 64, 64},
                           {129, 33, 71}}) {
        auto a = random_values(m * k, rng);
        auto b = random_values(k * n, rng);
        std::vector<double> c1(m * n), c2(m * n);

        kernels::matmul_nn(a.data(), b.data(), c1.data(), m, k, n);
        kernels::matmul_nn_serial(a.data(), b.data(), c2.data(), m, k, n);
        CHECK(c1 == c2);

        auto bt = random_values(n * k, rng);
        kernels::matmul_nt(a.data(), bt.data(), c1.data(), m, k, n);
        kernels::matmul_nt_serial(a.data(), bt.data(), c2.data(), m, k, n);
        CHECK(c1 == c2);

        auto at = random_values(k * m, rng);
        auto bb = random_values(k * n, rng);
        kernels::matmul_tn(at.data(), bb.data(), c1.data(), m, k, n);
        kernels::matmul_tn_serial(at.data(), bb.data(), c2.data(), m, k, n);
        CHECK(c1 == c2);
    }
}

TEST_CASE("matmul_nn agrees with the triple-loop oracle") {
    Rng rng(19);
    std::size_t m = 7, k = 9, n = 4;
    auto a = random_values(m * k, rng);
    auto b = random_values(k * n, rng);
    std::vector<double> c(m * n);
    kernels::matmul_nn(a.data(), b.data(), c.data(), m, k, n);
    auto expect = oracle::matmul(a, b, m, k, n);
    for (std::size_t i = 0; i < c.size(); ++i) {
        CHECK(c[i] == doctest::Approx(expect[i]).epsilon(1e-13));
    }
}

TEST_CASE("parallel bilinear upsample matches serial bitwise") {
    Rng rng(23);
    std::size_t g = 9;
    auto src = random_values(g * g, rng);
    std::size_t h = 301, w = 277;
    std::vector<double> d1(h * w), d2(h * w);
    kernels::bilinear_upsample(src.data(), g, g, d1.data(), h, w);
    kernels::bilinear_upsample_serial(src.data(), g, g, d2.data(), h, w);
    CHECK(d1 == d2);
}

TEST_CASE("bilinear upsample is exact at corner sample points") {
    std::vector<double> src = {1.0, 2.0, 3.0, 4.0};
    std::size_t h = 7, w = 5;
    std::vector<double> dst(h * w);
    kernels::bilinear_upsample_serial(src.data(), 2, 2, dst.data(), h, w);
    CHECK(dst[0] == 1.0);
    CHECK(dst[w - 1] == 2.0);
    CHECK(dst[(h - 1) * w] == 3.0);
    CHECK(dst[h * w - 1] == 4.0);
}
