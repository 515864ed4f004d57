// Timing comparison of the OpenMP kernels against their serial references.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "mga/kernels.hpp"
#include "mga/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(int repeats, const std::function<void()>& fn) {
    fn(); // warm up
    auto start = Clock::now();
    for (int r = 0; r < repeats; ++r) fn();
    auto stop = Clock::now();
    return std::chrono::duration<double, std::milli>(stop - start).count() / repeats;
}

std::vector<double> random_values(std::size_t n, mga::Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

} // namespace

int main() {
    mga::Rng rng(1);
    std::printf("threads: %d\n\n", mga::kernels::thread_count());
    std::printf("%-28s %10s %10s %8s\n", "kernel", "serial ms", "omp ms", "speedup");

    double sink = 0.0;
    for (std::size_t n : {128, 256, 512}) {
        auto a = random_values(n * n, rng);
        auto b = random_values(n * n, rng);
        std::vector<double> c(n * n);
        int repeats = n <= 256 ? 20 : 5;
        double serial = time_ms(repeats, [&] {
            mga::kernels::matmul_nn_serial(a.data(), b.data(), c.data(), n, n, n);
        });
        sink += c[0];
        double parallel = time_ms(repeats, [&] {
            mga::kernels::matmul_nn(a.data(), b.data(), c.data(), n, n, n);
        });
        sink += c[1];
        char label[64];
        std::snprintf(label, sizeof(label), "matmul_nn %zux%zux%zu", n, n, n);
        std::printf("%-28s %10.3f %10.3f %7.2fx\n", label, serial, parallel, serial / parallel);
    }

    for (std::size_t g : {8, 16}) {
        auto grid = random_values(g * g, rng);
        std::size_t h = 1024, w = 1024;
        std::vector<double> out(h * w);
        double serial = time_ms(10, [&] {
            mga::kernels::bilinear_upsample_serial(grid.data(), g, g, out.data(), h, w);
        });
        sink += out[0];
        double parallel = time_ms(10, [&] {
            mga::kernels::bilinear_upsample(grid.data(), g, g, out.data(), h, w);
        });
        sink += out[1];
        char label[64];
        std::snprintf(label, sizeof(label), "bilinear %zu->%zux%zu", g, h, w);
        std::printf("%-28s %10.3f %10.3f %7.2fx\n", label, serial, parallel, serial / parallel);
    }

    std::printf("\n(checksum %.6f)\n", sink);
    return 0;
}
