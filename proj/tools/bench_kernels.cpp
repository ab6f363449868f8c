// Times the OpenMP kernels against their serial reference twins and verifies the
// outputs stay bit-identical while it is at it.
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "gridcast/common.hpp"
#include "gridcast/kernels.hpp"

using namespace gridcast;
namespace k = gridcast::kern;
using clk = std::chrono::steady_clock;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.next_range(-1.0, 1.0);
    return v;
}

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto t0 = clk::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = clk::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

struct Row {
    const char* name;
    double serial_ms;
    double parallel_ms;
    bool equal;
};

}  // namespace

int main(int argc, char** argv) {
    int reps = 5;
    if (argc > 1) reps = std::atoi(argv[1]);
    std::printf("threads available: %d\n\n", omp_get_max_threads());

    std::vector<Row> rows;

    // conv2d on a decoder-sized activation map
    k::Conv2dDims d{4, 64, 64, 16, 16, 3};
    const auto x = random_vec(static_cast<std::size_t>(d.n * d.h * d.w * d.ci), 1);
    const auto w = random_vec(static_cast<std::size_t>(d.k * d.k * d.ci * d.co), 2);
    const auto b = random_vec(static_cast<std::size_t>(d.co), 3);
    const auto gy = random_vec(static_cast<std::size_t>(d.n * d.h * d.w * d.co), 4);
    std::vector<double> y1(gy.size()), y2(gy.size());
    rows.push_back({"conv2d forward 4x64x64x16",
                    time_ms([&] { k::ref::conv2d_forward(x.data(), w.data(), b.data(), y1.data(), d); }, reps),
                    time_ms([&] { k::conv2d_forward(x.data(), w.data(), b.data(), y2.data(), d); }, reps),
                    std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(double)) == 0});

    std::vector<double> gx1(x.size()), gx2(x.size());
    rows.push_back({"conv2d backward input",
                    time_ms([&] { std::fill(gx1.begin(), gx1.end(), 0.0);
                                  k::ref::conv2d_backward_input(gy.data(), w.data(), gx1.data(), d); }, reps),
                    time_ms([&] { std::fill(gx2.begin(), gx2.end(), 0.0);
                                  k::conv2d_backward_input(gy.data(), w.data(), gx2.data(), d); }, reps),
                    std::memcmp(gx1.data(), gx2.data(), gx1.size() * sizeof(double)) == 0});

    std::vector<double> gw1(w.size()), gw2(w.size());
    rows.push_back({"conv2d backward weights",
                    time_ms([&] { std::fill(gw1.begin(), gw1.end(), 0.0);
                                  k::ref::conv2d_backward_weights(x.data(), gy.data(), gw1.data(), d); }, reps),
                    time_ms([&] { std::fill(gw2.begin(), gw2.end(), 0.0);
                                  k::conv2d_backward_weights(x.data(), gy.data(), gw2.data(), d); }, reps),
                    std::memcmp(gw1.data(), gw2.data(), gw1.size() * sizeof(double)) == 0});

    // dense layer around the recurrent bottleneck sizes
    const std::int64_t mb = 8, mi = 2048, mo = 512;
    const auto mx = random_vec(static_cast<std::size_t>(mb * mi), 5);
    const auto mw = random_vec(static_cast<std::size_t>(mi * mo), 6);
    std::vector<double> my1(static_cast<std::size_t>(mb * mo)), my2(my1.size());
    rows.push_back({"matmul 8x2048x512",
                    time_ms([&] { std::fill(my1.begin(), my1.end(), 0.0);
                                  k::ref::matmul_forward(mx.data(), mw.data(), my1.data(), mb, mi, mo); }, reps),
                    time_ms([&] { std::fill(my2.begin(), my2.end(), 0.0);
                                  k::matmul_forward(mx.data(), mw.data(), my2.data(), mb, mi, mo); }, reps),
                    std::memcmp(my1.data(), my2.data(), my1.size() * sizeof(double)) == 0});

    // resize: raw frame up to canvas
    const auto rx = random_vec(static_cast<std::size_t>(2 * 95 * 86 * 3), 7);
    std::vector<double> ry1(static_cast<std::size_t>(2 * 256 * 256 * 3)), ry2(ry1.size());
    rows.push_back({"bilinear 95x86 -> 256x256",
                    time_ms([&] { k::ref::bilinear_resize(rx.data(), ry1.data(), 2, 95, 86, 256, 256, 3); }, reps),
                    time_ms([&] { k::bilinear_resize(rx.data(), ry2.data(), 2, 95, 86, 256, 256, 3); }, reps),
                    std::memcmp(ry1.data(), ry2.data(), ry1.size() * sizeof(double)) == 0});

    std::printf("%-28s %12s %12s %9s %6s\n", "kernel", "serial ms", "parallel ms", "speedup",
                "equal");
    bool all_equal = true;
    for (const auto& r : rows) {
        std::printf("%-28s %12.3f %12.3f %8.2fx %6s\n", r.name, r.serial_ms, r.parallel_ms,
                    r.serial_ms / r.parallel_ms, r.equal ? "yes" : "NO");
        all_equal = all_equal && r.equal;
    }
    if (!all_equal) {
        std::printf("\nmismatch between serial and parallel outputs\n");
        return 1;
    }
    return 0;
}
