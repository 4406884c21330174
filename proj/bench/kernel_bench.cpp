// Timing comparison between the naive serial reference kernels and the
// OpenMP production kernels. Run manually: build/bench/kernel_bench [threads]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#include "elm/kernels.hpp"
#include "elm/rng.hpp"

using namespace elm;

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(int reps, const std::function<void()>& fn) {
    fn();  // warm up
    const auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) fn();
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / reps;
}

std::vector<real> random_vec(std::size_t n, Rng& rng) {
    std::vector<real> v(n);
    for (auto& x : v) x = static_cast<real>(rng.uniform(-1, 1));
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc > 1) set_num_threads(std::atoi(argv[1]));
    printf("threads: %d\n\n", num_threads());
    Rng rng(42);

    printf("%-28s %10s %10s %8s\n", "kernel", "ref ms", "omp ms", "speedup");
    for (int n : {64, 128, 256, 512}) {
        auto a = random_vec(static_cast<std::size_t>(n) * n, rng);
        auto b = random_vec(static_cast<std::size_t>(n) * n, rng);
        std::vector<real> c(static_cast<std::size_t>(n) * n);
        const int reps = n <= 128 ? 50 : 10;
        const double t_ref =
            time_ms(reps, [&] { kern::ref::matmul(a.data(), b.data(), c.data(), n, n, n); });
        const double t_omp =
            time_ms(reps, [&] { kern::matmul(a.data(), b.data(), c.data(), n, n, n); });
        char name[64];
        snprintf(name, sizeof name, "matmul %dx%dx%d", n, n, n);
        printf("%-28s %10.3f %10.3f %7.2fx\n", name, t_ref, t_omp, t_ref / t_omp);
    }

    {
        const int rows = 4096, cols = 256;
        auto x = random_vec(static_cast<std::size_t>(rows) * cols, rng);
        std::vector<real> y(x.size());
        const double t_ref =
            time_ms(20, [&] { kern::ref::softmax_rows(x.data(), y.data(), rows, cols); });
        const double t_omp =
            time_ms(20, [&] { kern::softmax_rows_fwd(x.data(), y.data(), rows, cols); });
        printf("%-28s %10.3f %10.3f %7.2fx\n", "softmax 4096x256", t_ref, t_omp, t_ref / t_omp);
    }

    {
        const std::size_t n = 1 << 22;
        auto x = random_vec(n, rng);
        std::vector<real> y(n);
        const double t_ref = time_ms(10, [&] { kern::ref::gelu(x.data(), y.data(), n); });
        const double t_omp = time_ms(10, [&] { kern::gelu_fwd(x.data(), y.data(), n); });
        printf("%-28s %10.3f %10.3f %7.2fx\n", "gelu 4M", t_ref, t_omp, t_ref / t_omp);
    }

    {
        const int batch = 16, T = 65, dim = 128, heads = 4;
        const std::size_t rows = static_cast<std::size_t>(batch) * T;
        auto q = random_vec(rows * dim, rng);
        auto k = random_vec(rows * dim, rng);
        auto v = random_vec(rows * dim, rng);
        std::vector<real> out(rows * dim);
        std::vector<real> probs(static_cast<std::size_t>(batch) * heads * T * T);
        const double t_ref = time_ms(10, [&] {
            kern::ref::attention(q.data(), k.data(), v.data(), out.data(), batch, T, dim, heads,
                                 true);
        });
        const double t_omp = time_ms(10, [&] {
            kern::attention_fwd(q.data(), k.data(), v.data(), out.data(), probs.data(), batch, T,
                                dim, heads, true);
        });
        printf("%-28s %10.3f %10.3f %7.2fx\n", "attention b16 T65 d128 h4", t_ref, t_omp,
               t_ref / t_omp);
    }
    return 0;
}
