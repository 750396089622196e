// Times the OpenMP kernels against the serial reference versions and checks
// they agree bitwise. Usage: bench_kernels [repeats]

#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "flowgen/kernels.hpp"
#include "flowgen/rng.hpp"

using namespace flowgen;

namespace {

struct Case {
    std::string name;
    int64_t out_n;
    std::function<void(std::vector<double>&)> par;
    std::function<void(std::vector<double>&)> ser;
};

double time_best(const std::function<void(std::vector<double>&)>& fn, std::vector<double>& out, int repeats) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        double t0 = omp_get_wtime();
        fn(out);
        best = std::min(best, omp_get_wtime() - t0);
    }
    return best;
}

}  // namespace

int main(int argc, char** argv) {
    int repeats = argc > 1 ? std::atoi(argv[1]) : 5;
    Rng rng(1234);

    const int64_t n = 1 << 22;
    std::vector<double> a(n), b(n);
    for (auto& v : a) v = rng.uniform(-1.0, 1.0);
    for (auto& v : b) v = rng.uniform(-1.0, 1.0);

    const int m = 256, k = 256, p = 256;
    std::vector<double> A(static_cast<size_t>(m) * k), Bm(static_cast<size_t>(k) * p);
    for (auto& v : A) v = rng.uniform(-1.0, 1.0);
    for (auto& v : Bm) v = rng.uniform(-1.0, 1.0);

    const int cb = 8, ci = 16, hh = 32, ww = 32, co = 32, kk = 3;
    std::vector<double> cx(static_cast<size_t>(cb) * ci * hh * ww), cw(static_cast<size_t>(co) * ci * kk * kk),
        cbias(co);
    for (auto& v : cx) v = rng.uniform(-1.0, 1.0);
    for (auto& v : cw) v = rng.uniform(-0.2, 0.2);
    for (auto& v : cbias) v = rng.uniform(-0.2, 0.2);
    int cho = kern::conv_out_dim(hh, kk, 1);

    const int gB = 8, gC = 32, gHW = 32 * 32, gG = 8;
    std::vector<double> gx(static_cast<size_t>(gB) * gC * gHW), ggam(gC, 1.0), gbet(gC, 0.0);
    for (auto& v : gx) v = rng.uniform(-1.0, 1.0);

    std::vector<Case> cases;
    cases.push_back({"add 4M", n, [&](std::vector<double>& o) { kern::add(a.data(), b.data(), o.data(), n); },
                     [&](std::vector<double>& o) { refk::add(a.data(), b.data(), o.data(), n); }});
    cases.push_back({"silu 4M", n, [&](std::vector<double>& o) { kern::silu(a.data(), o.data(), n); },
                     [&](std::vector<double>& o) { refk::silu(a.data(), o.data(), n); }});
    cases.push_back({"sum 4M", 1, [&](std::vector<double>& o) { o[0] = kern::sum(a.data(), n); },
                     [&](std::vector<double>& o) { o[0] = refk::sum(a.data(), n); }});
    cases.push_back({"matmul 256^3", static_cast<int64_t>(m) * p,
                     [&](std::vector<double>& o) { kern::matmul(A.data(), Bm.data(), o.data(), m, k, p); },
                     [&](std::vector<double>& o) { refk::matmul(A.data(), Bm.data(), o.data(), m, k, p); }});
    cases.push_back({"conv2d 8x16x32x32->32", static_cast<int64_t>(cb) * co * cho * cho,
                     [&](std::vector<double>& o) {
                         kern::conv2d(cx.data(), cw.data(), cbias.data(), o.data(), cb, ci, hh, ww, co, kk, 1);
                     },
                     [&](std::vector<double>& o) {
                         refk::conv2d(cx.data(), cw.data(), cbias.data(), o.data(), cb, ci, hh, ww, co, kk, 1);
                     }});
    cases.push_back({"group_norm 8x32x1024", static_cast<int64_t>(gB) * gC * gHW,
                     [&](std::vector<double>& o) {
                         std::vector<double> sm(gB * gG), si(gB * gG);
                         kern::group_norm(gx.data(), ggam.data(), gbet.data(), o.data(), sm.data(), si.data(), gB,
                                          gC, gHW, gG, 1e-5);
                     },
                     [&](std::vector<double>& o) {
                         std::vector<double> sm(gB * gG), si(gB * gG);
                         refk::group_norm(gx.data(), ggam.data(), gbet.data(), o.data(), sm.data(), si.data(), gB,
                                          gC, gHW, gG, 1e-5);
                     }});

    std::printf("threads: %d, repeats: %d\n", max_threads(), repeats);
    std::printf("%-24s %12s %12s %8s %s\n", "kernel", "serial(ms)", "openmp(ms)", "speedup", "bitwise");
    bool all_ok = true;
    for (auto& c : cases) {
        std::vector<double> op(static_cast<size_t>(c.out_n)), os(static_cast<size_t>(c.out_n));
        double tp = time_best(c.par, op, repeats);
        double ts = time_best(c.ser, os, repeats);
        bool same = std::memcmp(op.data(), os.data(), static_cast<size_t>(c.out_n) * sizeof(double)) == 0;
        all_ok = all_ok && same;
        std::printf("%-24s %12.3f %12.3f %8.2fx %s\n", c.name.c_str(), ts * 1e3, tp * 1e3, ts / tp,
                    same ? "ok" : "MISMATCH");
    }
    return all_ok ? 0 : 1;
}
