#include <benchmark/benchmark.h>

#include "dyadom/campaign.hpp"
#include "dyadom/common.hpp"
#include "dyadom/convex.hpp"
#include "dyadom/dyadic.hpp"
#include "dyadom/shift.hpp"
#include "dyadom/sparse.hpp"
#include "dyadom/weights.hpp"

using namespace dyadom;

namespace {

GridFunction spiky(int dim, int depth, std::uint64_t seed) {
    return make_input(InputKind::Spike, dim, 1, depth, seed);
}

void bm_grid_build(benchmark::State& state) {
    const int L = int(state.range(0));
    std::uint64_t seed = 1;
    for (auto _ : state) {
        GridFunction f = spiky(1, L, seed++);
        benchmark::DoNotOptimize(f.integral(f.root(), 0));
    }
}
BENCHMARK(bm_grid_build)->Arg(8)->Arg(10)->Arg(12);

void bm_sparse_build(benchmark::State& state) {
    const int L = int(state.range(0));
    GridFunction f1 = spiky(1, L, 11);
    GridFunction f2 = spiky(1, L, 12);
    for (auto _ : state) {
        SparseCollection s = build_sparse_collection(f1, f2, f1.root(), 4.0);
        benchmark::DoNotOptimize(s.nodes.size());
    }
}
BENCHMARK(bm_sparse_build)->Arg(8)->Arg(10)->Arg(12);

void bm_shift_form(benchmark::State& state) {
    const int L = 10;
    DyadicShift s = normalize_a2(random_shift(1, L, 2, 1, 0.6, true, 5), A2Strategy::HaarBessel);
    GridFunction f1 = spiky(1, L, 21);
    GridFunction f2 = spiky(1, L, 22);
    for (auto _ : state) benchmark::DoNotOptimize(shift_form(s, f1, f2));
}
BENCHMARK(bm_shift_form);

void bm_shift_norm(benchmark::State& state) {
    const int L = int(state.range(0));
    DyadicShift s = normalize_a2(random_shift(1, L, 1, 1, 0.6, true, 7), A2Strategy::ScaleCount);
    for (auto _ : state) benchmark::DoNotOptimize(shift_norm(s).value);
}
BENCHMARK(bm_shift_norm)->Arg(6)->Arg(8);

void bm_john(benchmark::State& state) {
    const int gens = int(state.range(0));
    std::uint64_t st = 3;
    Eigen::MatrixXd g(3, gens);
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < gens; ++k) g(i, k) = ((splitmix64(st) >> 11) * 0x1.0p-53) * 2 - 1;
    Zonotope z(3, g);
    for (auto _ : state) benchmark::DoNotOptimize(john_ellipsoid(z).cover_margin);
}
BENCHMARK(bm_john)->Arg(6)->Arg(16)->Arg(64);

void bm_minkowski(benchmark::State& state) {
    const int gens = int(state.range(0));
    std::uint64_t st = 9;
    auto body = [&] {
        Eigen::MatrixXd g(2, gens);
        for (int i = 0; i < 2; ++i)
            for (int k = 0; k < gens; ++k) g(i, k) = ((splitmix64(st) >> 11) * 0x1.0p-53) * 2 - 1;
        return Zonotope(2, g);
    };
    Zonotope k = body(), h = body();
    for (auto _ : state) benchmark::DoNotOptimize(minkowski_product(k, h));
}
BENCHMARK(bm_minkowski)->Arg(8)->Arg(16)->Arg(24);

void bm_characteristic(benchmark::State& state) {
    MatrixWeight w = make_weight(WeightFamily::Rotating, 1, 2, 8, 0.6, 1);
    for (auto _ : state) benchmark::DoNotOptimize(a2_characteristic(w).value);
}
BENCHMARK(bm_characteristic);

void bm_scalar_campaign_trial(benchmark::State& state) {
    CampaignConfig c;
    c.dim = 1;
    c.finest_depth = 10;
    c.trials = 1;
    c.rho_min = 1;
    c.rho_max = 3;
    c.shifts_per_rho = 2;
    std::uint64_t seed = 1;
    for (auto _ : state) {
        c.seed = seed++;
        benchmark::DoNotOptimize(verify_scalar_domination(c).max_ratio);
    }
}
BENCHMARK(bm_scalar_campaign_trial);

} // namespace

BENCHMARK_MAIN();
