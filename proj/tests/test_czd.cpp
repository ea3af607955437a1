#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "dyadom/czd.hpp"
#include "oracles.hpp"

using namespace dyadom;

namespace {

// small baseline plus a few unit spikes, so multiplicative stopping
// thresholds actually fire on coarse grids
GridFunction spiky_grid(int dim, int comps, int L, std::uint64_t seed, double base, int spikes) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-base, base);
    std::uint64_t cells = 1ull << (dim * L);
    std::vector<double> vals(cells * comps);
    for (auto& v : vals) v = dist(rng);
    std::uniform_int_distribution<std::uint64_t> pick(0, cells * comps - 1);
    for (int t = 0; t < spikes; ++t) vals[pick(rng)] = t % 2 == 0 ? 1.0 : -1.0;
    return GridFunction(dim, comps, L, std::move(vals));
}

// every finest cube at every depth of the grid
std::vector<DyadicCube> all_cubes(int dim, int L) {
    std::vector<DyadicCube> out;
    for (int t = 0; t <= L; ++t)
        for (std::uint64_t m = 0; m < (1ull << (dim * t)); ++m)
            out.push_back(cube_from_morton(dim, t, m));
    return out;
}

bool in_any(const DyadicCube& c, const std::vector<DyadicCube>& cubes) {
    for (const auto& i : cubes)
        if (i.contains(c)) return true;
    return false;
}

} // namespace

TEST_CASE("scalar splitting reconstructs the function and localizes the residue") {
    const int L = 6;
    auto base = oracle::random_grid(1, 1, L, 901, -0.02, 0.02);
    std::vector<double> vals = base.raw();
    vals[40] = -1.0; // inside [1/2, 1)
    vals[48] = 1.0;
    vals[9] = 1.0; // outside, must be ignored
    GridFunction f(1, 1, L, vals);
    DyadicCube q = DyadicCube::root(1).child(1); // [1/2, 1)
    auto cz = cz_decompose(f, q, 4.0);

    auto st = stopping_children({&f}, q, 4.0);
    REQUIRE(cz.stopping.size() == st.size());
    for (std::size_t i = 0; i < st.size(); ++i) CHECK(cz.stopping[i] == st[i]);
    CHECK(!cz.stopping.empty()); // the threshold is low enough to fire on this seed

    for (std::uint64_t c = 0; c < f.cell_count(); ++c) {
        const bool inside = c >= q.cell_begin(L) && c < q.cell_end(L);
        if (!inside) {
            CHECK(cz.good.value(c, 0) == 0.0);
            CHECK(cz.bad.value(c, 0) == 0.0);
        } else if (!in_any(cube_from_morton(1, L, c), cz.stopping)) {
            // away from the stopping cubes the split is the identity, bit for bit
            CHECK(cz.bad.value(c, 0) == 0.0);
            CHECK(cz.good.value(c, 0) == f.value(c, 0));
        } else {
            // on a stopping cube bad = f - avg re-rounds once
            const double sum = cz.good.value(c, 0) + cz.bad.value(c, 0);
            CHECK(std::abs(sum - f.value(c, 0)) <=
                  1e-14 * (std::abs(f.value(c, 0)) + std::abs(cz.good.value(c, 0))));
        }
    }
    // on a stopping cube the good part is the signed average, recomputed here
    // against the brute sum
    for (const auto& i : cz.stopping) {
        double acc = 0;
        for (std::uint64_t c = i.cell_begin(L); c < i.cell_end(L); ++c)
            acc += f.value(c, 0) * f.cell_measure();
        const double avg = acc / i.measure();
        for (std::uint64_t c = i.cell_begin(L); c < i.cell_end(L); ++c)
            CHECK(cz.good.value(c, 0) == doctest::Approx(avg).epsilon(1e-13));
    }
}

TEST_CASE("scalar splitting obeys the size bounds") {
    const int L = 7;
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        auto f = oracle::random_grid(1, 1, L, seed);
        DyadicCube q = DyadicCube::root(1);
        for (double lambda : {2.0, 16.0, 256.0}) {
            auto cz = cz_decompose(f, q, lambda);
            const double avg = scalar_average(f, q);
            auto nm = norms(cz.good);
            CHECK(nm.linf <= 2.0 * lambda * avg * (1 + 1e-12));
            CHECK(nm.l2 <= std::sqrt(2.0 * lambda * q.measure()) * avg * (1 + 1e-12));
            CHECK(nm.l1 <= q.measure() * avg * (1 + 1e-12));
            for (const auto& i : cz.stopping) {
                // mean zero and L1 control per stopping cube
                CHECK(std::abs(cz.bad.integral(i, 0)) <= 1e-13 * f.abs_integral(i) + 1e-300);
                CHECK(cz.bad.abs_integral(i) <= 4.0 * lambda * i.measure() * avg * (1 + 1e-12));
            }
            // packing of the stopping family (two functions would double it)
            CHECK(packing_ratio(cz.stopping, q, L) <= 1.0 / lambda * (1 + 1e-12));
        }
    }
}

TEST_CASE("splitting against an external family rejects malformed lists") {
    const int L = 4;
    auto f = oracle::random_grid(1, 1, L, 5);
    DyadicCube q = DyadicCube::root(1);
    DyadicCube a = q.child(0);
    CHECK_THROWS(cz_decompose_on(f, q, 2.0, {a, a.child(1)}));       // overlap
    CHECK_THROWS(cz_decompose_on(f, a, 2.0, {q.child(1)}));          // outside
    CHECK_THROWS(cz_decompose_on(f, q, 2.0, {q}));                   // base itself
    CHECK_THROWS(cz_decompose_on(f, q, 1.0, {a}));                   // threshold
    auto cz = cz_decompose_on(f, q, 2.0, {a.child(1), a.child(0)});  // unsorted ok
    CHECK(cz.stopping[0] == a.child(0));
}

TEST_CASE("body splitting matches the vector stopping scan and its bounds") {
    const int L = 7;
    const double A = 16.0;
    int fired = 0;
    for (std::uint64_t seed : {21u, 22u, 23u, 24u}) {
        auto f = spiky_grid(1, 2, L, seed, 0.002, 4);
        DyadicCube q = DyadicCube::root(1);
        auto cz = cz_decompose_body(f, q, A);
        fired += static_cast<int>(cz.stopping.size());

        auto vs = vector_stopping(f, q, A);
        REQUIRE(cz.stopping.size() == vs.cubes.size());
        for (std::size_t i = 0; i < vs.cubes.size(); ++i) CHECK(cz.stopping[i] == vs.cubes[i]);

        for (std::uint64_t c = 0; c < f.cell_count(); ++c)
            for (int j = 0; j < 2; ++j) {
                const double sum = cz.good.value(c, j) + cz.bad.value(c, j);
                CHECK(std::abs(sum - f.value(c, j)) <=
                      1e-14 * (std::abs(f.value(c, j)) + std::abs(cz.good.value(c, j))));
            }
        for (const auto& i : cz.stopping)
            for (int j = 0; j < 2; ++j)
                CHECK(std::abs(cz.bad.integral(i, j)) <= 1e-13 * (std::abs(f.integral(i, j)) + 1));

        CHECK(cz.good_const == 2.0 * A * std::sqrt(2.0));
        CHECK(cz.bad_const == 4.0 * A * std::sqrt(2.0));
        CHECK(cz.good_sup <= cz.good_const * (1 + 1e-9));
        CHECK(cz.bad_avg <= cz.bad_const * (1 + 1e-9));

        // recompute the normalized sup from the published matrix
        Eigen::MatrixXd ainv = cz.john_shape.inverse();
        double sup = 0;
        for (std::uint64_t c = 0; c < f.cell_count(); ++c) {
            Eigen::Vector2d v(cz.good.value(c, 0), cz.good.value(c, 1));
            sup = std::max(sup, (ainv * v).cwiseAbs().maxCoeff());
        }
        CHECK(sup == doctest::Approx(cz.good_sup).epsilon(1e-12));
    }
    CHECK(fired > 0); // at least one seed must exercise the nontrivial branch
}

TEST_CASE("one-component body splitting reproduces the scalar splitting exactly") {
    const int L = 6;
    auto f = oracle::random_grid(1, 1, L, 33);
    DyadicCube q = DyadicCube::root(1);
    auto sc = cz_decompose(f, q, 256.0);
    auto bo = cz_decompose_body(f, q, 256.0);
    REQUIRE(sc.stopping.size() == bo.stopping.size());
    for (std::size_t i = 0; i < sc.stopping.size(); ++i) CHECK(sc.stopping[i] == bo.stopping[i]);
    CHECK(sc.good.raw() == bo.good.raw());
    CHECK(sc.bad.raw() == bo.bad.raw());
}

TEST_CASE("body splitting handles rank-deficient data") {
    const int L = 7;
    auto base = spiky_grid(1, 1, L, 44, 0.002, 4);
    std::vector<double> vals;
    for (std::uint64_t c = 0; c < base.cell_count(); ++c) {
        vals.push_back(base.value(c, 0));
        vals.push_back(2.0 * base.value(c, 0)); // collinear pair, rank 1 body
    }
    GridFunction f(1, 2, L, vals);
    auto cz = cz_decompose_body(f, DyadicCube::root(1), 16.0);
    CHECK(cz.degenerate_root);
    CHECK(!cz.stopping.empty()); // the splitting runs through the regularized scaling
    CHECK(cz.good_sup > 0);
    CHECK(cz.good_sup <= cz.good_const * (1 + 1e-9));
    CHECK(cz.bad_avg <= cz.bad_const * (1 + 1e-9));
}

TEST_CASE("scale classes partition the kernels and the form") {
    auto s = random_shift(1, 8, 2, 1, 0.8, false, 71);
    auto parts = scale_split(s);
    REQUIRE(parts.size() == 2);
    std::size_t total = 0;
    for (int m = 0; m < 2; ++m) {
        for (const auto& k : parts[m].kernels()) CHECK(k.cube.depth % 2 == m);
        total += parts[m].kernels().size();
    }
    CHECK(total == s.kernels().size());

    auto f1 = oracle::random_grid(1, 1, 8, 72);
    auto f2 = oracle::random_grid(1, 1, 8, 73);
    double whole = shift_form(s, f1, f2);
    double split = shift_form(parts[0], f1, f2) + shift_form(parts[1], f1, f2);
    CHECK(split == doctest::Approx(whole).epsilon(1e-12));
}

TEST_CASE("window ancestor agrees with brute-force search") {
    const int L = 6;
    for (int rho : {1, 2, 3}) {
        for (int m = 0; m < rho; ++m) {
            for (const auto& i : all_cubes(1, L)) {
                std::vector<DyadicCube> found;
                for (int t = std::max(0, i.depth - rho + 1); t < i.depth; ++t)
                    if (t % rho == m) found.push_back(i.ancestor_at(t));
                REQUIRE(found.size() <= 1);
                auto r = r_of_i(i, rho, m);
                if (found.empty()) {
                    CHECK(!r.has_value());
                } else {
                    REQUIRE(r.has_value());
                    CHECK(*r == found[0]);
                }
            }
        }
    }
    // two-dimensional spot check
    DyadicCube c2 = DyadicCube::root(2).child(3).child(1).child(2);
    auto r = r_of_i(c2, 2, 0);
    REQUIRE(r.has_value());
    CHECK(r->depth == 2);
    CHECK(c2.ancestor_at(2) == *r);
    CHECK(!r_of_i(c2, 2, 1).has_value()); // residue equals depth(i) mod rho
}

TEST_CASE("refinement step audit passes on certified random shifts") {
    const int L = 8;
    DyadicCube q = DyadicCube::root(1);
    int fired = 0;
    for (std::uint64_t seed : {101u, 102u, 103u}) {
        auto s = normalize_a2(random_shift(1, L, 1, 1, 0.9, true, seed), A2Strategy::HaarBessel);
        auto f1 = spiky_grid(1, 1, L, seed + 1000, 0.05, 12);
        auto f2 = spiky_grid(1, 1, L, seed + 2000, 0.05, 12);
        for (double lambda : {4.0, 16.0}) {
            auto rep = mainiter_check(s, f1, f2, q, lambda);
            CHECK(rep.ok);
            CHECK(rep.residual <= rep.c0 * (1 + 1e-9));
            CHECK(rep.residual <= rep.envelope);
            CHECK(rep.collapse_defect <= 1e-10);
            CHECK(rep.good_good_ratio <= 1.0);
            CHECK(rep.piece_ratio <= 1.0);
            CHECK(rep.vanish_ratio <= 1e-10);
            CHECK(rep.c0 == (5.0 * 2.0 + 4.0) * lambda);
            fired += rep.stopping_count;
        }
    }
    CHECK(fired > 0);
    // wider blocks exercise the window machinery
    auto s = normalize_a2(random_shift(1, L, 2, 3, 0.7, false, 505), A2Strategy::ScaleCount);
    auto f1 = spiky_grid(1, 1, L, 506, 0.01, 6);
    auto f2 = spiky_grid(1, 1, L, 507, 0.01, 6);
    auto rep = mainiter_check(s, f1, f2, q, 8.0);
    CHECK(rep.ok);
    CHECK(rep.stopping_count > 0);
}

TEST_CASE("refinement residual matches the direct form when nothing stops") {
    const int L = 7;
    DyadicCube q = DyadicCube::root(1);
    auto s = normalize_a2(random_shift(1, L, 1, 1, 1.0, false, 606), A2Strategy::HaarBessel);
    // values in [1, 1.1]: no cube can beat lambda = 256 times the average
    auto f1 = oracle::random_grid(1, 1, L, 607, 1.0, 1.1);
    auto f2 = oracle::random_grid(1, 1, L, 608, 1.0, 1.1);
    auto rep = mainiter_check(s, f1, f2, q, 256.0);
    CHECK(rep.stopping_count == 0);
    const double lhs = std::abs(shift_form_below_clipped(s, q, f1, q, f2, q));
    const double denom = q.measure() * scalar_average(f1, q) * scalar_average(f2, q);
    CHECK(rep.residual == doctest::Approx(lhs / denom).epsilon(1e-11));
    CHECK(rep.ok);

    // zero data: nothing to normalize against, residual must degrade to zero
    GridFunction z(1, 1, L, std::vector<double>(1u << L, 0.0));
    auto zr = mainiter_check(s, z, z, q, 256.0);
    CHECK(zr.residual == 0.0);
    CHECK(zr.ok);
}

TEST_CASE("one-component vector audit reproduces the scalar audit float for float") {
    const int L = 8;
    DyadicCube q = DyadicCube::root(1);
    int fired = 0;
    for (std::uint64_t seed : {111u, 112u, 113u, 114u, 115u}) {
        auto s = normalize_a2(random_shift(1, L, 1, 2, 0.8, seed % 2 == 0, seed),
                              A2Strategy::HaarBessel);
        auto f1 = spiky_grid(1, 1, L, seed + 1, 0.05, 12);
        auto f2 = spiky_grid(1, 1, L, seed + 2, 0.05, 12);
        auto sc = mainiter_check(s, f1, f2, q, 6.0);
        auto ve = mainitervec_check(s, f1, f2, q, 6.0);
        CHECK(ve.residual == sc.residual);
        CHECK(ve.collapse_defect == sc.collapse_defect);
        CHECK(ve.stopping_count == sc.stopping_count);
        CHECK(ve.c0 == sc.c0);
        CHECK(ve.envelope == sc.envelope);
        CHECK(ve.good_sup_ratio <= 1 + 1e-9);
        CHECK(ve.bad_avg_ratio <= 1 + 1e-9);
        fired += sc.stopping_count;
    }
    CHECK(fired > 0);
}

TEST_CASE("vector audit passes on two-component data") {
    const int L = 6;
    DyadicCube q = DyadicCube::root(1);
    for (std::uint64_t seed : {131u, 132u}) {
        auto s = normalize_a2(random_shift(1, L, 1, 1, 0.9, true, seed), A2Strategy::HaarBessel);
        auto f1 = oracle::random_grid(1, 2, L, seed + 1);
        auto f2 = oracle::random_grid(1, 2, L, seed + 2);
        auto rep = mainitervec_check(s, f1, f2, q, 16.0);
        CHECK(rep.ok);
        CHECK(rep.residual <= rep.c0 * (1 + 1e-9));
        CHECK(rep.johnkl_ratio <= 1 + 1e-9);
        CHECK(rep.good_sup_ratio <= 1 + 1e-9);
        CHECK(rep.bad_avg_ratio <= 1 + 1e-9);
        CHECK(rep.c0 == ((5.0 * 2.0 + 4.0) * 16.0) * 8.0);
    }
}

TEST_CASE("sibling decoupling: zero, collapse and bound cases all verify") {
    const int L1 = 8;
    auto s1 = normalize_a2(random_shift(1, L1, 1, 2, 0.9, false, 707), A2Strategy::ScaleCount);
    auto f1 = oracle::random_grid(1, 1, L1, 708);
    auto f2 = oracle::random_grid(1, 1, L1, 709);
    for (const DyadicCube& qbar :
         {DyadicCube::root(1), DyadicCube::root(1).child(0), DyadicCube::root(1).child(1).child(0)}) {
        auto rep = sibling_decoupling_check(s1, f1, f2, qbar);
        CHECK(rep.ok);
        CHECK(rep.zero_defect == 0.0);
        CHECK(rep.collapse_defect <= 1e-11);
        CHECK(rep.bound_ratio <= 1.0);
        CHECK(rep.offdiag_total <= rep.offdiag_allowed);
    }

    const int L2 = 4;
    auto s2 = normalize_a2(random_shift(2, L2, 1, 1, 1.0, true, 717), A2Strategy::HaarBessel);
    auto g1 = oracle::random_grid(2, 1, L2, 718);
    auto g2 = oracle::random_grid(2, 1, L2, 719);
    auto rep = sibling_decoupling_check(s2, g1, g2, DyadicCube::root(2).child(2));
    CHECK(rep.ok);
    CHECK(rep.zero_defect == 0.0);
}
