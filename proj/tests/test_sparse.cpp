#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "dyadom/common.hpp"
#include "dyadom/convex.hpp"
#include "dyadom/sparse.hpp"
#include "oracles.hpp"

using namespace dyadom;

namespace {

GridFunction abs_grid(int dim, int L, std::uint64_t seed) {
    auto f = oracle::random_grid(dim, 1, L, seed, 0.05, 1.0);
    return f;
}

// trigger test recomputed from scratch
bool triggers(const GridFunction& f1, const GridFunction& f2, const DyadicCube& root,
              const DyadicCube& I, double lambda) {
    return oracle::brute_abs_avg(f1, I) > lambda * oracle::brute_abs_avg(f1, root) ||
           oracle::brute_abs_avg(f2, I) > lambda * oracle::brute_abs_avg(f2, root);
}

} // namespace

TEST_CASE("stopping children on a hand-built spike") {
    const int L = 4;
    std::vector<double> v1(1u << L, 1.0);
    v1[0] = 100.0;
    GridFunction f1(1, 1, L, v1);
    GridFunction f2(1, 1, L, std::vector<double>(1u << L, 1.0));
    DyadicCube root = DyadicCube::root(1);

    // same arithmetic as the scalar spike in the stopping scan: first escape
    // of f1 at depth 2 over [0, 1/4); f2 is constant and never triggers
    auto st = stopping_children({&f1, &f2}, root, 2.0);
    REQUIRE(st.size() == 1);
    CHECK(st[0].depth == 2);
    CHECK(st[0].index[0] == 0);

    CHECK_THROWS(stopping_children({&f1}, root, 1.0));
    CHECK_THROWS(stopping_children({&f1}, root, 0.5));
    CHECK_THROWS(stopping_children({}, root, 2.0));
}

TEST_CASE("stopping children are exactly the maximal triggering cubes") {
    for (std::uint64_t seed : {3u, 4u}) {
        for (int d : {1, 2}) {
            const int L = d == 1 ? 6 : 3;
            auto f1 = abs_grid(d, L, seed * 17);
            auto f2 = abs_grid(d, L, seed * 17 + 1);
            DyadicCube root = DyadicCube::root(d);
            double lambda = 1.5;
            auto st = stopping_children({&f1, &f2}, root, lambda);
            std::set<std::pair<int, std::uint64_t>> got;
            for (auto& c : st) got.insert({c.depth, c.morton()});

            for (int depth = 1; depth <= L; ++depth)
                for (std::uint64_t m = 0; m < (1ull << (d * depth)); ++m) {
                    DyadicCube I = cube_from_morton(d, depth, m);
                    bool trig = triggers(f1, f2, root, I, lambda);
                    bool anc_trig = false;
                    DyadicCube w = I;
                    while (w.depth > 1) {
                        w = w.parent();
                        if (triggers(f1, f2, root, w, lambda)) anc_trig = true;
                    }
                    bool expect = trig && !anc_trig;
                    CHECK(got.count({I.depth, I.morton()}) == (expect ? 1u : 0u));
                }
        }
    }
}

TEST_CASE("stopping packing stays under 2/lambda, exact cell counts") {
    const double lambda = 256.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto f1 = abs_grid(1, 10, 900 + seed);
        auto f2 = abs_grid(1, 10, 950 + seed);
        DyadicCube root = DyadicCube::root(1);
        auto st = stopping_children({&f1, &f2}, root, lambda);
        CHECK(packing_ratio(st, root, 10) <= 2.0 / 256.0);
    }
    // exactness of the ratio itself
    DyadicCube root = DyadicCube::root(1);
    std::vector<DyadicCube> two = {root.child(0).child(0), root.child(1)};
    CHECK(packing_ratio(two, root, 6) == 0.75);
}

TEST_CASE("builder wires layers and parents") {
    auto f1 = abs_grid(1, 8, 71);
    auto f2 = abs_grid(1, 8, 72);
    DyadicCube root = DyadicCube::root(1);
    auto s = build_sparse_collection(f1, f2, root, 1.3);
    REQUIRE(!s.nodes.empty());
    CHECK(s.lambda == 1.3);
    CHECK(s.nodes[0].cube == root);
    CHECK(s.nodes[0].layer == 0);
    CHECK(s.nodes[0].parent == -1);

    std::vector<const GridFunction*> fs{&f1, &f2};
    for (std::size_t i = 1; i < s.nodes.size(); ++i) {
        const auto& n = s.nodes[i];
        REQUIRE(n.parent >= 0);
        const auto& p = s.nodes[n.parent];
        CHECK(p.cube.contains(n.cube));
        CHECK(n.layer == p.layer + 1);
        // the node is one of its parent's stopping children
        auto st = stopping_children(fs, p.cube, s.lambda);
        bool found = false;
        for (auto& c : st)
            if (c == n.cube) found = true;
        CHECK(found);
    }
    // and every stopping child of every node is present
    std::set<std::pair<int, std::uint64_t>> present;
    for (const auto& n : s.nodes) present.insert({n.cube.depth, n.cube.morton()});
    for (const auto& n : s.nodes)
        for (auto& c : stopping_children(fs, n.cube, s.lambda))
            CHECK(present.count({c.depth, c.morton()}) == 1);
}

TEST_CASE("verification of built collections") {
    for (std::uint64_t seed : {21u, 22u, 23u}) {
        auto f1 = abs_grid(1, 10, seed);
        auto f2 = abs_grid(1, 10, seed + 100);
        auto s = build_sparse_collection(f1, f2, DyadicCube::root(1), 256.0);
        auto v = verify_sparse(s);
        CHECK(v.witnesses_disjoint);
        // per-node packing 2^-7 gives geometric subtree mass
        CHECK(v.eta_greedy >= 1.0 - std::ldexp(1.0, -7));
        CHECK(v.eta_feasible >= 1.0 - std::ldexp(1.0, -7));
        CHECK(v.carleson <= 1.0 / (1.0 - std::ldexp(1.0, -7)));
        CHECK(v.carleson >= 1.0);
    }
}

TEST_CASE("verification of a tiling family is exactly half sparse") {
    DyadicCube root = DyadicCube::root(1);
    SparseCollection s =
        collection_from_cubes(1, 5, {root, root.child(0), root.child(1)});
    auto v = verify_sparse(s);
    CHECK(v.witnesses_disjoint); // empty root witness is vacuously fine
    CHECK(v.eta_greedy == 0.0);
    CHECK(v.carleson == 2.0);
    CHECK(v.eta_feasible == 0.5);

    SparseCollection single = collection_from_cubes(1, 5, {root.child(1)});
    auto vs = verify_sparse(single);
    CHECK(vs.eta_greedy == 1.0);
    CHECK(vs.eta_feasible == 1.0);

    CHECK_THROWS(collection_from_cubes(1, 5, {root, root}));
}

TEST_CASE("sparse forms agree with direct summation") {
    auto f1 = abs_grid(1, 8, 5001);
    auto f2 = abs_grid(1, 8, 5002);
    auto s = build_sparse_collection(f1, f2, DyadicCube::root(1), 2.0);
    double direct = 0;
    for (const auto& n : s.nodes)
        direct += n.cube.measure() * (oracle::brute_abs_avg(f1, n.cube) *
                                      oracle::brute_abs_avg(f2, n.cube));
    CHECK(sparse_form(s, f1, f2) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("scalar body form reproduces the scalar form bit for bit") {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
        auto f1 = oracle::random_grid(1, 1, 9, seed * 3);
        auto f2 = oracle::random_grid(1, 1, 9, seed * 3 + 1);
        auto s = build_sparse_collection(f1, f2, DyadicCube::root(1), 4.0);
        CHECK(sparse_form_body(s, f1, f2) == sparse_form(s, f1, f2));
    }
}

TEST_CASE("vector body form matches the enumeration oracle") {
    auto f1 = oracle::random_grid(1, 2, 3, 41);
    auto f2 = oracle::random_grid(1, 2, 3, 42);
    DyadicCube root = DyadicCube::root(1);
    SparseCollection s = collection_from_cubes(
        1, 3, {root, root.child(0), root.child(1).child(1)});
    double direct = 0;
    for (const auto& n : s.nodes) {
        Zonotope k1 = body_average(f1, n.cube);
        Zonotope k2 = body_average(f2, n.cube);
        direct += n.cube.measure() * oracle::brute_minkowski(k1.generators(), k2.generators());
    }
    CHECK(sparse_form_body(s, f1, f2) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("principal cubes obey their selection rule") {
    auto f1 = abs_grid(1, 7, 611);
    auto f2 = abs_grid(1, 7, 612);
    DyadicCube root = DyadicCube::root(1);
    auto kept = universal_collection(f1, f2, root);
    REQUIRE(!kept.empty());
    CHECK(kept[0] == root);
    std::set<std::pair<int, std::uint64_t>> in;
    for (auto& c : kept) in.insert({c.depth, c.morton()});

    auto prod = [&](const DyadicCube& q) {
        return scalar_average(f1, q) * scalar_average(f2, q);
    };
    for (int depth = 1; depth <= 7; ++depth)
        for (std::uint64_t m = 0; m < (1ull << depth); ++m) {
            DyadicCube q = cube_from_morton(1, depth, m);
            DyadicCube w = q;
            double anchor = 0;
            while (w.depth > 0) {
                w = w.parent();
                if (in.count({w.depth, w.morton()})) {
                    anchor = prod(w);
                    break;
                }
            }
            bool expect = prod(q) > 4.0 * anchor;
            CHECK(in.count({q.depth, q.morton()}) == (expect ? 1u : 0u));
        }
}

TEST_CASE("principal cubes dominate every half sparse form") {
    auto f1 = abs_grid(1, 7, 8001);
    auto f2 = abs_grid(1, 7, 8002);
    DyadicCube root = DyadicCube::root(1);
    auto kept = universal_collection(f1, f2, root);
    SparseCollection su = collection_from_cubes(1, 7, kept);
    double universal = sparse_form(su, f1, f2);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        SparseCollection t = sample_sparse_collection(1, 7, 0.5, seed);
        double lt = sparse_form(t, f1, f2);
        CHECK(lt <= 8.0 * universal * (1 + 1e-12));
    }
}

TEST_CASE("sampled collections reach the requested sparseness") {
    for (int d : {1, 2}) {
        const int L = d == 1 ? 7 : 5;
        SparseCollection s = sample_sparse_collection(d, L, 0.5, 99 + d);
        auto v = verify_sparse(s);
        CHECK(v.eta_feasible >= 0.5);
        CHECK(!s.nodes.empty());
        // same seed reproduces the family
        SparseCollection r = sample_sparse_collection(d, L, 0.5, 99 + d);
        REQUIRE(r.nodes.size() == s.nodes.size());
        for (std::size_t i = 0; i < s.nodes.size(); ++i)
            CHECK(r.nodes[i].cube == s.nodes[i].cube);
    }
}

TEST_CASE("collection csv round trip") {
    auto f1 = abs_grid(2, 4, 31);
    auto f2 = abs_grid(2, 4, 32);
    auto s = build_sparse_collection(f1, f2, DyadicCube::root(2), 1.4);
    auto path = std::filesystem::temp_directory_path() / "dyadom_coll_rt.csv";
    save_collection_csv(s, path.string());
    SparseCollection t = load_collection_csv(path.string());
    std::filesystem::remove(path);
    CHECK(t.dim == s.dim);
    CHECK(t.finest_depth == s.finest_depth);
    CHECK(t.lambda == s.lambda);
    REQUIRE(t.nodes.size() == s.nodes.size());
    for (std::size_t i = 0; i < s.nodes.size(); ++i) {
        CHECK(t.nodes[i].cube == s.nodes[i].cube);
        CHECK(t.nodes[i].layer == s.nodes[i].layer);
        CHECK(t.nodes[i].parent == s.nodes[i].parent);
        CHECK(t.nodes[i].kids == s.nodes[i].kids);
    }
}
