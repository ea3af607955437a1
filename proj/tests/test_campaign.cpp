#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dyadom/campaign.hpp"
#include "dyadom/common.hpp"
#include "dyadom/convex.hpp"
#include "dyadom/shift.hpp"

using namespace dyadom;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

CampaignConfig small_config() {
    CampaignConfig c;
    c.dim = 1;
    c.finest_depth = 8;
    c.rho_min = 1;
    c.rho_max = 3;
    c.trials = 40;
    c.shifts_per_rho = 2;
    c.seed = 7;
    return c;
}

} // namespace

TEST_CASE("config json round trip") {
    CampaignConfig c;
    c.dim = 2;
    c.finest_depth = 5;
    c.components = 3;
    c.rho_min = 2;
    c.rho_max = 4;
    c.trials = 123;
    c.shifts_per_rho = 9;
    c.seed = 0xdeadbeefcafebabeull;
    c.strategy = "scale-count";
    c.generator = "spike";
    c.density = 0.6180339887498949;
    c.cancellative = false;
    c.lambda = 17.25;
    c.envelope = 1234.5678901234567;
    c.slope_envelope = 1.0999999999999997;
    c.workers = 4;
    c.out_dir = "/tmp/somewhere";
    CampaignConfig back = config_from_json(config_to_json(c));
    CHECK(back == c);

    // file round trip through the loaders
    std::string path = temp_path("dyadom_config.json");
    save_config(c, path);
    CHECK(load_config(path) == c);
    std::filesystem::remove(path);

    // missing keys keep defaults, unknown keys are rejected, junk throws
    CampaignConfig partial = config_from_json("{\"trials\": 3, \"seed\": 99}");
    CHECK(partial.trials == 3);
    CHECK(partial.seed == 99);
    CHECK(partial.dim == CampaignConfig{}.dim);
    CHECK(partial.lambda == CampaignConfig{}.lambda);
    CHECK_THROWS(config_from_json("{\"trails\": 3}"));
    CHECK_THROWS(config_from_json("not json"));
    CHECK_THROWS(config_from_json("[1,2]"));
}

TEST_CASE("input generators") {
    for (InputKind k : {InputKind::Spike, InputKind::RandomSign, InputKind::Ramp, InputKind::Mixed}) {
        CHECK(input_kind_from_string(to_string(k)) == k);
        GridFunction a = make_input(k, 1, 2, 5, 42);
        GridFunction b = make_input(k, 1, 2, 5, 42);
        CHECK(a.raw() == b.raw());
        GridFunction d = make_input(k, 1, 2, 5, 43);
        CHECK(a.raw() != d.raw());
    }
    CHECK_THROWS(input_kind_from_string("bogus"));
    CHECK_THROWS(make_input(InputKind::Spike, 1, 4, 5, 1));
    CHECK_THROWS(make_input(InputKind::Spike, 3, 1, 5, 1));

    GridFunction rs = make_input(InputKind::RandomSign, 2, 1, 3, 5);
    for (double x : rs.raw()) CHECK(std::abs(x) == 1.0);

    // ramp magnitudes grow along the cell order, one slope per component
    GridFunction rp = make_input(InputKind::Ramp, 1, 2, 4, 5);
    for (int j = 0; j < 2; ++j)
        for (std::uint64_t cidx = 1; cidx < rp.cell_count(); ++cidx)
            CHECK(std::abs(rp.value(cidx, j)) > std::abs(rp.value(cidx - 1, j)));

    // spike values live on a two-level magnitude scale
    GridFunction sp = make_input(InputKind::Spike, 1, 1, 6, 11);
    for (double x : sp.raw())
        CHECK((x == 0.0 || std::abs(x) == 0x1.0p-10 || std::abs(x) == 1.0));

    // the all-zero draw is reachable (this is what campaigns must discard)
    bool found_zero = false;
    for (std::uint64_t s = 0; s < 20000 && !found_zero; ++s)
        found_zero = norms(make_input(InputKind::Spike, 1, 1, 4, s)).l1 == 0.0;
    CHECK(found_zero);
}

TEST_CASE("scalar domination campaign") {
    CampaignConfig c = small_config();
    DominationReport r = verify_scalar_domination(c);
    CHECK(r.ok);
    CHECK(r.within_envelope);
    CHECK(r.envelope == (5.0 * 2.0 + 4.0) * 256.0);
    CHECK(r.slope <= r.slope_envelope);
    CHECK(r.records.size() == std::size_t(c.trials - r.discarded) * 3 * 2);

    double max_seen = 0;
    for (std::size_t i = 0; i < r.records.size(); ++i) {
        const TrialRecord& t = r.records[i];
        CHECK(t.ratio >= 0.0);
        CHECK(t.ratio <= r.max_ratio);
        CHECK(std::max(t.m1, t.m2) == t.rho);
        CHECK(t.m1 >= 1);
        CHECK(t.m2 >= 1);
        max_seen = std::max(max_seen, t.ratio);
        if (i > 0) CHECK(r.records[i - 1].trial <= t.trial);
        if (i > 0 && r.records[i - 1].trial == t.trial) {
            CHECK(r.records[i - 1].rho <= t.rho);
            // the sparse form is a per-pair quantity
            CHECK(r.records[i - 1].sparse == t.sparse);
        }
    }
    CHECK(r.max_ratio == max_seen);
    CHECK(r.median_ratio <= r.max_ratio);

    // same config, two runs: identical records and identical bytes on disk
    DominationReport r2 = verify_scalar_domination(c);
    REQUIRE(r2.records.size() == r.records.size());
    std::string p1 = temp_path("dyadom_rep1.csv");
    std::string p2 = temp_path("dyadom_rep2.csv");
    save_domination_csv(r, p1);
    save_domination_csv(r2, p2);
    CHECK(slurp(p1) == slurp(p2));
    CHECK(slurp(p1).rfind("trial,rho,m1,m2,shift_seed,form,sparse,ratio\n", 0) == 0);
    std::string j1 = temp_path("dyadom_rep1.json");
    std::string j2 = temp_path("dyadom_rep2.json");
    save_domination_json(r, c, j1);
    save_domination_json(r2, c, j2);
    CHECK(slurp(j1) == slurp(j2));
    CHECK(slurp(j1).find("\"max_ratio\"") != std::string::npos);
    for (const std::string& p : {p1, p2, j1, j2}) std::filesystem::remove(p);

    // a worker pool must not change the output, only the wall clock
    CampaignConfig cw = c;
    cw.workers = 2;
    DominationReport rw = verify_scalar_domination(cw);
    REQUIRE(rw.records.size() == r.records.size());
    for (std::size_t i = 0; i < r.records.size(); ++i) {
        CHECK(rw.records[i].form == r.records[i].form);
        CHECK(rw.records[i].ratio == r.records[i].ratio);
    }

    // tightening the envelope below the observed maximum must flag a breach
    CampaignConfig cb = c;
    cb.envelope = r.max_ratio * 0.5;
    DominationReport rb = verify_scalar_domination(cb);
    CHECK(!rb.within_envelope);
    CHECK(!rb.ok);
    bool found = false;
    for (const TrialRecord& t : rb.records)
        if (t.trial == rb.breach_trial && t.rho == rb.breach_rho &&
            t.shift_seed == rb.breach_seed && t.ratio > cb.envelope)
            found = true;
    CHECK(found);
}

TEST_CASE("constant inputs stay below the certificate") {
    GridFunction one(1, 1, 6, std::vector<double>(64, 1.0));
    SparseCollection s = build_sparse_collection(one, one, one.root(), 256.0);
    CHECK(s.nodes.size() == 1); // constants never trigger stopping
    double lam = sparse_form(s, one, one);
    CHECK(lam == 1.0);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        DyadicShift sh = normalize_a2(random_shift(1, 6, 1, 1, 0.7, false, seed),
                                      A2Strategy::HaarBessel);
        double ratio = std::abs(shift_form(sh, one, one)) / (1.0 * lam);
        CHECK(ratio <= sh.certificate().bound + 1e-12);
    }
}

TEST_CASE("zero inputs are discarded") {
    // hunt a seed whose first trial draws an all-zero spike input
    std::uint64_t seed = 0;
    bool found = false;
    for (std::uint64_t s = 0; s < 50000 && !found; ++s) {
        if (norms(make_input(InputKind::Spike, 1, 1, 6, mix_seed(s, 0xf1, 0))).l1 == 0.0 ||
            norms(make_input(InputKind::Spike, 1, 1, 6, mix_seed(s, 0xf2, 0))).l1 == 0.0) {
            seed = s;
            found = true;
        }
    }
    REQUIRE(found);
    CampaignConfig c;
    c.dim = 1;
    c.finest_depth = 6;
    c.rho_max = 2;
    c.trials = 3;
    c.shifts_per_rho = 1;
    c.seed = seed;
    c.generator = "spike";
    DominationReport r = verify_scalar_domination(c);
    CHECK(r.discarded >= 1);
    CHECK(r.records.size() == std::size_t(3 - r.discarded) * 2);
    for (const TrialRecord& t : r.records) CHECK(t.sparse > 0.0);
}

TEST_CASE("campaign config validation") {
    CampaignConfig c = small_config();
    c.components = 2;
    CHECK_THROWS(verify_scalar_domination(c)); // scalar campaign is one-component
    c = small_config();
    c.rho_min = 0;
    CHECK_THROWS(verify_scalar_domination(c));
    c = small_config();
    c.rho_max = 8; // needs rho < finest depth
    CHECK_THROWS(verify_scalar_domination(c));
    c = small_config();
    c.lambda = 1.0;
    CHECK_THROWS(verify_scalar_domination(c));
    c = small_config();
    c.strategy = "nope";
    CHECK_THROWS(verify_scalar_domination(c));
    c = small_config();
    c.generator = "nope";
    CHECK_THROWS(verify_scalar_domination(c));
    c = small_config();
    c.components = 4;
    CHECK_THROWS(verify_vector_domination(c));
}

TEST_CASE("one-component vector campaign reproduces the scalar campaign") {
    CampaignConfig c;
    c.dim = 1;
    c.finest_depth = 7;
    c.rho_min = 1;
    c.rho_max = 3;
    c.trials = 25;
    c.shifts_per_rho = 2;
    c.seed = 21;
    DominationReport rs = verify_scalar_domination(c);
    DominationReport rv = verify_vector_domination(c);
    REQUIRE(rs.records.size() == rv.records.size());
    REQUIRE(!rs.records.empty());
    for (std::size_t i = 0; i < rs.records.size(); ++i) {
        const TrialRecord& a = rs.records[i];
        const TrialRecord& b = rv.records[i];
        CHECK(a.trial == b.trial);
        CHECK(a.rho == b.rho);
        CHECK(a.m1 == b.m1);
        CHECK(a.m2 == b.m2);
        CHECK(a.shift_seed == b.shift_seed);
        CHECK(a.form == b.form);     // bitwise
        CHECK(a.sparse == b.sparse); // bitwise
        CHECK(a.ratio == b.ratio);   // bitwise
    }
    CHECK(rs.max_ratio == rv.max_ratio);
    CHECK(rs.median_ratio == rv.median_ratio);
    CHECK(rs.slope == rv.slope);
    CHECK(rs.envelope == rv.envelope);
    CHECK(rs.discarded == rv.discarded);
    CHECK(rs.ok == rv.ok);
}

TEST_CASE("joint body stopping tree at one component matches the scalar tree") {
    // hunt seeds whose spikes actually make the low-threshold tree branch
    auto spiky = [](std::uint64_t s0) {
        std::uint64_t s = s0;
        GridFunction f = make_input(InputKind::Spike, 1, 1, 8, s);
        while (build_sparse_collection(f, f, f.root(), 4.0).nodes.size() < 3) {
            f = make_input(InputKind::Spike, 1, 1, 8, ++s);
            REQUIRE(s < s0 + 500);
        }
        return f;
    };
    GridFunction f1 = spiky(301);
    GridFunction f2 = spiky(901);
    // a low threshold forces several stopping generations
    SparseCollection sc = build_sparse_collection(f1, f2, f1.root(), 4.0);
    SparseCollection bd = build_body_collection(f1, f2, f1.root(), 4.0);
    REQUIRE(sc.nodes.size() > 1);
    REQUIRE(bd.nodes.size() == sc.nodes.size());
    for (std::size_t i = 0; i < sc.nodes.size(); ++i) {
        CHECK(bd.nodes[i].cube == sc.nodes[i].cube);
        CHECK(bd.nodes[i].parent == sc.nodes[i].parent);
    }
    CHECK(bd.lambda == 4.0);
    CHECK(sparse_form_body(bd, f1, f2) == sparse_form(sc, f1, f2));

    GridFunction other(2, 1, 4, std::vector<double>(256, 1.0));
    CHECK_THROWS(build_body_collection(f1, other, f1.root(), 4.0));
}

TEST_CASE("two-component vector campaign") {
    CampaignConfig c;
    c.dim = 1;
    c.finest_depth = 5;
    c.components = 2;
    c.rho_min = 1;
    c.rho_max = 2;
    c.trials = 12;
    c.shifts_per_rho = 2;
    c.seed = 33;
    DominationReport r = verify_vector_domination(c);
    CHECK(r.ok);
    CHECK(r.envelope == 14.0 * 256.0 * 32.0); // scalar envelope times n^5
    CHECK(!r.records.empty());
    for (const TrialRecord& t : r.records) {
        CHECK(std::isfinite(t.ratio));
        CHECK(t.ratio >= 0.0);
    }
    CHECK(r.degenerate >= 0);

    // pointwise-orthogonal components: both the shift form and the body
    // product collapse to exactly zero
    std::vector<double> v1(64, 0.0), v2(64, 0.0);
    std::uint64_t st = 9;
    for (int cidx = 0; cidx < 32; ++cidx) {
        v1[2 * cidx] = (splitmix64(st) & 1) ? 1.0 : -1.0;      // first component only
        v2[2 * cidx + 1] = (splitmix64(st) & 1) ? 1.0 : -1.0;  // second component only
    }
    GridFunction g1(1, 2, 5, v1), g2(1, 2, 5, v2);
    SparseCollection s = build_body_collection(g1, g2, g1.root(), 1024.0);
    CHECK(sparse_form_body(s, g1, g2) == 0.0);
    DyadicShift sh = normalize_a2(random_shift(1, 5, 1, 1, 0.7, true, 77),
                                  A2Strategy::HaarBessel);
    CHECK(shift_form(sh, g1, g2) == 0.0);
}

TEST_CASE("stopping sets are invariant under a joint linear change of frame") {
    // spikes make a few cells escape the dilated root body; random signs alone
    // never jump far enough
    std::uint64_t seed = 1;
    GridFunction f = make_input(InputKind::Spike, 1, 2, 6, seed);
    VectorStopping a = vector_stopping(f, f.root(), 8.0);
    while (a.cubes.empty()) {
        f = make_input(InputKind::Spike, 1, 2, 6, ++seed);
        a = vector_stopping(f, f.root(), 8.0);
        REQUIRE(seed < 500);
    }
    Eigen::Matrix2d m;
    m << 2.0, 0.3, -0.1, 1.5;
    std::vector<double> tv(f.raw().size());
    for (std::uint64_t cidx = 0; cidx < f.cell_count(); ++cidx) {
        Eigen::Vector2d x(f.value(cidx, 0), f.value(cidx, 1));
        Eigen::Vector2d y = m * x;
        tv[2 * cidx] = y[0];
        tv[2 * cidx + 1] = y[1];
    }
    GridFunction mf(1, 2, 6, tv);
    VectorStopping b = vector_stopping(mf, f.root(), 8.0);
    REQUIRE(a.cubes.size() == b.cubes.size());
    for (std::size_t i = 0; i < a.cubes.size(); ++i) CHECK(a.cubes[i] == b.cubes[i]);
}

TEST_CASE("run-all suites") {
    CampaignConfig c = small_config();
    RunAllReport empty = run_all(c, {});
    CHECK(empty.ok);
    CHECK(empty.suites.empty());

    RunAllReport two = run_all(c, {"sparse", "convex"});
    REQUIRE(two.suites.size() == 2);
    CHECK(two.suites[0].name == "sparse");
    CHECK(two.suites[1].name == "convex");
    CHECK(two.suites[0].ok);
    CHECK(two.suites[1].ok);
    CHECK(two.ok);
    CHECK(two.suites[0].observed >= two.suites[0].allowed); // eta floor
    CHECK(two.suites[1].observed <= two.suites[1].allowed); // oracle defect cap

    CHECK_THROWS(run_all(c, {"sparse", "nope"}));
}
