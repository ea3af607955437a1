#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dyadom/campaign.hpp"
#include "dyadom/common.hpp"
#include "dyadom/convex.hpp"
#include "dyadom/czd.hpp"
#include "dyadom/dyadic.hpp"
#include "dyadom/shift.hpp"
#include "dyadom/sparse.hpp"
#include "dyadom/weights.hpp"

using namespace dyadom;

namespace {

std::string join(const std::string& dir, const char* name) {
    return (std::filesystem::path(dir) / name).string();
}

void ensure_out(const std::string& dir) {
    if (!dir.empty()) std::filesystem::create_directories(dir);
}

GridFunction nonzero_input(InputKind kind, const CampaignConfig& c, std::uint64_t stream) {
    std::uint64_t idx = 0;
    GridFunction f = make_input(kind, c.dim, 1, c.finest_depth, mix_seed(c.seed, stream, idx));
    while (norms(f).l1 == 0.0)
        f = make_input(kind, c.dim, 1, c.finest_depth, mix_seed(c.seed, stream, ++idx));
    return f;
}

double u01(std::uint64_t& st) { return (splitmix64(st) >> 11) * 0x1.0p-53; }

void print_domination(const char* name, const DominationReport& r) {
    std::printf("%s: records=%zu discarded=%d degenerate=%d\n", name, r.records.size(),
                r.discarded, r.degenerate);
    std::printf("  max ratio    %s (envelope %s)\n", format_double(r.max_ratio).c_str(),
                format_double(r.envelope).c_str());
    std::printf("  median ratio %s\n", format_double(r.median_ratio).c_str());
    std::printf("  growth slope %s (envelope %s)\n", format_double(r.slope).c_str(),
                format_double(r.slope_envelope).c_str());
    if (!r.within_envelope)
        std::printf("  BREACH at trial=%llu rho=%d seed=%llu\n",
                    static_cast<unsigned long long>(r.breach_trial), r.breach_rho,
                    static_cast<unsigned long long>(r.breach_seed));
    std::printf("  verdict: %s\n", r.ok ? "ok" : "FAIL");
}

int cmd_sparse(const CampaignConfig& c) {
    InputKind kind = input_kind_from_string(c.generator);
    GridFunction f1 = nonzero_input(kind, c, 0xf1);
    GridFunction f2 = nonzero_input(kind, c, 0xf2);
    SparseCollection s = build_sparse_collection(f1, f2, f1.root(), c.lambda);
    SparseVerification v = verify_sparse(s);
    double floor = std::max(0.0, 1.0 - 2.0 / c.lambda);
    std::printf("sparse: nodes=%zu lambda=%s\n", s.nodes.size(), format_double(s.lambda).c_str());
    std::printf("  eta greedy   %s\n", format_double(v.eta_greedy).c_str());
    std::printf("  eta feasible %s (floor %s)\n", format_double(v.eta_feasible).c_str(),
                format_double(floor).c_str());
    std::printf("  carleson     %s\n", format_double(v.carleson).c_str());
    std::printf("  sparse form  %s\n", format_double(sparse_form(s, f1, f2)).c_str());
    if (!c.out_dir.empty()) {
        ensure_out(c.out_dir);
        save_collection_csv(s, join(c.out_dir, "collection.csv"));
        std::printf("  wrote %s\n", join(c.out_dir, "collection.csv").c_str());
    }
    bool ok = v.witnesses_disjoint && v.eta_feasible >= floor;
    std::printf("  verdict: %s\n", ok ? "ok" : "FAIL");
    return ok ? 0 : 1;
}

int cmd_shift(const CampaignConfig& c, int m1, int m2) {
    DyadicShift s = normalize_a2(
        random_shift(c.dim, c.finest_depth, m1, m2, c.density, c.cancellative, c.seed),
        a2_strategy_from_string(c.strategy));
    NormResult n = shift_norm(s);
    std::printf("shift: d=%d L=%d m1=%d m2=%d kernels=%zu\n", c.dim, c.finest_depth, m1, m2,
                s.kernels().size());
    std::printf("  certificate  %s factor=%s bound=%s\n", s.certificate().strategy.c_str(),
                format_double(s.certificate().factor).c_str(),
                format_double(s.certificate().bound).c_str());
    std::printf("  size excess  %s\n", format_double(s.a1_excess()).c_str());
    std::printf("  norm         %s (converged=%d)\n", format_double(n.value).c_str(),
                int(n.converged));
    if (!c.out_dir.empty()) {
        ensure_out(c.out_dir);
        save_shift_csv(s, join(c.out_dir, "shift.csv"));
        std::printf("  wrote %s\n", join(c.out_dir, "shift.csv").c_str());
    }
    bool ok = n.converged && n.value <= s.certificate().bound + 1e-9 && s.a1_excess() <= 1 + 1e-12;
    std::printf("  verdict: %s\n", ok ? "ok" : "FAIL");
    return ok ? 0 : 1;
}

int cmd_czd(const CampaignConfig& c) {
    InputKind kind = input_kind_from_string(c.generator);
    GridFunction f1 = nonzero_input(kind, c, 0xc2d1);
    GridFunction f2 = nonzero_input(kind, c, 0xc2d2);
    DyadicShift s = normalize_a2(
        random_shift(c.dim, c.finest_depth, 1, 1, c.density, c.cancellative,
                     mix_seed(c.seed, 0xc2d5, 0)),
        a2_strategy_from_string(c.strategy));
    MainiterReport m = mainiter_check(s, f1, f2, f1.root(), c.lambda);
    std::printf("czd refinement step: residual=%s c0=%s envelope=%s stopping=%d\n",
                format_double(m.residual).c_str(), format_double(m.c0).c_str(),
                format_double(m.envelope).c_str(), m.stopping_count);
    std::printf("  collapse defect %s  good-good ratio %s\n",
                format_double(m.collapse_defect).c_str(),
                format_double(m.good_good_ratio).c_str());
    SiblingReport sib = sibling_decoupling_check(s, f1, f2, f1.root());
    std::printf("  sibling offdiag %s allowed %s\n", format_double(sib.offdiag_total).c_str(),
                format_double(sib.offdiag_allowed).c_str());
    bool ok = m.ok && sib.ok;
    std::printf("  verdict: %s\n", ok ? "ok" : "FAIL");
    return ok ? 0 : 1;
}

int cmd_convex(const CampaignConfig& c) {
    std::uint64_t st = mix_seed(c.seed, 0xc0, 0);
    double worst_insc = 0, worst_cover = 0, worst_defect = 0;
    int checked = 0;
    for (int t = 0; t < 200; ++t) {
        int n = 2 + int(splitmix64(st) % 2);
        auto draw_body = [&](int gens) {
            Eigen::MatrixXd g(n, gens);
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < gens; ++k) g(i, k) = 2.0 * u01(st) - 1.0;
            return Zonotope(n, g);
        };
        Zonotope k = draw_body(2 + int(splitmix64(st) % 10));
        Zonotope h = draw_body(2 + int(splitmix64(st) % 10));
        JohnEllipsoid e = john_ellipsoid(k);
        worst_insc = std::max(worst_insc, e.inscribed_margin);
        worst_cover = std::max(worst_cover, e.cover_margin);
        MinkowskiResult exact = minkowski_product_full(k, h, 20);
        MinkowskiResult ascent = minkowski_product_full(k, h, 0);
        if (!exact.exact) continue;
        ++checked;
        worst_defect = std::max(
            worst_defect, std::abs(ascent.value - exact.value) / std::max(1.0, exact.value));
    }
    std::printf("convex oracles over 200 bodies (%d product pairs):\n", checked);
    std::printf("  inscribed margin max %s (allowed 1+1e-6)\n", format_double(worst_insc).c_str());
    std::printf("  cover margin max     %s (allowed 1+1e-6)\n", format_double(worst_cover).c_str());
    std::printf("  ascent defect max    %s (allowed 1e-9)\n", format_double(worst_defect).c_str());
    bool ok = worst_insc <= 1 + 1e-6 && worst_cover <= 1 + 1e-6 && worst_defect <= 1e-9;
    std::printf("  verdict: %s\n", ok ? "ok" : "FAIL");
    return ok ? 0 : 1;
}

int cmd_weights_sweep(const CampaignConfig& c, const std::string& family_name,
                      const std::string& grid, int n) {
    double lo = 0, hi = 0.8;
    int count = 5;
    if (std::sscanf(grid.c_str(), "%lf:%lf:%d", &lo, &hi, &count) != 3 || count < 1)
        throw std::invalid_argument("--a-grid wants lo:hi:count");
    std::vector<double> exps;
    for (int i = 0; i < count; ++i)
        exps.push_back(count == 1 ? lo : lo + (hi - lo) * double(i) / double(count - 1));
    WeightFamily family = weight_family_from_string(family_name);
    DyadicShift s = normalize_a2(
        random_shift(c.dim, c.finest_depth, 1, 1, c.density, c.cancellative, c.seed),
        a2_strategy_from_string(c.strategy));
    SweepReport rep = weighted_sweep(s, family, n, exps, 4.0, mix_seed(c.seed, 0x3e2, 0));
    std::printf("weighted sweep: family=%s n=%d points=%zu\n", family_name.c_str(), n,
                rep.points.size());
    std::printf("  %-10s %-22s %-22s %-22s\n", "exponent", "characteristic", "norm", "ratio");
    for (const SweepPoint& p : rep.points)
        std::printf("  %-10s %-22s %-22s %-22s\n", format_double(p.exponent).c_str(),
                    format_double(p.characteristic).c_str(), format_double(p.norm).c_str(),
                    format_double(p.ratio).c_str());
    std::printf("  ratio max %s (envelope %s)  slope %s (allowed 1.6)\n",
                format_double(rep.ratio_max).c_str(), format_double(rep.envelope).c_str(),
                format_double(rep.slope).c_str());
    if (!c.out_dir.empty()) {
        ensure_out(c.out_dir);
        save_sweep_csv(rep, join(c.out_dir, "sweep.csv"));
        std::printf("  wrote %s\n", join(c.out_dir, "sweep.csv").c_str());
    }
    bool ok = rep.ok && rep.slope <= 1.6;
    std::printf("  verdict: %s\n", ok ? "ok" : "FAIL");
    return ok ? 0 : 1;
}

int cmd_verify(const CampaignConfig& cfg, bool vec) {
    CampaignConfig c = cfg;
    if (!vec) c.components = 1;
    if (vec && c.components < 2) c.components = 2;
    DominationReport r = vec ? verify_vector_domination(c) : verify_scalar_domination(c);
    print_domination(vec ? "vector domination" : "scalar domination", r);
    if (!c.out_dir.empty()) {
        ensure_out(c.out_dir);
        const char* csv = vec ? "vector_report.csv" : "scalar_report.csv";
        const char* jsn = vec ? "vector_report.json" : "scalar_report.json";
        save_domination_csv(r, join(c.out_dir, csv));
        save_domination_json(r, c, join(c.out_dir, jsn));
        std::printf("  wrote %s and %s\n", join(c.out_dir, csv).c_str(),
                    join(c.out_dir, jsn).c_str());
    }
    return r.ok ? 0 : 1;
}

int cmd_run_all(const CampaignConfig& c, const std::vector<std::string>& suites) {
    RunAllReport rep = run_all(c, suites);
    for (const SuiteResult& s : rep.suites)
        std::printf("suite %-14s %-4s observed=%s allowed=%s\n", s.name.c_str(),
                    s.ok ? "ok" : "FAIL", format_double(s.observed).c_str(),
                    format_double(s.allowed).c_str());
    std::printf("run-all verdict: %s\n", rep.ok ? "ok" : "FAIL");
    return rep.ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"seeded campaigns and audits for dyadic shift sparse domination"};
    app.fallthrough(true);
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::uint64_t seed_override = 0;
    auto* opt_config = app.add_option("--config", config_path, "JSON config file");
    auto* opt_seed = app.add_option("--seed", seed_override, "override the config seed");
    auto* opt_out = app.add_option("--out", out_override, "output directory for CSV/JSON reports");

    auto load = [&]() {
        CampaignConfig c;
        if (opt_config->count()) c = load_config(config_path);
        if (opt_seed->count()) c.seed = seed_override;
        if (opt_out->count()) c.out_dir = out_override;
        return c;
    };

    int rc = 0;

    auto* sp = app.add_subcommand("sparse", "build and audit a stopping collection");
    sp->callback([&] { rc = cmd_sparse(load()); });

    auto* sh = app.add_subcommand("shift", "generate, normalize and audit a random shift");
    int m1 = 1, m2 = 1;
    sh->add_option("--m1", m1, "output block depth");
    sh->add_option("--m2", m2, "input block depth");
    sh->callback([&] { rc = cmd_shift(load(), m1, m2); });

    auto* cz = app.add_subcommand("czd", "run the refinement-step and sibling audits");
    cz->callback([&] { rc = cmd_czd(load()); });

    auto* cv = app.add_subcommand("convex", "geometry oracle spot checks");
    cv->callback([&] { rc = cmd_convex(load()); });

    auto* wt = app.add_subcommand("weights", "matrix weight experiments");
    auto* sw = wt->add_subcommand("sweep", "characteristic sweep of weighted norms");
    std::string family = "rotating";
    std::string agrid = "0:0.8:5";
    int wn = 2;
    sw->add_option("--family", family, "scalar-power | rotating | block-random");
    sw->add_option("--a-grid", agrid, "exponent grid lo:hi:count");
    sw->add_option("--components,-n", wn, "weight dimension (1..3)");
    sw->callback([&] { rc = cmd_weights_sweep(load(), family, agrid, wn); });
    wt->require_subcommand(1);

    auto* vs = app.add_subcommand("verify-scalar", "scalar domination campaign");
    vs->callback([&] { rc = cmd_verify(load(), false); });

    auto* vv = app.add_subcommand("verify-vector", "convex-body domination campaign");
    vv->callback([&] { rc = cmd_verify(load(), true); });

    auto* ra = app.add_subcommand("run-all", "run the sub-suites");
    std::vector<std::string> suites = {"sparse",  "czd",           "convex",
                                       "weights", "verify-scalar", "verify-vector"};
    ra->add_option("--suite", suites, "subset of suites to run");
    ra->callback([&] { rc = cmd_run_all(load(), suites); });

    try {
        CLI11_PARSE(app, argc, argv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return rc;
}
