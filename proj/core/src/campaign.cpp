#include "dyadom/campaign.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "dyadom/common.hpp"
#include "dyadom/convex.hpp"
#include "dyadom/czd.hpp"
#include "dyadom/weights.hpp"

namespace dyadom {

namespace {

using nlohmann::json;

double u01(std::uint64_t& st) { return (splitmix64(st) >> 11) * 0x1.0p-53; }

double ols_loglog(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() < 2) return 0;
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) { mx += xs[i]; my += ys[i]; }
    mx /= xs.size();
    my /= ys.size();
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (sxx <= 1e-24) return 0;
    return sxy / sxx;
}

json config_json(const CampaignConfig& c) {
    json j;
    j["dim"] = c.dim;
    j["finest_depth"] = c.finest_depth;
    j["components"] = c.components;
    j["rho_min"] = c.rho_min;
    j["rho_max"] = c.rho_max;
    j["trials"] = c.trials;
    j["shifts_per_rho"] = c.shifts_per_rho;
    j["seed"] = c.seed;
    j["strategy"] = c.strategy;
    j["generator"] = c.generator;
    j["density"] = c.density;
    j["cancellative"] = c.cancellative;
    j["lambda"] = c.lambda;
    j["envelope"] = c.envelope;
    j["slope_envelope"] = c.slope_envelope;
    j["workers"] = c.workers;
    j["out_dir"] = c.out_dir;
    return j;
}

void fill_spike(std::vector<double>& v, std::uint64_t& st) {
    // baseline zero one draw in eight; together with a zero spike count that
    // makes the all-zero function reachable, which the campaigns must discard
    std::uint64_t b = splitmix64(st);
    double base = (b % 8 == 0) ? 0.0 : 0x1.0p-10;
    for (double& x : v) x = (splitmix64(st) & 1) ? base : -base;
    std::uint64_t spikes = splitmix64(st) % 8;
    for (std::uint64_t i = 0; i < spikes; ++i) {
        std::uint64_t pos = splitmix64(st) % v.size();
        v[pos] = (splitmix64(st) & 1) ? 1.0 : -1.0;
    }
}

void fill_random_sign(std::vector<double>& v, std::uint64_t& st) {
    for (double& x : v) x = (splitmix64(st) & 1) ? 1.0 : -1.0;
}

void fill_ramp(std::vector<double>& v, int comps, std::uint64_t& st) {
    const std::uint64_t cells = v.size() / comps;
    for (int j = 0; j < comps; ++j) {
        double amp = 0.5 + u01(st);
        double sgn = (splitmix64(st) & 1) ? 1.0 : -1.0;
        for (std::uint64_t c = 0; c < cells; ++c)
            v[c * comps + j] = sgn * amp * (double(c + 1) / double(cells));
    }
}

struct TrialSlot {
    std::vector<TrialRecord> recs;
    bool discarded = false;
    int degenerate = 0;
};

// shared validation for both campaigns
void check_config(const CampaignConfig& c, int comps_lo, int comps_hi) {
    validate_grid_shape(c.dim, c.finest_depth);
    if (c.components < comps_lo || c.components > comps_hi)
        throw std::invalid_argument("component count out of range for this campaign");
    if (c.rho_min < 1 || c.rho_max < c.rho_min)
        throw std::invalid_argument("rho range must satisfy 1 <= rho_min <= rho_max");
    if (c.rho_max >= c.finest_depth)
        throw std::invalid_argument("rho_max must stay below the finest depth");
    if (c.trials < 0 || c.trials > (1 << 20)) throw std::invalid_argument("trial count out of range");
    if (c.shifts_per_rho < 1 || c.shifts_per_rho > 64)
        throw std::invalid_argument("shifts_per_rho must lie in [1, 64]");
    if (!(c.density >= 0.0 && c.density <= 1.0))
        throw std::invalid_argument("density must lie in [0, 1]");
    if (!(c.lambda > 1.0)) throw std::invalid_argument("stopping threshold must exceed 1");
    a2_strategy_from_string(c.strategy);
    input_kind_from_string(c.generator);
}

// one campaign body shared by the scalar and the vector flow; `vec` only
// switches the collection builder and the sparse form
DominationReport run_domination(const CampaignConfig& c, bool vec) {
    check_config(c, 1, vec ? 3 : 1);
    const InputKind kind = input_kind_from_string(c.generator);
    const A2Strategy strat = a2_strategy_from_string(c.strategy);
    const int n = c.components;
    const double threshold = vec ? c.lambda * n * n : c.lambda;

    DominationReport rep;
    rep.envelope = c.envelope > 0 ? c.envelope : default_envelope(c, vec);
    rep.slope_envelope = c.slope_envelope > 0 ? c.slope_envelope : 1.1;

    std::vector<TrialSlot> slots(c.trials);
    parallel_for(std::size_t(c.trials), unsigned(std::max(0, c.workers)), [&](std::size_t t) {
        TrialSlot& slot = slots[t];
        GridFunction f1 = make_input(kind, c.dim, n, c.finest_depth, mix_seed(c.seed, 0xf1, t));
        GridFunction f2 = make_input(kind, c.dim, n, c.finest_depth, mix_seed(c.seed, 0xf2, t));
        if (norms(f1).l1 == 0.0 || norms(f2).l1 == 0.0) {
            slot.discarded = true;
            return;
        }
        const DyadicCube root = f1.root();
        // the collection sees only the input pair; no shift exists yet
        SparseCollection coll = vec
            ? build_body_collection(f1, f2, root, threshold, &slot.degenerate)
            : build_sparse_collection(f1, f2, root, threshold);
        const double lam = vec ? sparse_form_body(coll, f1, f2) : sparse_form(coll, f1, f2);
        slot.recs.reserve(std::size_t(c.rho_max - c.rho_min + 1) * c.shifts_per_rho);
        for (int rho = c.rho_min; rho <= c.rho_max; ++rho) {
            for (int k = 0; k < c.shifts_per_rho; ++k) {
                const std::uint64_t sseed =
                    mix_seed(c.seed, 0x5417, (std::uint64_t(t) << 18) | (std::uint64_t(rho) << 6) |
                                                 std::uint64_t(k));
                std::uint64_t st = sseed;
                std::uint64_t draw = splitmix64(st);
                int m1, m2;
                if (draw & 1) {
                    m1 = rho;
                    m2 = 1 + int((draw >> 1) % std::uint64_t(rho));
                } else {
                    m2 = rho;
                    m1 = 1 + int((draw >> 1) % std::uint64_t(rho));
                }
                DyadicShift s = normalize_a2(
                    random_shift(c.dim, c.finest_depth, m1, m2, c.density, c.cancellative,
                                 splitmix64(st)),
                    strat);
                const double form = std::abs(shift_form(s, f1, f2));
                double ratio;
                if (lam > 0)
                    ratio = form / (double(rho) * lam);
                else
                    // both sides vanish together (pointwise-orthogonal data);
                    // a nonzero form over a zero sparse form is a real breach
                    ratio = form == 0 ? 0.0 : std::numeric_limits<double>::infinity();
                TrialRecord r;
                r.trial = t;
                r.rho = rho;
                r.m1 = m1;
                r.m2 = m2;
                r.shift_seed = sseed;
                r.form = form;
                r.sparse = lam;
                r.ratio = ratio;
                slot.recs.push_back(r);
            }
        }
    });

    for (const TrialSlot& slot : slots) {
        if (slot.discarded) ++rep.discarded;
        rep.degenerate += slot.degenerate;
        rep.records.insert(rep.records.end(), slot.recs.begin(), slot.recs.end());
    }

    std::vector<double> ratios;
    ratios.reserve(rep.records.size());
    std::vector<double> rho_max_undivided(std::size_t(c.rho_max) + 1, 0.0);
    bool breached = false;
    for (const TrialRecord& r : rep.records) {
        ratios.push_back(r.ratio);
        if (r.ratio > rep.max_ratio) rep.max_ratio = r.ratio;
        if (!breached && !(r.ratio <= rep.envelope)) {
            breached = true;
            rep.breach_trial = r.trial;
            rep.breach_rho = r.rho;
            rep.breach_seed = r.shift_seed;
        }
        double undivided = r.ratio * double(r.rho);
        if (undivided > rho_max_undivided[std::size_t(r.rho)])
            rho_max_undivided[std::size_t(r.rho)] = undivided;
    }
    if (!ratios.empty()) {
        std::sort(ratios.begin(), ratios.end());
        std::size_t m = ratios.size() / 2;
        rep.median_ratio =
            ratios.size() % 2 ? ratios[m] : 0.5 * (ratios[m - 1] + ratios[m]);
    }
    std::vector<double> lx, ly;
    for (int rho = c.rho_min; rho <= c.rho_max; ++rho)
        if (rho_max_undivided[std::size_t(rho)] > 0) {
            lx.push_back(std::log(double(rho)));
            ly.push_back(std::log(rho_max_undivided[std::size_t(rho)]));
        }
    rep.slope = ols_loglog(lx, ly);
    rep.within_envelope = !breached;
    rep.ok = rep.within_envelope && rep.slope <= rep.slope_envelope;
    return rep;
}

} // namespace

std::string to_string(InputKind k) {
    switch (k) {
        case InputKind::Spike: return "spike";
        case InputKind::RandomSign: return "random-sign";
        case InputKind::Ramp: return "ramp";
        case InputKind::Mixed: return "mixed";
    }
    throw std::logic_error("unhandled input kind");
}

InputKind input_kind_from_string(const std::string& name) {
    if (name == "spike") return InputKind::Spike;
    if (name == "random-sign") return InputKind::RandomSign;
    if (name == "ramp") return InputKind::Ramp;
    if (name == "mixed") return InputKind::Mixed;
    throw std::invalid_argument("unknown input kind: " + name);
}

GridFunction make_input(InputKind kind, int dim, int comps, int finest_depth,
                        std::uint64_t seed) {
    validate_grid_shape(dim, finest_depth);
    if (comps < 1 || comps > 3) throw std::invalid_argument("component count must be 1..3");
    const std::uint64_t cells = std::uint64_t(1) << (dim * finest_depth);
    std::vector<double> v(cells * std::uint64_t(comps), 0.0);
    std::uint64_t st = seed;
    switch (kind) {
        case InputKind::Spike: fill_spike(v, st); break;
        case InputKind::RandomSign: fill_random_sign(v, st); break;
        case InputKind::Ramp: fill_ramp(v, comps, st); break;
        case InputKind::Mixed: {
            static const InputKind kinds[3] = {InputKind::Spike, InputKind::RandomSign,
                                               InputKind::Ramp};
            InputKind pick = kinds[splitmix64(st) % 3];
            return make_input(pick, dim, comps, finest_depth, splitmix64(st));
        }
    }
    return GridFunction(dim, comps, finest_depth, std::move(v));
}

double default_envelope(const CampaignConfig& c, bool vector_campaign) {
    double base = double(5 * (1 << c.dim) + 4) * c.lambda;
    if (!vector_campaign) return base;
    double n = double(c.components);
    return base * n * n * n * n * n;
}

std::string config_to_json(const CampaignConfig& c) { return config_json(c).dump(2) + "\n"; }

CampaignConfig config_from_json(const std::string& text) {
    json j = json::parse(text);
    if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
    static const std::set<std::string> known = {
        "dim",      "finest_depth", "components", "rho_min",  "rho_max",
        "trials",   "shifts_per_rho", "seed",     "strategy", "generator",
        "density",  "cancellative", "lambda",     "envelope", "slope_envelope",
        "workers",  "out_dir"};
    for (const auto& item : j.items())
        if (!known.count(item.key()))
            throw std::invalid_argument("unknown config key: " + item.key());
    CampaignConfig c;
    c.dim = j.value("dim", c.dim);
    c.finest_depth = j.value("finest_depth", c.finest_depth);
    c.components = j.value("components", c.components);
    c.rho_min = j.value("rho_min", c.rho_min);
    c.rho_max = j.value("rho_max", c.rho_max);
    c.trials = j.value("trials", c.trials);
    c.shifts_per_rho = j.value("shifts_per_rho", c.shifts_per_rho);
    c.seed = j.value("seed", c.seed);
    c.strategy = j.value("strategy", c.strategy);
    c.generator = j.value("generator", c.generator);
    c.density = j.value("density", c.density);
    c.cancellative = j.value("cancellative", c.cancellative);
    c.lambda = j.value("lambda", c.lambda);
    c.envelope = j.value("envelope", c.envelope);
    c.slope_envelope = j.value("slope_envelope", c.slope_envelope);
    c.workers = j.value("workers", c.workers);
    c.out_dir = j.value("out_dir", c.out_dir);
    return c;
}

CampaignConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

void save_config(const CampaignConfig& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config: " + path);
    out << config_to_json(c);
}

bool operator==(const CampaignConfig& a, const CampaignConfig& b) {
    return a.dim == b.dim && a.finest_depth == b.finest_depth && a.components == b.components &&
           a.rho_min == b.rho_min && a.rho_max == b.rho_max && a.trials == b.trials &&
           a.shifts_per_rho == b.shifts_per_rho && a.seed == b.seed && a.strategy == b.strategy &&
           a.generator == b.generator && a.density == b.density &&
           a.cancellative == b.cancellative && a.lambda == b.lambda && a.envelope == b.envelope &&
           a.slope_envelope == b.slope_envelope && a.workers == b.workers &&
           a.out_dir == b.out_dir;
}

DominationReport verify_scalar_domination(const CampaignConfig& c) {
    return run_domination(c, false);
}

DominationReport verify_vector_domination(const CampaignConfig& c) {
    return run_domination(c, true);
}

SparseCollection build_body_collection(const GridFunction& f1, const GridFunction& f2,
                                       const DyadicCube& root, double threshold,
                                       int* degenerate_events) {
    if (f1.dim() != f2.dim() || f1.components() != f2.components() ||
        f1.finest_depth() != f2.finest_depth())
        throw std::invalid_argument("input functions live on different grids");
    if (root.dim != f1.dim() || root.depth > f1.finest_depth())
        throw std::invalid_argument("root cube does not fit the grid");
    int degen = 0;
    std::vector<DyadicCube> all{root};
    std::vector<DyadicCube> frontier{root};
    while (!frontier.empty()) {
        std::vector<DyadicCube> next;
        for (const DyadicCube& q : frontier) {
            VectorStopping v1 = vector_stopping(f1, q, threshold);
            VectorStopping v2 = vector_stopping(f2, q, threshold);
            degen += (v1.degenerate_root ? 1 : 0) + (v2.degenerate_root ? 1 : 0);
            std::vector<DyadicCube> u = v1.cubes;
            u.insert(u.end(), v2.cubes.begin(), v2.cubes.end());
            // each list is an antichain; after sorting ancestors come first,
            // so dropping anything inside an already kept cube leaves exactly
            // the maximal cubes of the union
            std::sort(u.begin(), u.end());
            u.erase(std::unique(u.begin(), u.end()), u.end());
            std::vector<DyadicCube> kept;
            for (const DyadicCube& x : u) {
                bool inside = false;
                for (const DyadicCube& y : kept)
                    if (y.depth < x.depth && y.contains(x)) {
                        inside = true;
                        break;
                    }
                if (!inside) kept.push_back(x);
            }
            for (const DyadicCube& x : kept) {
                all.push_back(x);
                next.push_back(x);
            }
        }
        frontier = std::move(next);
    }
    SparseCollection s = collection_from_cubes(f1.dim(), f1.finest_depth(), std::move(all));
    s.lambda = threshold;
    if (degenerate_events) *degenerate_events = degen;
    return s;
}

void save_domination_csv(const DominationReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << "trial,rho,m1,m2,shift_seed,form,sparse,ratio\n";
    for (const TrialRecord& t : r.records)
        out << t.trial << ',' << t.rho << ',' << t.m1 << ',' << t.m2 << ',' << t.shift_seed << ','
            << format_double(t.form) << ',' << format_double(t.sparse) << ','
            << format_double(t.ratio) << '\n';
}

void save_domination_json(const DominationReport& r, const CampaignConfig& c,
                          const std::string& path) {
    json j;
    j["config"] = config_json(c);
    j["records"] = r.records.size();
    j["max_ratio"] = r.max_ratio;
    j["median_ratio"] = r.median_ratio;
    j["slope"] = r.slope;
    j["envelope"] = r.envelope;
    j["slope_envelope"] = r.slope_envelope;
    j["discarded"] = r.discarded;
    j["degenerate"] = r.degenerate;
    j["within_envelope"] = r.within_envelope;
    j["ok"] = r.ok;
    if (!r.within_envelope) {
        j["breach_trial"] = r.breach_trial;
        j["breach_rho"] = r.breach_rho;
        j["breach_seed"] = r.breach_seed;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << j.dump(2) << "\n";
}

namespace {

SuiteResult suite_sparse(const CampaignConfig& c) {
    // per node each function packs at most |Q|/lambda, so the feasible eta
    // of the two-function stopping tree stays above 1 - 2/lambda
    SuiteResult r{"sparse", true, 0, std::max(0.0, 1.0 - 2.0 / c.lambda)};
    double worst_eta = 1.0;
    for (int t = 0; t < 6; ++t) {
        GridFunction f1 = make_input(InputKind::Mixed, c.dim, 1, c.finest_depth,
                                     mix_seed(c.seed, 0x50a1, std::uint64_t(t)));
        GridFunction f2 = make_input(InputKind::Mixed, c.dim, 1, c.finest_depth,
                                     mix_seed(c.seed, 0x50a2, std::uint64_t(t)));
        if (norms(f1).l1 == 0.0 || norms(f2).l1 == 0.0) continue;
        SparseCollection s = build_sparse_collection(f1, f2, f1.root(), c.lambda);
        SparseVerification v = verify_sparse(s);
        if (!v.witnesses_disjoint) r.ok = false;
        worst_eta = std::min(worst_eta, v.eta_feasible);
        // enlarging the collection can only add nonnegative terms
        std::vector<DyadicCube> cubes;
        for (const SparseNode& nd : s.nodes) cubes.push_back(nd.cube);
        for (const DyadicCube& kid : children(f1.root(), f1.finest_depth()))
            if (std::find(cubes.begin(), cubes.end(), kid) == cubes.end()) cubes.push_back(kid);
        SparseCollection larger = collection_from_cubes(c.dim, c.finest_depth, std::move(cubes));
        if (sparse_form(larger, f1, f2) < sparse_form(s, f1, f2)) r.ok = false;
    }
    r.observed = worst_eta;
    if (worst_eta < r.allowed) r.ok = false;
    return r;
}

SuiteResult suite_czd(const CampaignConfig& c) {
    SuiteResult r{"czd", true, 0, 0};
    const int depth = std::min(c.finest_depth, c.dim == 1 ? 8 : 5);
    auto nonzero_input = [&](std::uint64_t stream) {
        std::uint64_t idx = 1;
        GridFunction f = make_input(InputKind::Spike, c.dim, 1, depth, mix_seed(c.seed, stream, idx));
        while (norms(f).l1 == 0.0)
            f = make_input(InputKind::Spike, c.dim, 1, depth, mix_seed(c.seed, stream, ++idx));
        return f;
    };
    GridFunction f1 = nonzero_input(0xc2d1);
    GridFunction f2 = nonzero_input(0xc2d2);
    DyadicShift s = normalize_a2(
        random_shift(c.dim, depth, 1, 1, c.density, c.cancellative, mix_seed(c.seed, 0xc2d5, 1)),
        a2_strategy_from_string(c.strategy));
    MainiterReport m = mainiter_check(s, f1, f2, f1.root(), c.lambda);
    r.observed = m.residual;
    r.allowed = m.envelope;
    r.ok = m.ok;
    SiblingReport sib = sibling_decoupling_check(s, f1, f2, f1.root());
    if (!sib.ok) r.ok = false;
    return r;
}

SuiteResult suite_convex(const CampaignConfig& c) {
    SuiteResult r{"convex", true, 0, 1e-9};
    std::uint64_t st = mix_seed(c.seed, 0xc0, 1);
    double worst = 0;
    for (int t = 0; t < 50; ++t) {
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
        if (e.inscribed_margin > 1 + 1e-6 || e.cover_margin > 1 + 1e-6) r.ok = false;
        MinkowskiResult exact = minkowski_product_full(k, h, 20);
        MinkowskiResult ascent = minkowski_product_full(k, h, 0);
        if (!exact.exact) continue;
        double defect = std::abs(ascent.value - exact.value) / std::max(1.0, exact.value);
        worst = std::max(worst, defect);
    }
    r.observed = worst;
    if (worst > r.allowed) r.ok = false;
    return r;
}

SuiteResult suite_weights(const CampaignConfig& c) {
    SuiteResult r{"weights", true, 0, 1.6};
    // keeps n * cells inside the weighted norm oracle's guard in both dims
    const int depth = std::min(c.finest_depth, c.dim == 1 ? 6 : 5);
    DyadicShift s = normalize_a2(
        random_shift(c.dim, depth, 1, 1, c.density, c.cancellative, mix_seed(c.seed, 0x3e1, 1)),
        a2_strategy_from_string(c.strategy));
    int n = std::min(3, std::max(2, c.components));
    SweepReport sw = weighted_sweep(s, WeightFamily::Rotating, n, {0.0, 0.2, 0.4, 0.6, 0.8}, 4.0,
                                    mix_seed(c.seed, 0x3e2, 1));
    r.observed = sw.slope;
    r.ok = sw.ok && sw.slope <= r.allowed;
    return r;
}

SuiteResult suite_scalar(const CampaignConfig& c) {
    CampaignConfig cc = c;
    cc.components = 1;
    cc.trials = std::min(c.trials, 32);
    DominationReport d = verify_scalar_domination(cc);
    return {"verify-scalar", d.ok, d.max_ratio, d.envelope};
}

SuiteResult suite_vector(const CampaignConfig& c) {
    CampaignConfig cc = c;
    cc.components = std::min(3, std::max(2, c.components));
    cc.finest_depth = std::min(c.finest_depth, 6);
    cc.rho_max = std::min(c.rho_max, cc.finest_depth - 1);
    cc.rho_min = std::min(c.rho_min, cc.rho_max);
    cc.trials = std::min(c.trials, 16);
    DominationReport d = verify_vector_domination(cc);
    return {"verify-vector", d.ok, d.max_ratio, d.envelope};
}

} // namespace

RunAllReport run_all(const CampaignConfig& c, const std::vector<std::string>& suites) {
    RunAllReport rep;
    for (const std::string& name : suites) {
        SuiteResult r;
        if (name == "sparse") r = suite_sparse(c);
        else if (name == "czd") r = suite_czd(c);
        else if (name == "convex") r = suite_convex(c);
        else if (name == "weights") r = suite_weights(c);
        else if (name == "verify-scalar") r = suite_scalar(c);
        else if (name == "verify-vector") r = suite_vector(c);
        else throw std::invalid_argument("unknown suite: " + name);
        rep.suites.push_back(r);
        if (!r.ok) rep.ok = false;
    }
    return rep;
}

} // namespace dyadom
