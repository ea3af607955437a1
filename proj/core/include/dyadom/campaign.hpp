#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dyadom/dyadic.hpp"
#include "dyadom/shift.hpp"
#include "dyadom/sparse.hpp"

namespace dyadom {

// seeded input-function shapes; spikes and alternating signs stress the
// stopping machinery far harder than smooth data
enum class InputKind { Spike, RandomSign, Ramp, Mixed };
std::string to_string(InputKind k);
InputKind input_kind_from_string(const std::string& name);

GridFunction make_input(InputKind kind, int dim, int comps, int finest_depth,
                        std::uint64_t seed);

struct CampaignConfig {
    int dim = 1;
    int finest_depth = 8;
    int components = 1; // n; the vector campaign needs 1..3
    int rho_min = 1;
    int rho_max = 3;
    int trials = 50;
    int shifts_per_rho = 4;
    std::uint64_t seed = 1;
    std::string strategy = "haar-bessel"; // normalization certificate strategy
    std::string generator = "mixed";
    double density = 0.6;     // kernel density of the random shifts
    bool cancellative = true;
    double lambda = 256.0;    // scalar stopping threshold; the vector
                              // threshold is lambda * n^2
    double envelope = 0;      // 0: derive from the proof constants
    double slope_envelope = 0;
    int workers = 1;
    std::string out_dir = "";
};
// envelope defaults when the config leaves them at 0: the per-level budget
// (5*2^d + 4) * lambda, times n^5 for the vector campaign
double default_envelope(const CampaignConfig& c, bool vector_campaign);

// lossless file form; unknown keys rejected, missing keys keep defaults
std::string config_to_json(const CampaignConfig& c);
CampaignConfig config_from_json(const std::string& text);
CampaignConfig load_config(const std::string& path);
void save_config(const CampaignConfig& c, const std::string& path);
bool operator==(const CampaignConfig& a, const CampaignConfig& b);

struct TrialRecord {
    std::uint64_t trial = 0;
    int rho = 0;
    int m1 = 0, m2 = 0;
    std::uint64_t shift_seed = 0;
    double form = 0;   // |S(f1, f2)|
    double sparse = 0; // sparse form of the trial's collection
    double ratio = 0;  // form / (rho * sparse)
};

struct DominationReport {
    std::vector<TrialRecord> records; // trial-major, deterministic order
    double max_ratio = 0;
    double median_ratio = 0;
    // fitted growth exponent: log of the per-rho max of form/sparse,
    // regressed on log rho; at-most-linear growth shows up as <= ~1
    double slope = 0;
    double envelope = 0;
    double slope_envelope = 0;
    int discarded = 0;  // zero-input trials (0/0) skipped, never defined
    int degenerate = 0; // degenerate-body regularization events (vector runs)
    bool within_envelope = false;
    bool ok = false;
    // first offender when a breach happened, otherwise zeros
    std::uint64_t breach_trial = 0;
    int breach_rho = 0;
    std::uint64_t breach_seed = 0;
};

// One sparse collection per input pair, built before any shift is drawn (the
// builder never sees a shift), then ratios across the rho range.
DominationReport verify_scalar_domination(const CampaignConfig& c);
// Same flow with joint convex-body stopping at threshold lambda * n^2 and
// body sparse forms. With components = 1 it reproduces the scalar campaign
// record for record, bit for bit.
DominationReport verify_vector_domination(const CampaignConfig& c);

// iterated joint body-stopping tree over both functions; counts how often a
// root body needed regularization when asked
SparseCollection build_body_collection(const GridFunction& f1, const GridFunction& f2,
                                       const DyadicCube& root, double threshold,
                                       int* degenerate_events = nullptr);

// CSV: one row per record; JSON: aggregates plus the generating config.
// Both sorted and timestamp-free, so identical configs give identical bytes.
void save_domination_csv(const DominationReport& r, const std::string& path);
void save_domination_json(const DominationReport& r, const CampaignConfig& c,
                          const std::string& path);

struct SuiteResult {
    std::string name;
    bool ok = false;
    double observed = 0;
    double allowed = 0;
};
struct RunAllReport {
    std::vector<SuiteResult> suites;
    bool ok = true;
};
// Runs the named sub-suites at a reduced scale derived from the config.
// Names: sparse, czd, convex, weights, verify-scalar, verify-vector.
// An empty list runs nothing and succeeds; unknown names throw.
RunAllReport run_all(const CampaignConfig& c, const std::vector<std::string>& suites);

} // namespace dyadom
