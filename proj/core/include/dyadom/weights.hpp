#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dyadom/dyadic.hpp"
#include "dyadom/shift.hpp"
#include "dyadom/sparse.hpp"

namespace dyadom {

// Piecewise-constant symmetric positive definite n x n weight on the finest
// cells. Entrywise prefix sums over W and W^{-1} make every cube average of
// either an exact finite sum. Cell matrices are rejected below the eigenvalue
// floor lambda_min > 1e-12 * trace.
class MatrixWeight {
  public:
    MatrixWeight(int dim, int n, int finest_depth, std::vector<Eigen::MatrixXd> cells);

    int dim() const { return dim_; }
    int n() const { return n_; }
    int finest_depth() const { return finest_; }
    std::uint64_t cell_count() const { return static_cast<std::uint64_t>(cells_.size()); }

    const Eigen::MatrixXd& cell(std::uint64_t c) const { return cells_[c]; }
    const Eigen::MatrixXd& cell_inverse(std::uint64_t c) const { return invs_[c]; }
    const Eigen::MatrixXd& cell_sqrt(std::uint64_t c) const { return sqrts_[c]; }
    const Eigen::MatrixXd& cell_inv_sqrt(std::uint64_t c) const { return isqrts_[c]; }

    Eigen::MatrixXd average(const DyadicCube& q) const;         // <W>_Q
    Eigen::MatrixXd inverse_average(const DyadicCube& q) const; // <W^{-1}>_Q

    // cellwise inverse; swaps the roles of W and W^{-1}
    MatrixWeight inverted() const;

  private:
    int dim_, n_, finest_;
    std::vector<Eigen::MatrixXd> cells_, invs_, sqrts_, isqrts_;
    std::vector<double> pref_, prefi_; // entrywise prefix sums, (cells+1)*n*n
};

struct A2Characteristic {
    double value = 1;
    DyadicCube cube; // attaining cube
};
// sup over all dyadic cubes (depth 0..L) of ||<W>_Q^{1/2} <W^{-1}>_Q^{1/2}||^2.
// Matrix square roots via symmetric eigendecomposition; exactly diagonal
// matrices take an entrywise path, so the flat weight reports exactly 1.
A2Characteristic a2_characteristic(const MatrixWeight& w);

// ||f||_{L^2(W)} = (int f^T W f)^{1/2}; matches norms(f).l2 bit for bit when
// W is the identity weight
double weighted_norm(const GridFunction& f, const MatrixWeight& w);

// cellwise image x -> W(x) f(x)
GridFunction multiply(const MatrixWeight& w, const GridFunction& f);

struct WeightedNormResult {
    double value = 0;
    bool converged = false;
    int iterations = 0;
    // relative defect of the singular pair at exit: the left extremizer is
    // pushed back through the transpose and compared against the value
    double extremizer_defect = 0;
};
// largest singular value of blockdiag(W^{1/2}) (T kron Id_n) blockdiag(W^{-1/2})
// where T is the shift's operator on finest cells. Power iteration with a
// dense fallback; guarded to n * cells <= 8192. A constant weight leaves the
// iterates untouched up to commuting scalings, so the flat weight reproduces
// the unweighted norm.
WeightedNormResult weighted_operator_norm(const DyadicShift& s, const MatrixWeight& w);

// Packing condition for the matrices A_{jQ} = |Q| <V_j>_Q^{-1} over the
// collection, with V_1 = W^{-1} and V_2 = W:
//     max_{R in S} (1/|R|) sum_{Q in S, Q inside R} ||<V_j>_Q^{1/2} A_{jQ} <V_j>_Q^{1/2}||.
// Each summand collapses to |Q| (verified to 1e-10, else throws), so the
// returned value is the exact measure packing ratio of the collection.
double carleson_packing(const SparseCollection& s, const MatrixWeight& w, int j);

// Embedding sum sum_{Q in S} (A_{jQ} F_Q) . F_Q with F_Q = <V_j f>_Q, held
// against [V_j] * ||f||^2_{L^2(V_j)}; `constant` records the observed ratio.
struct EmbeddingReport {
    double sum = 0;
    double characteristic = 1;
    double energy = 0;    // squared L^2(V_j) norm of f
    double constant = 0;  // sum / (characteristic * energy), 0 on zero input
};
EmbeddingReport carleson_embedding(const SparseCollection& s, const MatrixWeight& w, int j,
                                   const GridFunction& f);

enum class WeightFamily { ScalarPower, Rotating, BlockRandom };
std::string to_string(WeightFamily f);
WeightFamily weight_family_from_string(const std::string& name);

// Seeded weight families driven by u(x) = (|x - x0| + 2^{-L})^{-a} with x0
// the root's bisection corner (1/2, ..., 1/2) and a in [0, 1):
//   scalar-power  u * Id
//   rotating      R(2 pi x_1) diag(u, 1/u [, 1]) R(2 pi x_1)^T
//   block-random  per-cell seeded rotation, eigenvalues (1+3a)^t, t in [-1,1]
// a = 0 short-circuits to the flat identity weight in every family, so its
// characteristic is exactly 1. The seed only matters for block-random.
MatrixWeight make_weight(WeightFamily family, int dim, int n, int finest_depth, double a,
                         std::uint64_t seed = 0);

struct SweepPoint {
    double exponent = 0;
    double characteristic = 1;
    double norm = 0;
    double ratio = 0;        // norm / characteristic^{3/2}
    double slope_so_far = 0; // log-log OLS slope through the points up to here
};
struct SweepReport {
    std::vector<SweepPoint> points;
    double slope = 0;             // final log-log OLS slope
    double ratio_max = 0;
    double extremizer_defect = 0; // worst singular-pair defect across points
    double envelope = 0;
    bool within_envelope = false;
    bool converged = false;
    bool ok = false;
};
// One weighted norm + characteristic per exponent; asserts nothing itself,
// the verdict fields carry the envelope and convergence checks.
SweepReport weighted_sweep(const DyadicShift& s, WeightFamily family, int n,
                           const std::vector<double>& exponents, double envelope,
                           std::uint64_t seed = 0);

// CSV: header then one row (exponent, characteristic, norm, ratio,
// slope_so_far) per point, 17 significant digits
void save_sweep_csv(const SweepReport& r, const std::string& path);

} // namespace dyadom
