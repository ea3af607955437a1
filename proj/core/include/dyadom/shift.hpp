#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dyadom/dyadic.hpp"

namespace dyadom {

// One kernel block: the operator piece localized to `cube`,
//   (S_Q f)(x) = sum_{P1, P2} block(P1, P2) * (int_{P2} f) * 1_{P1}(x),
// where P1 runs over the depth+m1 subcubes of Q and P2 over the depth+m2
// subcubes, both in Morton offset order. Size bound: |block| <= 1/|Q| per
// entry; structural locality is the block form itself.
struct ShiftKernel {
    DyadicCube cube;
    Eigen::MatrixXd block; // rows = output subcubes P1, cols = input subcubes P2
};

// Normalization certificate: blocks were divided by `factor` (>= 1) and the
// named strategy certifies that every subcollection of kernels has operator
// norm at most `bound` (<= 1) afterwards.
struct A2Certificate {
    std::string strategy = "none";
    double factor = 1.0;
    double bound = 0.0;
};

class DyadicShift {
  public:
    DyadicShift(int dim, int finest_depth, int m1, int m2, std::vector<ShiftKernel> kernels,
                A2Certificate certificate = {});

    int dim() const { return dim_; }
    int finest_depth() const { return finest_depth_; }
    int m1() const { return m1_; }
    int m2() const { return m2_; }
    // defect of the shift: the number of generations a single block spans
    int rho() const { return std::max(1, std::max(m1_, m2_)); }
    const std::vector<ShiftKernel>& kernels() const { return kernels_; }
    const A2Certificate& certificate() const { return certificate_; }

    const ShiftKernel* kernel_for(const DyadicCube& q) const;
    // max over kernels and entries of |entry| * |Q|; size axiom needs <= 1
    double a1_excess() const;

    int rows_per_block() const { return 1 << (dim_ * m1_); }
    int cols_per_block() const { return 1 << (dim_ * m2_); }

  private:
    int dim_, finest_depth_, m1_, m2_;
    std::vector<ShiftKernel> kernels_; // sorted by (depth, morton)
    A2Certificate certificate_;
};

// output subcube of a kernel: Morton offset `off` at depth cube.depth + m
DyadicCube kernel_subcube(const DyadicCube& cube, int m, std::uint64_t off);

// <S_Q f1, f2> for one kernel, components summed
double kernel_form(const ShiftKernel& k, int m1, int m2, const GridFunction& f1,
                   const GridFunction& f2);
// same with f1 restricted to clip1 and f2 to clip2
double kernel_form_clipped(const ShiftKernel& k, int m1, int m2, const GridFunction& f1,
                           const DyadicCube& clip1, const GridFunction& f2,
                           const DyadicCube& clip2);

// <S f1, f2> summed over all kernels
double shift_form(const DyadicShift& s, const GridFunction& f1, const GridFunction& f2);
// only kernels whose cube is contained in `top`
double shift_form_below(const DyadicShift& s, const DyadicCube& top, const GridFunction& f1,
                        const GridFunction& f2);
double shift_form_clipped(const DyadicShift& s, const GridFunction& f1, const DyadicCube& clip1,
                          const GridFunction& f2, const DyadicCube& clip2);
double shift_form_below_clipped(const DyadicShift& s, const DyadicCube& top,
                                const GridFunction& f1, const DyadicCube& clip1,
                                const GridFunction& f2, const DyadicCube& clip2);

// L2 -> L2 operator norm of the sum of the selected kernels (all when
// `subset` is empty is NOT implied; pass every cube explicitly or use the
// overload). Power iteration on the factored normal operator with a dense
// SVD fallback on small grids.
struct NormResult {
    double value = 0;
    bool converged = false;
    int iterations = 0;
};
NormResult subshift_norm(const DyadicShift& s, const std::vector<DyadicCube>& subset);
NormResult shift_norm(const DyadicShift& s);

// y = S x (transpose: y = S^T x) on raw finest-cell value vectors, summing
// every kernel; y is resized to match x
void apply_shift(const DyadicShift& s, bool transpose, const Eigen::VectorXd& x,
                 Eigen::VectorXd& y);

// exact sup over all nonempty subcollections; enumeration guarded to
// shifts with at most `max_kernels` kernels
double a2_sup_exact(const DyadicShift& s, int max_kernels = 12);

enum class A2Strategy { ExactSmall, ScaleCount, HaarBessel };
std::string to_string(A2Strategy s);
A2Strategy a2_strategy_from_string(const std::string& name);

// divide every block by a certified factor so that the sup over
// subcollections of the operator norm is at most 1
DyadicShift normalize_a2(const DyadicShift& s, A2Strategy strategy);

// seeded generator: each admissible cube (depth <= L - max(m1,m2)) carries a
// kernel with probability `density`; entries uniform within the size bound.
// Cancellative kernels are double-centered so every block row and column sums
// to zero (requires m1 >= 1 and m2 >= 1), then rescaled to the size bound.
DyadicShift random_shift(int dim, int finest_depth, int m1, int m2, double density,
                         bool cancellative, std::uint64_t seed);

// text round trip, bit exact through %.17g
void save_shift_csv(const DyadicShift& s, const std::string& path);
DyadicShift load_shift_csv(const std::string& path);

} // namespace dyadom
