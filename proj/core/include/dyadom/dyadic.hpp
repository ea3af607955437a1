#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace dyadom {

// Dyadic cube inside the unit cube [0,1)^d, d in {1,2}. A cube is (depth,
// integer index per axis); side length 2^-depth, measure 2^{-d*depth}.
struct DyadicCube {
    int dim = 1;
    int depth = 0;
    std::array<std::uint32_t, 2> index{0, 0};

    static DyadicCube root(int d);

    double side_length() const;
    double measure() const;

    bool is_root() const { return depth == 0; }
    DyadicCube parent() const;                  // throws on the root
    DyadicCube child(unsigned k) const;         // k < 2^dim, bit j of k = axis j offset
    unsigned child_count() const { return 1u << dim; }
    DyadicCube ancestor_at(int d) const;        // ancestor with the given depth <= depth

    // r is contained in this cube (dyadic nesting: equal or strictly inside).
    bool contains(const DyadicCube& r) const;

    // Position in the Morton (bit-interleaved) order of same-depth cubes.
    // Cubes at any depth cover a contiguous Morton range of finest cells,
    // which keeps every integral a prefix-sum difference.
    std::uint64_t morton() const;
    std::uint64_t cell_begin(int finest_depth) const;
    std::uint64_t cell_end(int finest_depth) const;

    bool operator==(const DyadicCube& o) const {
        return dim == o.dim && depth == o.depth && index == o.index;
    }
    bool operator!=(const DyadicCube& o) const { return !(*this == o); }
    // total order: (depth, morton); used for canonical sorting of collections
    bool operator<(const DyadicCube& o) const;
};

std::ostream& operator<<(std::ostream& os, const DyadicCube& q);

DyadicCube cube_from_morton(int dim, int depth, std::uint64_t morton);

// All 2^d children. Throws if children would exceed finest_depth.
std::vector<DyadicCube> children(const DyadicCube& q, int finest_depth);

// Checks d in {1,2} and the per-dimension depth cap (12 for d=1, 6 for d=2).
void validate_grid_shape(int dim, int finest_depth);
int max_finest_depth(int dim);

// Piecewise-constant R^n valued function on the depth-L cells of [0,1)^d.
// Values are stored cell-major in Morton order; immutable after construction.
// All integrals are exact finite sums via per-coordinate prefix sums.
class GridFunction {
  public:
    GridFunction(int dim, int comps, int finest_depth, std::vector<double> cell_values);

    int dim() const { return dim_; }
    int components() const { return comps_; }
    int finest_depth() const { return finest_; }
    std::uint64_t cell_count() const { return cells_; }
    double cell_measure() const { return cell_measure_; }

    double value(std::uint64_t cell, int j) const { return values_[cell * comps_ + j]; }
    const std::vector<double>& raw() const { return values_; }

    // signed integral of coordinate j over Q
    double integral(const DyadicCube& q, int j) const;
    // signed integral of coordinate j over the intersection of Q with clip
    double integral_clipped(const DyadicCube& q, const DyadicCube& clip, int j) const;
    Eigen::VectorXd integral_vec(const DyadicCube& q) const;

    // integral of |f| over Q; scalar functions only
    double abs_integral(const DyadicCube& q) const;
    double abs_integral_clipped(const DyadicCube& q, const DyadicCube& clip) const;

    DyadicCube root() const { return DyadicCube::root(dim_); }

  private:
    int dim_, comps_, finest_;
    std::uint64_t cells_;
    double cell_measure_;
    std::vector<double> values_;
    std::vector<double> prefix_;     // (cells+1) * comps, signed
    std::vector<double> abs_prefix_; // (cells+1), only for comps == 1
};

// (1/|Q|) * integral of |f| over Q; requires n = 1.
double scalar_average(const GridFunction& f, const DyadicCube& q);
double scalar_average_clipped(const GridFunction& f, const DyadicCube& q, const DyadicCube& clip);

// sum_j (int_Q f_j)(int_R g_j); f and g must share n.
double signed_pair_integral(const GridFunction& f, const DyadicCube& q,
                            const GridFunction& g, const DyadicCube& r);

struct GridNorms {
    double l1 = 0, l2 = 0, linf = 0;
};
// Norms of the Euclidean pointwise magnitude |f(x)|.
GridNorms norms(const GridFunction& f);

// integral of <f(x), g(x)> over the whole cube
double inner_product(const GridFunction& f, const GridFunction& g);

// CSV round trip: header line "d,n,L" then one row of n values per finest
// cell in Morton order, 17 significant digits.
void save_grid_csv(const GridFunction& f, const std::string& path);
GridFunction load_grid_csv(const std::string& path);

} // namespace dyadom
