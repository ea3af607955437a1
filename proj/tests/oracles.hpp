// Independent reference implementations used to pin expected values. These
// deliberately avoid the library's prefix-sum / Morton-range code paths and
// recompute everything by brute force.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dyadom/dyadic.hpp"
#include "dyadom/shift.hpp"

namespace oracle {

// morton index of the depth-t ancestor of a finest cell
inline std::uint64_t anc(std::uint64_t cell, int L, int t, int d) {
    return cell >> (d * (L - t));
}

// dense matrix of the summed kernels: A[x,y] = sum_Q block(P1(x),P2(y)) * |cell|,
// assembled cell by cell without the library's range arithmetic
inline Eigen::MatrixXd dense_shift_matrix(const dyadom::DyadicShift& s) {
    const int d = s.dim();
    const int L = s.finest_depth();
    const std::uint64_t cells = 1ull << (d * L);
    const double cm = 1.0 / static_cast<double>(cells);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(cells, cells);
    for (const auto& k : s.kernels()) {
        const int q = k.cube.depth;
        const std::uint64_t base = k.cube.morton();
        for (std::uint64_t x = 0; x < cells; ++x) {
            if (anc(x, L, q, d) != base) continue;
            std::uint64_t p1 = anc(x, L, q + s.m1(), d) - (base << (d * s.m1()));
            for (std::uint64_t y = 0; y < cells; ++y) {
                if (anc(y, L, q, d) != base) continue;
                std::uint64_t p2 = anc(y, L, q + s.m2(), d) - (base << (d * s.m2()));
                A(x, y) += k.block(static_cast<int>(p1), static_cast<int>(p2)) * cm;
            }
        }
    }
    return A;
}

// <S f1, f2> from the dense matrix, summed over components
inline double dense_shift_form(const Eigen::MatrixXd& A, const dyadom::GridFunction& f1,
                               const dyadom::GridFunction& f2) {
    const std::uint64_t cells = f1.cell_count();
    const double cm = f1.cell_measure();
    double total = 0;
    for (int j = 0; j < f1.components(); ++j) {
        Eigen::VectorXd v1(cells), v2(cells);
        for (std::uint64_t c = 0; c < cells; ++c) {
            v1[c] = f1.value(c, j);
            v2[c] = f2.value(c, j);
        }
        total += cm * v2.dot(A * v1);
    }
    return total;
}

// bit-interleave written independently of the library (loop per bit)
inline std::uint64_t morton2(std::uint32_t x, std::uint32_t y, int depth) {
    std::uint64_t m = 0;
    for (int b = 0; b < depth; ++b) {
        m |= (static_cast<std::uint64_t>((x >> b) & 1u) << (2 * b));
        m |= (static_cast<std::uint64_t>((y >> b) & 1u) << (2 * b + 1));
    }
    return m;
}

// integral of component j of f over the axis box
// [ix*2^-depth, (ix+1)*2^-depth) x [iy*2^-depth, (iy+1)*2^-depth)
// by scanning every finest cell and testing coordinate containment
inline double brute_integral(const dyadom::GridFunction& f, int depth, std::uint32_t ix,
                             std::uint32_t iy, int j) {
    const int L = f.finest_depth();
    const int shift = L - depth;
    double total = 0.0;
    if (f.dim() == 1) {
        for (std::uint32_t c = 0; c < (1u << L); ++c) {
            if ((c >> shift) == ix) total += f.value(c, j) * f.cell_measure();
        }
        return total;
    }
    for (std::uint32_t x = 0; x < (1u << L); ++x)
        for (std::uint32_t y = 0; y < (1u << L); ++y) {
            if ((x >> shift) == ix && (y >> shift) == iy)
                total += f.value(morton2(x, y, L), j) * f.cell_measure();
        }
    return total;
}

// absolute-value average over a cube, by ancestor scan over all cells
inline double brute_abs_avg(const dyadom::GridFunction& f, const dyadom::DyadicCube& q) {
    const int L = f.finest_depth();
    const int d = f.dim();
    double mass = 0;
    std::uint64_t hit = 0;
    for (std::uint64_t c = 0; c < f.cell_count(); ++c) {
        if (anc(c, L, q.depth, d) != q.morton()) continue;
        mass += std::abs(f.value(c, 0));
        ++hit;
    }
    return mass / static_cast<double>(hit);
}

// max over all sign choices on both generator lists of |<v, w>|
inline double brute_minkowski(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const int p = static_cast<int>(a.cols());
    const int q = static_cast<int>(b.cols());
    if (p == 0 || q == 0) return 0.0;
    double best = 0.0;
    for (std::uint64_t sa = 0; sa < (1ull << p); ++sa) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(a.rows());
        for (int i = 0; i < p; ++i) v += (((sa >> i) & 1ull) ? -1.0 : 1.0) * a.col(i);
        for (std::uint64_t sb = 0; sb < (1ull << q); ++sb) {
            Eigen::VectorXd w = Eigen::VectorXd::Zero(b.rows());
            for (int i = 0; i < q; ++i) w += (((sb >> i) & 1ull) ? -1.0 : 1.0) * b.col(i);
            best = std::max(best, std::abs(v.dot(w)));
        }
    }
    return best;
}

// support function from the raw generator list
inline double brute_support(const Eigen::MatrixXd& g, const Eigen::VectorXd& u) {
    double s = 0.0;
    for (int i = 0; i < g.cols(); ++i) s += std::abs(g.col(i).dot(u));
    return s;
}

// is c*H inside K, probed on a dense direction grid (necessary conditions
// only, used to corroborate the exact facet test)
inline bool probe_contains_2d(const Eigen::MatrixXd& k, double c, const Eigen::MatrixXd& h,
                              int probes = 720) {
    for (int t = 0; t < probes; ++t) {
        double th = t * 2.0 * M_PI / probes;
        Eigen::Vector2d u(std::cos(th), std::sin(th));
        if (c * brute_support(h, u) > brute_support(k, u) * (1.0 + 1e-12)) return false;
    }
    return true;
}

inline dyadom::GridFunction random_grid(int dim, int comps, int L, std::uint64_t seed,
                                        double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::uint64_t cells = 1ull << (dim * L);
    std::vector<double> vals(cells * comps);
    for (auto& v : vals) v = dist(rng);
    return dyadom::GridFunction(dim, comps, L, std::move(vals));
}

} // namespace oracle
