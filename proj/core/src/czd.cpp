#include "dyadom/czd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

namespace dyadom {

namespace {

double safe_ratio(double num, double den) {
    if (num == 0) return 0;
    if (den == 0) return std::numeric_limits<double>::infinity();
    return num / den;
}

void check_stopping_list(const DyadicCube& q, const std::vector<DyadicCube>& st, int finest) {
    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
    ranges.reserve(st.size());
    for (const auto& i : st) {
        if (i.dim != q.dim || i.depth > finest || !q.contains(i) || i == q)
            throw std::invalid_argument("stopping cube outside the base cube");
        ranges.emplace_back(i.cell_begin(finest), i.cell_end(finest));
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t t = 1; t < ranges.size(); ++t)
        if (ranges[t].first < ranges[t - 1].second)
            throw std::invalid_argument("stopping cubes overlap");
}

// good part: f on Q away from the stopping cubes, per-coordinate signed
// averages on each stopping cube, zero outside Q
GridFunction make_good(const GridFunction& f, const DyadicCube& q,
                       const std::vector<DyadicCube>& st) {
    const int n = f.components();
    const int L = f.finest_depth();
    std::vector<double> vals(f.cell_count() * static_cast<std::uint64_t>(n), 0.0);
    for (std::uint64_t c = q.cell_begin(L); c < q.cell_end(L); ++c)
        for (int j = 0; j < n; ++j) vals[c * n + j] = f.value(c, j);
    for (const auto& i : st) {
        for (int j = 0; j < n; ++j) {
            const double avg = f.integral(i, j) / i.measure();
            for (std::uint64_t c = i.cell_begin(L); c < i.cell_end(L); ++c) vals[c * n + j] = avg;
        }
    }
    return GridFunction(f.dim(), n, L, std::move(vals));
}

// bad = f*1_Q - good, cellwise, so the splitting identity is exact in
// floating point; away from the stopping cubes the difference is f - f = 0
GridFunction make_bad(const GridFunction& f, const DyadicCube& q, const GridFunction& good) {
    const int n = f.components();
    const int L = f.finest_depth();
    std::vector<double> vals(f.cell_count() * static_cast<std::uint64_t>(n), 0.0);
    for (std::uint64_t c = q.cell_begin(L); c < q.cell_end(L); ++c)
        for (int j = 0; j < n; ++j) vals[c * n + j] = f.value(c, j) - good.value(c, j);
    return GridFunction(f.dim(), n, L, std::move(vals));
}

// maximal elements of the union of two cube families
std::vector<DyadicCube> joint_maximal(const std::vector<DyadicCube>& a,
                                      const std::vector<DyadicCube>& b) {
    std::vector<DyadicCube> all = a;
    all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    std::vector<DyadicCube> kept;
    for (const auto& c : all) {
        bool covered = false;
        for (const auto& k : kept)
            if (k.contains(c)) {
                covered = true;
                break;
            }
        if (!covered) kept.push_back(c);
    }
    return kept;
}

// Per-depth-class sums of the kernel forms below q, split by ownership:
// kernels inside a stopping cube belong to that cube, the rest form the
// untouched family. Shared by the scalar and the vector checker so the
// one-component vector run reproduces the scalar run float for float.
struct ClassSums {
    int rho = 1;
    std::vector<double> lhs;                // per class: all kernels below q
    std::vector<double> untouched;          // per class: kernels outside every stopping cube
    std::vector<std::vector<double>> inner; // [stopping cube][class]
    std::vector<int> owner;                 // kernel index -> stopping index, -1 untouched, -2 not below q
    double collapse_defect = 0;
    double lhs_total = 0;
    std::vector<double> inner_total;
};

ClassSums class_sums(const DyadicShift& s, const GridFunction& f1, const GridFunction& f2,
                     const DyadicCube& q, const std::vector<DyadicCube>& st) {
    ClassSums cs;
    cs.rho = s.rho();
    cs.lhs.assign(cs.rho, 0.0);
    cs.untouched.assign(cs.rho, 0.0);
    cs.inner.assign(st.size(), std::vector<double>(cs.rho, 0.0));
    cs.owner.assign(s.kernels().size(), -2);
    std::vector<double> scale(cs.rho, 0.0);

    for (std::size_t t = 0; t < s.kernels().size(); ++t) {
        const ShiftKernel& k = s.kernels()[t];
        if (!q.contains(k.cube)) continue;
        int own = -1;
        for (std::size_t i = 0; i < st.size(); ++i)
            if (st[i].contains(k.cube)) {
                own = static_cast<int>(i);
                break;
            }
        cs.owner[t] = own;
        const int m = k.cube.depth % cs.rho;
        const double form = kernel_form_clipped(k, s.m1(), s.m2(), f1, q, f2, q);
        cs.lhs[m] += form;
        scale[m] += std::abs(form);
        if (own < 0)
            cs.untouched[m] += form;
        else
            cs.inner[own][m] += form;
    }

    for (int m = 0; m < cs.rho; ++m) {
        double rebuilt = cs.untouched[m];
        for (std::size_t i = 0; i < st.size(); ++i) rebuilt += cs.inner[i][m];
        const double defect = std::abs(cs.lhs[m] - rebuilt);
        if (scale[m] > 0) cs.collapse_defect = std::max(cs.collapse_defect, defect / scale[m]);
    }
    for (int m = 0; m < cs.rho; ++m) cs.lhs_total += cs.lhs[m];
    cs.inner_total.assign(st.size(), 0.0);
    for (std::size_t i = 0; i < st.size(); ++i)
        for (int m = 0; m < cs.rho; ++m) cs.inner_total[i] += cs.inner[i][m];
    return cs;
}

// Regularization before inverting the John matrix of a degenerate body: tiny
// axis generators pin the complement directions. The scale must survive the
// squaring in the Gram matrix (eps^2 well above machine precision), hence
// 1e-6; fattening the body only loosens the verified bounds, never breaks
// them, and the endpoint comparisons carry matching slack.
Zonotope regularize_body(const Zonotope& k) {
    const int n = k.n();
    double scale = 0;
    for (int i = 0; i < k.generator_count(); ++i)
        scale = std::max(scale, k.generators().col(i).norm());
    if (scale == 0) scale = 1;
    Eigen::MatrixXd g(n, k.generator_count() + n);
    g.leftCols(k.generator_count()) = k.generators();
    g.rightCols(n) = 1e-6 * scale * Eigen::MatrixXd::Identity(n, n);
    return Zonotope(n, g);
}

// max that propagates NaN instead of swallowing it, so a failed solve can
// never masquerade as a passing bound
void grow(double& acc, double x) {
    if (!(x <= acc)) acc = x;
}

} // namespace

CZDecomposition cz_decompose_on(const GridFunction& f, const DyadicCube& q, double lambda,
                                std::vector<DyadicCube> stopping) {
    if (q.dim != f.dim()) throw std::invalid_argument("cube dimension mismatch");
    if (!(lambda > 1.0)) throw std::invalid_argument("splitting threshold must exceed 1");
    std::sort(stopping.begin(), stopping.end());
    check_stopping_list(q, stopping, f.finest_depth());
    GridFunction good = make_good(f, q, stopping);
    GridFunction bad = make_bad(f, q, good);
    return CZDecomposition{q, lambda, std::move(stopping), std::move(good), std::move(bad)};
}

CZDecomposition cz_decompose(const GridFunction& f, const DyadicCube& q, double lambda) {
    if (f.components() != 1) throw std::invalid_argument("scalar splitting takes scalar data");
    return cz_decompose_on(f, q, lambda, stopping_children({&f}, q, lambda));
}

CZBodyDecomposition cz_decompose_body_on(const GridFunction& f, const DyadicCube& q,
                                         double threshold, std::vector<DyadicCube> stopping,
                                         std::vector<int> types) {
    const int n = f.components();
    if (q.dim != f.dim()) throw std::invalid_argument("cube dimension mismatch");
    if (!(threshold > static_cast<double>(n) * n))
        throw std::invalid_argument("splitting threshold must exceed n^2");
    if (!types.empty() && types.size() != stopping.size())
        throw std::invalid_argument("one type per stopping cube");
    if (types.empty()) types.assign(stopping.size(), -1);
    {
        // keep cubes and their types aligned under the canonical sort
        std::vector<std::size_t> order(stopping.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return stopping[a] < stopping[b]; });
        std::vector<DyadicCube> cs;
        std::vector<int> ts;
        for (auto i : order) {
            cs.push_back(stopping[i]);
            ts.push_back(types[i]);
        }
        stopping = std::move(cs);
        types = std::move(ts);
    }
    check_stopping_list(q, stopping, f.finest_depth());

    GridFunction good = make_good(f, q, stopping);
    GridFunction bad = make_bad(f, q, good);

    CZBodyDecomposition out{q,
                            threshold,
                            std::move(stopping),
                            std::move(types),
                            std::move(good),
                            std::move(bad),
                            false,
                            Eigen::MatrixXd::Zero(n, n),
                            0,
                            0,
                            std::pow(2.0, q.dim) * threshold * std::sqrt(double(n)),
                            std::pow(2.0, q.dim + 1) * threshold * std::sqrt(double(n))};

    Zonotope body_q = body_average(f, q);
    if (body_q.generator_count() == 0) {
        // f vanishes on Q: both parts are zero and there is nothing to scale
        out.degenerate_root = true;
        return out;
    }
    out.degenerate_root = body_q.degenerate();
    Zonotope reg = out.degenerate_root ? regularize_body(body_q) : body_q;
    out.john_shape = john_ellipsoid(reg).shape;
    Eigen::MatrixXd ainv = out.john_shape.inverse();

    const int L = f.finest_depth();
    Eigen::VectorXd v(n), w(n);
    for (std::uint64_t c = q.cell_begin(L); c < q.cell_end(L); ++c) {
        for (int j = 0; j < n; ++j) v[j] = out.good.value(c, j);
        w = ainv * v;
        grow(out.good_sup, w.cwiseAbs().maxCoeff());
    }
    for (const auto& i : out.stopping) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
        for (std::uint64_t c = i.cell_begin(L); c < i.cell_end(L); ++c) {
            for (int j = 0; j < n; ++j) v[j] = out.bad.value(c, j);
            acc += (ainv * v).cwiseAbs();
        }
        acc *= f.cell_measure() / i.measure();
        grow(out.bad_avg, acc.maxCoeff());
    }
    return out;
}

CZBodyDecomposition cz_decompose_body(const GridFunction& f, const DyadicCube& q,
                                      double threshold) {
    VectorStopping vs = vector_stopping(f, q, threshold);
    return cz_decompose_body_on(f, q, threshold, std::move(vs.cubes), std::move(vs.types));
}

std::vector<DyadicShift> scale_split(const DyadicShift& s) {
    const int rho = s.rho();
    std::vector<std::vector<ShiftKernel>> buckets(rho);
    for (const auto& k : s.kernels()) buckets[k.cube.depth % rho].push_back(k);
    std::vector<DyadicShift> out;
    out.reserve(rho);
    for (int m = 0; m < rho; ++m)
        out.emplace_back(s.dim(), s.finest_depth(), s.m1(), s.m2(), std::move(buckets[m]),
                         s.certificate());
    return out;
}

std::optional<DyadicCube> r_of_i(const DyadicCube& i, int rho, int m) {
    if (rho < 1 || m < 0 || m >= rho) throw std::invalid_argument("bad residue class");
    // largest depth below depth(i) in the residue class, if it sits inside
    // the window (depth(i) - rho, depth(i)) and above the root
    const int t = i.depth - 1 - (((i.depth - 1 - m) % rho) + rho) % rho;
    if (t <= i.depth - rho || t < 0) return std::nullopt;
    return i.ancestor_at(t);
}

MainiterReport mainiter_check(const DyadicShift& s, const GridFunction& f1,
                              const GridFunction& f2, const DyadicCube& q, double lambda) {
    if (f1.components() != 1 || f2.components() != 1)
        throw std::invalid_argument("scalar checker takes scalar data");
    if (q.dim != s.dim()) throw std::invalid_argument("cube dimension mismatch");

    MainiterReport rep;
    const int d = s.dim();
    const int rho = s.rho();
    const double p2d = double(1 << d);
    rep.c0 = (5.0 * p2d + 4.0) * lambda;
    rep.envelope = d == 1 ? 8192.0 : 16384.0;

    const double a1 = scalar_average(f1, q);
    const double a2 = scalar_average(f2, q);
    std::vector<DyadicCube> st = stopping_children({&f1, &f2}, q, lambda);
    rep.stopping_count = static_cast<int>(st.size());
    CZDecomposition cz1 = cz_decompose_on(f1, q, lambda, st);
    CZDecomposition cz2 = cz_decompose_on(f2, q, lambda, st);

    ClassSums cs = class_sums(s, f1, f2, q, st);
    rep.collapse_defect = cs.collapse_defect;

    double inner_abs = 0;
    for (double v : cs.inner_total) inner_abs += std::abs(v);
    const double denom = rho * (q.measure() * (a1 * a2));
    const double excess = std::abs(cs.lhs_total) - inner_abs;
    rep.residual = (excess > 0 && denom > 0) ? excess / denom : 0.0;

    // untouched kernels applied to the two good parts, per class
    const double gg_allowed = p2d * lambda * (q.measure() * (a1 * a2));
    std::vector<double> gg(rho, 0.0);
    for (std::size_t t = 0; t < s.kernels().size(); ++t) {
        if (cs.owner[t] != -1) continue;
        const ShiftKernel& k = s.kernels()[t];
        gg[k.cube.depth % rho] += kernel_form(k, s.m1(), s.m2(), cz1.good, cz2.good);
    }
    for (int m = 0; m < rho; ++m)
        rep.good_good_ratio = std::max(rep.good_good_ratio, safe_ratio(std::abs(gg[m]), gg_allowed));

    // cross pieces live only at the in-window ancestors of the stopping cubes
    for (const auto& i : st) {
        const double base = i.measure() * (a1 * a2);
        for (int m = 0; m < rho; ++m) {
            auto r = r_of_i(i, rho, m);
            if (!r || !q.contains(*r)) continue;
            const ShiftKernel* kr = s.kernel_for(*r);
            if (!kr) continue;
            const double p_gb =
                kernel_form_clipped(*kr, s.m1(), s.m2(), cz1.good, q, cz2.bad, i);
            const double p_bg =
                kernel_form_clipped(*kr, s.m1(), s.m2(), cz1.bad, i, cz2.good, q);
            const double p_bb = kernel_form_clipped(*kr, s.m1(), s.m2(), cz1.bad, i, cz2.bad, *r);
            const double c_gb = std::pow(2.0, 2 * d + 1) * lambda * lambda * base;
            const double c_bb = std::pow(2.0, d + 2) * lambda * lambda * base;
            rep.piece_ratio = std::max(rep.piece_ratio, safe_ratio(std::abs(p_gb), c_gb));
            rep.piece_ratio = std::max(rep.piece_ratio, safe_ratio(std::abs(p_bg), c_gb));
            rep.piece_ratio = std::max(rep.piece_ratio, safe_ratio(std::abs(p_bb), c_bb));
        }
    }

    // untouched kernels with no stopping cube in their window must see no
    // difference between f and good: the bad parts integrate to zero on
    // every input and output subcube
    const int window = std::max(s.m1(), s.m2());
    for (std::size_t t = 0; t < s.kernels().size(); ++t) {
        if (cs.owner[t] != -1) continue;
        const ShiftKernel& k = s.kernels()[t];
        bool windowed = false;
        for (const auto& i : st)
            if (k.cube.contains(i) && i != k.cube && i.depth < k.cube.depth + window) {
                windowed = true;
                break;
            }
        if (windowed) continue;
        const double whole = kernel_form_clipped(k, s.m1(), s.m2(), f1, q, f2, q);
        const double collapsed = kernel_form(k, s.m1(), s.m2(), cz1.good, cz2.good);
        const double scale = lambda * lambda * (k.cube.measure() * (a1 * a2));
        rep.vanish_ratio = std::max(rep.vanish_ratio, safe_ratio(std::abs(whole - collapsed), scale));
    }

    rep.ok = rep.residual <= rep.c0 * (1 + 1e-9) && rep.residual <= rep.envelope &&
             rep.collapse_defect <= 1e-9 && rep.good_good_ratio <= 1 + 1e-9 &&
             rep.piece_ratio <= 1 + 1e-9 && rep.vanish_ratio <= 1e-9;
    return rep;
}

MainiterVecReport mainitervec_check(const DyadicShift& s, const GridFunction& f1,
                                    const GridFunction& f2, const DyadicCube& q,
                                    double threshold) {
    if (f1.components() != f2.components())
        throw std::invalid_argument("component count mismatch");
    if (q.dim != s.dim()) throw std::invalid_argument("cube dimension mismatch");

    MainiterVecReport rep;
    const int d = s.dim();
    const int n = f1.components();
    const int rho = s.rho();
    const double p2d = double(1 << d);
    rep.c0 = ((5.0 * p2d + 4.0) * threshold) * double(n * n * n);
    rep.envelope = d == 1 ? 8192.0 : 16384.0;

    Zonotope body1 = body_average(f1, q);
    Zonotope body2 = body_average(f2, q);
    const double endpoint = minkowski_product(body1, body2);

    VectorStopping vs1 = vector_stopping(f1, q, threshold);
    VectorStopping vs2 = vector_stopping(f2, q, threshold);
    std::vector<DyadicCube> st = joint_maximal(vs1.cubes, vs2.cubes);
    rep.stopping_count = static_cast<int>(st.size());

    CZBodyDecomposition cz1 = cz_decompose_body_on(f1, q, threshold, st, {});
    CZBodyDecomposition cz2 = cz_decompose_body_on(f2, q, threshold, st, {});
    rep.degenerate = cz1.degenerate_root || cz2.degenerate_root;
    rep.good_sup_ratio = std::max(cz1.good_sup / cz1.good_const, cz2.good_sup / cz2.good_const);
    rep.bad_avg_ratio = std::max(cz1.bad_avg / cz1.bad_const, cz2.bad_avg / cz2.bad_const);

    // every pairing of normalized axes stays inside the bilinear endpoint of
    // the two averaged bodies (the John ellipsoids sit inside the bodies);
    // the absolute slack covers the 1e-6 fattening of degenerate bodies
    const double slack = 1e-5 * (body1.radius_upper() * body2.radius_upper());
    const Eigen::MatrixXd pairings = cz1.john_shape.transpose() * cz2.john_shape;
    rep.johnkl_ratio = safe_ratio(pairings.cwiseAbs().maxCoeff(), endpoint + slack);

    ClassSums cs = class_sums(s, f1, f2, q, st);
    rep.collapse_defect = cs.collapse_defect;

    double inner_abs = 0;
    for (double v : cs.inner_total) inner_abs += std::abs(v);
    const double denom = rho * (q.measure() * endpoint);
    const double excess = std::abs(cs.lhs_total) - inner_abs;
    rep.residual = (excess > 0 && denom > 0) ? excess / denom : 0.0;

    rep.ok = rep.residual <= rep.c0 * (1 + 1e-9) && rep.residual <= rep.envelope &&
             rep.collapse_defect <= 1e-9 && rep.johnkl_ratio <= 1 + 1e-9 &&
             rep.good_sup_ratio <= 1 + 1e-9 && rep.bad_avg_ratio <= 1 + 1e-9;
    return rep;
}

SiblingReport sibling_decoupling_check(const DyadicShift& s, const GridFunction& f1,
                                       const GridFunction& f2, const DyadicCube& qbar) {
    if (f1.components() != 1 || f2.components() != 1)
        throw std::invalid_argument("decoupling check takes scalar data");
    if (qbar.dim != s.dim()) throw std::invalid_argument("cube dimension mismatch");
    const int L = s.finest_depth();
    if (qbar.depth >= L) throw std::invalid_argument("base cube has no children on this grid");

    SiblingReport rep;
    const int d = s.dim();
    const int rho = s.rho();
    std::vector<DyadicCube> kids = children(qbar, L);
    const double a1bar = scalar_average(f1, qbar);
    const double a2bar = scalar_average(f2, qbar);
    GridFunction ones(f1.dim(), 1, L, std::vector<double>(f1.cell_count(), 1.0));

    for (const auto& k : s.kernels()) {
        const bool above = k.cube.contains(qbar);
        for (std::size_t ki = 0; ki < kids.size(); ++ki) {
            for (std::size_t li = 0; li < kids.size(); ++li) {
                if (ki == li) continue;
                const double form =
                    kernel_form_clipped(k, s.m1(), s.m2(), f1, kids[ki], f2, kids[li]);
                if (!above) {
                    // the kernel meets at most one child, so one side clips away
                    rep.zero_defect = std::max(rep.zero_defect, std::abs(form));
                    continue;
                }
                rep.offdiag_total += std::abs(form);
                if (k.cube.depth + s.m2() <= kids[ki].depth &&
                    k.cube.depth + s.m1() <= kids[li].depth) {
                    // coarse kernel: each subcube either swallows a child or
                    // misses it, so the form only sees the signed averages
                    const double c1 = f1.integral(kids[ki], 0) / kids[ki].measure();
                    const double c2 = f2.integral(kids[li], 0) / kids[li].measure();
                    const double collapsed =
                        (c1 * c2) *
                        kernel_form_clipped(k, s.m1(), s.m2(), ones, kids[ki], ones, kids[li]);
                    const double mag = std::max(std::abs(form), std::abs(collapsed));
                    if (mag > 0)
                        rep.collapse_defect =
                            std::max(rep.collapse_defect, std::abs(form - collapsed) / mag);
                } else {
                    const double allowed =
                        kids[ki].measure() *
                        (scalar_average(f1, kids[ki]) * scalar_average(f2, kids[li]));
                    rep.bound_ratio = std::max(rep.bound_ratio, safe_ratio(std::abs(form), allowed));
                }
            }
        }
    }

    rep.offdiag_allowed =
        std::pow(2.0, 2 * d) * (rho + 1) * qbar.measure() * (a1bar * a2bar);
    rep.ok = rep.zero_defect == 0 && rep.collapse_defect <= 1e-11 &&
             rep.bound_ratio <= 1 + 1e-9 &&
             rep.offdiag_total <= rep.offdiag_allowed * (1 + 1e-9);
    return rep;
}

} // namespace dyadom
