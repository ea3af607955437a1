#include "dyadom/weights.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "dyadom/common.hpp"

namespace dyadom {

namespace {

bool exactly_diagonal(const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            if (i != j && m(i, j) != 0.0) return false;
    return true;
}

// largest eigenvalue of a symmetric matrix; entrywise on exact diagonals so
// identity products report exactly 1
double sym_lambda_max(const Eigen::MatrixXd& m) {
    if (exactly_diagonal(m)) return m.diagonal().maxCoeff();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    return es.eigenvalues().maxCoeff();
}

double sym_lambda_min(const Eigen::MatrixXd& m) {
    if (exactly_diagonal(m)) return m.diagonal().minCoeff();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    return es.eigenvalues().minCoeff();
}

// m^p for p in {-1, 1/2, -1/2} via the symmetric eigendecomposition, with the
// same exact entrywise shortcut on diagonal matrices
Eigen::MatrixXd sym_power(const Eigen::MatrixXd& m, double p) {
    auto f = [p](double x) {
        if (p == -1.0) return 1.0 / x;
        if (p == 0.5) return std::sqrt(x);
        return 1.0 / std::sqrt(x);
    };
    if (exactly_diagonal(m)) {
        Eigen::MatrixXd r = Eigen::MatrixXd::Zero(m.rows(), m.cols());
        for (Eigen::Index i = 0; i < m.rows(); ++i) r(i, i) = f(m(i, i));
        return r;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd lam = es.eigenvalues();
    for (Eigen::Index i = 0; i < lam.size(); ++i) lam[i] = f(lam[i]);
    Eigen::MatrixXd r = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    Eigen::MatrixXd sym = 0.5 * (r + r.transpose());
    return sym;
}

// rotation by theta in the (i, j) coordinate plane
Eigen::MatrixXd plane_rotation(int n, int i, int j, double theta) {
    Eigen::MatrixXd r = Eigen::MatrixXd::Identity(n, n);
    const double c = std::cos(theta), s = std::sin(theta);
    r(i, i) = c;
    r(j, j) = c;
    r(i, j) = -s;
    r(j, i) = s;
    return r;
}

double ols_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() < 2) return 0;
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(xs.size());
    my /= static_cast<double>(xs.size());
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (sxx <= 1e-24) return 0;
    return sxy / sxx;
}

} // namespace

//==================== MatrixWeight ====================

MatrixWeight::MatrixWeight(int dim, int n, int finest_depth, std::vector<Eigen::MatrixXd> cells)
    : dim_(dim), n_(n), finest_(finest_depth), cells_(std::move(cells)) {
    if (dim_ != 1 && dim_ != 2) throw std::invalid_argument("dimension must be 1 or 2");
    if (finest_ < 0 || finest_ > max_finest_depth(dim_))
        throw std::invalid_argument("finest depth out of range for dimension");
    if (n_ < 1 || n_ > 3) throw std::invalid_argument("component count must be 1..3");
    if (cells_.size() != (1ull << (dim_ * finest_)))
        throw std::invalid_argument("cell matrix array has wrong size");

    const int nn = n_ * n_;
    invs_.resize(cells_.size());
    sqrts_.resize(cells_.size());
    isqrts_.resize(cells_.size());
    pref_.assign((cells_.size() + 1) * nn, 0.0);
    prefi_.assign((cells_.size() + 1) * nn, 0.0);

    for (std::size_t c = 0; c < cells_.size(); ++c) {
        Eigen::MatrixXd& m = cells_[c];
        if (m.rows() != n_ || m.cols() != n_)
            throw std::invalid_argument("cell matrix has wrong shape");
        Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
        m = sym;
        const double tr = m.trace();
        if (exactly_diagonal(m)) {
            bool ok = tr > 0;
            for (int i = 0; i < n_; ++i) ok = ok && m(i, i) > 1e-12 * tr;
            if (!ok) throw std::invalid_argument("cell matrix below the SPD eigenvalue floor");
            invs_[c] = sym_power(m, -1.0);
            sqrts_[c] = sym_power(m, 0.5);
            isqrts_[c] = sym_power(m, -0.5);
        } else {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
            if (!(tr > 0) || es.eigenvalues().minCoeff() <= 1e-12 * tr)
                throw std::invalid_argument("cell matrix below the SPD eigenvalue floor");
            const Eigen::MatrixXd& v = es.eigenvectors();
            auto build = [&](double p) {
                Eigen::VectorXd lam = es.eigenvalues();
                for (Eigen::Index i = 0; i < lam.size(); ++i)
                    lam[i] = p == -1.0 ? 1.0 / lam[i]
                                       : (p == 0.5 ? std::sqrt(lam[i]) : 1.0 / std::sqrt(lam[i]));
                Eigen::MatrixXd r = v * lam.asDiagonal() * v.transpose();
                Eigen::MatrixXd rs = 0.5 * (r + r.transpose());
                return rs;
            };
            invs_[c] = build(-1.0);
            sqrts_[c] = build(0.5);
            isqrts_[c] = build(-0.5);
        }
        for (int e = 0; e < nn; ++e) {
            pref_[(c + 1) * nn + e] = pref_[c * nn + e] + m(e / n_, e % n_);
            prefi_[(c + 1) * nn + e] = prefi_[c * nn + e] + invs_[c](e / n_, e % n_);
        }
    }
}

namespace {

Eigen::MatrixXd prefix_average(const std::vector<double>& pref, int n, int finest,
                               const DyadicCube& q) {
    const std::uint64_t b = q.cell_begin(finest), e = q.cell_end(finest);
    const double k = static_cast<double>(e - b);
    const int nn = n * n;
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            m(i, j) = (pref[e * nn + i * n + j] - pref[b * nn + i * n + j]) / k;
    return m;
}

} // namespace

Eigen::MatrixXd MatrixWeight::average(const DyadicCube& q) const {
    if (q.dim != dim_) throw std::invalid_argument("cube dimension mismatch");
    if (q.depth > finest_) throw std::invalid_argument("cube deeper than the grid");
    return prefix_average(pref_, n_, finest_, q);
}

Eigen::MatrixXd MatrixWeight::inverse_average(const DyadicCube& q) const {
    if (q.dim != dim_) throw std::invalid_argument("cube dimension mismatch");
    if (q.depth > finest_) throw std::invalid_argument("cube deeper than the grid");
    return prefix_average(prefi_, n_, finest_, q);
}

MatrixWeight MatrixWeight::inverted() const { return MatrixWeight(dim_, n_, finest_, invs_); }

//==================== characteristic and norms ====================

A2Characteristic a2_characteristic(const MatrixWeight& w) {
    A2Characteristic best;
    best.value = 0;
    best.cube = DyadicCube::root(w.dim());
    for (int t = 0; t <= w.finest_depth(); ++t) {
        const std::uint64_t count = 1ull << (w.dim() * t);
        for (std::uint64_t m = 0; m < count; ++m) {
            DyadicCube q = cube_from_morton(w.dim(), t, m);
            Eigen::MatrixXd a = w.average(q);
            Eigen::MatrixXd b = w.inverse_average(q);
            const double tra = a.trace();
            if (!(tra > 0) || sym_lambda_min(a) <= 1e-12 * tra)
                throw std::runtime_error("near-singular average matrix in the characteristic");
            Eigen::MatrixXd sb = sym_power(b, 0.5);
            Eigen::MatrixXd prod = sb * a * sb;
            Eigen::MatrixXd sym = 0.5 * (prod + prod.transpose());
            const double lam = sym_lambda_max(sym);
            if (lam > best.value) {
                best.value = lam;
                best.cube = q;
            }
        }
    }
    return best;
}

double weighted_norm(const GridFunction& f, const MatrixWeight& w) {
    if (f.dim() != w.dim() || f.finest_depth() != w.finest_depth())
        throw std::invalid_argument("function and weight live on different grids");
    if (f.components() != w.n()) throw std::invalid_argument("component count mismatch");
    const int n = w.n();
    double sq = 0;
    Eigen::VectorXd v(n);
    for (std::uint64_t c = 0; c < f.cell_count(); ++c) {
        const Eigen::MatrixXd& m = w.cell(c);
        double m2 = 0;
        if (exactly_diagonal(m)) {
            // entrywise, in component order, so the identity weight
            // reproduces norms(f).l2 bit for bit
            for (int j = 0; j < n; ++j) {
                const double x = f.value(c, j);
                m2 += m(j, j) * (x * x);
            }
        } else {
            for (int j = 0; j < n; ++j) v[j] = f.value(c, j);
            m2 = v.dot(m * v);
        }
        sq += m2 * f.cell_measure();
    }
    return std::sqrt(sq);
}

GridFunction multiply(const MatrixWeight& w, const GridFunction& f) {
    if (f.dim() != w.dim() || f.finest_depth() != w.finest_depth())
        throw std::invalid_argument("function and weight live on different grids");
    if (f.components() != w.n()) throw std::invalid_argument("component count mismatch");
    const int n = w.n();
    std::vector<double> vals(f.raw());
    Eigen::VectorXd v(n), img(n);
    for (std::uint64_t c = 0; c < f.cell_count(); ++c) {
        const Eigen::MatrixXd& m = w.cell(c);
        if (exactly_diagonal(m)) {
            for (int j = 0; j < n; ++j) vals[c * n + j] = m(j, j) * f.value(c, j);
        } else {
            for (int j = 0; j < n; ++j) v[j] = f.value(c, j);
            img = m * v;
            for (int j = 0; j < n; ++j) vals[c * n + j] = img[j];
        }
    }
    return GridFunction(f.dim(), n, f.finest_depth(), std::move(vals));
}

//==================== weighted operator norm ====================

WeightedNormResult weighted_operator_norm(const DyadicShift& s, const MatrixWeight& w) {
    if (s.dim() != w.dim() || s.finest_depth() != w.finest_depth())
        throw std::invalid_argument("shift and weight live on different grids");
    const int n = w.n();
    const std::uint64_t cells = 1ull << (s.dim() * s.finest_depth());
    if (static_cast<std::uint64_t>(n) * cells > 8192)
        throw std::invalid_argument("weighted norm limited to n * cells <= 8192");
    const Eigen::Index dim = static_cast<Eigen::Index>(n * cells);

    WeightedNormResult res;
    if (s.kernels().empty()) {
        res.converged = true;
        return res;
    }

    Eigen::VectorXd z(dim), comp(static_cast<Eigen::Index>(cells)),
        img(static_cast<Eigen::Index>(cells));
    // M = blockdiag(W^{1/2}) (T kron Id) blockdiag(W^{-1/2}); the transpose
    // swaps the (symmetric) outer blocks and transposes T
    auto apply_m = [&](bool transpose, const Eigen::VectorXd& x, Eigen::VectorXd& out) {
        for (std::uint64_t c = 0; c < cells; ++c) {
            const Eigen::MatrixXd& a = transpose ? w.cell_sqrt(c) : w.cell_inv_sqrt(c);
            z.segment(static_cast<Eigen::Index>(c) * n, n) =
                a * x.segment(static_cast<Eigen::Index>(c) * n, n);
        }
        for (int j = 0; j < n; ++j) {
            for (std::uint64_t c = 0; c < cells; ++c) comp[c] = z[c * n + j];
            apply_shift(s, transpose, comp, img);
            for (std::uint64_t c = 0; c < cells; ++c) z[c * n + j] = img[c];
        }
        out.resize(dim);
        for (std::uint64_t c = 0; c < cells; ++c) {
            const Eigen::MatrixXd& b = transpose ? w.cell_inv_sqrt(c) : w.cell_sqrt(c);
            out.segment(static_cast<Eigen::Index>(c) * n, n) =
                b * z.segment(static_cast<Eigen::Index>(c) * n, n);
        }
    };

    std::uint64_t seed = 0x5eed0000u + s.kernels().size();
    Eigen::VectorXd x(dim);
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x[i] = 2.0 * (static_cast<double>(splitmix64(seed) >> 11) * 0x1p-53) - 1.0;
    x.normalize();
    Eigen::VectorXd ax(dim), atax(dim);
    double sigma = 0;
    for (int it = 1; it <= 20000; ++it) {
        apply_m(false, x, ax);
        double next = ax.norm();
        res.iterations = it;
        if (next == 0.0) {
            res.value = 0;
            res.converged = true;
            return res;
        }
        apply_m(true, ax, atax);
        double nz = atax.norm();
        if (std::abs(next - sigma) <= 1e-11 * next && it > 3) {
            res.value = next;
            res.converged = true;
            // push the left extremizer back through the transpose; the
            // singular pair must reproduce the value
            res.extremizer_defect = std::abs(nz / next - next) / next;
            return res;
        }
        sigma = next;
        if (nz == 0.0) break;
        x = atax / nz;
    }

    if (dim <= 2048) {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim, dim);
        Eigen::VectorXd e = Eigen::VectorXd::Zero(dim), col(dim);
        for (Eigen::Index c = 0; c < dim; ++c) {
            e[c] = 1.0;
            apply_m(false, e, col);
            m.col(c) = col;
            e[c] = 0.0;
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.transpose() * m);
        Eigen::Index arg = 0;
        const double lam = es.eigenvalues().maxCoeff(&arg);
        res.value = std::sqrt(std::max(0.0, lam));
        res.converged = true;
        if (res.value > 0) {
            Eigen::VectorXd top = es.eigenvectors().col(arg);
            apply_m(false, top, col);
            res.extremizer_defect = std::abs(col.norm() - res.value) / res.value;
        }
        return res;
    }
    res.value = sigma;
    res.converged = false;
    return res;
}

//==================== packing and embedding ====================

double carleson_packing(const SparseCollection& s, const MatrixWeight& w, int j) {
    if (j != 1 && j != 2) throw std::invalid_argument("bound index must be 1 or 2");
    if (s.dim != w.dim() || s.finest_depth != w.finest_depth())
        throw std::invalid_argument("collection and weight live on different grids");
    const int L = s.finest_depth;

    for (const auto& node : s.nodes) {
        Eigen::MatrixXd v = j == 1 ? w.inverse_average(node.cube) : w.average(node.cube);
        const double meas = node.cube.measure();
        Eigen::MatrixXd a = meas * sym_power(v, -1.0);
        Eigen::MatrixXd sq = sym_power(v, 0.5);
        Eigen::MatrixXd prod = sq * a * sq;
        Eigen::MatrixXd sym = 0.5 * (prod + prod.transpose());
        if (std::abs(sym_lambda_max(sym) - meas) > 1e-10 * meas)
            throw std::runtime_error("packing summand failed to collapse to the cube measure");
    }

    // with the summands collapsed, the packing is the exact measure ratio
    std::vector<std::uint64_t> subtree(s.nodes.size());
    for (std::size_t i = s.nodes.size(); i-- > 0;) {
        const auto& nd = s.nodes[i];
        std::uint64_t mass = nd.cube.cell_end(L) - nd.cube.cell_begin(L);
        for (int k : nd.kids) mass += subtree[static_cast<std::size_t>(k)];
        subtree[i] = mass;
    }
    double packing = 0;
    for (std::size_t i = 0; i < s.nodes.size(); ++i) {
        const std::uint64_t own =
            s.nodes[i].cube.cell_end(L) - s.nodes[i].cube.cell_begin(L);
        packing = std::max(packing,
                           static_cast<double>(subtree[i]) / static_cast<double>(own));
    }
    return packing;
}

EmbeddingReport carleson_embedding(const SparseCollection& s, const MatrixWeight& w, int j,
                                   const GridFunction& f) {
    if (j != 1 && j != 2) throw std::invalid_argument("bound index must be 1 or 2");
    if (s.dim != w.dim() || s.finest_depth != w.finest_depth())
        throw std::invalid_argument("collection and weight live on different grids");
    MatrixWeight vj = j == 1 ? w.inverted() : w;
    GridFunction g = multiply(vj, f);

    EmbeddingReport rep;
    rep.characteristic = a2_characteristic(vj).value;
    const double nrm = weighted_norm(f, vj);
    rep.energy = nrm * nrm;
    for (const auto& node : s.nodes) {
        const double meas = node.cube.measure();
        Eigen::VectorXd avg = g.integral_vec(node.cube) / meas;
        Eigen::MatrixXd vinv = sym_power(vj.average(node.cube), -1.0);
        rep.sum += meas * avg.dot(vinv * avg);
    }
    rep.constant =
        rep.energy > 0 && rep.characteristic > 0 ? rep.sum / (rep.characteristic * rep.energy) : 0;
    return rep;
}

//==================== families and sweeps ====================

std::string to_string(WeightFamily f) {
    switch (f) {
        case WeightFamily::ScalarPower: return "scalar-power";
        case WeightFamily::Rotating: return "rotating";
        case WeightFamily::BlockRandom: return "block-random";
    }
    throw std::logic_error("unknown weight family");
}

WeightFamily weight_family_from_string(const std::string& name) {
    if (name == "scalar-power") return WeightFamily::ScalarPower;
    if (name == "rotating") return WeightFamily::Rotating;
    if (name == "block-random") return WeightFamily::BlockRandom;
    throw std::invalid_argument("unknown weight family: " + name);
}

MatrixWeight make_weight(WeightFamily family, int dim, int n, int finest_depth, double a,
                         std::uint64_t seed) {
    if (dim != 1 && dim != 2) throw std::invalid_argument("dimension must be 1 or 2");
    if (finest_depth < 0 || finest_depth > max_finest_depth(dim))
        throw std::invalid_argument("finest depth out of range for dimension");
    if (n < 1 || n > 3) throw std::invalid_argument("component count must be 1..3");
    if (!(a >= 0.0 && a < 1.0))
        throw std::invalid_argument("family exponent must lie in [0, 1)");

    const std::uint64_t cells = 1ull << (dim * finest_depth);
    std::vector<Eigen::MatrixXd> mats(cells);
    if (a == 0.0) {
        // flat short-circuit: integer entries survive the prefix sums, so the
        // characteristic is exactly 1
        for (std::uint64_t c = 0; c < cells; ++c) mats[c] = Eigen::MatrixXd::Identity(n, n);
        return MatrixWeight(dim, n, finest_depth, std::move(mats));
    }

    const double h = std::ldexp(1.0, -finest_depth);
    const double pi = 3.14159265358979323846;
    for (std::uint64_t c = 0; c < cells; ++c) {
        DyadicCube q = cube_from_morton(dim, finest_depth, c);
        double x1 = (static_cast<double>(q.index[0]) + 0.5) * h;
        double d2 = (x1 - 0.5) * (x1 - 0.5);
        if (dim == 2) {
            double x2 = (static_cast<double>(q.index[1]) + 0.5) * h;
            d2 += (x2 - 0.5) * (x2 - 0.5);
        }
        const double u = std::pow(std::sqrt(d2) + h, -a);
        switch (family) {
            case WeightFamily::ScalarPower: {
                mats[c] = u * Eigen::MatrixXd::Identity(n, n);
                break;
            }
            case WeightFamily::Rotating: {
                Eigen::VectorXd lam(n);
                lam[0] = u;
                if (n >= 2) lam[1] = 1.0 / u;
                if (n >= 3) lam[2] = 1.0;
                if (n == 1) {
                    mats[c] = lam.asDiagonal();
                } else {
                    Eigen::MatrixXd r = plane_rotation(n, 0, 1, 2.0 * pi * x1);
                    mats[c] = r * lam.asDiagonal() * r.transpose();
                }
                break;
            }
            case WeightFamily::BlockRandom: {
                std::uint64_t st = mix_seed(seed, 0xb10cull, c);
                auto u01 = [&] {
                    return static_cast<double>(splitmix64(st) >> 11) * 0x1p-53;
                };
                Eigen::VectorXd lam(n);
                for (int i = 0; i < n; ++i)
                    lam[i] = std::pow(1.0 + 3.0 * a, 2.0 * u01() - 1.0);
                Eigen::MatrixXd r = Eigen::MatrixXd::Identity(n, n);
                if (n == 2) r = plane_rotation(2, 0, 1, 2.0 * pi * u01());
                if (n == 3)
                    r = plane_rotation(3, 0, 1, 2.0 * pi * u01()) *
                        plane_rotation(3, 1, 2, 2.0 * pi * u01()) *
                        plane_rotation(3, 0, 1, 2.0 * pi * u01());
                mats[c] = r * lam.asDiagonal() * r.transpose();
                break;
            }
        }
    }
    return MatrixWeight(dim, n, finest_depth, std::move(mats));
}

SweepReport weighted_sweep(const DyadicShift& s, WeightFamily family, int n,
                           const std::vector<double>& exponents, double envelope,
                           std::uint64_t seed) {
    SweepReport rep;
    rep.envelope = envelope;
    rep.converged = true;
    std::vector<double> xs, ys;
    for (double a : exponents) {
        MatrixWeight w = make_weight(family, s.dim(), n, s.finest_depth(), a, seed);
        A2Characteristic ch = a2_characteristic(w);
        WeightedNormResult nr = weighted_operator_norm(s, w);
        SweepPoint p;
        p.exponent = a;
        p.characteristic = ch.value;
        p.norm = nr.value;
        p.ratio = nr.value / std::pow(ch.value, 1.5);
        rep.converged = rep.converged && nr.converged;
        if (!(nr.extremizer_defect <= rep.extremizer_defect))
            rep.extremizer_defect = nr.extremizer_defect;
        if (ch.value > 0 && nr.value > 0) {
            xs.push_back(std::log(ch.value));
            ys.push_back(std::log(nr.value));
        }
        p.slope_so_far = ols_slope(xs, ys);
        rep.points.push_back(p);
        if (p.ratio > rep.ratio_max) rep.ratio_max = p.ratio;
    }
    rep.slope = rep.points.empty() ? 0 : rep.points.back().slope_so_far;
    rep.within_envelope = rep.ratio_max <= envelope;
    rep.ok = rep.within_envelope && rep.converged && rep.extremizer_defect <= 1e-9;
    return rep;
}

void save_sweep_csv(const SweepReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "exponent,characteristic,norm,ratio,slope_so_far\n";
    for (const auto& p : r.points)
        out << format_double(p.exponent) << ',' << format_double(p.characteristic) << ','
            << format_double(p.norm) << ',' << format_double(p.ratio) << ','
            << format_double(p.slope_so_far) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

} // namespace dyadom
