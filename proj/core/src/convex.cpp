#include "dyadom/convex.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace dyadom {

namespace {

bool exactly_parallel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const int n = static_cast<int>(a.size());
    if (n == 1) return true;
    if (n == 2) return a[0] * b[1] - a[1] * b[0] == 0.0;
    // all 2x2 minors vanish
    return a[1] * b[2] - a[2] * b[1] == 0.0 && a[2] * b[0] - a[0] * b[2] == 0.0 &&
           a[0] * b[1] - a[1] * b[0] == 0.0;
}

bool lex_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    for (int i = 0; i < a.size(); ++i) {
        if (a[i] < b[i]) return true;
        if (a[i] > b[i]) return false;
    }
    return false;
}

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace

Zonotope::Zonotope(int n, const Eigen::MatrixXd& generators) : n_(n) {
    if (n < 1 || n > 3) throw std::invalid_argument("zonotope dimension must be 1..3");
    if (generators.size() > 0 && generators.rows() != n)
        throw std::invalid_argument("generator rows must equal the dimension");

    // canonical form: drop exact zeros, merge exactly parallel pairs with the
    // signs aligned, normalize each sign, sort columns
    std::vector<Eigen::VectorXd> canon;
    canon.reserve(static_cast<std::size_t>(generators.cols()));
    for (int c = 0; c < generators.cols(); ++c) {
        Eigen::VectorXd g = generators.col(c);
        if ((g.array() == 0.0).all()) continue;
        bool merged = false;
        for (auto& rep : canon) {
            if (exactly_parallel(rep, g)) {
                if (rep.dot(g) >= 0)
                    rep += g;
                else
                    rep -= g;
                merged = true;
                break;
            }
        }
        if (!merged) canon.push_back(std::move(g));
    }
    for (auto& g : canon) {
        for (int i = 0; i < n_; ++i) {
            if (g[i] != 0.0) {
                if (g[i] < 0.0) g = -g;
                break;
            }
        }
    }
    std::sort(canon.begin(), canon.end(), lex_less);
    gens_.resize(n_, static_cast<int>(canon.size()));
    for (std::size_t i = 0; i < canon.size(); ++i) gens_.col(static_cast<int>(i)) = canon[i];
}

Zonotope Zonotope::zero(int n) { return Zonotope(n, Eigen::MatrixXd(n, 0)); }

double Zonotope::support(const Eigen::VectorXd& u) const {
    if (u.size() != n_) throw std::invalid_argument("direction dimension mismatch");
    double s = 0;
    for (int c = 0; c < gens_.cols(); ++c) s += std::abs(gens_.col(c).dot(u));
    return s;
}

int Zonotope::rank() const {
    if (gens_.cols() == 0) return 0;
    Eigen::MatrixXd moment = gens_ * gens_.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(moment);
    double top = es.eigenvalues().maxCoeff();
    if (top <= 0) return 0;
    int r = 0;
    // moment eigenvalues are squared singular values, so this cutoff treats
    // singular-value ratios below 1e-6 as rank deficiency; anything tighter
    // gets fooled by the roundoff floor of forming G * G^T
    for (int i = 0; i < n_; ++i)
        if (es.eigenvalues()[i] > 1e-12 * top) ++r;
    return r;
}

namespace {

// vertices of a zonogon: sweep directions between consecutive generator
// angles; every sign pattern that is a vertex appears
std::vector<Eigen::VectorXd> vertices_2d(const Eigen::MatrixXd& g) {
    const int p = static_cast<int>(g.cols());
    std::vector<Eigen::VectorXd> out;
    if (p == 0) return out;
    std::vector<double> angles;
    angles.reserve(p);
    for (int i = 0; i < p; ++i) {
        double a = std::atan2(g(1, i), g(0, i));
        if (a < 0) a += std::numbers::pi;
        if (a >= std::numbers::pi) a -= std::numbers::pi;
        angles.push_back(a);
    }
    std::sort(angles.begin(), angles.end());
    std::vector<double> dirs;
    for (int i = 0; i < p; ++i) {
        double next = (i + 1 < p) ? angles[i + 1] : angles[0] + std::numbers::pi;
        dirs.push_back(0.5 * (angles[i] + next) + 0.5 * std::numbers::pi);
    }
    for (double a : dirs) {
        Eigen::Vector2d u(std::cos(a), std::sin(a));
        Eigen::Vector2d v = Eigen::Vector2d::Zero();
        for (int i = 0; i < p; ++i) {
            double s = g.col(i).dot(u);
            v += (s >= 0 ? 1.0 : -1.0) * Eigen::Vector2d(g.col(i));
        }
        out.emplace_back(v);
        out.emplace_back(-v);
    }
    return out;
}

std::vector<Eigen::VectorXd> direction_bank_3d(const Eigen::MatrixXd& g, int fib_count) {
    std::vector<Eigen::VectorXd> dirs;
    const int p = static_cast<int>(g.cols());
    // perturbed pair cross products reach every vertex cone adjacent to a facet
    for (int i = 0; i < p; ++i)
        for (int j = i + 1; j < p; ++j) {
            Eigen::Vector3d c = Eigen::Vector3d(g.col(i)).cross(Eigen::Vector3d(g.col(j)));
            double nc = c.norm();
            if (nc == 0) continue;
            c /= nc;
            Eigen::Vector3d u = g.col(i).normalized(), v = g.col(j).normalized();
            for (double si : {-1.0, 1.0})
                for (double sj : {-1.0, 1.0})
                    dirs.emplace_back((c + 1e-7 * (si * u + sj * v)).normalized());
            dirs.emplace_back(c);
        }
    // Fibonacci sphere fill
    const double ga = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int k = 0; k < fib_count; ++k) {
        double z = 1.0 - 2.0 * (k + 0.5) / fib_count;
        double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        double th = ga * k;
        dirs.emplace_back(Eigen::Vector3d(r * std::cos(th), r * std::sin(th), z));
    }
    return dirs;
}

Eigen::VectorXd support_vertex(const Eigen::MatrixXd& g, const Eigen::VectorXd& u) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(g.rows());
    for (int i = 0; i < g.cols(); ++i) {
        double s = g.col(i).dot(u);
        v += (s >= 0 ? 1.0 : -1.0) * g.col(i);
    }
    return v;
}

} // namespace

double Zonotope::radius_upper() const {
    if (gens_.cols() == 0) return 0;
    if (n_ == 1) {
        double s = 0;
        for (int i = 0; i < gens_.cols(); ++i) s += std::abs(gens_(0, i));
        return s;
    }
    double best = 0;
    if (n_ == 2) {
        for (const auto& v : vertices_2d(gens_)) best = std::max(best, v.norm());
        return best;
    }
    const int p = static_cast<int>(gens_.cols());
    if (p <= 16) {
        std::uint32_t count = 1u << (p - 1); // antipodal pairs
        for (std::uint32_t s = 0; s < count; ++s) {
            Eigen::Vector3d v = gens_.col(0);
            for (int i = 1; i < p; ++i)
                v += (((s >> (i - 1)) & 1u) ? -1.0 : 1.0) * Eigen::Vector3d(gens_.col(i));
            best = std::max(best, v.norm());
        }
        return best;
    }
    for (const auto& u : direction_bank_3d(gens_, 2048))
        best = std::max(best, support_vertex(gens_, u).norm());
    return best;
}

Zonotope body_average(const GridFunction& f, const DyadicCube& q) {
    return body_average_clipped(f, q, q);
}

Zonotope body_average_clipped(const GridFunction& f, const DyadicCube& q, const DyadicCube& clip) {
    if (q.dim != f.dim()) throw std::invalid_argument("cube dimension mismatch");
    const int n = f.components();
    if (n == 1) {
        // keep the scalar reduction numerically identical to scalar_average
        Eigen::MatrixXd g(1, 1);
        g(0, 0) = scalar_average_clipped(f, q, clip);
        return Zonotope(1, g);
    }
    std::uint64_t b = q.cell_begin(f.finest_depth()), e = q.cell_end(f.finest_depth());
    b = std::max(b, clip.cell_begin(f.finest_depth()));
    e = std::min(e, clip.cell_end(f.finest_depth()));
    if (e < b) e = b;
    const double w = f.cell_measure() / q.measure();
    Eigen::MatrixXd g(n, static_cast<int>(e - b));
    for (std::uint64_t c = b; c < e; ++c)
        for (int j = 0; j < n; ++j) g(j, static_cast<int>(c - b)) = f.value(c, j) * w;
    return Zonotope(n, g);
}

double support(const Zonotope& k, const Eigen::VectorXd& u) { return k.support(u); }

Zonotope dilate(const Zonotope& k, double c) {
    if (c < 0) throw std::invalid_argument("dilation factor must be nonnegative");
    return Zonotope(k.n(), c * k.generators());
}

//==================== facet structure and containment ====================

std::vector<Eigen::VectorXd> facet_normals(const Zonotope& k) {
    const int n = k.n();
    const Eigen::MatrixXd& g = k.generators();
    const int p = static_cast<int>(g.cols());
    std::vector<Eigen::VectorXd> out;

    if (n == 1) {
        out.emplace_back(Eigen::VectorXd::Ones(1));
        return out;
    }

    Eigen::MatrixXd moment = Eigen::MatrixXd::Zero(n, n);
    if (p > 0) moment = g * g.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(moment);
    double top = es.eigenvalues().maxCoeff();
    // directions spanning the orthogonal complement pin degenerate bodies to
    // their subspace (support there vanishes to roundoff); same rank cutoff
    // as Zonotope::rank
    for (int i = 0; i < n; ++i)
        if (top <= 0 || es.eigenvalues()[i] <= 1e-12 * top)
            out.emplace_back(es.eigenvectors().col(i));

    if (n == 2) {
        for (int i = 0; i < p; ++i) {
            Eigen::Vector2d v(-g(1, i), g(0, i));
            double nv = v.norm();
            if (nv > 0) out.emplace_back(v / nv);
        }
        if (p == 1) out.emplace_back(Eigen::Vector2d(g.col(0)).normalized());
        return out;
    }

    if (p > 512)
        throw std::invalid_argument("3d facet enumeration capped at 512 generators");
    int rank = k.rank();
    if (rank == 3) {
        for (int i = 0; i < p; ++i)
            for (int j = i + 1; j < p; ++j) {
                Eigen::Vector3d c = Eigen::Vector3d(g.col(i)).cross(Eigen::Vector3d(g.col(j)));
                double nc = c.norm();
                if (nc > 0) out.emplace_back(c / nc);
            }
    } else if (rank == 2) {
        // in-plane edge normals: cross of the plane normal with each generator
        Eigen::Vector3d pn = es.eigenvectors().col(0); // complement dir added above
        for (int i = 0; i < p; ++i) {
            Eigen::Vector3d c = pn.cross(Eigen::Vector3d(g.col(i)));
            double nc = c.norm();
            if (nc > 0) out.emplace_back(c / nc);
        }
    } else if (rank == 1) {
        out.emplace_back(Eigen::Vector3d(g.col(0)).normalized());
    }
    return out;
}

ContainmentResult contains(const Zonotope& k, double c, const Zonotope& h) {
    if (k.n() != h.n()) throw std::invalid_argument("dimension mismatch");
    if (c < 0) throw std::invalid_argument("scale must be nonnegative");
    ContainmentResult res;
    for (const auto& u : facet_normals(k)) {
        if (c * h.support(u) > k.support(u)) {
            res.contained = false;
            res.witness = u;
            return res;
        }
    }
    return res;
}

//==================== Minkowski endpoint ====================

MinkowskiResult minkowski_product_full(const Zonotope& k, const Zonotope& h, int exact_limit) {
    if (k.n() != h.n()) throw std::invalid_argument("dimension mismatch");
    const int n = k.n();
    MinkowskiResult res;
    res.k_vertex = Eigen::VectorXd::Zero(n);
    res.h_vertex = Eigen::VectorXd::Zero(n);
    const bool swap = k.generator_count() > h.generator_count();
    const Eigen::MatrixXd& A = swap ? h.generators() : k.generators();
    const Eigen::MatrixXd& B = swap ? k.generators() : h.generators();
    const int p = static_cast<int>(A.cols());
    const int q = static_cast<int>(B.cols());
    if (p == 0 || q == 0) {
        res.exact = true;
        return res;
    }

    auto record = [&](const Eigen::VectorXd& v, double val) {
        if (val >= res.value) {
            res.value = val;
            Eigen::VectorXd w = support_vertex(B, v);
            if (swap) {
                res.k_vertex = w;
                res.h_vertex = v;
            } else {
                res.k_vertex = v;
                res.h_vertex = w;
            }
        }
    };

    if (p <= exact_limit) {
        // enumerate antipodal sign classes of the smaller side, Gray order
        Eigen::VectorXd v = A.rowwise().sum();
        std::vector<double> sign(p, 1.0);
        record(v, (swap ? k : h).support(v));
        const std::uint64_t total = 1ull << (p - 1);
        std::uint64_t gray = 0;
        for (std::uint64_t it = 1; it < total; ++it) {
            std::uint64_t ng = it ^ (it >> 1);
            int bit = 0;
            std::uint64_t diff = gray ^ ng;
            while (!((diff >> bit) & 1ull)) ++bit;
            gray = ng;
            int idx = bit + 1; // generator 0 fixed positive by symmetry
            sign[idx] = -sign[idx];
            v += 2.0 * sign[idx] * A.col(idx);
            record(v, (swap ? k : h).support(v));
        }
        res.exact = true;
        res.upper = res.value;
        return res;
    }

    // alternating sign ascent from a family of support directions
    std::vector<Eigen::VectorXd> starts;
    if (n == 1) {
        starts.emplace_back(Eigen::VectorXd::Ones(1));
    } else if (n == 2) {
        for (int i = 0; i < p; ++i) {
            Eigen::Vector2d d(-A(1, i), A(0, i));
            if (d.norm() > 0) {
                Eigen::Vector2d dn = d.normalized();
                Eigen::Vector2d gn = Eigen::Vector2d(A.col(i)).normalized();
                starts.emplace_back((dn + 1e-6 * gn).normalized());
                starts.emplace_back((dn - 1e-6 * gn).normalized());
            }
        }
        for (int a = 0; a < 64; ++a) {
            double th = a * std::numbers::pi / 64.0;
            starts.emplace_back(Eigen::Vector2d(std::cos(th), std::sin(th)));
        }
    } else {
        starts = direction_bank_3d(A, 512);
    }
    for (const auto& u : starts) {
        Eigen::VectorXd v = support_vertex(A, u);
        double val = (swap ? k : h).support(v);
        for (int iter = 0; iter < 64; ++iter) {
            Eigen::VectorXd w = support_vertex(B, v);
            Eigen::VectorXd v2 = support_vertex(A, w);
            double val2 = std::abs(v2.dot(w));
            if (val2 <= val + 1e-15 * std::abs(val)) break;
            val = val2;
            v = v2;
        }
        record(v, (swap ? k : h).support(v));
    }

    JohnEllipsoid jk = john_ellipsoid(k);
    JohnEllipsoid jh = john_ellipsoid(h);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(jh.shape.transpose() * jk.shape);
    res.upper = n * svd.singularValues().maxCoeff();
    res.exact = false;
    return res;
}

double minkowski_product(const Zonotope& k, const Zonotope& h) {
    if (k.n() == 1) {
        // single canonical generator each; keep the arithmetic identical to
        // the scalar-average product
        double a = k.generator_count() ? std::abs(k.generators()(0, 0)) : 0.0;
        double b = h.generator_count() ? std::abs(h.generators()(0, 0)) : 0.0;
        return a * b;
    }
    return minkowski_product_full(k, h).value;
}

//==================== John ellipsoid ====================

namespace {

// maximize log det M over SPD M with a_e^T M a_e <= 1, log-barrier Newton in
// the vech coordinates; returns M with every constraint certified <= 1
Eigen::MatrixXd maxdet_inscribed(const std::vector<Eigen::VectorXd>& pts, int n) {
    std::vector<std::pair<int, int>> basis;
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) basis.emplace_back(i, j);
    const int nv = static_cast<int>(basis.size());
    const int m = static_cast<int>(pts.size());

    // w_e[k] = a_e^T E_k a_e
    Eigen::MatrixXd W(m, nv);
    for (int e = 0; e < m; ++e)
        for (int kk = 0; kk < nv; ++kk) {
            auto [i, j] = basis[kk];
            W(e, kk) = (i == j) ? pts[e][i] * pts[e][i] : 2.0 * pts[e][i] * pts[e][j];
        }

    auto to_mat = [&](const Eigen::VectorXd& x) {
        Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
        for (int kk = 0; kk < nv; ++kk) {
            auto [i, j] = basis[kk];
            M(i, j) = x[kk];
            M(j, i) = x[kk];
        }
        return M;
    };

    double amax = 0;
    for (const auto& a : pts) amax = std::max(amax, a.squaredNorm());
    if (amax <= 0) throw std::invalid_argument("inscribed ellipsoid needs nonzero constraints");

    Eigen::VectorXd x = Eigen::VectorXd::Zero(nv);
    for (int kk = 0; kk < nv; ++kk) {
        auto [i, j] = basis[kk];
        if (i == j) x[kk] = 0.5 / amax;
    }

    auto feasible = [&](const Eigen::VectorXd& xv, Eigen::VectorXd& c) {
        Eigen::MatrixXd M = to_mat(xv);
        Eigen::LLT<Eigen::MatrixXd> llt(M);
        if (llt.info() != Eigen::Success) return false;
        c = W * xv;
        return (c.array() < 1.0).all();
    };

    double t = 1.0;
    const double mu = 8.0;
    Eigen::VectorXd c(m);
    while (true) {
        for (int newton = 0; newton < 80; ++newton) {
            Eigen::MatrixXd M = to_mat(x);
            Eigen::MatrixXd Minv = M.inverse();
            c = W * x;
            Eigen::VectorXd g(nv);
            Eigen::MatrixXd H = Eigen::MatrixXd::Zero(nv, nv);
            for (int kk = 0; kk < nv; ++kk) {
                auto [i, j] = basis[kk];
                g[kk] = -t * ((i == j) ? Minv(i, i) : 2.0 * Minv(i, j));
            }
            g += W.transpose() * (1.0 / (1.0 - c.array())).matrix();
            // nv <= 6, so forming tr(Minv E_k Minv E_l) with explicit basis
            // matrices costs nothing and avoids index bookkeeping mistakes
            for (int kk = 0; kk < nv; ++kk)
                for (int ll = kk; ll < nv; ++ll) {
                    auto [i, j] = basis[kk];
                    auto [a, b] = basis[ll];
                    Eigen::MatrixXd Ek = Eigen::MatrixXd::Zero(n, n);
                    Ek(i, j) = 1;
                    Ek(j, i) = 1;
                    Eigen::MatrixXd El = Eigen::MatrixXd::Zero(n, n);
                    El(a, b) = 1;
                    El(b, a) = 1;
                    H(kk, ll) = t * (Minv * Ek * Minv * El).trace();
                    H(ll, kk) = H(kk, ll);
                }
            Eigen::ArrayXd invslack = 1.0 / (1.0 - c.array());
            H += W.transpose() * (invslack * invslack).matrix().asDiagonal() * W;

            Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
            Eigen::VectorXd dx = ldlt.solve(-g);
            double lambda2 = -g.dot(dx);
            // lambda^2/(2t) bounds the logdet suboptimality of this stage
            if (!(lambda2 > 1e-9 * (1.0 + t))) break;
            double alpha = 1.0;
            bool moved = false;
            double f0 = -t * std::log(to_mat(x).determinant()) -
                        (1.0 - c.array()).log().sum();
            for (int bs = 0; bs < 60 && !moved; ++bs) {
                Eigen::VectorXd cand = x + alpha * dx;
                Eigen::VectorXd ctmp(m);
                if (feasible(cand, ctmp)) {
                    double f1 = -t * std::log(to_mat(cand).determinant()) -
                                (1.0 - ctmp.array()).log().sum();
                    if (f1 <= f0 - 1e-4 * alpha * lambda2) {
                        x = cand;
                        moved = true;
                    }
                }
                alpha *= 0.5;
            }
            if (!moved) break; // numerical stall, accept current center
        }
        if (static_cast<double>(m) / t < 1e-12) break;
        t *= mu;
        if (t > 1e18) break;
    }

    Eigen::MatrixXd M = to_mat(x);
    c = W * x;
    double worst = c.maxCoeff();
    if (worst > 0) M /= worst; // certify every constraint
    return M;
}

JohnEllipsoid john_full_rank(const Zonotope& k) {
    const int n = k.n();
    JohnEllipsoid out;
    out.rank = n;
    const Eigen::MatrixXd& g = k.generators();

    Eigen::MatrixXd moment = g * g.transpose();
    Eigen::MatrixXd T = sym_sqrt(moment).inverse(); // preconditioner
    Eigen::MatrixXd gp = T * g;
    Zonotope kp(n, gp);

    std::vector<Eigen::VectorXd> pts;
    for (const auto& u : facet_normals(kp)) {
        double hv = kp.support(u);
        if (hv > 0) pts.push_back(u / hv);
    }
    Eigen::MatrixXd M = maxdet_inscribed(pts, n);
    Eigen::MatrixXd Tinv = T.inverse();
    out.shape = sym_sqrt(Tinv * M * Tinv);

    // sandwich margins in the original coordinates
    auto normals = facet_normals(k);
    double insc = 0;
    for (const auto& u : normals) {
        double hk = k.support(u);
        double he = (out.shape * u).norm();
        if (hk > 0) insc = std::max(insc, he / hk);
    }
    out.inscribed_margin = insc;

    Eigen::MatrixXd shape_inv = out.shape.inverse();
    double cover = 0;
    const int p = static_cast<int>(g.cols());
    std::vector<Eigen::VectorXd> verts;
    if (n == 1) {
        verts.emplace_back(Eigen::VectorXd::Constant(1, k.support(Eigen::VectorXd::Ones(1))));
    } else if (n == 2) {
        verts = vertices_2d(g);
    } else if (p <= 16) {
        std::uint32_t count = p ? (1u << (p - 1)) : 0;
        for (std::uint32_t s = 0; s < count; ++s) {
            Eigen::Vector3d v = g.col(0);
            for (int i = 1; i < p; ++i)
                v += (((s >> (i - 1)) & 1u) ? -1.0 : 1.0) * Eigen::Vector3d(g.col(i));
            verts.emplace_back(v);
        }
    } else {
        for (const auto& u : direction_bank_3d(g, 4096)) verts.emplace_back(support_vertex(g, u));
    }
    for (const auto& v : verts) cover = std::max(cover, (shape_inv * v).norm());
    out.cover_margin = cover / std::sqrt(static_cast<double>(n));
    return out;
}

} // namespace

JohnEllipsoid john_ellipsoid(const Zonotope& k) {
    const int n = k.n();
    JohnEllipsoid out;
    out.shape = Eigen::MatrixXd::Zero(n, n);

    if (k.generator_count() == 0) {
        out.degenerate = true;
        out.rank = 0;
        out.inscribed_margin = 1;
        out.cover_margin = 1;
        return out;
    }
    if (n == 1) {
        out.rank = 1;
        out.shape(0, 0) = k.support(Eigen::VectorXd::Ones(1));
        out.inscribed_margin = 1;
        out.cover_margin = 1;
        return out;
    }
    int r = k.rank();
    if (r == n) return john_full_rank(k);

    // project to the spanned subspace, solve there, embed back
    out.degenerate = true;
    out.rank = r;
    if (r == 0) {
        out.inscribed_margin = 1;
        out.cover_margin = 1;
        return out;
    }
    Eigen::MatrixXd moment = k.generators() * k.generators().transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(moment);
    // eigenvalues come out ascending: the span is the top r eigenvectors,
    // which keeps this branch consistent with whatever rank() decided
    Eigen::MatrixXd V(n, r);
    for (int i = 0; i < r; ++i) V.col(i) = es.eigenvectors().col(n - r + i);
    Eigen::MatrixXd gsub = V.transpose() * k.generators();
    Zonotope ksub(r, gsub);
    JohnEllipsoid sub = (r == 1)
                            ? [&] {
                                  JohnEllipsoid j;
                                  j.rank = 1;
                                  j.shape = Eigen::MatrixXd::Constant(
                                      1, 1, ksub.support(Eigen::VectorXd::Ones(1)));
                                  j.inscribed_margin = 1;
                                  j.cover_margin = 1;
                                  return j;
                              }()
                            : john_full_rank(ksub);
    out.shape = V * sub.shape * V.transpose();
    out.inscribed_margin = sub.inscribed_margin;
    out.cover_margin = sub.cover_margin * std::sqrt(static_cast<double>(r) / n);
    return out;
}

//==================== vector stopping ====================

VectorStopping vector_stopping(const GridFunction& f, const DyadicCube& q, double threshold) {
    const int n = f.components();
    if (!(threshold > static_cast<double>(n) * n))
        throw std::invalid_argument("stopping threshold must exceed n^2");
    if (q.dim != f.dim()) throw std::invalid_argument("cube dimension mismatch");

    VectorStopping out;
    Zonotope body_q = body_average(f, q);
    if (body_q.generator_count() == 0) return out; // zero on Q, nothing exceeds

    std::vector<Eigen::VectorXd> normals = facet_normals(body_q);
    std::vector<double> offsets;
    offsets.reserve(normals.size());
    for (const auto& u : normals) offsets.push_back(threshold * body_q.support(u));

    std::vector<Eigen::VectorXd> witness;
    const int L = f.finest_depth();

    auto escapes = [&](const DyadicCube& I, Eigen::VectorXd& w) {
        Zonotope body_i = body_average(f, I);
        for (std::size_t t = 0; t < normals.size(); ++t) {
            if (body_i.support(normals[t]) > offsets[t]) {
                w = normals[t];
                return true;
            }
        }
        return false;
    };

    // depth-first: emit maximal escaping cubes, never descend past them
    std::vector<DyadicCube> stack;
    if (q.depth < L)
        for (auto& c : children(q, L)) stack.push_back(c);
    while (!stack.empty()) {
        DyadicCube I = stack.back();
        stack.pop_back();
        Eigen::VectorXd w;
        if (escapes(I, w)) {
            out.cubes.push_back(I);
            witness.push_back(w);
        } else if (I.depth < L) {
            for (auto& c : children(I, L)) stack.push_back(c);
        }
    }
    std::vector<std::size_t> order(out.cubes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return out.cubes[a] < out.cubes[b];
    });
    std::vector<DyadicCube> cubes_sorted;
    std::vector<Eigen::VectorXd> wit_sorted;
    for (auto i : order) {
        cubes_sorted.push_back(out.cubes[i]);
        wit_sorted.push_back(witness[i]);
    }
    out.cubes = std::move(cubes_sorted);
    witness = std::move(wit_sorted);

    // type diagnostic after John normalization of <f>_Q
    Zonotope diag_body = body_q;
    if (body_q.degenerate()) {
        out.degenerate_root = true;
        double scale = 0;
        const auto& g = body_q.generators();
        for (int i = 0; i < g.cols(); ++i) scale = std::max(scale, g.col(i).norm());
        Eigen::MatrixXd aug(n, g.cols() + n);
        aug.leftCols(g.cols()) = g;
        aug.rightCols(n) = (1e-10 * scale) * Eigen::MatrixXd::Identity(n, n);
        diag_body = Zonotope(n, aug);
    }
    JohnEllipsoid j = john_ellipsoid(diag_body);
    Eigen::MatrixXd Ainv;
    bool have_norm = !j.degenerate && j.shape.determinant() > 0;
    if (have_norm) Ainv = j.shape.inverse();
    out.types.assign(out.cubes.size(), -1);
    if (have_norm) {
        for (std::size_t i = 0; i < out.cubes.size(); ++i) {
            // escape direction u gives the support vertex of the normalized
            // body along shape*u, which lies outside threshold * unit ball
            Zonotope body_i = body_average(f, out.cubes[i]);
            Eigen::MatrixXd gn = Ainv * body_i.generators();
            Eigen::VectorXd u = j.shape * witness[i];
            Eigen::VectorXd F = Eigen::VectorXd::Zero(n);
            for (int c = 0; c < gn.cols(); ++c) {
                double s = gn.col(c).dot(u);
                F += (s >= 0 ? 1.0 : -1.0) * gn.col(c);
            }
            int best = 0;
            for (int jx = 1; jx < n; ++jx)
                if (std::abs(F[jx]) > std::abs(F[best])) best = jx;
            out.types[i] = best;
        }
    }
    return out;
}

} // namespace dyadom
