#include "dyadom/shift.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dyadom/common.hpp"

namespace dyadom {

DyadicShift::DyadicShift(int dim, int finest_depth, int m1, int m2,
                         std::vector<ShiftKernel> kernels, A2Certificate certificate)
    : dim_(dim), finest_depth_(finest_depth), m1_(m1), m2_(m2), kernels_(std::move(kernels)),
      certificate_(std::move(certificate)) {
    validate_grid_shape(dim, finest_depth);
    if (m1 < 0 || m2 < 0) throw std::invalid_argument("complexity offsets must be nonnegative");
    const int deepest = finest_depth - std::max(m1, m2);
    if (deepest < 0) throw std::invalid_argument("complexity exceeds the grid depth");
    for (const auto& k : kernels_) {
        if (k.cube.dim != dim) throw std::invalid_argument("kernel cube dimension mismatch");
        if (k.cube.depth < 0 || k.cube.depth > deepest)
            throw std::invalid_argument("kernel cube too deep for its block");
        if (k.block.rows() != rows_per_block() || k.block.cols() != cols_per_block())
            throw std::invalid_argument("kernel block has wrong shape");
    }
    std::sort(kernels_.begin(), kernels_.end(),
              [](const ShiftKernel& a, const ShiftKernel& b) { return a.cube < b.cube; });
    for (std::size_t i = 1; i < kernels_.size(); ++i)
        if (kernels_[i].cube == kernels_[i - 1].cube)
            throw std::invalid_argument("duplicate kernel cube");
}

const ShiftKernel* DyadicShift::kernel_for(const DyadicCube& q) const {
    auto it = std::lower_bound(kernels_.begin(), kernels_.end(), q,
                               [](const ShiftKernel& k, const DyadicCube& c) { return k.cube < c; });
    if (it != kernels_.end() && it->cube == q) return &*it;
    return nullptr;
}

double DyadicShift::a1_excess() const {
    double worst = 0;
    for (const auto& k : kernels_)
        worst = std::max(worst, k.block.cwiseAbs().maxCoeff() * k.cube.measure());
    return worst;
}

DyadicCube kernel_subcube(const DyadicCube& cube, int m, std::uint64_t off) {
    return cube_from_morton(cube.dim, cube.depth + m,
                            (cube.morton() << (cube.dim * m)) | off);
}

namespace {

void check_pair(const GridFunction& f1, const GridFunction& f2) {
    if (f1.dim() != f2.dim() || f1.finest_depth() != f2.finest_depth() ||
        f1.components() != f2.components())
        throw std::invalid_argument("form arguments live on different grids");
}

} // namespace

double kernel_form(const ShiftKernel& k, int m1, int m2, const GridFunction& f1,
                   const GridFunction& f2) {
    return kernel_form_clipped(k, m1, m2, f1, k.cube, f2, k.cube);
}

double kernel_form_clipped(const ShiftKernel& k, int m1, int m2, const GridFunction& f1,
                           const DyadicCube& clip1, const GridFunction& f2,
                           const DyadicCube& clip2) {
    check_pair(f1, f2);
    const int d = k.cube.dim;
    const int n = f1.components();
    const int rows = 1 << (d * m1);
    const int cols = 1 << (d * m2);
    Eigen::MatrixXd in(cols, n), out(rows, n);
    for (int p2 = 0; p2 < cols; ++p2) {
        DyadicCube sub = kernel_subcube(k.cube, m2, static_cast<std::uint64_t>(p2));
        for (int j = 0; j < n; ++j) in(p2, j) = f1.integral_clipped(sub, clip1, j);
    }
    for (int p1 = 0; p1 < rows; ++p1) {
        DyadicCube sub = kernel_subcube(k.cube, m1, static_cast<std::uint64_t>(p1));
        for (int j = 0; j < n; ++j) out(p1, j) = f2.integral_clipped(sub, clip2, j);
    }
    return (out.cwiseProduct(k.block * in)).sum();
}

double shift_form(const DyadicShift& s, const GridFunction& f1, const GridFunction& f2) {
    double total = 0;
    for (const auto& k : s.kernels()) total += kernel_form(k, s.m1(), s.m2(), f1, f2);
    return total;
}

double shift_form_below(const DyadicShift& s, const DyadicCube& top, const GridFunction& f1,
                        const GridFunction& f2) {
    double total = 0;
    for (const auto& k : s.kernels())
        if (top.contains(k.cube)) total += kernel_form(k, s.m1(), s.m2(), f1, f2);
    return total;
}

double shift_form_clipped(const DyadicShift& s, const GridFunction& f1, const DyadicCube& clip1,
                          const GridFunction& f2, const DyadicCube& clip2) {
    double total = 0;
    for (const auto& k : s.kernels())
        total += kernel_form_clipped(k, s.m1(), s.m2(), f1, clip1, f2, clip2);
    return total;
}

double shift_form_below_clipped(const DyadicShift& s, const DyadicCube& top,
                                const GridFunction& f1, const DyadicCube& clip1,
                                const GridFunction& f2, const DyadicCube& clip2) {
    double total = 0;
    for (const auto& k : s.kernels())
        if (top.contains(k.cube))
            total += kernel_form_clipped(k, s.m1(), s.m2(), f1, clip1, f2, clip2);
    return total;
}

//==================== operator norm ====================

namespace {

// y += (sum of selected kernels applied to x), both as finest-cell vectors
void apply_kernels(const DyadicShift& s, const std::vector<const ShiftKernel*>& sel,
                   bool transpose, const Eigen::VectorXd& x, Eigen::VectorXd& y) {
    const int L = s.finest_depth();
    const double cm = std::ldexp(1.0, -s.dim() * L);
    y.setZero();
    const int m_in = transpose ? s.m1() : s.m2();
    const int m_out = transpose ? s.m2() : s.m1();
    const int cols = 1 << (s.dim() * m_in);
    const int rows = 1 << (s.dim() * m_out);
    Eigen::VectorXd in(cols), out(rows);
    for (const ShiftKernel* k : sel) {
        for (int p = 0; p < cols; ++p) {
            DyadicCube sub = kernel_subcube(k->cube, m_in, static_cast<std::uint64_t>(p));
            double acc = 0;
            for (std::uint64_t c = sub.cell_begin(L); c < sub.cell_end(L); ++c) acc += x[c];
            in[p] = acc * cm;
        }
        if (transpose)
            out = k->block.transpose() * in;
        else
            out = k->block * in;
        for (int p = 0; p < rows; ++p) {
            DyadicCube sub = kernel_subcube(k->cube, m_out, static_cast<std::uint64_t>(p));
            for (std::uint64_t c = sub.cell_begin(L); c < sub.cell_end(L); ++c) y[c] += out[p];
        }
    }
}

} // namespace

void apply_shift(const DyadicShift& s, bool transpose, const Eigen::VectorXd& x,
                 Eigen::VectorXd& y) {
    const std::uint64_t cells = 1ull << (s.dim() * s.finest_depth());
    if (x.size() != static_cast<Eigen::Index>(cells))
        throw std::invalid_argument("vector length does not match the finest grid");
    std::vector<const ShiftKernel*> sel;
    for (const auto& k : s.kernels()) sel.push_back(&k);
    y.resize(x.size());
    apply_kernels(s, sel, transpose, x, y);
}

NormResult subshift_norm(const DyadicShift& s, const std::vector<DyadicCube>& subset) {
    std::vector<const ShiftKernel*> sel;
    for (const auto& q : subset) {
        const ShiftKernel* k = s.kernel_for(q);
        if (!k) throw std::invalid_argument("subset cube has no kernel");
        sel.push_back(k);
    }
    NormResult res;
    if (sel.empty()) {
        res.converged = true;
        return res;
    }
    const std::uint64_t cells = 1ull << (s.dim() * s.finest_depth());

    for (std::size_t i = 1; i < sel.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (sel[i] == sel[j]) throw std::invalid_argument("duplicate cube in subset");

    std::uint64_t seed = 0x5eed0000u + sel.size();
    Eigen::VectorXd x(static_cast<Eigen::Index>(cells));
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x[i] = 2.0 * (static_cast<double>(splitmix64(seed) >> 11) * 0x1p-53) - 1.0;
    x.normalize();
    Eigen::VectorXd ax(x.size()), atax(x.size());
    double sigma = 0;
    for (int it = 1; it <= 20000; ++it) {
        apply_kernels(s, sel, false, x, ax);
        double next = ax.norm();
        res.iterations = it;
        if (next == 0.0) {
            res.value = 0;
            res.converged = true;
            return res;
        }
        apply_kernels(s, sel, true, ax, atax);
        double nz = atax.norm();
        if (std::abs(next - sigma) <= 1e-11 * next && it > 3) {
            res.value = next;
            res.converged = true;
            return res;
        }
        sigma = next;
        if (nz == 0.0) break;
        x = atax / nz;
    }

    // dense fallback: assemble the matrix and take the top singular value
    if (cells <= 2048) {
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cells),
                                                  static_cast<Eigen::Index>(cells));
        Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cells));
        Eigen::VectorXd col(static_cast<Eigen::Index>(cells));
        for (std::uint64_t c = 0; c < cells; ++c) {
            e[c] = 1.0;
            apply_kernels(s, sel, false, e, col);
            A.col(c) = col;
            e[c] = 0.0;
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A.transpose() * A);
        res.value = std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
        res.converged = true;
        return res;
    }
    res.value = sigma;
    res.converged = false;
    return res;
}

NormResult shift_norm(const DyadicShift& s) {
    std::vector<DyadicCube> all;
    for (const auto& k : s.kernels()) all.push_back(k.cube);
    return subshift_norm(s, all);
}

double a2_sup_exact(const DyadicShift& s, int max_kernels) {
    const int n = static_cast<int>(s.kernels().size());
    if (n > max_kernels)
        throw std::invalid_argument("exact subcollection sup limited to small kernel counts");
    double sup = 0;
    for (std::uint64_t mask = 1; mask < (1ull << n); ++mask) {
        std::vector<DyadicCube> subset;
        for (int i = 0; i < n; ++i)
            if ((mask >> i) & 1ull) subset.push_back(s.kernels()[i].cube);
        sup = std::max(sup, subshift_norm(s, subset).value);
    }
    return sup;
}

//==================== normalization ====================

std::string to_string(A2Strategy s) {
    switch (s) {
        case A2Strategy::ExactSmall: return "exact-small";
        case A2Strategy::ScaleCount: return "scale-count";
        case A2Strategy::HaarBessel: return "haar-bessel";
    }
    throw std::logic_error("unknown strategy");
}

A2Strategy a2_strategy_from_string(const std::string& name) {
    if (name == "exact-small") return A2Strategy::ExactSmall;
    if (name == "scale-count") return A2Strategy::ScaleCount;
    if (name == "haar-bessel") return A2Strategy::HaarBessel;
    throw std::invalid_argument("unknown normalization strategy: " + name);
}

namespace {

// largest eigenvalue of the Gram matrix of the weighted piecewise-constant
// system {w_i * u_i}, u_i living on the depth cube.depth+m subcubes of its
// kernel cube. Inner products use nesting: disjoint cubes contribute zero.
double gram_lambda_max(const std::vector<std::pair<DyadicCube, Eigen::VectorXd>>& sys, int m) {
    const int t = static_cast<int>(sys.size());
    if (t == 0) return 0;
    Eigen::MatrixXd G(t, t);
    for (int a = 0; a < t; ++a)
        for (int b = a; b < t; ++b) {
            const auto& [qa, va] = sys[a];
            const auto& [qb, vb] = sys[b];
            double ip = 0;
            if (qa.contains(qb) || qb.contains(qa)) {
                // overlap of piece p of a with piece r of b is the measure of
                // the deeper piece when nested
                for (int p = 0; p < va.size(); ++p) {
                    DyadicCube pa = kernel_subcube(qa, m, static_cast<std::uint64_t>(p));
                    for (int r = 0; r < vb.size(); ++r) {
                        DyadicCube pb = kernel_subcube(qb, m, static_cast<std::uint64_t>(r));
                        if (pa.contains(pb))
                            ip += va[p] * vb[r] * pb.measure();
                        else if (pb.contains(pa) && !(pa == pb))
                            ip += va[p] * vb[r] * pa.measure();
                    }
                }
            }
            G(a, b) = ip;
            G(b, a) = ip;
        }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    return std::max(0.0, es.eigenvalues().maxCoeff());
}

} // namespace

DyadicShift normalize_a2(const DyadicShift& s, A2Strategy strategy) {
    double raw = 0; // certified bound before dividing
    switch (strategy) {
        case A2Strategy::ExactSmall: {
            raw = a2_sup_exact(s, 12);
            break;
        }
        case A2Strategy::ScaleCount: {
            std::set<int> depths;
            for (const auto& k : s.kernels()) depths.insert(k.cube.depth);
            raw = static_cast<double>(depths.size());
            break;
        }
        case A2Strategy::HaarBessel: {
            std::vector<std::pair<DyadicCube, Eigen::VectorXd>> out_sys, in_sys;
            std::size_t total = 0;
            for (const auto& k : s.kernels()) {
                Eigen::JacobiSVD<Eigen::MatrixXd> svd(
                    k.block, Eigen::ComputeThinU | Eigen::ComputeThinV);
                double smax = svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
                for (int r = 0; r < svd.singularValues().size(); ++r) {
                    double sig = svd.singularValues()[r];
                    if (sig <= 1e-14 * smax || sig == 0.0) continue;
                    double w = std::sqrt(sig);
                    out_sys.emplace_back(k.cube, w * svd.matrixU().col(r));
                    in_sys.emplace_back(k.cube, w * svd.matrixV().col(r));
                    ++total;
                }
            }
            if (total > 3000)
                throw std::invalid_argument("bessel system too large for the gram bound");
            double b1 = gram_lambda_max(out_sys, s.m1());
            double b2 = gram_lambda_max(in_sys, s.m2());
            raw = std::sqrt(b1 * b2);
            break;
        }
    }
    double factor = std::max(1.0, raw);
    std::vector<ShiftKernel> kernels = s.kernels();
    if (factor > 1.0)
        for (auto& k : kernels) k.block /= factor;
    A2Certificate cert{to_string(strategy), factor, raw / factor};
    return DyadicShift(s.dim(), s.finest_depth(), s.m1(), s.m2(), std::move(kernels),
                       std::move(cert));
}

//==================== generation ====================

DyadicShift random_shift(int dim, int finest_depth, int m1, int m2, double density,
                         bool cancellative, std::uint64_t seed) {
    validate_grid_shape(dim, finest_depth);
    if (!(density > 0.0) || density > 1.0)
        throw std::invalid_argument("density must lie in (0, 1]");
    if (cancellative && (m1 < 1 || m2 < 1))
        throw std::invalid_argument("cancellative blocks need both offsets positive");
    const int deepest = finest_depth - std::max(m1, m2);
    if (deepest < 0) throw std::invalid_argument("complexity exceeds the grid depth");

    std::uint64_t state = seed;
    auto u01 = [&] { return static_cast<double>(splitmix64(state) >> 11) * 0x1p-53; };
    const int rows = 1 << (dim * m1);
    const int cols = 1 << (dim * m2);

    std::vector<ShiftKernel> kernels;
    for (int depth = 0; depth <= deepest; ++depth) {
        const std::uint64_t count = 1ull << (dim * depth);
        for (std::uint64_t mor = 0; mor < count; ++mor) {
            if (u01() >= density) continue;
            ShiftKernel k;
            k.cube = cube_from_morton(dim, depth, mor);
            const double inv_measure = 1.0 / k.cube.measure();
            k.block.resize(rows, cols);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) k.block(r, c) = (2.0 * u01() - 1.0) * inv_measure;
            if (cancellative) {
                Eigen::VectorXd rm = k.block.rowwise().mean();
                Eigen::RowVectorXd cm = k.block.colwise().mean();
                double tm = k.block.mean();
                k.block = (k.block.colwise() - rm).rowwise() - cm;
                k.block.array() += tm;
                double mx = k.block.cwiseAbs().maxCoeff() * k.cube.measure();
                if (mx > 0) k.block *= (1.0 - 0x1p-50) / mx; // back to the size bound
            }
            kernels.push_back(std::move(k));
        }
    }
    if (kernels.empty()) {
        // degenerate draw; fall back to a single root kernel
        ShiftKernel k;
        k.cube = DyadicCube::root(dim);
        k.block = Eigen::MatrixXd::Zero(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) k.block(r, c) = 2.0 * u01() - 1.0;
        if (cancellative) {
            Eigen::VectorXd rm = k.block.rowwise().mean();
            Eigen::RowVectorXd cm = k.block.colwise().mean();
            double tm = k.block.mean();
            k.block = (k.block.colwise() - rm).rowwise() - cm;
            k.block.array() += tm;
            double mx = k.block.cwiseAbs().maxCoeff();
            if (mx > 0) k.block *= (1.0 - 0x1p-50) / mx;
        }
        kernels.push_back(std::move(k));
    }
    return DyadicShift(dim, finest_depth, m1, m2, std::move(kernels));
}

//==================== serialization ====================

void save_shift_csv(const DyadicShift& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << s.dim() << ',' << s.finest_depth() << ',' << s.m1() << ',' << s.m2() << '\n';
    const auto& c = s.certificate();
    out << c.strategy << ',' << format_double(c.factor) << ',' << format_double(c.bound) << '\n';
    for (const auto& k : s.kernels()) {
        out << k.cube.depth << ',' << k.cube.morton();
        for (int r = 0; r < k.block.rows(); ++r)
            for (int cc = 0; cc < k.block.cols(); ++cc) out << ',' << format_double(k.block(r, cc));
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

DyadicShift load_shift_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    auto split = [](const std::string& l) {
        std::vector<std::string> parts;
        std::stringstream ss(l);
        std::string tok;
        while (std::getline(ss, tok, ',')) parts.push_back(tok);
        return parts;
    };
    if (!std::getline(in, line)) throw std::runtime_error("missing shift header: " + path);
    auto head = split(line);
    if (head.size() != 4) throw std::runtime_error("bad shift header: " + path);
    int dim = std::stoi(head[0]), L = std::stoi(head[1]);
    int m1 = std::stoi(head[2]), m2 = std::stoi(head[3]);
    if (!std::getline(in, line)) throw std::runtime_error("missing certificate line: " + path);
    auto certp = split(line);
    if (certp.size() != 3) throw std::runtime_error("bad certificate line: " + path);
    A2Certificate cert{certp[0], std::stod(certp[1]), std::stod(certp[2])};

    const int rows = 1 << (dim * m1);
    const int cols = 1 << (dim * m2);
    std::vector<ShiftKernel> kernels;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto parts = split(line);
        if (parts.size() != 2 + static_cast<std::size_t>(rows) * cols)
            throw std::runtime_error("bad kernel row: " + path);
        ShiftKernel k;
        k.cube = cube_from_morton(dim, std::stoi(parts[0]), std::stoull(parts[1]));
        k.block.resize(rows, cols);
        std::size_t idx = 2;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) k.block(r, c) = std::stod(parts[idx++]);
        kernels.push_back(std::move(k));
    }
    return DyadicShift(dim, L, m1, m2, std::move(kernels), std::move(cert));
}

} // namespace dyadom
