#include "dyadom/dyadic.hpp"
#include "dyadom/common.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace dyadom {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
    std::uint64_t s = base;
    std::uint64_t a = splitmix64(s);
    s = a ^ (stream * 0x9e3779b97f4a7c15ull + 0x243f6a8885a308d3ull);
    std::uint64_t b = splitmix64(s);
    s = b ^ (index * 0xd1342543de82ef95ull + 0x452821e638d01377ull);
    return splitmix64(s);
}

std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return std::string(buf);
}

void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&]() {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                fn(i);
            }
        });
    }
    for (auto& th : pool) th.join();
}

//==================== cube geometry ====================

int max_finest_depth(int dim) { return dim == 1 ? 12 : 6; }

void validate_grid_shape(int dim, int finest_depth) {
    if (dim != 1 && dim != 2)
        throw std::invalid_argument("dimension must be 1 or 2");
    if (finest_depth < 0 || finest_depth > max_finest_depth(dim))
        throw std::invalid_argument("finest depth out of range for dimension");
}

DyadicCube DyadicCube::root(int d) {
    if (d != 1 && d != 2) throw std::invalid_argument("dimension must be 1 or 2");
    DyadicCube q;
    q.dim = d;
    return q;
}

double DyadicCube::side_length() const { return std::ldexp(1.0, -depth); }
double DyadicCube::measure() const { return std::ldexp(1.0, -dim * depth); }

DyadicCube DyadicCube::parent() const {
    if (depth == 0) throw std::invalid_argument("root cube has no parent");
    DyadicCube p = *this;
    p.depth = depth - 1;
    for (int a = 0; a < dim; ++a) p.index[a] = index[a] >> 1;
    return p;
}

DyadicCube DyadicCube::child(unsigned k) const {
    if (k >= child_count()) throw std::invalid_argument("child selector out of range");
    DyadicCube c = *this;
    c.depth = depth + 1;
    for (int a = 0; a < dim; ++a) c.index[a] = (index[a] << 1) | ((k >> a) & 1u);
    return c;
}

DyadicCube DyadicCube::ancestor_at(int d) const {
    if (d < 0 || d > depth) throw std::invalid_argument("ancestor depth out of range");
    DyadicCube a = *this;
    a.depth = d;
    for (int ax = 0; ax < dim; ++ax) a.index[ax] = index[ax] >> (depth - d);
    return a;
}

bool DyadicCube::contains(const DyadicCube& r) const {
    if (r.dim != dim || r.depth < depth) return false;
    for (int a = 0; a < dim; ++a)
        if ((r.index[a] >> (r.depth - depth)) != index[a]) return false;
    return true;
}

namespace {
std::uint64_t interleave2(std::uint64_t x, std::uint64_t y) {
    // spread 32 -> 64 bits
    auto spread = [](std::uint64_t v) {
        v &= 0xffffffffull;
        v = (v | (v << 16)) & 0x0000ffff0000ffffull;
        v = (v | (v << 8)) & 0x00ff00ff00ff00ffull;
        v = (v | (v << 4)) & 0x0f0f0f0f0f0f0f0full;
        v = (v | (v << 2)) & 0x3333333333333333ull;
        v = (v | (v << 1)) & 0x5555555555555555ull;
        return v;
    };
    return spread(x) | (spread(y) << 1);
}
std::uint64_t deinterleave_axis(std::uint64_t m) {
    m &= 0x5555555555555555ull;
    m = (m | (m >> 1)) & 0x3333333333333333ull;
    m = (m | (m >> 2)) & 0x0f0f0f0f0f0f0f0full;
    m = (m | (m >> 4)) & 0x00ff00ff00ff00ffull;
    m = (m | (m >> 8)) & 0x0000ffff0000ffffull;
    m = (m | (m >> 16)) & 0x00000000ffffffffull;
    return m;
}
} // namespace

std::uint64_t DyadicCube::morton() const {
    if (dim == 1) return index[0];
    return interleave2(index[0], index[1]);
}

std::uint64_t DyadicCube::cell_begin(int finest_depth) const {
    return morton() << (dim * (finest_depth - depth));
}
std::uint64_t DyadicCube::cell_end(int finest_depth) const {
    return (morton() + 1) << (dim * (finest_depth - depth));
}

bool DyadicCube::operator<(const DyadicCube& o) const {
    if (depth != o.depth) return depth < o.depth;
    return morton() < o.morton();
}

std::ostream& operator<<(std::ostream& os, const DyadicCube& q) {
    os << "Q(depth=" << q.depth << ", idx=" << q.index[0];
    if (q.dim == 2) os << "," << q.index[1];
    return os << ")";
}

DyadicCube cube_from_morton(int dim, int depth, std::uint64_t morton) {
    DyadicCube q;
    q.dim = dim;
    q.depth = depth;
    if (dim == 1) {
        q.index[0] = static_cast<std::uint32_t>(morton);
    } else {
        q.index[0] = static_cast<std::uint32_t>(deinterleave_axis(morton));
        q.index[1] = static_cast<std::uint32_t>(deinterleave_axis(morton >> 1));
    }
    return q;
}

std::vector<DyadicCube> children(const DyadicCube& q, int finest_depth) {
    if (q.depth >= finest_depth)
        throw std::invalid_argument("cube already at the finest depth, no children in the lattice");
    std::vector<DyadicCube> out;
    out.reserve(q.child_count());
    for (unsigned k = 0; k < q.child_count(); ++k) out.push_back(q.child(k));
    return out;
}

//==================== grid functions ====================

GridFunction::GridFunction(int dim, int comps, int finest_depth, std::vector<double> cell_values)
    : dim_(dim), comps_(comps), finest_(finest_depth) {
    validate_grid_shape(dim, finest_depth);
    if (comps < 1 || comps > 3) throw std::invalid_argument("component count must be 1..3");
    cells_ = 1ull << (dim_ * finest_);
    cell_measure_ = std::ldexp(1.0, -dim_ * finest_);
    if (cell_values.size() != cells_ * static_cast<std::uint64_t>(comps_))
        throw std::invalid_argument("cell value array has wrong size");
    values_ = std::move(cell_values);

    prefix_.assign((cells_ + 1) * comps_, 0.0);
    for (std::uint64_t c = 0; c < cells_; ++c)
        for (int j = 0; j < comps_; ++j)
            prefix_[(c + 1) * comps_ + j] =
                prefix_[c * comps_ + j] + values_[c * comps_ + j] * cell_measure_;
    if (comps_ == 1) {
        abs_prefix_.assign(cells_ + 1, 0.0);
        for (std::uint64_t c = 0; c < cells_; ++c)
            abs_prefix_[c + 1] = abs_prefix_[c] + std::abs(values_[c]) * cell_measure_;
    }
}

namespace {
void check_cube(const GridFunction& f, const DyadicCube& q) {
    if (q.dim != f.dim()) throw std::invalid_argument("cube dimension mismatch");
    if (q.depth > f.finest_depth()) throw std::invalid_argument("cube deeper than the grid");
}
// Intersection of two dyadic cubes as a cell range; empty unless nested.
struct CellRange {
    std::uint64_t begin = 0, end = 0;
};
CellRange intersect_range(const DyadicCube& a, const DyadicCube& b, int L) {
    std::uint64_t a0 = a.cell_begin(L), a1 = a.cell_end(L);
    std::uint64_t b0 = b.cell_begin(L), b1 = b.cell_end(L);
    CellRange r;
    r.begin = std::max(a0, b0);
    r.end = std::min(a1, b1);
    if (r.end < r.begin) r.end = r.begin;
    return r;
}
} // namespace

double GridFunction::integral(const DyadicCube& q, int j) const {
    check_cube(*this, q);
    std::uint64_t b = q.cell_begin(finest_), e = q.cell_end(finest_);
    return prefix_[e * comps_ + j] - prefix_[b * comps_ + j];
}

double GridFunction::integral_clipped(const DyadicCube& q, const DyadicCube& clip, int j) const {
    check_cube(*this, q);
    check_cube(*this, clip);
    CellRange r = intersect_range(q, clip, finest_);
    return prefix_[r.end * comps_ + j] - prefix_[r.begin * comps_ + j];
}

Eigen::VectorXd GridFunction::integral_vec(const DyadicCube& q) const {
    Eigen::VectorXd v(comps_);
    for (int j = 0; j < comps_; ++j) v[j] = integral(q, j);
    return v;
}

double GridFunction::abs_integral(const DyadicCube& q) const {
    check_cube(*this, q);
    if (comps_ != 1) throw std::invalid_argument("abs_integral requires a scalar function");
    std::uint64_t b = q.cell_begin(finest_), e = q.cell_end(finest_);
    return abs_prefix_[e] - abs_prefix_[b];
}

double GridFunction::abs_integral_clipped(const DyadicCube& q, const DyadicCube& clip) const {
    check_cube(*this, q);
    check_cube(*this, clip);
    if (comps_ != 1) throw std::invalid_argument("abs_integral requires a scalar function");
    CellRange r = intersect_range(q, clip, finest_);
    return abs_prefix_[r.end] - abs_prefix_[r.begin];
}

double scalar_average(const GridFunction& f, const DyadicCube& q) {
    return f.abs_integral(q) / q.measure();
}

double scalar_average_clipped(const GridFunction& f, const DyadicCube& q, const DyadicCube& clip) {
    return f.abs_integral_clipped(q, clip) / q.measure();
}

double signed_pair_integral(const GridFunction& f, const DyadicCube& q,
                            const GridFunction& g, const DyadicCube& r) {
    if (f.components() != g.components())
        throw std::invalid_argument("component count mismatch");
    double s = 0;
    for (int j = 0; j < f.components(); ++j) s += f.integral(q, j) * g.integral(r, j);
    return s;
}

GridNorms norms(const GridFunction& f) {
    GridNorms n;
    double l2sq = 0;
    for (std::uint64_t c = 0; c < f.cell_count(); ++c) {
        double m2 = 0;
        for (int j = 0; j < f.components(); ++j) {
            double v = f.value(c, j);
            m2 += v * v;
        }
        double mag = std::sqrt(m2);
        n.l1 += mag * f.cell_measure();
        l2sq += m2 * f.cell_measure();
        n.linf = std::max(n.linf, mag);
    }
    n.l2 = std::sqrt(l2sq);
    return n;
}

double inner_product(const GridFunction& f, const GridFunction& g) {
    if (f.dim() != g.dim() || f.finest_depth() != g.finest_depth() ||
        f.components() != g.components())
        throw std::invalid_argument("grid shape mismatch");
    double s = 0;
    for (std::uint64_t c = 0; c < f.cell_count(); ++c) {
        double dot = 0;
        for (int j = 0; j < f.components(); ++j) dot += f.value(c, j) * g.value(c, j);
        s += dot * f.cell_measure();
    }
    return s;
}

void save_grid_csv(const GridFunction& f, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << f.dim() << "," << f.components() << "," << f.finest_depth() << "\n";
    for (std::uint64_t c = 0; c < f.cell_count(); ++c) {
        for (int j = 0; j < f.components(); ++j) {
            if (j) os << ",";
            os << format_double(f.value(c, j));
        }
        os << "\n";
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

GridFunction load_grid_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("empty grid file: " + path);
    int d = 0, n = 0, L = 0;
    char c1 = 0, c2 = 0;
    std::istringstream hs(line);
    if (!(hs >> d >> c1 >> n >> c2 >> L) || c1 != ',' || c2 != ',')
        throw std::runtime_error("bad grid header, expected d,n,L: " + path);
    validate_grid_shape(d, L);
    std::uint64_t cells = 1ull << (d * L);
    std::vector<double> vals;
    vals.reserve(cells * n);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tok;
        int got = 0;
        while (std::getline(ls, tok, ',')) {
            vals.push_back(std::stod(tok));
            ++got;
        }
        if (got != n) throw std::runtime_error("bad row width in " + path);
    }
    if (vals.size() != cells * static_cast<std::uint64_t>(n))
        throw std::runtime_error("cell count mismatch in " + path);
    return GridFunction(d, n, L, std::move(vals));
}

} // namespace dyadom
