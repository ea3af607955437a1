#include "dyadom/sparse.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dyadom/common.hpp"
#include "dyadom/convex.hpp"

namespace dyadom {

std::vector<DyadicCube> stopping_children(const std::vector<const GridFunction*>& fs,
                                          const DyadicCube& q, double lambda) {
    if (!(lambda > 1.0)) throw std::invalid_argument("stopping threshold must exceed 1");
    if (fs.empty()) throw std::invalid_argument("no functions given");
    const int L = fs[0]->finest_depth();
    for (const GridFunction* f : fs) {
        if (f->dim() != q.dim || f->finest_depth() != L)
            throw std::invalid_argument("functions live on different grids");
        if (f->components() != 1)
            throw std::invalid_argument("stopping scans take scalar functions");
    }
    std::vector<double> bar;
    bar.reserve(fs.size());
    for (const GridFunction* f : fs) bar.push_back(lambda * scalar_average(*f, q));

    std::vector<DyadicCube> out;
    std::vector<DyadicCube> stack;
    if (q.depth < L)
        for (auto& c : children(q, L)) stack.push_back(c);
    while (!stack.empty()) {
        DyadicCube I = stack.back();
        stack.pop_back();
        bool trig = false;
        for (std::size_t j = 0; j < fs.size() && !trig; ++j)
            if (scalar_average(*fs[j], I) > bar[j]) trig = true;
        if (trig) {
            out.push_back(I);
        } else if (I.depth < L) {
            for (auto& c : children(I, L)) stack.push_back(c);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

double packing_ratio(const std::vector<DyadicCube>& cubes, const DyadicCube& q,
                     int finest_depth) {
    std::uint64_t covered = 0;
    for (const auto& c : cubes) covered += c.cell_end(finest_depth) - c.cell_begin(finest_depth);
    std::uint64_t total = q.cell_end(finest_depth) - q.cell_begin(finest_depth);
    return static_cast<double>(covered) / static_cast<double>(total);
}

namespace {

// canonical sort plus parent/kid/layer wiring for a laminar cube list; the
// cubes must already be pairwise distinct
SparseCollection wire_collection(int dim, int finest_depth, double lambda,
                                 std::vector<DyadicCube> cubes) {
    std::sort(cubes.begin(), cubes.end());
    for (std::size_t i = 1; i < cubes.size(); ++i)
        if (cubes[i] == cubes[i - 1]) throw std::invalid_argument("duplicate cube in collection");

    SparseCollection s;
    s.dim = dim;
    s.finest_depth = finest_depth;
    s.lambda = lambda;
    std::map<std::pair<int, std::uint64_t>, int> index;
    for (std::size_t i = 0; i < cubes.size(); ++i)
        index[{cubes[i].depth, cubes[i].morton()}] = static_cast<int>(i);
    s.nodes.resize(cubes.size());
    for (std::size_t i = 0; i < cubes.size(); ++i) {
        SparseNode& n = s.nodes[i];
        n.cube = cubes[i];
        n.parent = -1;
        DyadicCube walk = cubes[i];
        while (walk.depth > 0) {
            walk = walk.parent();
            auto it = index.find({walk.depth, walk.morton()});
            if (it != index.end()) {
                n.parent = it->second;
                break;
            }
        }
        // sorted by depth, so the parent index is already final
        if (n.parent >= 0) {
            n.layer = s.nodes[n.parent].layer + 1;
            s.nodes[n.parent].kids.push_back(static_cast<int>(i));
        } else {
            n.layer = 0;
        }
    }
    return s;
}

} // namespace

SparseCollection build_sparse_collection(const GridFunction& f1, const GridFunction& f2,
                                         const DyadicCube& root, double lambda) {
    if (f1.dim() != root.dim || f2.dim() != root.dim ||
        f1.finest_depth() != f2.finest_depth())
        throw std::invalid_argument("grid mismatch");
    std::vector<const GridFunction*> fs{&f1, &f2};
    std::vector<DyadicCube> all{root};
    std::vector<DyadicCube> frontier{root};
    while (!frontier.empty()) {
        std::vector<DyadicCube> next;
        for (const auto& q : frontier) {
            auto st = stopping_children(fs, q, lambda);
            next.insert(next.end(), st.begin(), st.end());
        }
        all.insert(all.end(), next.begin(), next.end());
        frontier = std::move(next);
    }
    return wire_collection(root.dim, f1.finest_depth(), lambda, std::move(all));
}

SparseCollection collection_from_cubes(int dim, int finest_depth, std::vector<DyadicCube> cubes) {
    validate_grid_shape(dim, finest_depth);
    for (const auto& c : cubes) {
        if (c.dim != dim) throw std::invalid_argument("cube dimension mismatch");
        if (c.depth > finest_depth) throw std::invalid_argument("cube deeper than the grid");
    }
    return wire_collection(dim, finest_depth, 0.0, std::move(cubes));
}

SparseVerification verify_sparse(const SparseCollection& s) {
    SparseVerification v;
    if (s.nodes.empty()) {
        v.witnesses_disjoint = true;
        v.eta_greedy = 1;
        v.eta_feasible = 1;
        return v;
    }
    const int L = s.finest_depth;

    // greedy witnesses: E_Q = Q minus direct kids, as cell intervals
    struct Piece {
        std::uint64_t begin, end;
    };
    std::vector<Piece> pieces;
    v.eta_greedy = 1.0;
    for (const auto& n : s.nodes) {
        std::uint64_t qb = n.cube.cell_begin(L), qe = n.cube.cell_end(L);
        std::vector<Piece> holes;
        for (int k : n.kids)
            holes.push_back({s.nodes[k].cube.cell_begin(L), s.nodes[k].cube.cell_end(L)});
        std::sort(holes.begin(), holes.end(),
                  [](const Piece& a, const Piece& b) { return a.begin < b.begin; });
        std::uint64_t cursor = qb, kept = 0;
        for (const auto& h : holes) {
            if (h.begin > cursor) {
                pieces.push_back({cursor, h.begin});
                kept += h.begin - cursor;
            }
            cursor = h.end;
        }
        if (cursor < qe) {
            pieces.push_back({cursor, qe});
            kept += qe - cursor;
        }
        v.eta_greedy = std::min(v.eta_greedy,
                                static_cast<double>(kept) / static_cast<double>(qe - qb));
    }
    std::sort(pieces.begin(), pieces.end(),
              [](const Piece& a, const Piece& b) { return a.begin < b.begin; });
    v.witnesses_disjoint = true;
    for (std::size_t i = 1; i < pieces.size(); ++i)
        if (pieces[i].begin < pieces[i - 1].end) v.witnesses_disjoint = false;

    // exact subtree mass ratios; kids flow upward since nodes are sorted by depth
    std::vector<std::uint64_t> subtree(s.nodes.size());
    for (std::size_t i = s.nodes.size(); i-- > 0;) {
        const auto& n = s.nodes[i];
        std::uint64_t mass = n.cube.cell_end(L) - n.cube.cell_begin(L);
        for (int k : n.kids) mass += subtree[k];
        subtree[i] = mass;
    }
    v.carleson = 0;
    for (std::size_t i = 0; i < s.nodes.size(); ++i) {
        std::uint64_t own = s.nodes[i].cube.cell_end(L) - s.nodes[i].cube.cell_begin(L);
        v.carleson = std::max(v.carleson,
                              static_cast<double>(subtree[i]) / static_cast<double>(own));
    }
    v.eta_feasible = 1.0 / v.carleson;
    return v;
}

double sparse_form(const SparseCollection& s, const GridFunction& f1, const GridFunction& f2) {
    double total = 0;
    for (const auto& n : s.nodes) {
        double a1 = scalar_average(f1, n.cube);
        double a2 = scalar_average(f2, n.cube);
        total += n.cube.measure() * (a1 * a2);
    }
    return total;
}

double sparse_form_body(const SparseCollection& s, const GridFunction& f1,
                        const GridFunction& f2) {
    double total = 0;
    for (const auto& n : s.nodes) {
        Zonotope k1 = body_average(f1, n.cube);
        Zonotope k2 = body_average(f2, n.cube);
        total += n.cube.measure() * minkowski_product(k1, k2);
    }
    return total;
}

std::vector<DyadicCube> universal_collection(const GridFunction& f1, const GridFunction& f2,
                                             const DyadicCube& root) {
    if (f1.components() != 1 || f2.components() != 1)
        throw std::invalid_argument("principal scan takes scalar functions");
    const int L = f1.finest_depth();
    std::vector<DyadicCube> out;
    // DFS carrying the product at the nearest kept ancestor
    struct Item {
        DyadicCube cube;
        double anchor;
    };
    double root_prod = scalar_average(f1, root) * scalar_average(f2, root);
    out.push_back(root);
    std::vector<Item> stack;
    if (root.depth < L)
        for (auto& c : children(root, L)) stack.push_back({c, root_prod});
    while (!stack.empty()) {
        Item it = stack.back();
        stack.pop_back();
        double prod = scalar_average(f1, it.cube) * scalar_average(f2, it.cube);
        double anchor = it.anchor;
        if (prod > 4.0 * anchor) {
            out.push_back(it.cube);
            anchor = prod;
        }
        if (it.cube.depth < L)
            for (auto& c : children(it.cube, L)) stack.push_back({c, anchor});
    }
    std::sort(out.begin(), out.end());
    return out;
}

SparseCollection sample_sparse_collection(int dim, int finest_depth, double eta_min,
                                          std::uint64_t seed) {
    validate_grid_shape(dim, finest_depth);
    std::uint64_t state = seed;
    auto u01 = [&] { return static_cast<double>(splitmix64(state) >> 11) * 0x1p-53; };
    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::vector<DyadicCube> cubes;
        for (int depth = 0; depth <= finest_depth; ++depth) {
            double p = std::ldexp(1.0, -(depth + 1));
            std::uint64_t count = 1ull << (dim * depth);
            for (std::uint64_t m = 0; m < count; ++m)
                if (u01() < p) cubes.push_back(cube_from_morton(dim, depth, m));
        }
        if (cubes.empty()) continue;
        SparseCollection s = collection_from_cubes(dim, finest_depth, std::move(cubes));
        if (verify_sparse(s).eta_feasible >= eta_min) return s;
    }
    throw std::runtime_error("no admissible collection after 1000 draws");
}

void save_collection_csv(const SparseCollection& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << s.dim << ',' << s.finest_depth << ',' << format_double(s.lambda) << '\n';
    for (const auto& n : s.nodes)
        out << n.cube.depth << ',' << n.cube.morton() << ',' << n.layer << ',' << n.parent << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

SparseCollection load_collection_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("missing collection header: " + path);
    std::stringstream hs(line);
    std::string tok;
    std::vector<std::string> head;
    while (std::getline(hs, tok, ',')) head.push_back(tok);
    if (head.size() != 3) throw std::runtime_error("bad collection header: " + path);
    int dim = std::stoi(head[0]);
    int L = std::stoi(head[1]);
    double lambda = std::stod(head[2]);
    std::vector<DyadicCube> cubes;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::vector<std::string> parts;
        while (std::getline(ls, tok, ',')) parts.push_back(tok);
        if (parts.size() != 4) throw std::runtime_error("bad collection row: " + path);
        cubes.push_back(cube_from_morton(dim, std::stoi(parts[0]), std::stoull(parts[1])));
    }
    SparseCollection s = collection_from_cubes(dim, L, std::move(cubes));
    s.lambda = lambda;
    return s;
}

} // namespace dyadom
