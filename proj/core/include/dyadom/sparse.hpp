#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dyadom/dyadic.hpp"

namespace dyadom {

// maximal dyadic cubes I strictly inside q with <f_j>_I > lambda * <f_j>_q
// for at least one of the supplied scalar functions; lambda must exceed 1
std::vector<DyadicCube> stopping_children(const std::vector<const GridFunction*>& fs,
                                          const DyadicCube& q, double lambda);

// sum |I| / |Q| over the cubes, computed from exact finest-cell counts
double packing_ratio(const std::vector<DyadicCube>& cubes, const DyadicCube& q, int finest_depth);

struct SparseNode {
    DyadicCube cube;
    int layer = 0;          // generations below its tree root
    int parent = -1;        // index into nodes, -1 at a root
    std::vector<int> kids;  // direct members of the collection inside this cube
};

// Laminar family of dyadic cubes with parent links. Nodes are sorted by
// (depth, morton), so serialization and iteration order are canonical.
struct SparseCollection {
    int dim = 1;
    int finest_depth = 0;
    double lambda = 0; // stopping threshold used by the builder, 0 otherwise
    std::vector<SparseNode> nodes;
};

// iterated stopping tree: the root cube, its stopping children for the pair
// (f1, f2), their stopping children, and so on until no cube triggers
SparseCollection build_sparse_collection(const GridFunction& f1, const GridFunction& f2,
                                         const DyadicCube& root, double lambda);

// laminar forest over an arbitrary cube list (duplicates rejected)
SparseCollection collection_from_cubes(int dim, int finest_depth, std::vector<DyadicCube> cubes);

// Sparseness audit. The greedy witness for Q is Q minus its direct kids; the
// feasible eta is exact for laminar families: 1 / max subtree mass ratio.
struct SparseVerification {
    bool witnesses_disjoint = false;
    double eta_greedy = 0;   // min |E_Q|/|Q| over greedy witnesses
    double eta_feasible = 0; // largest eta admitting disjoint witnesses of size eta|Q|
    double carleson = 0;     // max_Q sum_{P in S, P inside Q} |P| / |Q|
};
SparseVerification verify_sparse(const SparseCollection& s);

// sum over the collection of |Q| <f1>_Q <f2>_Q with absolute-value averages
double sparse_form(const SparseCollection& s, const GridFunction& f1, const GridFunction& f2);
// convex-body version: |Q| times the bilinear endpoint of the two averaged
// bodies; for one-component data this reproduces sparse_form bit for bit
double sparse_form_body(const SparseCollection& s, const GridFunction& f1,
                        const GridFunction& f2);

// principal cubes of the pair: R is kept when <f1>_R <f2>_R exceeds four
// times the product at its nearest kept ancestor. Dominates every 1/2-sparse
// form over subcubes of root within factor 8.
std::vector<DyadicCube> universal_collection(const GridFunction& f1, const GridFunction& f2,
                                             const DyadicCube& root);

// random laminar collection with depth-j inclusion probability 2^-(j+1),
// resampled until the feasible eta reaches eta_min
SparseCollection sample_sparse_collection(int dim, int finest_depth, double eta_min,
                                          std::uint64_t seed);

void save_collection_csv(const SparseCollection& s, const std::string& path);
SparseCollection load_collection_csv(const std::string& path);

} // namespace dyadom
