#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dyadom/dyadic.hpp"

namespace dyadom {

// Symmetric zonotope sum_i [-g_i, g_i] in R^n, n <= 3, stored in canonical
// form: zero generators dropped, parallel generators merged, each generator
// sign-normalized (first nonzero coordinate positive), columns sorted.
class Zonotope {
  public:
    Zonotope(int n, const Eigen::MatrixXd& generators); // generators as columns
    static Zonotope zero(int n);

    int n() const { return n_; }
    int generator_count() const { return static_cast<int>(gens_.cols()); }
    const Eigen::MatrixXd& generators() const { return gens_; }

    // h_K(u) = sum_i |<g_i, u>|
    double support(const Eigen::VectorXd& u) const;

    // linear dimension of the spanned subspace
    int rank() const;
    bool degenerate() const { return rank() < n_; }

    // largest Euclidean norm over the body (max over vertices)
    double radius_upper() const;

  private:
    int n_;
    Eigen::MatrixXd gens_;
};

// Exact zonotope average <f>_Q = { (1/|Q|) int_Q f phi : |phi| <= 1 }:
// one generator f(cell)*|cell|/|Q| per finest cell of Q, then canonicalized.
Zonotope body_average(const GridFunction& f, const DyadicCube& q);
Zonotope body_average_clipped(const GridFunction& f, const DyadicCube& q, const DyadicCube& clip);

double support(const Zonotope& k, const Eigen::VectorXd& u);
Zonotope dilate(const Zonotope& k, double c);

// max { |<v, w>| : v in K, w in H }. Exact sign enumeration when the smaller
// generator list has <= exact_limit entries; otherwise alternating ascent
// (a lower bound, multi-start) is returned.
struct MinkowskiResult {
    double value = 0;       // best achievable |<v,w>| found (exact when `exact`)
    bool exact = false;
    double upper = 0;       // n * ||A_H^T A_K|| from the John dilations
    Eigen::VectorXd k_vertex; // attaining vertex of K
    Eigen::VectorXd h_vertex; // attaining vertex of H
};
MinkowskiResult minkowski_product_full(const Zonotope& k, const Zonotope& h,
                                       int exact_limit = 20);
double minkowski_product(const Zonotope& k, const Zonotope& h);

// Maximal-volume centered ellipsoid A*B inside K together with the sandwich
// verification E subset K subset sqrt(n)*E.
struct JohnEllipsoid {
    Eigen::MatrixXd shape;      // symmetric PSD; the ellipsoid is shape * unit ball
    bool degenerate = false;    // K spans a proper subspace; shape acts on the span
    int rank = 0;
    // max over tested directions of h_E(u)/h_K(u); <= 1 + tol when E inside K
    double inscribed_margin = 0;
    // max over K vertices/sampled support points v of |A^{-1}v| / sqrt(n)
    double cover_margin = 0;
};
JohnEllipsoid john_ellipsoid(const Zonotope& k);

// Is c*H inside K? Exact for n<=3 via the facet-halfspace description of K;
// on failure returns a separating direction.
struct ContainmentResult {
    bool contained = true;
    Eigen::VectorXd witness; // direction u with c*h_H(u) > h_K(u) when not contained
};
ContainmentResult contains(const Zonotope& k, double c, const Zonotope& h);

// Outward facet normals (one per antipodal pair) of a zonotope: edge normals
// for n=2, generator cross products for n=3. For degenerate bodies the
// orthogonal complement of the span is appended so support comparisons
// against these directions are exact containment tests.
std::vector<Eigen::VectorXd> facet_normals(const Zonotope& k);

// Stopping cubes for one vector-valued f: maximal dyadic I strictly inside Q
// with <f>_I not inside A*<f>_Q. Requires A > n^2.
struct VectorStopping {
    std::vector<DyadicCube> cubes;
    // per-cube type diagnostic after John normalization of <f>_Q: index j of
    // the coordinate axis whose witness exceeds A/sqrt(n); -1 when bodies are
    // degenerate and the diagnostic was skipped
    std::vector<int> types;
    bool degenerate_root = false; // <f>_Q needed regularization for the diagnostic
};
VectorStopping vector_stopping(const GridFunction& f, const DyadicCube& q, double threshold);

} // namespace dyadom
