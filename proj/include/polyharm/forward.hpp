#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include "polyharm/fields.hpp"
#include "polyharm/traces.hpp"

namespace polyharm {

/// Raised when a linear solve does not reach its residual target (maps to CLI
/// exit code 3).
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Solution of the coupled system: v[j] = (-Delta)^j u, u = v[0].
struct Solution {
  std::shared_ptr<const GridSpec> grid;
  std::vector<ScalarField> v;
  int iterations = 0;   // 0 for direct solves
  double residual = 0.0;

  int order() const { return static_cast<int>(v.size()); }
  const ScalarField& u() const { return v[0]; }
};

/// Assembled coupled operator with a reusable factorization.  The system has
/// m scalar blocks per node: identity rows on boundary nodes (Navier data)
/// and, on interior nodes, the chain (-Delta_h)v_j = v_{j+1} closed by
/// (-Delta_h)v_{m-1} + P v_0 = 0 with P = -A:grad grad - i B.grad + q.
///
/// adjoint mode replaces P by its volume-weighted conjugate transpose
/// W^{-1} P^H W, which makes interior pairings against the forward operator
/// exact at the matrix level.
///
/// Direct factorization for N <= 25, BiCGSTAB + ILUT above.  The
/// factorization is immutable after construction; concurrent solves are
/// serialized only on the iterative path.
class ForwardOperator {
 public:
  ForwardOperator(const CoefficientSet& coeffs, bool adjoint = false);
  ~ForwardOperator();
  ForwardOperator(ForwardOperator&&) noexcept;

  Solution solve(const NavierTrace& f) const;

  std::shared_ptr<const GridSpec> grid() const;
  int order() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Solution solve_navier(const CoefficientSet& coeffs, const NavierTrace& f);

/// Adjoint solve.  If cross_check is non-null it receives the relative L2
/// gap between this solution and a re-solve against adjoint_coefficients;
/// the two discretizations agree to O(dx^2).
Solution solve_adjoint(const CoefficientSet& coeffs, const NavierTrace& f_star,
                       double* cross_check = nullptr);

/// g_j = outward normal derivative of v_j on the boundary.
NeumannTrace neumann_trace(const Solution& sol);

NeumannTrace dtn_apply(const CoefficientSet& coeffs, const NavierTrace& f);

/// Relative discrepancy between the volume pairing
/// (L w, v) - (w, L* v) and the boundary pairing
/// <gt w, gn v> - <gn w, gt v>, with gt w = ((-Delta)^{m-1} w, ..., w) and
/// gn v = (dnu v, dnu(-Delta)v, ...).  L* uses the weighted conjugate
/// transpose of the assembled full-grid operator, so the volume side is
/// exact (not just O(dx^2)) whenever w and v vanish near the boundary.
double green_check(const ScalarField& w, const ScalarField& v,
                   const CoefficientSet& coeffs);

/// |(L w, v) - (w, L* v)| / scale with the matrix-level adjoint; machine
/// zero for fields supported away from the boundary.
double adjoint_identity_gap(const ScalarField& w, const ScalarField& v,
                            const CoefficientSet& coeffs);

/// Largest singular value of the DtN difference restricted to a
/// trigonometric boundary subspace (per-face tensor sine modes, at most 200
/// spatial modes per component), estimated by power iteration on the
/// compressed normal operator to relative tolerance 1e-3.  This is the
/// operator-norm proxy used by the stability sweeps.
double dtn_norm(const CoefficientSet& coeffs1, const CoefficientSet& coeffs2,
                int modes_per_face = 25, std::uint64_t seed = 7);

/// Probe basis + response matrices, exposed so noise studies can perturb the
/// responses without re-solving.  Columns of basis are surface-orthonormal
/// Navier tuples (stacked component-major); response{1,2} hold the Neumann
/// tuples of each operator on those columns, row-weighted for the surface
/// inner product.
struct DtnProbe {
  std::shared_ptr<const GridSpec> grid;
  int m = 0;
  Eigen::MatrixXcd basis;
  Eigen::MatrixXcd response1, response2;
};

DtnProbe dtn_probe(const CoefficientSet& coeffs1, const CoefficientSet& coeffs2,
                   int modes_per_face = 25);
/// Norm of (response2 - response1) restricted to the basis, by power
/// iteration; matches dtn_norm when the probe is unperturbed.
double probe_norm(const DtnProbe& probe, std::uint64_t seed = 7);

}  // namespace polyharm
