#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "polyharm/grid.hpp"

namespace polyharm {

/// The coefficient triple (A, B, q) of the perturbed operator
/// (-Delta)^m + A D.D + B.D + q, D = -i grad, compactly supported in the box.
struct CoefficientSet {
  SymTensorField A;
  VectorField B;
  ScalarField q;
  int m = 2;
  double support_radius = 0.0;
  bool isotropic = false;

  void validate() const;
};

/// Scenario = coefficient set plus the ground-truth pieces the recipe knows.
struct Scenario {
  std::string name;
  CoefficientSet coeffs;
  std::optional<VectorField> V_truth;      // A-potential: A = sym_grad(V) + theta id
  std::optional<ScalarField> theta_truth;  // isotropic part of A
  std::optional<ScalarField> a_truth;      // isotropic-m2 scalar a
};

/// Smooth compactly supported bump:
/// a * exp(1 - 1/(1 - |x-c|^2/rho^2)) inside the ball, 0 outside.
ScalarField bump_scalar(std::shared_ptr<const GridSpec> grid, const Vec3& center,
                        double rho, Complex amplitude);
/// Pointwise bump value and gradient (analytic, used by recipe builders).
double bump_value(const Vec3& x, const Vec3& center, double rho);
Vec3 bump_gradient(const Vec3& x, const Vec3& center, double rho);

/// Exactly trace-free, continuum-divergence-free symmetric tensor with
/// compact support: a degree-4 constant-coefficient operator (built from the
/// symbol |xi x b|^2 (xi x a)(xi x a)^t - |xi x a|^2 (xi x b)(xi x b)^t)
/// applied to the polynomial bump (1 - |x-c|^2/rho^2)^8.
SymTensorField tt_tensor_bump(std::shared_ptr<const GridSpec> grid,
                              const Vec3& center, double rho, const Vec3& a,
                              const Vec3& b, double amplitude);

/// Recipe document: {recipe, seed, m, bumps: [{center, radius, amplitude,
/// target}]}.  Known recipes: q-only, B-only, B-gradient, B-divfree,
/// A-divfree, A-potential, A-isotropic, isotropic-m2, combined, zero.
Scenario make_coefficients(std::shared_ptr<const GridSpec> grid,
                           const nlohmann::json& recipe);
Scenario make_coefficients(std::shared_ptr<const GridSpec> grid,
                           const std::string& recipe_name, std::uint64_t seed,
                           int m);

/// Trapezoidal approximation of int field(x) e^{-i x.xi} dx, per component.
Complex fourier_truth(const ScalarField& f, const Vec3& xi);
CVec3 fourier_truth(const VectorField& f, const Vec3& xi);
Eigen::Matrix3cd fourier_truth(const SymTensorField& f, const Vec3& xi);

/// Adjoint coefficients (A*, B*, q*) making L* the formal adjoint:
/// A*_jk = conj A_jk, B*_k = conj B_k + 2 sum_j D_j conj A_jk,
/// q* = conj q - i div(conj B) + sum_jk D_k D_j conj A_jk, with D = -i grad.
CoefficientSet adjoint_coefficients(const CoefficientSet& c);

/// A(x) as a dense matrix at one node.
Eigen::Matrix3cd tensor_at(const SymTensorField& A, int node);

}  // namespace polyharm
