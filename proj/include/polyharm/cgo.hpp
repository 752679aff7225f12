#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "polyharm/fields.hpp"
#include "polyharm/grid.hpp"
#include "polyharm/traces.hpp"

namespace polyharm {

/// Isotropic direction rho = omega + i omega_tilde, rho . rho = 0.
struct CgoDirection {
  Vec3 omega;
  Vec3 omega_tilde;
  CVec3 rho;
  bool conj_flag = false;  // serves the adjoint ansatz e^{-x.conj(rho)/h}
};

CgoDirection make_direction(const Vec3& u, const Vec3& v,
                            bool conj_flag = false);

/// Right-handed orthonormal frame (omega1, omega2, omega3 = xi/|xi|);
/// omega1 from the canonical axis least aligned with xi, omega2 = w3 x w1.
std::array<Vec3, 3> frame_for_xi(const Vec3& xi);

enum class AmplitudeKind {
  exp_xi,       // e^{-i x.xi}            (forward)
  xomega_exp,   // (x.omega) e^{-i x.xi}  (forward)
  omega_x,      // omega . x              (forward)
  one,          // 1                      (adjoint)
  neg_omega_x,  // -(omega.x)             (adjoint)
  neg_half_sq,  // -(omega.x)^2 / 2       (adjoint)
  exp_plus_xi,  // e^{+i x.xi}            (adjoint)
};

enum class CgoRole { forward, adjoint };

/// Closed-form amplitude p(x.omega) * exp(sign * i x.xi): the whole catalog
/// and every derived quantity stays in this family, so Laplacians and
/// directional derivatives are exact polynomial algebra.
struct PolyAmp {
  std::vector<Complex> p;  // coefficients of p in s = x.omega, low to high
  int expsign = 0;         // -1: e^{-ix.xi}, +1: e^{+ix.xi}, 0: no exponential
  Vec3 xi = Vec3::Zero();
  Vec3 omega = Vec3::Zero();

  bool zero() const;
  PolyAmp lap() const;        // Laplacian (uses xi . omega = 0)
  PolyAmp dirderiv() const;   // (c rho . grad), c rho . omega = 1
  PolyAmp antideriv() const;  // s-antiderivative, constant 0
  PolyAmp scaled(Complex c) const;
  Complex value(const Vec3& x) const;
  CVec3 grad(const Vec3& x) const;
  Eigen::Matrix3cd hess(const Vec3& x) const;
  ScalarField eval(std::shared_ptr<const GridSpec> grid) const;
};

/// General closed-form amplitude p(d . x) * exp(mu . x) with complex vectors
/// d, mu.  Closed under Laplacian and directional derivatives with arbitrary
/// constant complex directions, which keeps the transport kernel-line
/// particular solutions (polynomial growth in conj(rho) . x) inside exact
/// algebra.
struct GenAmp {
  CVec3 mu = CVec3::Zero();
  CVec3 d = CVec3::Zero();
  std::vector<Complex> p;

  bool zero() const;
  GenAmp lap() const;
  GenAmp dirderiv(const CVec3& c) const;  // (c . grad)
  GenAmp scaled(Complex s) const;
  Complex value(const Vec3& x) const;
  CVec3 grad(const Vec3& x) const;
  Eigen::Matrix3cd hess(const Vec3& x) const;
  ScalarField eval(std::shared_ptr<const GridSpec> grid) const;
};

GenAmp to_gen(const PolyAmp& a);

/// Band-limited field given by its spectrum on the 2x zero-padded periodic
/// embedding of the grid (Npad = 2N-1 points per axis; odd, so every mode
/// has a signed partner and multipliers commute with conjugation).
struct SpecField {
  std::shared_ptr<const GridSpec> grid;
  int npad = 0;
  Eigen::VectorXcd spec;  // lexicographic (kx, ky, kz), FFT index order

  bool empty() const { return spec.size() == 0; }
  Vec3 freq(int kx, int ky, int kz) const;
  /// Inverse transform of multiplier(zeta) * spec, restricted to the grid.
  ScalarField eval(const std::function<Complex(const Vec3&)>& mult) const;
  ScalarField eval() const;
};

/// Catalog amplitude as a closed form; exponential kinds require
/// xi . omega = xi . omega_tilde = 0 within 1e-10.
PolyAmp amplitude_form(AmplitudeKind kind, const Vec3& xi,
                       const CgoDirection& dir, CgoRole role);
ScalarField amplitude(std::shared_ptr<const GridSpec> grid, AmplitudeKind kind,
                      const Vec3& xi, const CgoDirection& dir, CgoRole role);

/// m-th discrete directional derivative (rho.grad)^m, conjugated direction
/// for the adjoint role; grid stencils (transport residual checks).
ScalarField directional_power(const ScalarField& f, const CgoDirection& dir,
                              int power, CgoRole role);

/// Regularized right inverse of (2 rho . grad)^m (adjoint role inverts
/// (2 conj(rho) . grad)^m): Fourier multiplier on the padded embedding, each
/// factor s = 2i rho.zeta replaced by conj(s)/(|s|^2 + delta^2),
/// delta = 1e-6 max|s|.  The field-valued overload additionally solves the
/// kernel modes (s = 0) exactly with polynomially growing particular
/// solutions, so its reported forward residual reflects the regularization
/// alone.
SpecField transport_inverse_spec(const ScalarField& f, const CgoDirection& dir,
                                 int power, CgoRole role,
                                 double* forward_residual = nullptr);
ScalarField transport_inverse(const ScalarField& f, const CgoDirection& dir,
                              int power, CgoRole role = CgoRole::forward,
                              double* forward_residual = nullptr);

/// Spectral forward application of (2 rho . grad)^m, consistent with
/// transport_inverse.
ScalarField transport_forward(const ScalarField& f, const CgoDirection& dir,
                              int power, CgoRole role = CgoRole::forward);

/// Second amplitude: closed-form particular part (polynomial times
/// exponential) plus a regularized transport solve of the compactly
/// supported coefficient part.
struct SecondAmplitude {
  PolyAmp closed;  // particular solution of the closed-form right side
  SpecField num;   // regularized transport inverse off the kernel line
  /// Kernel-line modes (rho . zeta = 0) solved exactly with polynomial
  /// growth in conj(rho) . x; the Fourier division is singular there.
  std::vector<GenAmp> line;
  ScalarField total;      // closed + num + line on the grid
  ScalarField coeff_rhs;  // the compactly supported right side
  double transport_residual = 0.0;
};

SecondAmplitude second_amplitude(AmplitudeKind kind, const Vec3& xi,
                                 const CoefficientSet& coeffs,
                                 const CgoDirection& dir, CgoRole role);

struct AmplitudePair {
  PolyAmp alpha1_form, alpha1_star_form;
  ScalarField alpha1, alpha1_star;
  SecondAmplitude alpha2, alpha2_star;
  AmplitudeKind kind, kind_star;
  Vec3 xi;
  CgoDirection dir;
  int m = 2;
};

/// Forward amplitudes against coeffs2 (the operator the CGO solution
/// satisfies), adjoint amplitudes against the starred coeffs of operator 1.
AmplitudePair make_amplitude_pair(std::shared_ptr<const GridSpec> grid,
                                  AmplitudeKind kind, AmplitudeKind kind_star,
                                  const Vec3& xi, const CgoDirection& dir,
                                  const CoefficientSet& coeffs2,
                                  const CoefficientSet& coeffs1_star);

/// Least-squares slope of log ||g_h|| against log h, where g_h is the
/// conjugated residual of the truncated ansatz, evaluated through the
/// algebraic expansion of the conjugated operator (no exponentials formed).
double residual_order(const CoefficientSet& coeffs, const CgoDirection& dir,
                      const AmplitudePair& pair,
                      const std::vector<double>& h_list,
                      std::vector<double>* norms = nullptr);

/// Navier traces of e^{x.rho/h}(alpha1 + h alpha2) (forward role) or
/// e^{-x.conj(rho)/h}(alpha1* + h alpha2*) (adjoint role).
/// Guards: h in [0.15, 0.5]; trace magnitudes capped at 1e12.
NavierTrace boundary_traces(const AmplitudePair& pair, double h, CgoRole role);

}  // namespace polyharm
