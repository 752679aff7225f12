#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "polyharm/cgo.hpp"
#include "polyharm/fields.hpp"
#include "polyharm/forward.hpp"
#include "polyharm/grid.hpp"
#include "polyharm/hodge.hpp"
#include "polyharm/traces.hpp"

namespace polyharm {

/// The two boundary maps an inversion run compares, with their factorizations
/// built once and shared across every probe.  u solves against coeffs2, the
/// dual solution u* against the starred coeffs of operator 1, so the boundary
/// pairing isolates the coefficient difference (2) - (1).
///
/// noise_level > 0 perturbs each Neumann sample of operator 2 multiplicatively
/// by (1 + level * Z), Z standard normal, seeded per trace content so results
/// are independent of evaluation order.
struct DtnPair {
  std::shared_ptr<const GridSpec> grid;
  CoefficientSet coeffs1, coeffs2, coeffs1_star;
  std::shared_ptr<const ForwardOperator> op1, op2;      // forward solves
  std::shared_ptr<const ForwardOperator> op1_adjoint;   // dual solves
  double noise_level = 0.0;
  std::uint64_t noise_seed = 0;

  DtnPair(const CoefficientSet& c1, const CoefficientSet& c2);
  int m() const { return coeffs1.m; }
};

/// Boundary pairing <(L2 - L1) f, reversed f*> = sum_j integral over the
/// boundary of (dLambda f)_j conj(f*_{m-1-j}), the identity that converts
/// interior coefficient integrals into measured data.  Equals
/// integral of (A D.D u + B.D u + q u) conj(u*) for the coefficient
/// difference, with u, u* solved as in DtnPair.
Complex pairing(const DtnPair& pair, const NavierTrace& f,
                const NavierTrace& f_star);
Complex pairing(const CoefficientSet& c1, const CoefficientSet& c2,
                const NavierTrace& f, const NavierTrace& f_star);

/// Uniform frequency lattice on the ball |xi| <= R, spacing delta
/// (default pi / (2 L)); points ordered lexicographically for determinism.
struct XiLattice {
  double R = 6.0;
  double delta = 0.0;
  std::vector<Vec3> points;
};
XiLattice make_xi_lattice(double R, double delta);

/// Per-frequency estimator outputs of one kind; entries[i] belongs to
/// xi_grid[i] (scalar kinds store size-1 vectors, vector kinds size 3,
/// matrix kinds size 9 row-major).
struct FourierSamples {
  std::string kind;
  double h_used = 0.0;
  std::vector<Vec3> xi_grid;
  std::vector<Eigen::VectorXcd> entries;
  std::vector<double> diagnostics;  // per-xi correction magnitude
};

/// Fields already recovered by earlier pipeline stages; estimators subtract
/// the correction integrals these induce.  Null members are treated as zero
/// (their influence then lands in the O(h) error).
struct ReconFields {
  const SymTensorField* A = nullptr;  // best known second-order part
  const VectorField* B = nullptr;    // best known first-order part
};

/// (A rho.rho)^(xi) from the plain exponential amplitude pair; the
/// symmetrized-gradient and isotropic parts are invisible (rho.xi = 0 and
/// rho.rho = 0), so this measures the traceless divergence-free part.
/// Requires m > 2 and xi orthogonal to span(omega, omega_tilde).
Complex estimate_A_quadratic(const DtnPair& pair, const Vec3& xi,
                             const CgoDirection& dir, double h);

/// Closed-form frame algebra: from the two polarization measurements
/// m+- = (A rho.rho)^ with rho = omega1 +- i omega2, build the frame matrix
/// lambda12 = (m+ - m-)/(4i), lambda11 = (m+ + m-)/4, lambda22 = -lambda11,
/// omega3 rows and columns zero, and return B^t M B (rows of B are the frame
/// vectors).  Output is symmetric, trace-free, and annihilates xi exactly.
Eigen::Matrix3cd assemble_A_prime(Complex m_plus, Complex m_minus,
                                  const std::array<Vec3, 3>& frame);

/// Traceless divergence-free part of the tensor difference at one frequency.
Eigen::Matrix3cd estimate_A_prime(const DtnPair& pair, const Vec3& xi,
                                  double h);

/// Tangential components (omega1.V^, omega2.V^) of the tensor potential, via
/// the (x.omega) e^{-i x.xi} amplitude at both polarizations.  known.A
/// should hold the reconstructed traceless part; its correction enters at
/// order 1/h and cannot be skipped when A' is nonzero.
std::array<Complex, 2> estimate_V_tangential(const DtnPair& pair,
                                             const Vec3& xi, double h,
                                             const ReconFields& known = {});

/// Scalar potential of the radial part of V, via the quadratic dual
/// amplitude -(omega.x)^2 / 2.  known.A should hold the traceless part plus
/// the symmetrized gradient of the tangential V reconstruction.
Complex estimate_thetaV(const DtnPair& pair, const Vec3& xi, double h,
                        const ReconFields& known = {});

/// Full V^(xi) = sum_a omega_a (omega_a . V^) + omega3 i|xi| thetaV^.
CVec3 estimate_V(const DtnPair& pair, const Vec3& xi, double h,
                 const ReconFields& known = {},
                 const VectorField* V_tangential = nullptr);

/// Tangential components of B^ from the plain exponential pair; the
/// 2 thetaA (rho.grad alpha1) term vanishes for this amplitude.  known.A
/// corrections enter at order 1/h.
std::array<Complex, 2> estimate_B_tangential(const DtnPair& pair,
                                             const Vec3& xi, double h,
                                             const ReconFields& known = {});

/// Scalar potential of the radial part of B via the dual -(omega.x)
/// amplitude; known.B should hold the tangential B reconstruction.
Complex estimate_thetaB(const DtnPair& pair, const Vec3& xi, double h,
                        const ReconFields& known = {});

CVec3 estimate_B(const DtnPair& pair, const Vec3& xi, double h,
                 const ReconFields& known = {},
                 const VectorField* B_tangential = nullptr);

/// Isotropic part of the tensor difference (m > 2): amplitude omega.x with
/// dual e^{+i x.xi}, where the target enters through
/// 2 thetaA (rho.grad alpha1) = 2 thetaA.  Requires reconstructed A', V, B
/// in known for the competing integrals.
Complex estimate_thetaA(const DtnPair& pair, const Vec3& xi, double h,
                        const ReconFields& known = {});

/// q^(xi) = pairing - correction integrals of the reconstructed A, B at
/// orders 1/h^2, 1/h, 1 against the plain exponential amplitudes.
Complex estimate_q(const DtnPair& pair, const Vec3& xi, double h,
                   const ReconFields& known = {});

/// m = 2, A = a id: the quadratic term drops (rho.rho = 0) and a enters
/// through 2 a rho.grad alpha1 = 2 a for the (x.omega) e^{-i x.xi} choice.
Complex estimate_a_isotropic(const DtnPair& pair, const Vec3& xi, double h,
                             const ReconFields& known = {});

/// Truncated inverse transform: (2 pi)^{-3} sum over samples of
/// delta^3 entry(xi) e^{i x.xi} restricted to |xi| <= R.  component selects
/// the entry slot (0 for scalars).
ScalarField lowpass_scalar(std::shared_ptr<const GridSpec> grid,
                           const FourierSamples& samples, double R,
                           int component = 0);
VectorField lowpass_vector(std::shared_ptr<const GridSpec> grid,
                           const FourierSamples& samples, double R);
/// Assembles A^ = A'^ + (i/2)(xi (x) V^ + V^ (x) xi) + thetaA^ id per
/// frequency before inversion; null parts are skipped.
SymTensorField lowpass_tensor(std::shared_ptr<const GridSpec> grid,
                              const FourierSamples* A_prime,
                              const FourierSamples* V,
                              const FourierSamples* theta_A, double R);

/// One stability-sweep observation.
struct StabilityRecord {
  double h = 0.0;
  double noise_level = 0.0;
  double dtn_norm_proxy = 0.0;
  std::map<std::string, double> err_l2, err_linf;
};

struct StabilityFit {
  double mu = 0.0;      // error ~ c |ln t|^{-mu} + c2 sqrt(t)
  double c_log = 0.0, c_root = 0.0;
  double residual = 0.0;        // rms misfit of the log-type model
  double power_residual = 0.0;  // rms misfit of the best pure power law
  double power_exponent = 0.0;
  bool monotone = false;   // error nondecreasing in proxy within 10% slack
  bool degenerate = false;
};

/// Requires >= 5 records spanning >= 2 decades of the proxy; fits the
/// log-type model by scanning mu with linear least squares inside, and a
/// power law for comparison, on the named error column.
StabilityFit fit_stability(const std::vector<StabilityRecord>& records,
                           const std::string& key = "q");

/// Stage-ordered driver: runs the requested stages over the lattice with the
/// corrections each later stage needs, in the one-way order
/// A_prime -> V -> B -> theta_A -> q (or a_iso -> B -> q at m = 2).
/// workers = 0 reads POLYHARM_WORKERS, falling back to the hardware count.
struct PipelineResult {
  std::map<std::string, FourierSamples> samples;
  std::optional<SymTensorField> A_prime, A;
  std::optional<VectorField> V, B;
  std::optional<ScalarField> theta_A, q, a_iso;
};

PipelineResult run_pipeline(const DtnPair& pair, double h,
                            const XiLattice& lattice,
                            const std::vector<std::string>& stages,
                            int workers = 0);

int worker_count(int requested = 0);

}  // namespace polyharm
