#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <Eigen/Geometry>

#include "polyharm/cgo.hpp"
#include "polyharm/fields.hpp"
#include "polyharm/grid.hpp"

using namespace polyharm;

namespace {

const Vec3 e1(1, 0, 0), e2(0, 1, 0), e3(0, 0, 1);

CoefficientSet zero_coeffs(std::shared_ptr<const GridSpec> g, int m) {
  Scenario sc = make_coefficients(g, "zero", 1, m);
  return sc.coeffs;
}

}  // namespace

TEST_CASE("direction construction") {
  CgoDirection d = make_direction(e1, e2);
  CHECK(d.omega.isApprox(e1));
  CHECK(d.omega_tilde.isApprox(e2));
  CHECK(d.rho[0] == Complex(1.0, 0.0));
  CHECK(d.rho[1] == Complex(0.0, 1.0));
  CHECK(d.rho[2] == Complex(0.0, 0.0));
  const Complex rr = d.rho[0] * d.rho[0] + d.rho[1] * d.rho[1] +
                     d.rho[2] * d.rho[2];
  CHECK(std::abs(rr) < 1e-15);

  // Gram-Schmidt keeps the first input and orthonormalizes the second.
  CgoDirection d2 = make_direction(e1, Vec3(1, 1, 0));
  CHECK(d2.omega.isApprox(e1));
  CHECK(d2.omega_tilde.isApprox(e2));

  CHECK_THROWS_WITH(make_direction(e1, Vec3(2, 0, 0)),
                    doctest::Contains("parallel"));
}

TEST_CASE("frame for a frequency") {
  auto f = frame_for_xi(Vec3(0, 0, 2));
  CHECK(f[2].isApprox(e3));
  CHECK(f[0].isApprox(e1));
  CHECK(f[1].isApprox(e2));
  // Right-handed and orthonormal for a generic frequency.
  auto fg = frame_for_xi(Vec3(1.0, -0.7, 0.4));
  CHECK(std::abs(f[0].cross(f[1]).dot(f[2]) - 1.0) < 1e-14);
  CHECK(std::abs(fg[0].cross(fg[1]).dot(fg[2]) - 1.0) < 1e-14);
  for (int a = 0; a < 3; ++a)
    for (int b = a; b < 3; ++b)
      CHECK(std::abs(fg[a].dot(fg[b]) - (a == b ? 1.0 : 0.0)) < 1e-14);
  CHECK_THROWS_WITH(frame_for_xi(Vec3::Zero()),
                    doctest::Contains("zero frequency"));
}

TEST_CASE("amplitude catalog values") {
  auto g = build_grid(17, 1.0);
  CgoDirection d = make_direction(e1, e2);
  const Vec3 xi(0, 0, 2);
  const Vec3 x(0.25, -0.5, 0.375);
  const int id = [&] {
    for (int i = 0; i < g->num_nodes(); ++i)
      if ((g->point(i) - x).norm() < 1e-12) return i;
    return -1;
  }();
  REQUIRE(id >= 0);

  ScalarField a = amplitude(g, AmplitudeKind::exp_xi, xi, d, CgoRole::forward);
  CHECK(std::abs(a.v[id] - std::exp(Complex(0, -x.dot(xi)))) < 1e-14);
  ScalarField b =
      amplitude(g, AmplitudeKind::xomega_exp, xi, d, CgoRole::forward);
  CHECK(std::abs(b.v[id] - x[0] * std::exp(Complex(0, -x.dot(xi)))) < 1e-14);
  ScalarField cm =
      amplitude(g, AmplitudeKind::omega_x, xi, d, CgoRole::forward);
  CHECK(std::abs(cm.v[id] - x[0]) < 1e-15);
  ScalarField s2 =
      amplitude(g, AmplitudeKind::neg_half_sq, xi, d, CgoRole::adjoint);
  CHECK(std::abs(s2.v[id] + 0.5 * x[0] * x[0]) < 1e-15);
  ScalarField ep =
      amplitude(g, AmplitudeKind::exp_plus_xi, xi, d, CgoRole::adjoint);
  CHECK(std::abs(ep.v[id] - std::exp(Complex(0, x.dot(xi)))) < 1e-14);

  // Role mismatch and non-orthogonal frequency are rejected.
  CHECK_THROWS(amplitude(g, AmplitudeKind::exp_xi, xi, d, CgoRole::adjoint));
  CHECK_THROWS(amplitude(g, AmplitudeKind::one, xi, d, CgoRole::forward));
  CHECK_THROWS(
      amplitude(g, AmplitudeKind::exp_xi, Vec3(1, 0, 1), d, CgoRole::forward));
}

TEST_CASE("discrete transport annihilation of the catalog") {
  // Generic (non-axis-aligned) direction so stencil errors are exercised.
  CgoDirection d = make_direction(Vec3(1, 0, 1), e2);
  const Vec3 xi = Vec3(std::sqrt(2.0), 0, -std::sqrt(2.0));

  // Polynomial amplitudes are annihilated exactly by the stencils.
  auto g = build_grid(17, 1.0);
  struct Case {
    AmplitudeKind kind;
    int power;
    CgoRole role;
  };
  for (const Case& c : {Case{AmplitudeKind::omega_x, 2, CgoRole::forward},
                        Case{AmplitudeKind::one, 1, CgoRole::adjoint},
                        Case{AmplitudeKind::neg_omega_x, 2, CgoRole::adjoint},
                        Case{AmplitudeKind::neg_half_sq, 3, CgoRole::adjoint}}) {
    ScalarField a = amplitude(g, c.kind, xi, d, c.role);
    ScalarField r = directional_power(a, d, c.power, c.role);
    CHECK(l2_norm(r) < 1e-10);
  }

  // Exponential amplitudes: residual is pure discretization error, O(dx^2).
  double res[2];
  const int Ns[2] = {17, 33};
  for (int t = 0; t < 2; ++t) {
    auto gt = build_grid(Ns[t], 1.0);
    ScalarField a =
        amplitude(gt, AmplitudeKind::exp_xi, xi, d, CgoRole::forward);
    res[t] = l2_norm(directional_power(a, d, 1, CgoRole::forward)) /
             l2_norm(a);
    CHECK(res[t] < 10.0 * gt->dx * gt->dx);
    ScalarField ap =
        amplitude(gt, AmplitudeKind::exp_plus_xi, xi, d, CgoRole::adjoint);
    CHECK(l2_norm(directional_power(ap, d, 1, CgoRole::adjoint)) /
              l2_norm(ap) <
          10.0 * gt->dx * gt->dx);
  }
  CHECK(std::log(res[0] / res[1]) / std::log(2.0) > 1.5);
}

TEST_CASE("transport inverse on the forward-image family") {
  auto g = build_grid(17, 1.0);
  CgoDirection d = make_direction(e1, e2);
  ScalarField bump =
      bump_scalar(g, Vec3(0.1, -0.05, 0.0), 0.5, Complex(1.0, 0.4));

  for (int power : {1, 2, 3}) {
    ScalarField f = transport_forward(bump, d, power);
    double res = 1.0;
    ScalarField x = transport_inverse(f, d, power, CgoRole::forward, &res);
    CHECK(res < 1e-3);
    // Linearity of the inverse.
    ScalarField f2(g);
    f2.v = 2.0 * f.v;
    ScalarField x2 = transport_inverse(f2, d, power);
    CHECK((x2.v - 2.0 * x.v).cwiseAbs().maxCoeff() <
          1e-12 * x.v.cwiseAbs().maxCoeff());
  }

  // Adjoint role is the conjugate of the forward role on conjugate data.
  ScalarField fa = transport_forward(bump, d, 2, CgoRole::adjoint);
  ScalarField xa = transport_inverse(fa, d, 2, CgoRole::adjoint);
  ScalarField fc(g);
  fc.v = fa.v.conjugate();
  ScalarField xc = transport_inverse(fc, d, 2, CgoRole::forward);
  CHECK((xa.v - xc.v.conjugate()).cwiseAbs().maxCoeff() <
        1e-10 * xa.v.cwiseAbs().maxCoeff());
}

TEST_CASE("second amplitude examples") {
  auto g = build_grid(17, 1.0);
  CgoDirection d = make_direction(e1, e2);
  const Vec3 xi(0, 0, 2);

  // No perturbation, plain exponential: the second amplitude vanishes.
  SecondAmplitude z = second_amplitude(AmplitudeKind::exp_xi, xi,
                                       zero_coeffs(g, 4), d, CgoRole::forward);
  CHECK(l2_norm(z.total) < 1e-12);

  // No perturbation, linear-times-exponential: closed-form particular
  // solution (|xi|^2 / 2) (x.omega)^2 e^{-i x.xi}.
  SecondAmplitude p = second_amplitude(AmplitudeKind::xomega_exp, xi,
                                       zero_coeffs(g, 2), d, CgoRole::forward);
  for (int id : {0, 100, 2500}) {
    const Vec3 x = g->point(id);
    const Complex want = 0.5 * xi.squaredNorm() * x[0] * x[0] *
                         std::exp(Complex(0, -x.dot(xi)));
    CHECK(std::abs(p.total.v[id] - want) < 1e-10);
  }

  // Order 2 with isotropic A: the A term drops from the right side
  // (rho . grad e^{-i x.xi} = 0), leaving i (rho . B) alpha1.
  Scenario sc2 = make_coefficients(g, "combined", 7, 2);
  SecondAmplitude s2 = second_amplitude(AmplitudeKind::exp_xi, xi, sc2.coeffs,
                                        d, CgoRole::forward);
  for (int id = 0; id < g->num_nodes(); ++id) {
    Complex rhoB = 0.0;
    for (int k = 0; k < 3; ++k) rhoB += d.rho[k] * sc2.coeffs.B.at(id, k);
    const Complex want = Complex(0, 1) * rhoB *
                         std::exp(Complex(0, -g->point(id).dot(xi)));
    CHECK(std::abs(s2.coeff_rhs.v[id] - want) < 1e-12);
  }
  CHECK(s2.transport_residual < 1e-6);

  // Order 3 with a tensor: right side -(A rho . rho)(omega . x).
  Scenario sc3 = make_coefficients(g, "A-divfree", 7, 3);
  SecondAmplitude s3 = second_amplitude(AmplitudeKind::omega_x, xi, sc3.coeffs,
                                        d, CgoRole::forward);
  for (int id : {0, 777, 3000}) {
    const Eigen::Matrix3cd A = tensor_at(sc3.coeffs.A, id);
    Complex Arr = 0.0;
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) Arr += A(j, k) * d.rho[j] * d.rho[k];
    const Complex want = -Arr * g->point(id)[0];
    CHECK(std::abs(s3.coeff_rhs.v[id] - want) < 1e-12);
  }
  CHECK(s3.transport_residual < 1e-6);
}

TEST_CASE("residual order: closed-form case is exact") {
  auto g = build_grid(17, 1.0);
  CgoDirection d = make_direction(e1, e2);
  const Vec3 xi(0, 0, 2);
  const std::vector<double> hs{0.5, 0.35, 0.25, 0.18};

  for (int m : {2, 3}) {
    CoefficientSet c = zero_coeffs(g, m);
    AmplitudePair pair = make_amplitude_pair(
        g, AmplitudeKind::exp_xi, AmplitudeKind::exp_plus_xi, xi, d, c, c);
    std::vector<double> norms;
    const double slope = residual_order(c, d, pair, hs, &norms);
    CHECK(std::abs(slope - 2.0 * m) < 1e-6);
    ScalarField a1 = pair.alpha1;
    for (std::size_t i = 0; i < hs.size(); ++i) {
      const double want =
          std::pow(hs[i], 2 * m) * std::pow(xi.squaredNorm(), m) * l2_norm(a1);
      CHECK(std::abs(norms[i] - want) < 1e-10 * want);
    }
  }

  CHECK_THROWS(residual_order(zero_coeffs(g, 2), d,
                              make_amplitude_pair(g, AmplitudeKind::exp_xi,
                                                  AmplitudeKind::exp_plus_xi,
                                                  xi, d, zero_coeffs(g, 2),
                                                  zero_coeffs(g, 2)),
                              {0.5, 0.3}));
}

TEST_CASE("residual order: generic coefficients reach m + 2") {
  auto g = build_grid(17, 1.0);
  CgoDirection d = make_direction(e1, e2);
  const Vec3 xi(0, 0, 2);
  const std::vector<double> hs{0.5, 0.35, 0.25, 0.18};

  for (int m : {2, 3}) {
    Scenario sc = make_coefficients(g, "combined", 13, m);
    CoefficientSet star = adjoint_coefficients(sc.coeffs);
    AmplitudePair pair =
        make_amplitude_pair(g, AmplitudeKind::exp_xi,
                            AmplitudeKind::exp_plus_xi, xi, d, sc.coeffs, star);
    const double slope = residual_order(sc.coeffs, d, pair, hs);
    CHECK(slope >= m + 1.5);
  }
}

TEST_CASE("boundary traces") {
  auto g = build_grid(17, 1.0);
  CgoDirection d = make_direction(e1, e2);

  // Harmonic exponential (xi = 0, no perturbation): all higher Navier
  // components vanish identically.
  CoefficientSet c = zero_coeffs(g, 3);
  AmplitudePair pair = make_amplitude_pair(g, AmplitudeKind::exp_xi,
                                           AmplitudeKind::exp_plus_xi,
                                           Vec3::Zero(), d, c, c);
  NavierTrace tr = boundary_traces(pair, 0.25, CgoRole::forward);
  REQUIRE(tr.order() == 3);
  CHECK(tr.f[0].cwiseAbs().maxCoeff() ==
        doctest::Approx(std::exp(4.0)).epsilon(1e-10));
  CHECK(tr.f[1].cwiseAbs().maxCoeff() < 1e-10);
  CHECK(tr.f[2].cwiseAbs().maxCoeff() < 1e-10);

  // Adjoint ansatz decays where the forward one grows.
  NavierTrace ta = boundary_traces(pair, 0.25, CgoRole::adjoint);
  CHECK(ta.f[0].cwiseAbs().maxCoeff() ==
        doctest::Approx(std::exp(4.0)).epsilon(1e-10));

  // Oscillatory amplitude: the chain applies -Delta, so each component
  // picks up |xi|^2 relative to the previous one at xi != 0, h -> small.
  CHECK_THROWS(boundary_traces(pair, 0.1, CgoRole::forward));
  CHECK_THROWS(boundary_traces(pair, 0.6, CgoRole::forward));
}
