#include "polyharm/cgo.hpp"

#include <cmath>
#include <mutex>
#include <stdexcept>

#include <Eigen/Geometry>
#include <fftw3.h>

namespace polyharm {

CgoDirection make_direction(const Vec3& u, const Vec3& v, bool conj_flag) {
  if (u.norm() < 1e-14 || v.norm() < 1e-14)
    throw std::invalid_argument("direction inputs must be nonzero");
  const Vec3 w1 = u.normalized();
  Vec3 w2 = v - v.dot(w1) * w1;
  if (w2.norm() < 1e-12 * v.norm())
    throw std::invalid_argument("direction inputs are parallel");
  w2.normalize();
  CgoDirection d;
  d.omega = w1;
  d.omega_tilde = w2;
  d.rho = w1.cast<Complex>() + Complex(0, 1) * w2.cast<Complex>();
  d.conj_flag = conj_flag;
  return d;
}

std::array<Vec3, 3> frame_for_xi(const Vec3& xi) {
  if (xi.norm() < 1e-14)
    throw std::invalid_argument("frame undefined at zero frequency");
  const Vec3 w3 = xi.normalized();
  int axis = 0;
  double best = 2.0;
  for (int a = 0; a < 3; ++a) {
    const double align = std::abs(w3[a]);
    if (align < best - 1e-15) {
      best = align;
      axis = a;
    }
  }
  Vec3 e = Vec3::Zero();
  e[axis] = 1.0;
  const Vec3 w1 = (e - e.dot(w3) * w3).normalized();
  const Vec3 w2 = w3.cross(w1);
  return {w1, w2, w3};
}

// ---------------------------------------------------------------------------
// Closed-form amplitudes.

namespace {

std::vector<Complex> poly_deriv(const std::vector<Complex>& p) {
  std::vector<Complex> out;
  for (std::size_t k = 1; k < p.size(); ++k)
    out.push_back(double(k) * p[k]);
  return out;
}

template <typename S>
Complex poly_eval(const std::vector<Complex>& p, S s) {
  Complex acc = 0.0;
  for (std::size_t k = p.size(); k-- > 0;) acc = acc * s + p[k];
  return acc;
}

bool poly_is_zero(const std::vector<Complex>& p) {
  for (const Complex& c : p)
    if (std::abs(c) > 0.0) return false;
  return true;
}

std::vector<Complex> poly_add(const std::vector<Complex>& a,
                              const std::vector<Complex>& b) {
  std::vector<Complex> out(std::max(a.size(), b.size()), Complex(0.0));
  for (std::size_t k = 0; k < a.size(); ++k) out[k] += a[k];
  for (std::size_t k = 0; k < b.size(); ++k) out[k] += b[k];
  return out;
}

// Bilinear (unconjugated) dot product.
Complex cdot(const CVec3& a, const CVec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
Complex cdot(const CVec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

// Sum of two amplitudes from the same (mu, d) family.
GenAmp gen_add(const GenAmp& a, const GenAmp& b) {
  if (a.zero()) return b;
  if (b.zero()) return a;
  GenAmp out = a;
  out.p = poly_add(a.p, b.p);
  return out;
}

}  // namespace

bool PolyAmp::zero() const { return poly_is_zero(p); }

PolyAmp PolyAmp::lap() const {
  // Delta(p(s) Psi) = (p'' - |xi|^2 p) Psi, valid since xi . omega = 0.
  PolyAmp out = *this;
  const std::vector<Complex> p2 = poly_deriv(poly_deriv(p));
  const double k2 = (expsign == 0) ? 0.0 : xi.squaredNorm();
  std::vector<Complex> res(std::max(p.size(), p2.size()), Complex(0.0));
  for (std::size_t k = 0; k < p2.size(); ++k) res[k] += p2[k];
  for (std::size_t k = 0; k < p.size(); ++k) res[k] -= k2 * p[k];
  out.p = std::move(res);
  return out;
}

PolyAmp PolyAmp::dirderiv() const {
  // (c rho . grad): c rho . omega = 1 and c rho . xi = 0 for catalog forms.
  PolyAmp out = *this;
  out.p = poly_deriv(p);
  return out;
}

PolyAmp PolyAmp::antideriv() const {
  PolyAmp out = *this;
  std::vector<Complex> r(p.size() + 1, Complex(0.0));
  for (std::size_t k = 0; k < p.size(); ++k) r[k + 1] = p[k] / double(k + 1);
  out.p = std::move(r);
  return out;
}

PolyAmp PolyAmp::scaled(Complex c) const {
  PolyAmp out = *this;
  for (Complex& a : out.p) a *= c;
  return out;
}

Complex PolyAmp::value(const Vec3& x) const { return to_gen(*this).value(x); }

CVec3 PolyAmp::grad(const Vec3& x) const { return to_gen(*this).grad(x); }

Eigen::Matrix3cd PolyAmp::hess(const Vec3& x) const {
  return to_gen(*this).hess(x);
}

ScalarField PolyAmp::eval(std::shared_ptr<const GridSpec> grid) const {
  return to_gen(*this).eval(grid);
}

GenAmp to_gen(const PolyAmp& a) {
  GenAmp g;
  g.mu = Complex(0.0, double(a.expsign)) * a.xi.cast<Complex>();
  g.d = a.omega.cast<Complex>();
  g.p = a.p;
  return g;
}

bool GenAmp::zero() const { return poly_is_zero(p); }

GenAmp GenAmp::lap() const {
  // Delta[p(w) e^{mu.x}] = ((d.d) p'' + 2 (mu.d) p' + (mu.mu) p) e^{mu.x}.
  GenAmp out = *this;
  const std::vector<Complex> p1 = poly_deriv(p);
  const std::vector<Complex> p2 = poly_deriv(p1);
  const Complex dd = cdot(d, d), md = cdot(mu, d), mm = cdot(mu, mu);
  std::vector<Complex> res(p.size(), Complex(0.0));
  for (std::size_t k = 0; k < p2.size(); ++k) res[k] += dd * p2[k];
  for (std::size_t k = 0; k < p1.size(); ++k) res[k] += 2.0 * md * p1[k];
  for (std::size_t k = 0; k < p.size(); ++k) res[k] += mm * p[k];
  out.p = std::move(res);
  return out;
}

GenAmp GenAmp::dirderiv(const CVec3& c) const {
  // (c . grad)[p(w) e^{mu.x}] = ((c.d) p' + (c.mu) p) e^{mu.x}.
  GenAmp out = *this;
  const Complex cd = cdot(c, d), cm = cdot(c, mu);
  const std::vector<Complex> p1 = poly_deriv(p);
  std::vector<Complex> res(p.size(), Complex(0.0));
  for (std::size_t k = 0; k < p1.size(); ++k) res[k] += cd * p1[k];
  for (std::size_t k = 0; k < p.size(); ++k) res[k] += cm * p[k];
  out.p = std::move(res);
  return out;
}

GenAmp GenAmp::scaled(Complex s) const {
  GenAmp out = *this;
  for (Complex& a : out.p) a *= s;
  return out;
}

Complex GenAmp::value(const Vec3& x) const {
  const Complex w = cdot(d, x);
  return poly_eval(p, w) * std::exp(cdot(mu, x));
}

CVec3 GenAmp::grad(const Vec3& x) const {
  const Complex w = cdot(d, x);
  const Complex e = std::exp(cdot(mu, x));
  const Complex pv = poly_eval(p, w);
  const Complex pd = poly_eval(poly_deriv(p), w);
  CVec3 out;
  for (int a = 0; a < 3; ++a) out[a] = (pd * d[a] + pv * mu[a]) * e;
  return out;
}

Eigen::Matrix3cd GenAmp::hess(const Vec3& x) const {
  const Complex w = cdot(d, x);
  const Complex e = std::exp(cdot(mu, x));
  const Complex pv = poly_eval(p, w);
  const std::vector<Complex> p1 = poly_deriv(p);
  const Complex pd = poly_eval(p1, w);
  const Complex pdd = poly_eval(poly_deriv(p1), w);
  Eigen::Matrix3cd out;
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 3; ++k)
      out(j, k) = (pdd * d[j] * d[k] + pd * (d[j] * mu[k] + d[k] * mu[j]) +
                   pv * mu[j] * mu[k]) *
                  e;
  return out;
}

ScalarField GenAmp::eval(std::shared_ptr<const GridSpec> grid) const {
  ScalarField out(grid);
  for (int id = 0; id < out.size(); ++id) out.v[id] = value(grid->point(id));
  return out;
}

PolyAmp amplitude_form(AmplitudeKind kind, const Vec3& xi,
                       const CgoDirection& dir, CgoRole role) {
  const bool fwd_kind = kind == AmplitudeKind::exp_xi ||
                        kind == AmplitudeKind::xomega_exp ||
                        kind == AmplitudeKind::omega_x;
  if (fwd_kind != (role == CgoRole::forward))
    throw std::invalid_argument("amplitude kind does not match role");
  const bool exp_kind = kind == AmplitudeKind::exp_xi ||
                        kind == AmplitudeKind::xomega_exp ||
                        kind == AmplitudeKind::exp_plus_xi;
  if (exp_kind) {
    if (std::abs(xi.dot(dir.omega)) > 1e-10 ||
        std::abs(xi.dot(dir.omega_tilde)) > 1e-10)
      throw std::invalid_argument(
          "exponential amplitude needs xi orthogonal to the direction plane");
  }
  PolyAmp a;
  a.omega = dir.omega;
  a.xi = xi;
  switch (kind) {
    case AmplitudeKind::exp_xi:
      a.p = {1.0};
      a.expsign = -1;
      break;
    case AmplitudeKind::xomega_exp:
      a.p = {0.0, 1.0};
      a.expsign = -1;
      break;
    case AmplitudeKind::omega_x:
      a.p = {0.0, 1.0};
      break;
    case AmplitudeKind::one:
      a.p = {1.0};
      break;
    case AmplitudeKind::neg_omega_x:
      a.p = {0.0, -1.0};
      break;
    case AmplitudeKind::neg_half_sq:
      a.p = {0.0, 0.0, -0.5};
      break;
    case AmplitudeKind::exp_plus_xi:
      a.p = {1.0};
      a.expsign = 1;
      break;
  }
  return a;
}

ScalarField amplitude(std::shared_ptr<const GridSpec> grid, AmplitudeKind kind,
                      const Vec3& xi, const CgoDirection& dir, CgoRole role) {
  return amplitude_form(kind, xi, dir, role).eval(grid);
}

ScalarField directional_power(const ScalarField& f, const CgoDirection& dir,
                              int power, CgoRole role) {
  const CVec3 c =
      role == CgoRole::forward ? dir.rho : CVec3(dir.rho.conjugate());
  ScalarField cur = f;
  for (int k = 0; k < power; ++k) {
    ScalarField next(f.grid);
    for (int a = 0; a < 3; ++a)
      next.v += c[a] * partial(*f.grid, cur.v, 1, 0, a);
    cur = std::move(next);
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Padded-box spectral transport machinery.

namespace {

void fft3_inplace(Eigen::VectorXcd& data, int n, int sign) {
  static std::mutex mu;
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(mu);
    plan = fftw_plan_dft_3d(n, n, n,
                            reinterpret_cast<fftw_complex*>(data.data()),
                            reinterpret_cast<fftw_complex*>(data.data()),
                            sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(mu);
    fftw_destroy_plan(plan);
  }
}

// Odd padded length: every Fourier index has a distinct negation partner,
// so derivative multipliers commute with complex conjugation exactly and no
// half-sampled bin ever lands on the transport kernel.
int pad_size(const GridSpec& g) { return 2 * g.N - 1; }

Eigen::VectorXcd pad_field(const ScalarField& f) {
  const GridSpec& g = *f.grid;
  const int n = pad_size(g);
  Eigen::VectorXcd out = Eigen::VectorXcd::Zero(std::int64_t(n) * n * n);
  for (int ix = 0; ix < g.N; ++ix)
    for (int iy = 0; iy < g.N; ++iy)
      for (int iz = 0; iz < g.N; ++iz)
        out[(std::int64_t(ix) * n + iy) * n + iz] = f.v[g.flat(ix, iy, iz)];
  return out;
}

double freq_of(int k, int n, double period) {
  if (k > n / 2) k -= n;
  return 2.0 * M_PI * k / period;
}

// Regularized inverse of (2 c . grad)^power with optional exact handling of
// the kernel modes (c . zeta = 0), where Fourier division is singular and a
// particular solution grows polynomially in conj(c) . x.
SpecField transport_impl(const ScalarField& f, const CVec3& c, int power,
                         double* forward_residual,
                         std::vector<GenAmp>* line) {
  SpecField out;
  out.grid = f.grid;
  out.npad = pad_size(*f.grid);
  Eigen::VectorXcd F = pad_field(f);
  fft3_inplace(F, out.npad, FFTW_FORWARD);

  const int n = out.npad;
  const double L = f.grid->L;
  const double nodes = double(std::int64_t(n) * n * n);
  double smax = 0.0;
  {
    std::int64_t idx = 0;
    for (int kx = 0; kx < n; ++kx)
      for (int ky = 0; ky < n; ++ky)
        for (int kz = 0; kz < n; ++kz, ++idx)
          smax =
              std::max(smax, 2.0 * std::abs(cdot(c, out.freq(kx, ky, kz))));
  }
  const double delta = 1e-6 * smax;
  const double line_tol = 1e-8 * smax;
  double fact = 1.0;
  for (int k = 1; k <= power; ++k) fact *= 4.0 * k;  // 4^power * power!

  out.spec = Eigen::VectorXcd::Zero(F.size());
  double rnum = 0.0, rden = 0.0;
  std::int64_t idx = 0;
  for (int kx = 0; kx < n; ++kx)
    for (int ky = 0; ky < n; ++ky)
      for (int kz = 0; kz < n; ++kz, ++idx) {
        const Vec3 z = out.freq(kx, ky, kz);
        const Complex s = Complex(0.0, 2.0) * cdot(c, z);
        rden += std::norm(F[idx]);
        if (line && std::abs(s) <= line_tol) {
          if (F[idx] != Complex(0.0)) {
            // Mode value on the box is (F/nodes) e^{i zeta.(x + L)}.
            const Complex c0 = F[idx] / nodes *
                               std::exp(Complex(0.0, L * (z[0] + z[1] + z[2])));
            GenAmp term;
            term.mu = Complex(0.0, 1.0) * z.cast<Complex>();
            term.d = c.conjugate();
            term.p.assign(power + 1, Complex(0.0));
            term.p[power] = c0 / fact;
            line->push_back(term);
          }
          continue;
        }
        const Complex inv = std::conj(s) / (std::norm(s) + delta * delta);
        Complex m = 1.0, fwd = 1.0;
        for (int p = 0; p < power; ++p) {
          m *= inv;
          fwd *= s;
        }
        out.spec[idx] = F[idx] * m;
        rnum += std::norm(fwd * out.spec[idx] - F[idx]);
      }
  if (forward_residual)
    *forward_residual = rden > 0.0 ? std::sqrt(rnum / rden) : 0.0;
  return out;
}

}  // namespace

Vec3 SpecField::freq(int kx, int ky, int kz) const {
  const double period = npad * grid->dx;
  return {freq_of(kx, npad, period), freq_of(ky, npad, period),
          freq_of(kz, npad, period)};
}

ScalarField SpecField::eval(
    const std::function<Complex(const Vec3&)>& mult) const {
  ScalarField out(grid);
  if (empty()) return out;
  const int n = npad;
  Eigen::VectorXcd tmp = spec;
  std::int64_t idx = 0;
  for (int kx = 0; kx < n; ++kx)
    for (int ky = 0; ky < n; ++ky)
      for (int kz = 0; kz < n; ++kz, ++idx) tmp[idx] *= mult(freq(kx, ky, kz));
  fft3_inplace(tmp, n, FFTW_BACKWARD);
  tmp /= double(std::int64_t(n) * n * n);
  const GridSpec& g = *grid;
  for (int ix = 0; ix < g.N; ++ix)
    for (int iy = 0; iy < g.N; ++iy)
      for (int iz = 0; iz < g.N; ++iz)
        out.v[g.flat(ix, iy, iz)] = tmp[(std::int64_t(ix) * n + iy) * n + iz];
  return out;
}

ScalarField SpecField::eval() const {
  return eval([](const Vec3&) { return Complex(1.0); });
}

SpecField transport_inverse_spec(const ScalarField& f, const CgoDirection& dir,
                                 int power, CgoRole role,
                                 double* forward_residual) {
  const CVec3 c =
      role == CgoRole::forward ? dir.rho : CVec3(dir.rho.conjugate());
  return transport_impl(f, c, power, forward_residual, nullptr);
}

ScalarField transport_inverse(const ScalarField& f, const CgoDirection& dir,
                              int power, CgoRole role,
                              double* forward_residual) {
  const CVec3 c =
      role == CgoRole::forward ? dir.rho : CVec3(dir.rho.conjugate());
  std::vector<GenAmp> line;
  SpecField sf = transport_impl(f, c, power, forward_residual, &line);
  ScalarField out = sf.eval();
  for (const GenAmp& t : line) out.v += t.eval(f.grid).v;
  return out;
}

ScalarField transport_forward(const ScalarField& f, const CgoDirection& dir,
                              int power, CgoRole role) {
  const CVec3 c =
      role == CgoRole::forward ? dir.rho : CVec3(dir.rho.conjugate());
  SpecField sf;
  sf.grid = f.grid;
  sf.npad = pad_size(*f.grid);
  sf.spec = pad_field(f);
  fft3_inplace(sf.spec, sf.npad, FFTW_FORWARD);
  return sf.eval([&](const Vec3& z) {
    const Complex s = Complex(0.0, 2.0) * cdot(c, z);
    Complex m = 1.0;
    for (int p = 0; p < power; ++p) m *= s;
    return m;
  });
}

// ---------------------------------------------------------------------------
// Second amplitude.

namespace {

// Coefficient part of the transport right side; compactly supported fields.
ScalarField transport_coeff_rhs(const PolyAmp& a1, const CoefficientSet& coeffs,
                                const CgoDirection& dir, CgoRole role,
                                std::shared_ptr<const GridSpec> grid) {
  const int m = coeffs.m;
  ScalarField rhs(grid);
  if (m > 3) return rhs;
  const CVec3 rho = dir.rho;
  const CVec3 crho = rho.conjugate();
  for (int id = 0; id < rhs.size(); ++id) {
    const Vec3 x = grid->point(id);
    const Eigen::Matrix3cd A = tensor_at(coeffs.A, id);
    if (role == CgoRole::forward) {
      if (m == 2) {
        const CVec3 g = a1.grad(x);
        Complex rhoB = 0.0;
        for (int k = 0; k < 3; ++k) rhoB += rho[k] * coeffs.B.at(id, k);
        rhs.v[id] = 2.0 * cdot(CVec3(A * rho), g) +
                    Complex(0, 1) * rhoB * a1.value(x);
      } else {  // m == 3
        rhs.v[id] = -cdot(CVec3(A * rho), rho) * a1.value(x);
      }
    } else {
      if (m == 2) {
        const CVec3 g = a1.grad(x);
        Complex Brho = 0.0;  // B* . rho, rho unconjugated
        for (int k = 0; k < 3; ++k) Brho += coeffs.B.at(id, k) * rho[k];
        rhs.v[id] = -2.0 * cdot(CVec3(A * crho), g) -
                    Complex(0, 1) * Brho * a1.value(x);
      } else {  // m == 3
        rhs.v[id] = -cdot(CVec3(A * crho), crho) * a1.value(x);
      }
    }
  }
  return rhs;
}

// Closed-form (Laplacian of alpha1) part of the transport right side.
PolyAmp transport_closed_rhs(const PolyAmp& a1, int m, CgoRole role) {
  if (role == CgoRole::forward) {
    if (m == 2) return a1.dirderiv().lap().scaled(-4.0);
    if (m == 3) return a1.dirderiv().dirderiv().lap().scaled(-12.0);
    PolyAmp d = a1;
    for (int k = 0; k < m - 1; ++k) d = d.dirderiv();
    return d.lap().scaled(-double(m) * std::pow(2.0, m - 1));
  }
  if (m == 2) return a1.dirderiv().lap().scaled(4.0);
  if (m == 3) return a1.dirderiv().dirderiv().lap().scaled(-12.0);
  PolyAmp d = a1;
  for (int k = 0; k < m - 1; ++k) d = d.dirderiv();
  return d.lap().scaled(-double(m) * std::pow(-2.0, m - 1));
}

}  // namespace

SecondAmplitude second_amplitude(AmplitudeKind kind, const Vec3& xi,
                                 const CoefficientSet& coeffs,
                                 const CgoDirection& dir, CgoRole role) {
  const auto grid = coeffs.q.grid;
  const PolyAmp a1 = amplitude_form(kind, xi, dir, role);
  const int m = coeffs.m;
  const CVec3 c =
      role == CgoRole::forward ? dir.rho : CVec3(dir.rho.conjugate());

  SecondAmplitude out;
  // Particular solution for the closed-form part: (2 c . grad)^m maps
  // p(s)Psi to 2^m p^(m)(s)Psi, so integrate m times and divide by 2^m.
  PolyAmp part = transport_closed_rhs(a1, m, role).scaled(std::pow(0.5, m));
  for (int k = 0; k < m; ++k) part = part.antideriv();
  out.closed = part;

  out.coeff_rhs = transport_coeff_rhs(a1, coeffs, dir, role, grid);
  out.num = transport_impl(out.coeff_rhs, c, m, &out.transport_residual,
                           &out.line);
  out.total = out.num.eval();
  for (const GenAmp& t : out.line) out.total.v += t.eval(grid).v;
  if (!out.closed.zero()) out.total.v += out.closed.eval(grid).v;
  return out;
}

AmplitudePair make_amplitude_pair(std::shared_ptr<const GridSpec> grid,
                                  AmplitudeKind kind, AmplitudeKind kind_star,
                                  const Vec3& xi, const CgoDirection& dir,
                                  const CoefficientSet& coeffs2,
                                  const CoefficientSet& coeffs1_star) {
  if (coeffs2.m != coeffs1_star.m)
    throw std::invalid_argument("operator order mismatch in amplitude pair");
  AmplitudePair pair;
  pair.kind = kind;
  pair.kind_star = kind_star;
  pair.xi = xi;
  pair.dir = dir;
  pair.m = coeffs2.m;
  pair.alpha1_form = amplitude_form(kind, xi, dir, CgoRole::forward);
  pair.alpha1_star_form = amplitude_form(kind_star, xi, dir, CgoRole::adjoint);
  pair.alpha1 = pair.alpha1_form.eval(grid);
  pair.alpha1_star = pair.alpha1_star_form.eval(grid);
  pair.alpha2 = second_amplitude(kind, xi, coeffs2, dir, CgoRole::forward);
  pair.alpha2_star =
      second_amplitude(kind_star, xi, coeffs1_star, dir, CgoRole::adjoint);
  return pair;
}

// ---------------------------------------------------------------------------
// Residual order.

namespace {

double binom(int m, int k) {
  double r = 1.0;
  for (int j = 1; j <= k; ++j) r = r * (m - j + 1) / j;
  return r;
}

}  // namespace

double residual_order(const CoefficientSet& coeffs, const CgoDirection& dir,
                      const AmplitudePair& pair,
                      const std::vector<double>& h_list,
                      std::vector<double>* norms_out) {
  if (h_list.size() < 4)
    throw std::invalid_argument("need at least 4 values of h");
  for (double h : h_list)
    if (h < 0.1 || h > 0.5)
      throw std::invalid_argument("h outside [0.1, 0.5]");
  const auto grid = coeffs.q.grid;
  const int m = coeffs.m;
  const CVec3 rho = dir.rho;
  const CVec3 rho2 = 2.0 * rho;
  const int M = grid->num_nodes();

  // alpha1 is one closed form; alpha2 is closed + kernel-line forms plus the
  // numeric spectrum.
  std::vector<GenAmp> G1{to_gen(pair.alpha1_form)};
  std::vector<GenAmp> G2 = pair.alpha2.line;
  if (!pair.alpha2.closed.zero()) G2.push_back(to_gen(pair.alpha2.closed));
  const SpecField& a2n = pair.alpha2.num;

  auto eval_sum = [&](const std::vector<GenAmp>& parts) {
    ScalarField out(grid);
    for (const GenAmp& g : parts) out.v += g.eval(grid).v;
    return out;
  };
  // Delta^lap_pow (2 rho . grad)^dir_pow on a closed-form group.
  auto apply_ops = [&](std::vector<GenAmp> parts, int lap_pow, int dir_pow) {
    for (GenAmp& g : parts) {
      for (int p = 0; p < lap_pow; ++p) g = g.lap();
      for (int p = 0; p < dir_pow; ++p) g = g.dirderiv(rho2);
    }
    return parts;
  };
  // The same operator on the numeric spectrum.
  auto num_deriv = [&](int lap_pow, int dir_pow) {
    return a2n.eval([&](const Vec3& z) {
      Complex mlt = 1.0;
      for (int p = 0; p < lap_pow; ++p) mlt *= -z.squaredNorm();
      const Complex s = Complex(0.0, 2.0) * cdot(rho, z);
      for (int p = 0; p < dir_pow; ++p) mlt *= s;
      return mlt;
    });
  };
  auto alpha1_deriv = [&](int lap_pow, int dir_pow) {
    return eval_sum(apply_ops(G1, lap_pow, dir_pow));
  };
  auto alpha2_deriv = [&](int lap_pow, int dir_pow) {
    ScalarField f = num_deriv(lap_pow, dir_pow);
    f.v += eval_sum(apply_ops(G2, lap_pow, dir_pow)).v;
    return f;
  };

  // Perturbation (-A dd - iB.grad + q) applied to a closed-form group.
  auto perturb_closed = [&](const std::vector<GenAmp>& parts) {
    ScalarField out(grid);
    for (int id = 0; id < M; ++id) {
      const Vec3 x = grid->point(id);
      const Eigen::Matrix3cd A = tensor_at(coeffs.A, id);
      Complex acc = 0.0;
      for (const GenAmp& g : parts) {
        const Eigen::Matrix3cd H = g.hess(x);
        const CVec3 gr = g.grad(x);
        for (int j = 0; j < 3; ++j)
          for (int k = 0; k < 3; ++k) acc -= A(j, k) * H(j, k);
        for (int k = 0; k < 3; ++k)
          acc -= Complex(0, 1) * coeffs.B.at(id, k) * gr[k];
        acc += coeffs.q.v[id] * g.value(x);
      }
      out.v[id] = acc;
    }
    return out;
  };

  const double sgn = std::pow(-1.0, m);
  ScalarField L_a1 = alpha1_deriv(m, 0);
  L_a1.v *= sgn;
  L_a1.v += perturb_closed(G1).v;

  ScalarField L_a2 = alpha2_deriv(m, 0);
  L_a2.v *= sgn;
  L_a2.v += perturb_closed(G2).v;
  {
    // Perturbation of the numeric part via spectral derivatives.
    ScalarField d1[3], d2[6];
    for (int a = 0; a < 3; ++a)
      d1[a] = a2n.eval([&](const Vec3& z) { return Complex(0, 1) * z[a]; });
    for (int j = 0; j < 3; ++j)
      for (int k = j; k < 3; ++k)
        d2[sym_index(j, k)] =
            a2n.eval([&](const Vec3& z) { return Complex(-z[j] * z[k]); });
    ScalarField num_val = a2n.eval();
    for (int id = 0; id < M; ++id) {
      const Eigen::Matrix3cd A = tensor_at(coeffs.A, id);
      Complex acc = 0.0;
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) acc -= A(j, k) * d2[sym_index(j, k)].v[id];
      for (int k = 0; k < 3; ++k)
        acc -= Complex(0, 1) * coeffs.B.at(id, k) * d1[k].v[id];
      acc += coeffs.q.v[id] * num_val.v[id];
      L_a2.v[id] += acc;
    }
  }

  // -2(A rho).grad alpha - i(rho.B) alpha, and (A rho.rho) alpha.
  auto first_order = [&](const std::function<Complex(int)>& val,
                         const std::function<CVec3(int)>& grd) {
    ScalarField p1(grid), arr(grid);
    for (int id = 0; id < M; ++id) {
      const Eigen::Matrix3cd A = tensor_at(coeffs.A, id);
      const CVec3 Ar = A * rho;
      const CVec3 g = grd(id);
      Complex rhoB = 0.0;
      for (int k = 0; k < 3; ++k) rhoB += rho[k] * coeffs.B.at(id, k);
      const Complex v = val(id);
      p1.v[id] = -2.0 * cdot(Ar, g) - Complex(0, 1) * rhoB * v;
      arr.v[id] = cdot(Ar, rho) * v;
    }
    return std::make_pair(p1, arr);
  };
  auto closed_val = [&](const std::vector<GenAmp>& parts, int id) {
    Complex acc = 0.0;
    for (const GenAmp& g : parts) acc += g.value(grid->point(id));
    return acc;
  };
  auto closed_grad = [&](const std::vector<GenAmp>& parts, int id) {
    CVec3 acc = CVec3::Zero();
    for (const GenAmp& g : parts) acc += g.grad(grid->point(id));
    return acc;
  };
  auto [P1_a1, ARR_a1] =
      first_order([&](int id) { return closed_val(G1, id); },
                  [&](int id) { return closed_grad(G1, id); });
  ScalarField a2grad[3];
  for (int a = 0; a < 3; ++a)
    a2grad[a] = a2n.eval([&](const Vec3& z) { return Complex(0, 1) * z[a]; });
  ScalarField a2val = a2n.eval();
  auto [P1_a2, ARR_a2] = first_order(
      [&](int id) { return a2val.v[id] + closed_val(G2, id); },
      [&](int id) {
        CVec3 g{a2grad[0].v[id], a2grad[1].v[id], a2grad[2].v[id]};
        return CVec3(g + closed_grad(G2, id));
      });

  // Binomial tail Delta^{m-k}(2 rho.grad)^k and the transport term.
  std::vector<ScalarField> D1, D2;  // index k-1, k = 1..m-1
  for (int k = 1; k <= m - 1; ++k) {
    D1.push_back(alpha1_deriv(m - k, k));
    D2.push_back(alpha2_deriv(m - k, k));
  }
  const ScalarField T3 = alpha2_deriv(0, m);

  std::vector<double> norms;
  for (double h : h_list) {
    const double h2m = std::pow(h, 2 * m);
    ScalarField gsum(grid);
    gsum.v = h2m * (L_a1.v + h * L_a2.v + P1_a2.v);
    for (int k = 1; k <= m - 1; ++k)
      gsum.v += sgn * binom(m, k) * std::pow(h, 2 * m - k) *
                (D1[k - 1].v + h * D2[k - 1].v);
    gsum.v += std::pow(h, m + 1) * sgn * T3.v;
    gsum.v += std::pow(h, 2 * m - 1) * (P1_a1.v - ARR_a2.v);
    gsum.v -= std::pow(h, 2 * m - 2) * ARR_a1.v;
    norms.push_back(l2_norm(gsum));
  }
  if (norms_out) *norms_out = norms;

  bool degenerate = true;
  for (double n : norms)
    if (n > 1e-13) degenerate = false;
  if (degenerate) throw std::runtime_error("degenerate residual fit");

  const int n = int(h_list.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    const double x = std::log(h_list[i]), y = std::log(norms[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---------------------------------------------------------------------------
// Boundary traces.

NavierTrace boundary_traces(const AmplitudePair& pair, double h, CgoRole role) {
  if (h < 0.15 || h > 0.5)
    throw std::invalid_argument("h outside the trace guard range [0.15, 0.5]");
  const auto grid = pair.alpha1.grid;
  const GridSpec& g = *grid;
  const int m = pair.m;
  const bool fwd = role == CgoRole::forward;
  const CVec3 c = fwd ? pair.dir.rho : CVec3(pair.dir.rho.conjugate());
  const double ss = fwd ? 1.0 : -1.0;

  // w_0 = alpha1 + h alpha2; the phase-conjugated recursion is
  // w_{j+1} = -(Delta w_j + ss (2/h)(c . grad) w_j).
  // Closed parts stay in exact algebra; the numeric part carries an
  // accumulated Fourier multiplier on the alpha2 spectrum.
  const SecondAmplitude& a2 = fwd ? pair.alpha2 : pair.alpha2_star;
  std::vector<GenAmp> W;
  W.push_back(to_gen(fwd ? pair.alpha1_form : pair.alpha1_star_form));
  if (!a2.closed.zero()) W.push_back(to_gen(a2.closed).scaled(h));
  for (const GenAmp& t : a2.line) W.push_back(t.scaled(h));
  std::function<Complex(const Vec3&)> mult = [](const Vec3&) {
    return Complex(1.0);
  };

  NavierTrace out(grid, m);
  for (int j = 0; j < m; ++j) {
    ScalarField w = a2.num.eval(mult);
    w.v *= h;
    for (const GenAmp& t : W)
      if (!t.zero()) w.v += t.eval(grid).v;
    for (int b = 0; b < int(g.boundary_nodes.size()); ++b) {
      const int id = g.boundary_nodes[b];
      const Vec3 x = g.point(id);
      const Complex phase =
          fwd ? std::exp(Complex(x.dot(pair.dir.omega) / h,
                                 x.dot(pair.dir.omega_tilde) / h))
              : std::exp(Complex(-x.dot(pair.dir.omega) / h,
                                 x.dot(pair.dir.omega_tilde) / h));
      out.f[j][b] = phase * w.v[id];
      if (std::abs(out.f[j][b]) > 1e12)
        throw std::runtime_error("trace magnitude exceeds the 1e12 guard");
    }
    if (j + 1 == m) break;
    for (GenAmp& t : W)
      t = gen_add(t.lap(), t.dirderiv(c).scaled(ss * 2.0 / h)).scaled(-1.0);
    const auto prev = mult;
    const CVec3 cc = c;
    mult = [prev, cc, ss, h](const Vec3& z) {
      const Complex dz = Complex(0, 1) * cdot(cc, z);
      return prev(z) * -(Complex(-z.squaredNorm()) + ss * (2.0 / h) * dz);
    };
  }
  return out;
}

}  // namespace polyharm
