#include "polyharm/reconstruct.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <mutex>
#include <random>
#include <stdexcept>
#include <thread>

namespace polyharm {

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t trace_hash(std::uint64_t seed, const NavierTrace& f) {
  std::uint64_t h = 14695981039346656037ull ^ seed;
  for (const auto& comp : f.f)
    h = fnv1a(h, comp.data(), sizeof(Complex) * comp.size());
  return h;
}

}  // namespace

DtnPair::DtnPair(const CoefficientSet& c1, const CoefficientSet& c2)
    : grid(c1.A.grid), coeffs1(c1), coeffs2(c2) {
  check_same_grid(*c1.A.grid, *c2.A.grid);
  if (c1.m != c2.m)
    throw std::invalid_argument("operator orders differ between the two sets");
  coeffs1_star = adjoint_coefficients(c1);
  op1 = std::make_shared<ForwardOperator>(c1);
  op2 = std::make_shared<ForwardOperator>(c2);
  op1_adjoint = std::make_shared<ForwardOperator>(c1, true);
}

Complex pairing(const DtnPair& pair, const NavierTrace& f,
                const NavierTrace& f_star) {
  const GridSpec& g = *pair.grid;
  const int m = pair.m();
  NeumannTrace g1 = neumann_trace(pair.op1->solve(f));
  NeumannTrace g2 = neumann_trace(pair.op2->solve(f));
  if (pair.noise_level > 0.0) {
    std::mt19937_64 rng(trace_hash(pair.noise_seed, f));
    std::normal_distribution<double> nd;
    for (int j = 0; j < m; ++j)
      for (int b = 0; b < g.num_boundary(); ++b)
        g2.g[j][b] *= 1.0 + pair.noise_level * nd(rng);
  }
  Complex acc = 0.0;
  for (int j = 0; j < m; ++j)
    for (int b = 0; b < g.num_boundary(); ++b)
      acc += g.surf_weight[b] * (g2.g[j][b] - g1.g[j][b]) *
             std::conj(f_star.f[m - 1 - j][b]);
  return acc;
}

Complex pairing(const CoefficientSet& c1, const CoefficientSet& c2,
                const NavierTrace& f, const NavierTrace& f_star) {
  return pairing(DtnPair(c1, c2), f, f_star);
}

XiLattice make_xi_lattice(double R, double delta) {
  if (R <= 0.0 || delta <= 0.0)
    throw std::invalid_argument("lattice needs positive radius and spacing");
  XiLattice out;
  out.R = R;
  out.delta = delta;
  const int K = static_cast<int>(std::floor(R / delta + 1e-12));
  for (int kx = -K; kx <= K; ++kx)
    for (int ky = -K; ky <= K; ++ky)
      for (int kz = -K; kz <= K; ++kz) {
        const Vec3 xi(kx * delta, ky * delta, kz * delta);
        if (xi.norm() <= R + 1e-12) out.points.push_back(xi);
      }
  return out;
}

namespace {

// Volume quadratures of the coefficient terms against the closed-form
// amplitude product: IA1 = (A rho.rho, alpha1 conj(alpha1*)),
// IA2 = 2 (A rho . grad alpha1, conj(alpha1*)), IB = i (rho.B alpha1, ...).
struct CorrIntegrals {
  Complex IA1{0.0}, IA2{0.0}, IB{0.0};
};

CorrIntegrals corrections(const GridSpec& g, const ReconFields& known,
                          const CVec3& rho, const PolyAmp& form,
                          const PolyAmp& form_star) {
  CorrIntegrals out;
  if (!known.A && !known.B) return out;
  for (int id = 0; id < g.num_nodes(); ++id) {
    const Vec3 x = g.point(id);
    const double w = g.vol_weight[id];
    const Complex prod_s = std::conj(form_star.value(x));
    if (known.A) {
      const Eigen::Matrix3cd A = tensor_at(*known.A, id);
      const CVec3 Ar = A * rho;
      Complex rAr = 0.0;
      for (int k = 0; k < 3; ++k) rAr += rho[k] * Ar[k];
      out.IA1 += w * rAr * form.value(x) * prod_s;
      const CVec3 ga = form.grad(x);
      Complex Ag = 0.0;
      for (int k = 0; k < 3; ++k) Ag += Ar[k] * ga[k];
      out.IA2 += w * 2.0 * Ag * prod_s;
    }
    if (known.B) {
      Complex rB = 0.0;
      for (int k = 0; k < 3; ++k) rB += rho[k] * known.B->at(id, k);
      out.IB += w * Complex(0.0, 1.0) * rB * form.value(x) * prod_s;
    }
  }
  return out;
}

Complex cgo_pairing(const DtnPair& pair, AmplitudeKind kind,
                    AmplitudeKind kind_star, const Vec3& xi,
                    const CgoDirection& dir, double h) {
  AmplitudePair amps = make_amplitude_pair(pair.grid, kind, kind_star, xi, dir,
                                           pair.coeffs2, pair.coeffs1_star);
  NavierTrace f = boundary_traces(amps, h, CgoRole::forward);
  NavierTrace fs = boundary_traces(amps, h, CgoRole::adjoint);
  return pairing(pair, f, fs);
}

// The semiclassical expansion of the boundary pairing reads
//   pairing = -h^{-1} [ h^{-1} IA1 + IA2 + IB ] + O(1),
// so  E := -h * pairing - (known correction integrals)  isolates the
// contribution of the not-yet-reconstructed coefficient parts, each entering
// through its own closed-form channel.
Complex eliminated(const DtnPair& pair, AmplitudeKind kind,
                   AmplitudeKind kind_star, const Vec3& xi,
                   const CgoDirection& dir, double h, const ReconFields& known,
                   double* correction_mag = nullptr) {
  const Complex p = cgo_pairing(pair, kind, kind_star, xi, dir, h);
  const PolyAmp form = amplitude_form(kind, xi, dir, CgoRole::forward);
  const PolyAmp form_s = amplitude_form(kind_star, xi, dir, CgoRole::adjoint);
  const CorrIntegrals ci =
      corrections(*pair.grid, known, dir.rho, form, form_s);
  const Complex corr = ci.IA1 / h + ci.IA2 + ci.IB;
  if (correction_mag) *correction_mag = std::abs(corr);
  return -h * p - corr;
}

std::array<CgoDirection, 2> polarizations(const Vec3& xi) {
  // Any orthonormal plane works at xi = 0 (orthogonality is vacuous there).
  const auto frame = xi.norm() == 0.0
                         ? std::array<Vec3, 3>{Vec3(1, 0, 0), Vec3(0, 1, 0),
                                               Vec3(0, 0, 1)}
                         : frame_for_xi(xi);
  return {make_direction(frame[0], frame[1]),
          make_direction(frame[0], -frame[1])};
}

}  // namespace

Complex estimate_A_quadratic(const DtnPair& pair, const Vec3& xi,
                             const CgoDirection& dir, double h) {
  if (pair.m() <= 2)
    throw std::invalid_argument("quadratic tensor probe needs order above 2");
  if (std::abs(xi.dot(dir.omega)) > 1e-10 ||
      std::abs(xi.dot(dir.omega_tilde)) > 1e-10)
    throw std::invalid_argument("xi must be orthogonal to the design plane");
  // Unknown channel: h^{-1} (A' rho.rho)^(xi).
  return h * eliminated(pair, AmplitudeKind::exp_xi, AmplitudeKind::one, xi,
                        dir, h, {});
}

Eigen::Matrix3cd assemble_A_prime(Complex m_plus, Complex m_minus,
                                  const std::array<Vec3, 3>& frame) {
  Eigen::Matrix3cd M = Eigen::Matrix3cd::Zero();
  const Complex l12 = (m_plus - m_minus) / Complex(0.0, 4.0);
  const Complex l11 = (m_plus + m_minus) / 4.0;
  M(0, 0) = l11;
  M(1, 1) = -l11;
  M(0, 1) = M(1, 0) = l12;
  Eigen::Matrix3d B;
  for (int r = 0; r < 3; ++r) B.row(r) = frame[r].transpose();
  return B.transpose() * M * B;
}

Eigen::Matrix3cd estimate_A_prime(const DtnPair& pair, const Vec3& xi,
                                  double h) {
  if (xi.norm() == 0.0)
    throw std::invalid_argument("frame undefined at zero frequency");
  const auto frame = frame_for_xi(xi);
  const auto dirs = polarizations(xi);
  const Complex mp = estimate_A_quadratic(pair, xi, dirs[0], h);
  const Complex mm = estimate_A_quadratic(pair, xi, dirs[1], h);
  return assemble_A_prime(mp, mm, frame);
}

std::array<Complex, 2> estimate_V_tangential(const DtnPair& pair,
                                             const Vec3& xi, double h,
                                             const ReconFields& known) {
  const auto dirs = polarizations(xi);
  Complex v[2];
  for (int s = 0; s < 2; ++s)
    // Unknown channel: integrating (rho.grad)(V.rho) against
    // (x.omega) e^{-i x.xi} by parts leaves -h^{-1} rho.V^.
    v[s] = -h * eliminated(pair, AmplitudeKind::xomega_exp, AmplitudeKind::one,
                           xi, dirs[s], h, known);
  return {(v[0] + v[1]) / 2.0, (v[0] - v[1]) / Complex(0.0, 2.0)};
}

Complex estimate_thetaV(const DtnPair& pair, const Vec3& xi, double h,
                        const ReconFields& known) {
  const auto dirs = polarizations(xi);
  // Unknown channel: the grad-potential part of V integrated twice by parts
  // against -(omega.x)^2/2 leaves -h^{-1} thetaV^.
  return -h * eliminated(pair, AmplitudeKind::exp_xi,
                         AmplitudeKind::neg_half_sq, xi, dirs[0], h, known);
}

CVec3 estimate_V(const DtnPair& pair, const Vec3& xi, double h,
                 const ReconFields& known, const VectorField* V_tangential) {
  const auto frame = frame_for_xi(xi);
  const auto tang = estimate_V_tangential(pair, xi, h, known);
  ReconFields radial_known = known;
  SymTensorField augmented(pair.grid);
  if (V_tangential) {
    augmented = sym_grad(*V_tangential);
    if (known.A) augmented.v += known.A->v;
    radial_known.A = &augmented;
  }
  const Complex thv = estimate_thetaV(pair, xi, h, radial_known);
  CVec3 out = CVec3::Zero();
  for (int a = 0; a < 2; ++a) out += tang[a] * frame[a].cast<Complex>();
  out += Complex(0.0, xi.norm()) * thv * frame[2].cast<Complex>();
  return out;
}

std::array<Complex, 2> estimate_B_tangential(const DtnPair& pair,
                                             const Vec3& xi, double h,
                                             const ReconFields& known) {
  const auto dirs = polarizations(xi);
  Complex b[2];
  for (int s = 0; s < 2; ++s)
    // Unknown channel: i (rho.B)^(xi).
    b[s] = Complex(0.0, -1.0) *
           eliminated(pair, AmplitudeKind::exp_xi, AmplitudeKind::one, xi,
                      dirs[s], h, known);
  return {(b[0] + b[1]) / 2.0, (b[0] - b[1]) / Complex(0.0, 2.0)};
}

Complex estimate_thetaB(const DtnPair& pair, const Vec3& xi, double h,
                        const ReconFields& known) {
  const auto dirs = polarizations(xi);
  // Unknown channel: the grad-potential part of B integrated by parts
  // against -(omega.x) leaves i thetaB^.
  return Complex(0.0, -1.0) *
         eliminated(pair, AmplitudeKind::exp_xi, AmplitudeKind::neg_omega_x,
                    xi, dirs[0], h, known);
}

CVec3 estimate_B(const DtnPair& pair, const Vec3& xi, double h,
                 const ReconFields& known, const VectorField* B_tangential) {
  const auto frame = frame_for_xi(xi);
  const auto tang = estimate_B_tangential(pair, xi, h, known);
  ReconFields radial_known = known;
  if (B_tangential) radial_known.B = B_tangential;
  const Complex thb = estimate_thetaB(pair, xi, h, radial_known);
  CVec3 out = CVec3::Zero();
  for (int a = 0; a < 2; ++a) out += tang[a] * frame[a].cast<Complex>();
  out += Complex(0.0, xi.norm()) * thb * frame[2].cast<Complex>();
  return out;
}

Complex estimate_thetaA(const DtnPair& pair, const Vec3& xi, double h,
                        const ReconFields& known) {
  if (pair.m() <= 2)
    throw std::invalid_argument("isotropic tensor probe needs order above 2");
  const auto dirs = polarizations(xi);
  // Unknown channel: 2 thetaA (rho.grad alpha1) = 2 thetaA for alpha1 = w.x.
  return eliminated(pair, AmplitudeKind::omega_x, AmplitudeKind::exp_plus_xi,
                    xi, dirs[0], h, known) /
         2.0;
}

Complex estimate_a_isotropic(const DtnPair& pair, const Vec3& xi, double h,
                             const ReconFields& known) {
  if (pair.m() != 2)
    throw std::invalid_argument("isotropic scalar probe is the order-2 form");
  const auto dirs = polarizations(xi);
  // a id kills the quadratic channel (rho.rho = 0); the target enters as
  // 2 a rho.grad alpha1 = 2 a e^{-i x.xi}.
  return eliminated(pair, AmplitudeKind::xomega_exp, AmplitudeKind::one, xi,
                    dirs[0], h, known) /
         2.0;
}

Complex estimate_q(const DtnPair& pair, const Vec3& xi, double h,
                   const ReconFields& known) {
  const auto dirs = polarizations(xi);
  const CgoDirection& dir = dirs[0];
  const Complex p = cgo_pairing(pair, AmplitudeKind::exp_xi,
                                AmplitudeKind::one, xi, dir, h);
  if (!known.A && !known.B) return p;
  // Subtract the full leading expansion of (A D.D + B.D) e^{x.rho/h} alpha1
  // against conj(alpha1*) using the reconstructed fields.
  const GridSpec& g = *pair.grid;
  const PolyAmp form =
      amplitude_form(AmplitudeKind::exp_xi, xi, dir, CgoRole::forward);
  const PolyAmp form_s =
      amplitude_form(AmplitudeKind::one, xi, dir, CgoRole::adjoint);
  Complex corr = 0.0;
  for (int id = 0; id < g.num_nodes(); ++id) {
    const Vec3 x = g.point(id);
    const double w = g.vol_weight[id];
    const Complex a1 = form.value(x);
    const Complex prod_s = std::conj(form_s.value(x));
    if (known.A) {
      const Eigen::Matrix3cd A = tensor_at(*known.A, id);
      const CVec3 rho = dir.rho;
      const CVec3 Ar = A * rho;
      Complex rAr = 0.0, Ag = 0.0, AH = 0.0;
      const CVec3 ga = form.grad(x);
      const Eigen::Matrix3cd H = form.hess(x);
      for (int j = 0; j < 3; ++j) {
        rAr += rho[j] * Ar[j];
        Ag += Ar[j] * ga[j];
        for (int k = 0; k < 3; ++k) AH += A(j, k) * H(j, k);
      }
      corr -= w * (rAr * a1 / (h * h) + 2.0 * Ag / h + AH) * prod_s;
    }
    if (known.B) {
      Complex rB = 0.0, Bg = 0.0;
      const CVec3 ga = form.grad(x);
      for (int k = 0; k < 3; ++k) {
        rB += dir.rho[k] * known.B->at(id, k);
        Bg += known.B->at(id, k) * ga[k];
      }
      corr += w * Complex(0.0, -1.0) * (rB * a1 / h + Bg) * prod_s;
    }
  }
  return p - corr;
}

namespace {

void add_wave(Eigen::VectorXcd& acc, const GridSpec& g, int ncomp, int c,
              const Vec3& xi, Complex coeff) {
  for (int id = 0; id < g.num_nodes(); ++id)
    acc[std::int64_t(id) * ncomp + c] +=
        coeff * std::exp(Complex(0.0, g.point(id).dot(xi)));
}

double lattice_weight(const FourierSamples& s) {
  // Uniform-lattice trapezoid: delta^3 per sample.  Recover delta from the
  // smallest nonzero coordinate step present.
  double delta = 0.0;
  for (const Vec3& xi : s.xi_grid)
    for (int a = 0; a < 3; ++a) {
      const double v = std::abs(xi[a]);
      if (v > 1e-12 && (delta == 0.0 || v < delta)) delta = v;
    }
  if (delta == 0.0)
    throw std::invalid_argument("sample set has no resolvable spacing");
  return delta * delta * delta;
}

}  // namespace

ScalarField lowpass_scalar(std::shared_ptr<const GridSpec> grid,
                           const FourierSamples& samples, double R,
                           int component) {
  const double w = lattice_weight(samples) / std::pow(2.0 * M_PI, 3);
  ScalarField out(grid);
  for (std::size_t i = 0; i < samples.xi_grid.size(); ++i) {
    const Vec3& xi = samples.xi_grid[i];
    if (xi.norm() > R + 1e-12) continue;
    add_wave(out.v, *grid, 1, 0, xi, w * samples.entries[i][component]);
  }
  return out;
}

VectorField lowpass_vector(std::shared_ptr<const GridSpec> grid,
                           const FourierSamples& samples, double R) {
  const double w = lattice_weight(samples) / std::pow(2.0 * M_PI, 3);
  VectorField out(grid);
  for (std::size_t i = 0; i < samples.xi_grid.size(); ++i) {
    const Vec3& xi = samples.xi_grid[i];
    if (xi.norm() > R + 1e-12) continue;
    for (int c = 0; c < 3; ++c)
      add_wave(out.v, *grid, 3, c, xi, w * samples.entries[i][c]);
  }
  return out;
}

SymTensorField lowpass_tensor(std::shared_ptr<const GridSpec> grid,
                              const FourierSamples* A_prime,
                              const FourierSamples* V,
                              const FourierSamples* theta_A, double R) {
  const FourierSamples* ref = A_prime ? A_prime : (V ? V : theta_A);
  if (!ref) throw std::invalid_argument("no sample sets supplied");
  const double w = lattice_weight(*ref) / std::pow(2.0 * M_PI, 3);
  SymTensorField out(grid);
  for (std::size_t i = 0; i < ref->xi_grid.size(); ++i) {
    const Vec3& xi = ref->xi_grid[i];
    if (xi.norm() > R + 1e-12) continue;
    Eigen::Matrix3cd M = Eigen::Matrix3cd::Zero();
    if (A_prime)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) M(j, k) += A_prime->entries[i][3 * j + k];
    if (V) {
      CVec3 vh;
      for (int c = 0; c < 3; ++c) vh[c] = V->entries[i][c];
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k)
          M(j, k) += Complex(0.0, 0.5) * (xi[j] * vh[k] + vh[j] * xi[k]);
    }
    if (theta_A)
      for (int j = 0; j < 3; ++j) M(j, j) += theta_A->entries[i][0];
    for (int j = 0; j < 3; ++j)
      for (int k = j; k < 3; ++k)
        add_wave(out.v, *grid, 6, sym_index(j, k), xi, w * M(j, k));
  }
  return out;
}

StabilityFit fit_stability(const std::vector<StabilityRecord>& records,
                           const std::string& key) {
  if (records.size() < 5)
    throw std::invalid_argument("stability fit needs at least 5 records");
  std::vector<std::pair<double, double>> pts;  // (proxy, error)
  for (const auto& r : records) {
    if (r.dtn_norm_proxy <= 0.0)
      throw std::invalid_argument("stability fit needs positive proxies");
    pts.emplace_back(r.dtn_norm_proxy, r.err_l2.at(key));
  }
  std::sort(pts.begin(), pts.end());
  if (pts.back().first / pts.front().first < 100.0)
    throw std::invalid_argument("proxy spread below two decades");

  StabilityFit out;
  double emax = 0.0, emin = 1e300, seen_max = 0.0;
  out.monotone = true;
  for (const auto& [t, e] : pts) {
    emax = std::max(emax, e);
    emin = std::min(emin, e);
    if (e < 0.9 * seen_max) out.monotone = false;
    seen_max = std::max(seen_max, e);
  }
  out.degenerate = emax - emin <= 1e-12 * std::max(emax, 1e-300);

  const int n = static_cast<int>(pts.size());
  // Log-type model: scan mu, linear least squares in (c_log, c_root).
  double best = 1e300;
  for (double mu = 0.02; mu <= 8.0; mu += 0.01) {
    double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0;
    for (const auto& [t, e] : pts) {
      const double f1 = std::pow(std::abs(std::log(t)), -mu);
      const double f2 = std::sqrt(t);
      a11 += f1 * f1;
      a12 += f1 * f2;
      a22 += f2 * f2;
      b1 += f1 * e;
      b2 += f2 * e;
    }
    const double det = a11 * a22 - a12 * a12;
    if (std::abs(det) < 1e-300) continue;
    const double c1 = (b1 * a22 - b2 * a12) / det;
    const double c2 = (a11 * b2 - a12 * b1) / det;
    double ss = 0.0;
    for (const auto& [t, e] : pts) {
      const double model =
          c1 * std::pow(std::abs(std::log(t)), -mu) + c2 * std::sqrt(t);
      ss += (e - model) * (e - model);
    }
    if (ss < best) {
      best = ss;
      out.mu = mu;
      out.c_log = c1;
      out.c_root = c2;
    }
  }
  out.residual = std::sqrt(best / n);

  // Pure power law ln e = ln a + b ln t, residual reported in error units.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int np = 0;
  for (const auto& [t, e] : pts) {
    if (e <= 0.0) continue;
    const double lx = std::log(t), ly = std::log(e);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++np;
  }
  if (np >= 2 && np * sxx - sx * sx > 1e-300) {
    out.power_exponent = (np * sxy - sx * sy) / (np * sxx - sx * sx);
    const double lna = (sy - out.power_exponent * sx) / np;
    double ss = 0.0;
    for (const auto& [t, e] : pts) {
      const double model = std::exp(lna) * std::pow(t, out.power_exponent);
      ss += (e - model) * (e - model);
    }
    out.power_residual = std::sqrt(ss / n);
  } else {
    out.power_residual = out.residual;
  }
  return out;
}

int worker_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("POLYHARM_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

namespace {

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto body = [&] {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

FourierSamples empty_samples(const std::string& kind, double h,
                             const XiLattice& lat, int width) {
  FourierSamples s;
  s.kind = kind;
  s.h_used = h;
  s.xi_grid = lat.points;
  s.entries.assign(lat.points.size(), Eigen::VectorXcd::Zero(width));
  s.diagnostics.assign(lat.points.size(), 0.0);
  return s;
}

}  // namespace

PipelineResult run_pipeline(const DtnPair& pair, double h,
                            const XiLattice& lattice,
                            const std::vector<std::string>& stages,
                            int workers) {
  PipelineResult out;
  const int W = worker_count(workers);
  const int n = static_cast<int>(lattice.points.size());
  const auto grid = pair.grid;

  // The tensor part known so far, grown stage by stage.
  SymTensorField A_known(grid);
  bool have_A = false;

  for (const std::string& stage : stages) {
    if (stage == "A_prime") {
      FourierSamples s = empty_samples("A_prime_matrix", h, lattice, 9);
      parallel_for(n, W, [&](int i) {
        const Vec3& xi = lattice.points[i];
        if (xi.norm() == 0.0) return;  // frame blind spot, entry stays zero
        const Eigen::Matrix3cd M = estimate_A_prime(pair, xi, h);
        for (int j = 0; j < 3; ++j)
          for (int k = 0; k < 3; ++k) s.entries[i][3 * j + k] = M(j, k);
      });
      out.A_prime = lowpass_tensor(grid, &s, nullptr, nullptr, lattice.R);
      out.samples["A_prime"] = std::move(s);
      A_known.v += out.A_prime->v;
      have_A = true;
    } else if (stage == "V") {
      ReconFields known;
      if (have_A) known.A = &A_known;
      FourierSamples tang = empty_samples("rhoV", h, lattice, 3);
      parallel_for(n, W, [&](int i) {
        const Vec3& xi = lattice.points[i];
        if (xi.norm() == 0.0) return;
        const auto frame = frame_for_xi(xi);
        const auto v = estimate_V_tangential(pair, xi, h, known);
        CVec3 vt = v[0] * frame[0].cast<Complex>() +
                   v[1] * frame[1].cast<Complex>();
        for (int c = 0; c < 3; ++c) tang.entries[i][c] = vt[c];
      });
      VectorField Vt = lowpass_vector(grid, tang, lattice.R);
      SymTensorField Aaug(grid);
      Aaug.v = sym_grad(Vt).v;
      if (have_A) Aaug.v += A_known.v;
      ReconFields radial_known;
      radial_known.A = &Aaug;
      FourierSamples full = empty_samples("V", h, lattice, 3);
      FourierSamples thv = empty_samples("thetaV", h, lattice, 1);
      parallel_for(n, W, [&](int i) {
        const Vec3& xi = lattice.points[i];
        if (xi.norm() == 0.0) return;
        const Complex t = estimate_thetaV(pair, xi, h, radial_known);
        thv.entries[i][0] = t;
        const CVec3 radial =
            Complex(0.0, xi.norm()) * t * (xi / xi.norm()).cast<Complex>();
        for (int c = 0; c < 3; ++c)
          full.entries[i][c] = tang.entries[i][c] + radial[c];
      });
      out.V = lowpass_vector(grid, full, lattice.R);
      out.samples["rhoV"] = std::move(tang);
      out.samples["thetaV"] = std::move(thv);
      out.samples["V"] = std::move(full);
      A_known.v += sym_grad(*out.V).v;
      have_A = true;
    } else if (stage == "a_iso") {
      FourierSamples s = empty_samples("a_iso", h, lattice, 1);
      parallel_for(n, W, [&](int i) {
        s.entries[i][0] = estimate_a_isotropic(pair, lattice.points[i], h, {});
      });
      out.a_iso = lowpass_scalar(grid, s, lattice.R);
      out.samples["a_iso"] = std::move(s);
      for (int id = 0; id < grid->num_nodes(); ++id)
        for (int k = 0; k < 3; ++k)
          A_known.at(id, sym_index(k, k)) += out.a_iso->v[id];
      have_A = true;
    } else if (stage == "B") {
      ReconFields known;
      if (have_A) known.A = &A_known;
      FourierSamples tang = empty_samples("rhoB", h, lattice, 3);
      parallel_for(n, W, [&](int i) {
        const Vec3& xi = lattice.points[i];
        if (xi.norm() == 0.0) return;
        const auto frame = frame_for_xi(xi);
        const auto b = estimate_B_tangential(pair, xi, h, known);
        CVec3 bt = b[0] * frame[0].cast<Complex>() +
                   b[1] * frame[1].cast<Complex>();
        for (int c = 0; c < 3; ++c) tang.entries[i][c] = bt[c];
      });
      VectorField Bt = lowpass_vector(grid, tang, lattice.R);
      ReconFields radial_known = known;
      radial_known.B = &Bt;
      FourierSamples full = empty_samples("B", h, lattice, 3);
      FourierSamples thb = empty_samples("thetaB", h, lattice, 1);
      parallel_for(n, W, [&](int i) {
        const Vec3& xi = lattice.points[i];
        if (xi.norm() == 0.0) return;
        const Complex t = estimate_thetaB(pair, xi, h, radial_known);
        thb.entries[i][0] = t;
        const CVec3 radial =
            Complex(0.0, xi.norm()) * t * (xi / xi.norm()).cast<Complex>();
        for (int c = 0; c < 3; ++c)
          full.entries[i][c] = tang.entries[i][c] + radial[c];
      });
      out.B = lowpass_vector(grid, full, lattice.R);
      out.samples["rhoB"] = std::move(tang);
      out.samples["thetaB"] = std::move(thb);
      out.samples["B"] = std::move(full);
    } else if (stage == "theta_A") {
      ReconFields known;
      if (have_A) known.A = &A_known;
      if (out.B) known.B = &*out.B;
      FourierSamples s = empty_samples("thetaA", h, lattice, 1);
      parallel_for(n, W, [&](int i) {
        const Vec3& xi = lattice.points[i];
        if (xi.norm() == 0.0) return;
        s.entries[i][0] = estimate_thetaA(pair, xi, h, known);
      });
      out.theta_A = lowpass_scalar(grid, s, lattice.R);
      out.samples["thetaA"] = std::move(s);
      for (int id = 0; id < grid->num_nodes(); ++id)
        for (int k = 0; k < 3; ++k)
          A_known.at(id, sym_index(k, k)) += out.theta_A->v[id];
      have_A = true;
    } else if (stage == "q") {
      ReconFields known;
      if (have_A) known.A = &A_known;
      if (out.B) known.B = &*out.B;
      FourierSamples s = empty_samples("q_hat", h, lattice, 1);
      parallel_for(n, W, [&](int i) {
        s.entries[i][0] = estimate_q(pair, lattice.points[i], h, known);
      });
      out.q = lowpass_scalar(grid, s, lattice.R);
      out.samples["q_hat"] = std::move(s);
    } else {
      throw std::invalid_argument("unknown pipeline stage: " + stage);
    }
  }
  if (have_A) out.A = A_known;
  return out;
}

}  // namespace polyharm
