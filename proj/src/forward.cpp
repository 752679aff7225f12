#include "polyharm/forward.hpp"

#include <cmath>
#include <mutex>
#include <random>
#include <sstream>
#include <utility>
#include <vector>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/QR>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

namespace polyharm {

namespace {

using SpMat = Eigen::SparseMatrix<Complex>;
using Triplet = Eigen::Triplet<Complex>;

inline int stride(const GridSpec& g, int axis) {
  return axis == 0 ? g.N * g.N : (axis == 1 ? g.N : 1);
}

using Stencil = std::vector<std::pair<int, double>>;  // (flat offset, coeff)

// One-dimensional d/dx stencil at grid index i, offsets in flat indexing.
Stencil d1_stencil(const GridSpec& g, int i, int axis) {
  const int s = stride(g, axis);
  const double c = 0.5 / g.dx;
  if (i == 0) return {{0, -3.0 * c}, {s, 4.0 * c}, {2 * s, -c}};
  if (i == g.N - 1) return {{0, 3.0 * c}, {-s, -4.0 * c}, {-2 * s, c}};
  return {{s, c}, {-s, -c}};
}

Stencil d2_stencil(const GridSpec& g, int i, int axis) {
  const int s = stride(g, axis);
  const double c = 1.0 / (g.dx * g.dx);
  if (i == 0) return {{0, 2 * c}, {s, -5 * c}, {2 * s, 4 * c}, {3 * s, -c}};
  if (i == g.N - 1)
    return {{0, 2 * c}, {-s, -5 * c}, {-2 * s, 4 * c}, {-3 * s, -c}};
  return {{s, c}, {0, -2 * c}, {-s, c}};
}

// Full-grid perturbation matrix P: u -> -A:grad grad u - i B.grad u + q u,
// central stencils inside, one-sided at the boundary.
SpMat assemble_pert(const CoefficientSet& coeffs) {
  const GridSpec& g = *coeffs.q.grid;
  const int n = g.num_nodes();
  std::vector<Triplet> trip;
  trip.reserve(static_cast<size_t>(n) * 24);
  for (int id = 0; id < n; ++id) {
    const auto ijk = g.unflat(id);
    if (coeffs.q.v[id] != 0.0) trip.emplace_back(id, id, coeffs.q.v[id]);
    for (int a = 0; a < 3; ++a) {
      const Complex b = coeffs.B.at(id, a);
      if (b != 0.0) {
        const Complex w = Complex(0, -1) * b;
        for (auto [off, c] : d1_stencil(g, ijk[a], a))
          trip.emplace_back(id, id + off, w * c);
      }
      const Complex aa = coeffs.A.at(id, sym_index(a, a));
      if (aa != 0.0)
        for (auto [off, c] : d2_stencil(g, ijk[a], a))
          trip.emplace_back(id, id + off, -aa * c);
    }
    for (int j = 0; j < 3; ++j)
      for (int k = j + 1; k < 3; ++k) {
        const Complex ajk = coeffs.A.at(id, sym_index(j, k));
        if (ajk == 0.0) continue;
        for (auto [oj, cj] : d1_stencil(g, ijk[j], j))
          for (auto [ok, ck] : d1_stencil(g, ijk[k], k))
            trip.emplace_back(id, id + oj + ok, -2.0 * ajk * cj * ck);
      }
  }
  SpMat P(n, n);
  P.setFromTriplets(trip.begin(), trip.end());
  return P;
}

// Volume-weighted conjugate transpose W^{-1} P^H W.
SpMat weighted_adjoint(const SpMat& P, const GridSpec& g) {
  SpMat Q = P.adjoint();
  for (int col = 0; col < Q.outerSize(); ++col)
    for (SpMat::InnerIterator it(Q, col); it; ++it)
      it.valueRef() *= g.vol_weight[col] / g.vol_weight[it.row()];
  return Q;
}

}  // namespace

struct ForwardOperator::Impl {
  std::shared_ptr<const GridSpec> grid;
  int m = 2;
  bool direct = true;
  SpMat K;
  Eigen::SparseLU<SpMat> lu;
  Eigen::BiCGSTAB<SpMat, Eigen::IncompleteLUT<Complex>> bicg;
  mutable std::mutex iter_mutex;  // Eigen's iterative solve mutates counters
};

ForwardOperator::ForwardOperator(const CoefficientSet& coeffs, bool adjoint)
    : impl_(std::make_unique<Impl>()) {
  coeffs.validate();
  const auto grid = coeffs.q.grid;
  const GridSpec& g = *grid;
  const int m = coeffs.m;
  const int nn = g.num_nodes();
  const int n = m * nn;
  const double dx2 = g.dx * g.dx;
  impl_->grid = grid;
  impl_->m = m;

  SpMat Pc = assemble_pert(coeffs);
  if (adjoint) Pc = weighted_adjoint(Pc, g);
  // Row-major view: the closing rows below walk row id of P, and the
  // column-major InnerIterator would walk column id instead.
  const Eigen::SparseMatrix<Complex, Eigen::RowMajor> P = Pc;

  // Unknowns are scaled per block, zhat_j = dx^{2j} v_j, which keeps every
  // row O(1): boundary rows are identities, chain rows read
  // dx^2 (-Lap) zhat_j - zhat_{j+1} = 0, and the closing row carries the
  // perturbation at weight dx^{2m}.
  const auto idx = [m](int node, int j) { return node * m + j; };
  std::vector<Triplet> trip;
  trip.reserve(static_cast<size_t>(n) * 10);
  for (int b = 0; b < g.num_boundary(); ++b)
    for (int j = 0; j < m; ++j) {
      const int r = idx(g.boundary_nodes[b], j);
      trip.emplace_back(r, r, 1.0);
    }
  for (int ii = 0; ii < g.num_interior(); ++ii) {
    const int id = g.interior_nodes[ii];
    for (int j = 0; j < m; ++j) {
      const int r = idx(id, j);
      trip.emplace_back(r, idx(id, j), 6.0);
      for (int a = 0; a < 3; ++a) {
        const int s = stride(g, a);
        trip.emplace_back(r, idx(id + s, j), -1.0);
        trip.emplace_back(r, idx(id - s, j), -1.0);
      }
      if (j + 1 < m) {
        trip.emplace_back(r, idx(id, j + 1), -1.0);
      } else {
        const double w = std::pow(dx2, m);
        for (Eigen::SparseMatrix<Complex, Eigen::RowMajor>::InnerIterator
                 it(P, id);
             it; ++it)
          trip.emplace_back(r, idx(static_cast<int>(it.col()), 0),
                            w * it.value());
      }
    }
  }
  impl_->K = SpMat(n, n);
  impl_->K.setFromTriplets(trip.begin(), trip.end());
  impl_->K.makeCompressed();

  impl_->direct = g.N <= 25;
  if (impl_->direct) {
    impl_->lu.compute(impl_->K);
    if (impl_->lu.info() != Eigen::Success)
      throw SolverError("sparse factorization failed");
  } else {
    impl_->bicg.preconditioner().setDroptol(1e-4);
    impl_->bicg.preconditioner().setFillfactor(40);
    impl_->bicg.setTolerance(1e-12);
    impl_->bicg.setMaxIterations(4000);
    impl_->bicg.compute(impl_->K);
    if (impl_->bicg.info() != Eigen::Success)
      throw SolverError("iterative preconditioner setup failed");
  }
}

ForwardOperator::~ForwardOperator() = default;
ForwardOperator::ForwardOperator(ForwardOperator&&) noexcept = default;

std::shared_ptr<const GridSpec> ForwardOperator::grid() const {
  return impl_->grid;
}
int ForwardOperator::order() const { return impl_->m; }

Solution ForwardOperator::solve(const NavierTrace& f) const {
  const GridSpec& g = *impl_->grid;
  const int m = impl_->m;
  if (f.order() != m)
    throw std::invalid_argument("Navier tuple order does not match operator");
  check_same_grid(g, *f.grid);
  const int n = m * g.num_nodes();
  const double dx2 = g.dx * g.dx;

  Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(n);
  for (int b = 0; b < g.num_boundary(); ++b)
    for (int j = 0; j < m; ++j)
      rhs[g.boundary_nodes[b] * m + j] = std::pow(dx2, j) * f.f[j][b];

  Solution sol;
  sol.grid = impl_->grid;
  sol.v.assign(m, ScalarField(impl_->grid));
  const double bnorm = rhs.norm();
  if (bnorm == 0.0) return sol;

  Eigen::VectorXcd z;
  if (impl_->direct) {
    z = impl_->lu.solve(rhs);
  } else {
    std::lock_guard<std::mutex> lock(impl_->iter_mutex);
    z = impl_->bicg.solveWithGuess(rhs, Eigen::VectorXcd::Zero(n).eval());
    sol.iterations = static_cast<int>(impl_->bicg.iterations());
  }
  sol.residual = (impl_->K * z - rhs).norm() / bnorm;
  if (!std::isfinite(sol.residual) || sol.residual > 1e-10) {
    std::ostringstream msg;
    msg << "linear solve stalled at relative residual " << sol.residual
        << " (possible discrete eigenvalue)";
    throw SolverError(msg.str());
  }
  for (int j = 0; j < m; ++j) {
    const double unscale = std::pow(dx2, -j);
    for (int id = 0; id < g.num_nodes(); ++id)
      sol.v[j].v[id] = unscale * z[id * m + j];
  }
  return sol;
}

Solution solve_navier(const CoefficientSet& coeffs, const NavierTrace& f) {
  return ForwardOperator(coeffs).solve(f);
}

Solution solve_adjoint(const CoefficientSet& coeffs, const NavierTrace& f_star,
                       double* cross_check) {
  Solution sol = ForwardOperator(coeffs, true).solve(f_star);
  if (cross_check) {
    Solution re = ForwardOperator(adjoint_coefficients(coeffs)).solve(f_star);
    ScalarField diff(sol.grid);
    diff.v = sol.u().v - re.u().v;
    const double den = l2_norm(sol.u());
    *cross_check = den > 0 ? l2_norm(diff) / den : l2_norm(diff);
  }
  return sol;
}

NeumannTrace neumann_trace(const Solution& sol) {
  // Two-point outward flux, summed over every face incident to the node and
  // renormalized by the surface weight.  This is the exact summation-by-parts
  // dual of the 7-point chain: pairing a trace difference against boundary
  // data reproduces the interior perturbation quadrature to round-off.
  const GridSpec& g = *sol.grid;
  NeumannTrace out(sol.grid, sol.order());
  for (int j = 0; j < sol.order(); ++j)
    for (int b = 0; b < g.num_boundary(); ++b) {
      const int id = g.boundary_nodes[b];
      const auto idx = g.unflat(id);
      Complex acc = 0.0;
      for (int a = 0; a < 3; ++a) {
        if (idx[a] != 0 && idx[a] != g.N - 1) continue;
        const int s = (idx[a] == g.N - 1 ? 1 : -1) * stride(g, a);
        acc += g.dx * (sol.v[j].v[id] - sol.v[j].v[id - s]);
      }
      out.g[j][b] = acc / g.surf_weight[b];
    }
  return out;
}

NeumannTrace dtn_apply(const CoefficientSet& coeffs, const NavierTrace& f) {
  return neumann_trace(solve_navier(coeffs, f));
}

namespace {

ScalarField apply_pert_fields(const CoefficientSet& c, const ScalarField& u) {
  const GridSpec& g = *u.grid;
  ScalarField out(u.grid);
  Eigen::VectorXcd d1[3];
  for (int a = 0; a < 3; ++a) d1[a] = partial(g, u.v, 1, 0, a);
  for (int a = 0; a < 3; ++a) {
    Eigen::VectorXcd d2 = partial2(g, u.v, 1, 0, a);
    for (int id = 0; id < u.size(); ++id)
      out.v[id] += -c.A.at(id, sym_index(a, a)) * d2[id] +
                   Complex(0, -1) * c.B.at(id, a) * d1[a][id];
  }
  for (int j = 0; j < 3; ++j)
    for (int k = j + 1; k < 3; ++k) {
      Eigen::VectorXcd djk = partial(g, d1[k], 1, 0, j);
      for (int id = 0; id < u.size(); ++id)
        out.v[id] += -2.0 * c.A.at(id, sym_index(j, k)) * djk[id];
    }
  for (int id = 0; id < u.size(); ++id) out.v[id] += c.q.v[id] * u.v[id];
  return out;
}

// Product-form adjoint perturbation: same stencils in divergence form, so the
// interior pairing against apply_pert_fields cancels exactly.
ScalarField apply_pert_star_fields(const CoefficientSet& c,
                                   const ScalarField& u) {
  const GridSpec& g = *u.grid;
  ScalarField out(u.grid);
  for (int a = 0; a < 3; ++a) {
    Eigen::VectorXcd prod(u.size());
    for (int id = 0; id < u.size(); ++id)
      prod[id] = std::conj(c.A.at(id, sym_index(a, a))) * u.v[id];
    out.v -= partial2(g, prod, 1, 0, a);
    for (int id = 0; id < u.size(); ++id)
      prod[id] = std::conj(c.B.at(id, a)) * u.v[id];
    out.v += Complex(0, -1) * partial(g, prod, 1, 0, a);
  }
  for (int j = 0; j < 3; ++j)
    for (int k = j + 1; k < 3; ++k) {
      Eigen::VectorXcd prod(u.size());
      for (int id = 0; id < u.size(); ++id)
        prod[id] = std::conj(c.A.at(id, sym_index(j, k))) * u.v[id];
      out.v -= 2.0 * partial(g, partial(g, prod, 1, 0, k), 1, 0, j);
    }
  for (int id = 0; id < u.size(); ++id)
    out.v[id] += std::conj(c.q.v[id]) * u.v[id];
  return out;
}

// chain[j] = (-Lap_h)^j u, j = 0 .. m.
std::vector<ScalarField> laplacian_chain(const ScalarField& u, int m) {
  std::vector<ScalarField> chain{u};
  for (int j = 0; j < m; ++j) {
    ScalarField next = laplacian(chain.back());
    next.v = -next.v;
    chain.push_back(std::move(next));
  }
  return chain;
}

struct GreenSides {
  Complex volume;      // (L w, v) - (w, L* v)
  Complex boundary;    // <gt w, gn v> - <gn w, gt v>
  double scale;
};

GreenSides green_sides(const ScalarField& w, const ScalarField& v,
                       const CoefficientSet& c) {
  check_same_grid(*w.grid, *v.grid);
  check_same_grid(*w.grid, *c.q.grid);
  const int m = c.m;
  auto cw = laplacian_chain(w, m);
  auto cv = laplacian_chain(v, m);
  ScalarField Lw = cw[m];
  Lw.v += apply_pert_fields(c, w).v;
  ScalarField Lsv = cv[m];
  Lsv.v += apply_pert_star_fields(c, v).v;

  GreenSides out;
  const Complex qa = quadrature(Lw, v);
  const Complex qb = quadrature(w, Lsv);
  out.volume = qa - qb;
  out.boundary = 0.0;
  // Scale from the constituent pairings, not the differences: both sides of
  // the identity may vanish identically (interior-supported fields) and the
  // ratio must then report round-off, not 0/0.
  out.scale = std::abs(qa) + std::abs(qb);
  for (int j = 0; j < m; ++j) {
    BoundaryField gt_w = boundary_restrict(cw[m - 1 - j]);
    BoundaryField gn_v = normal_trace(cv[j]);
    BoundaryField gn_w = normal_trace(cw[j]);
    BoundaryField gt_v = boundary_restrict(cv[m - 1 - j]);
    const Complex pa = quadrature(gt_w, gn_v);
    const Complex pb = quadrature(gn_w, gt_v);
    out.boundary += pa - pb;
    out.scale += std::abs(pa) + std::abs(pb);
  }
  return out;
}

}  // namespace

double green_check(const ScalarField& w, const ScalarField& v,
                   const CoefficientSet& coeffs) {
  GreenSides s = green_sides(w, v, coeffs);
  return std::abs(s.volume - s.boundary) / (s.scale + 1e-30);
}

double adjoint_identity_gap(const ScalarField& w, const ScalarField& v,
                            const CoefficientSet& coeffs) {
  check_same_grid(*w.grid, *v.grid);
  const int m = coeffs.m;
  auto cw = laplacian_chain(w, m);
  auto cv = laplacian_chain(v, m);
  ScalarField Lw = cw[m];
  Lw.v += apply_pert_fields(coeffs, w).v;
  ScalarField Lsv = cv[m];
  Lsv.v += apply_pert_star_fields(coeffs, v).v;
  const Complex a = quadrature(Lw, v);
  const Complex b = quadrature(w, Lsv);
  return std::abs(a - b) / (std::abs(a) + std::abs(b) + 1e-30);
}

namespace {

// Per-face tensor sine modes vanish on face edges, so faces decouple and the
// trapezoid quadrature keeps distinct modes orthogonal up to round-off; a
// weighted QR removes the residue.
Eigen::MatrixXcd sine_basis(const GridSpec& g, int m, int modes_per_face,
                            Eigen::VectorXd* sqrt_weights) {
  const int k1d = std::max(1, static_cast<int>(std::sqrt(
                                  static_cast<double>(modes_per_face))));
  const int nb = g.num_boundary();
  const int rows = m * nb;
  const int cols = m * 6 * k1d * k1d;
  Eigen::MatrixXcd B = Eigen::MatrixXcd::Zero(rows, cols);
  Eigen::VectorXd sw(rows);
  for (int j = 0; j < m; ++j)
    for (int b = 0; b < nb; ++b)
      sw[j * nb + b] = std::sqrt(g.surf_weight[b]);

  int col = 0;
  for (int j = 0; j < m; ++j)
    for (int face = 0; face < 6; ++face) {
      const int axis = face / 2;
      const double side = (face % 2) ? g.L : -g.L;
      const int t1 = (axis + 1) % 3, t2 = (axis + 2) % 3;
      for (int p = 1; p <= k1d; ++p)
        for (int q = 1; q <= k1d; ++q, ++col)
          for (int b = 0; b < nb; ++b) {
            const Vec3 x = g.point(g.boundary_nodes[b]);
            if (std::abs(x[axis] - side) > 0.5 * g.dx) continue;
            const double s1 = std::sin(p * M_PI * (x[t1] + g.L) / (2 * g.L));
            const double s2 = std::sin(q * M_PI * (x[t2] + g.L) / (2 * g.L));
            B(j * nb + b, col) = s1 * s2;
          }
    }

  Eigen::MatrixXcd Bw = sw.asDiagonal() * B;
  Eigen::HouseholderQR<Eigen::MatrixXcd> qr(Bw);
  Eigen::MatrixXcd Q =
      qr.householderQ() * Eigen::MatrixXcd::Identity(rows, cols);
  for (int r = 0; r < rows; ++r) Q.row(r) /= sw[r];
  *sqrt_weights = sw;
  return Q;  // surface-orthonormal trace tuples, unweighted values
}

}  // namespace

DtnProbe dtn_probe(const CoefficientSet& coeffs1, const CoefficientSet& coeffs2,
                   int modes_per_face) {
  if (coeffs1.m != coeffs2.m)
    throw std::invalid_argument("operator orders differ");
  const auto grid = coeffs1.q.grid;
  check_same_grid(*grid, *coeffs2.q.grid);
  const GridSpec& g = *grid;
  const int m = coeffs1.m;
  const int nb = g.num_boundary();

  Eigen::VectorXd sw;
  Eigen::MatrixXcd basis = sine_basis(g, m, modes_per_face, &sw);

  ForwardOperator op1(coeffs1), op2(coeffs2);
  DtnProbe probe;
  probe.grid = grid;
  probe.m = m;
  probe.basis = basis;
  probe.response1.resize(basis.rows(), basis.cols());
  probe.response2.resize(basis.rows(), basis.cols());
  for (int col = 0; col < basis.cols(); ++col) {
    NavierTrace f(grid, m);
    for (int j = 0; j < m; ++j) f.f[j] = basis.col(col).segment(j * nb, nb);
    NeumannTrace g1 = neumann_trace(op1.solve(f));
    NeumannTrace g2 = neumann_trace(op2.solve(f));
    for (int j = 0; j < m; ++j) {
      probe.response1.col(col).segment(j * nb, nb) = g1.g[j];
      probe.response2.col(col).segment(j * nb, nb) = g2.g[j];
    }
  }
  // Weight responses once so probe norms are plain spectral norms.
  probe.response1 = sw.asDiagonal() * probe.response1;
  probe.response2 = sw.asDiagonal() * probe.response2;
  return probe;
}

double probe_norm(const DtnProbe& probe, std::uint64_t seed) {
  const Eigen::MatrixXcd M = probe.response2 - probe.response1;
  if (M.size() == 0) return 0.0;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXcd x(M.cols());
  for (int i = 0; i < x.size(); ++i) x[i] = Complex(gauss(rng), gauss(rng));
  x.normalize();
  double sigma = 0.0;
  for (int it = 0; it < 1000; ++it) {
    Eigen::VectorXcd y = M * x;
    const double s = y.norm();
    if (s == 0.0) return 0.0;
    x = M.adjoint() * y;
    const double xn = x.norm();
    if (xn == 0.0) return s;
    x /= xn;
    if (it > 0 && std::abs(s - sigma) <= 1e-3 * s) return s;
    sigma = s;
  }
  throw SolverError("power iteration stagnated");
}

double dtn_norm(const CoefficientSet& coeffs1, const CoefficientSet& coeffs2,
                int modes_per_face, std::uint64_t seed) {
  return probe_norm(dtn_probe(coeffs1, coeffs2, modes_per_face), seed);
}

}  // namespace polyharm
