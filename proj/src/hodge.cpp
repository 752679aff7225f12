#include "polyharm/hodge.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <utility>

#include <Eigen/Sparse>
#include <fftw3.h>

namespace polyharm {

SymTensorField sym_grad(const VectorField& V) {
  const GridSpec& g = *V.grid;
  SymTensorField out(V.grid);
  Eigen::VectorXcd d[3][3];  // d[j][k] = d_j V_k
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 3; ++k) d[j][k] = partial(g, V.v, 3, k, j);
  for (int id = 0; id < out.size(); ++id)
    for (int j = 0; j < 3; ++j)
      for (int k = j; k < 3; ++k)
        out.at(id, sym_index(j, k)) = 0.5 * (d[j][k][id] + d[k][j][id]);
  return out;
}

VectorField tensor_divergence(const SymTensorField& A) {
  const GridSpec& g = *A.grid;
  VectorField out(A.grid);
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXcd acc = Eigen::VectorXcd::Zero(g.num_nodes());
    for (int j = 0; j < 3; ++j) acc += partial(g, A.v, 6, sym_index(j, k), j);
    for (int id = 0; id < out.size(); ++id) out.at(id, k) = acc[id];
  }
  return out;
}

ScalarField tensor_trace(const SymTensorField& A) {
  ScalarField out(A.grid);
  for (int id = 0; id < out.size(); ++id)
    out.v[id] = A.at(id, 0) + A.at(id, 3) + A.at(id, 5);
  return out;
}

namespace {

using SpMat = Eigen::SparseMatrix<double>;

// First derivative along one axis on the full grid, one-sided at the ends.
SpMat first_diff(const GridSpec& g, int axis) {
  const int M = g.num_nodes();
  const int s = axis == 0 ? g.N * g.N : (axis == 1 ? g.N : 1);
  const double inv2dx = 0.5 / g.dx;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(3 * M);
  for (int id = 0; id < M; ++id) {
    const int i = g.unflat(id)[axis];
    if (i == 0) {
      trip.emplace_back(id, id, -3.0 * inv2dx);
      trip.emplace_back(id, id + s, 4.0 * inv2dx);
      trip.emplace_back(id, id + 2 * s, -inv2dx);
    } else if (i == g.N - 1) {
      trip.emplace_back(id, id, 3.0 * inv2dx);
      trip.emplace_back(id, id - s, -4.0 * inv2dx);
      trip.emplace_back(id, id - 2 * s, inv2dx);
    } else {
      trip.emplace_back(id, id + s, inv2dx);
      trip.emplace_back(id, id - s, -inv2dx);
    }
  }
  SpMat P(M, M);
  P.setFromTriplets(trip.begin(), trip.end());
  return P;
}

// Central second derivative; only interior rows are ever used below.
SpMat second_diff(const GridSpec& g, int axis) {
  const int M = g.num_nodes();
  const int s = axis == 0 ? g.N * g.N : (axis == 1 ? g.N : 1);
  const double invdx2 = 1.0 / (g.dx * g.dx);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(3 * M);
  for (int id = 0; id < M; ++id) {
    const int i = g.unflat(id)[axis];
    if (i == 0 || i == g.N - 1) continue;
    trip.emplace_back(id, id - s, invdx2);
    trip.emplace_back(id, id, -2.0 * invdx2);
    trip.emplace_back(id, id + s, invdx2);
  }
  SpMat S(M, M);
  S.setFromTriplets(trip.begin(), trip.end());
  return S;
}

// Restrict a full-grid block operator to interior rows and columns,
// vector unknowns ordered (interior node)*3 + component.
void append_block(const GridSpec& g, const SpMat& op, int row_comp,
                  int col_comp, std::vector<Eigen::Triplet<double>>& trip) {
  for (int col = 0; col < op.outerSize(); ++col) {
    const int cpos = g.interior_pos[col];
    if (cpos < 0) continue;
    for (SpMat::InnerIterator it(op, col); it; ++it) {
      const int rpos = g.interior_pos[it.row()];
      if (rpos < 0) continue;
      trip.emplace_back(3 * rpos + row_comp, 3 * cpos + col_comp, it.value());
    }
  }
}

std::mutex fftw_mu;

// 3D type-I sine transform on the interior block (ni points per axis,
// logical period 2(N-1)); its own inverse up to the factor (2(N-1))^3.
void dst3(Eigen::VectorXd& a, int ni) {
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_mu);
    plan = fftw_plan_r2r_3d(ni, ni, ni, a.data(), a.data(), FFTW_RODFT00,
                            FFTW_RODFT00, FFTW_RODFT00, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(fftw_mu);
    fftw_destroy_plan(plan);
  }
}

// Eigenvalues of the central-difference Dirichlet Laplacian per axis mode.
Eigen::VectorXd dirichlet_eigs(const GridSpec& g) {
  const int ni = g.N - 2;
  Eigen::VectorXd lam(ni);
  for (int p = 0; p < ni; ++p)
    lam[p] =
        (2.0 - 2.0 * std::cos(M_PI * (p + 1) / (g.N - 1))) / (g.dx * g.dx);
  return lam;
}

// z = (-(1/2) Lap)^{-1} r componentwise via sine diagonalization.  The full
// operator symbol is (1/2)|xi|^2 + (1/6)(xi.v)^2, so the preconditioned
// spectrum lies in [1, 4/3] and Krylov iterations converge in a few steps.
Eigen::VectorXd lap_precond(const GridSpec& g, const Eigen::VectorXd& lam,
                            const Eigen::VectorXd& r) {
  const int ni = g.N - 2;
  const double scale = 1.0 / std::pow(2.0 * (g.N - 1), 3);
  const int Ni = ni * ni * ni;
  Eigen::VectorXd z(3 * Ni);
  Eigen::VectorXd comp(Ni);
  for (int c = 0; c < 3; ++c) {
    for (int p = 0; p < Ni; ++p) comp[p] = r[3 * p + c];
    dst3(comp, ni);
    int p = 0;
    for (int ix = 0; ix < ni; ++ix)
      for (int iy = 0; iy < ni; ++iy)
        for (int iz = 0; iz < ni; ++iz, ++p)
          comp[p] /= 0.5 * (lam[ix] + lam[iy] + lam[iz]);
    dst3(comp, ni);
    for (int p2 = 0; p2 < Ni; ++p2) z[3 * p2 + c] = scale * comp[p2];
  }
  return z;
}

// Preconditioned BiCGSTAB; the composed one-sided first differences make the
// interior-restricted matrix slightly nonsymmetric, so plain CG is unsafe.
Eigen::VectorXd bicgstab_dst(const GridSpec& g, const SpMat& M,
                             const Eigen::VectorXd& lam,
                             const Eigen::VectorXd& b, double* err) {
  const double bnorm = b.norm();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
  if (bnorm == 0.0) {
    if (err) *err = 0.0;
    return x;
  }
  Eigen::VectorXd r = b, r0 = b;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(b.size()), p = v;
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  double rel = 1.0;
  for (int it = 0; it < 400; ++it) {
    const double rho1 = r0.dot(r);
    if (std::abs(rho1) < 1e-300) break;
    const double beta = (rho1 / rho) * (alpha / omega);
    p = r + beta * (p - omega * v);
    const Eigen::VectorXd ph = lap_precond(g, lam, p);
    v = M * ph;
    alpha = rho1 / r0.dot(v);
    Eigen::VectorXd s = r - alpha * v;
    if (s.norm() / bnorm < 1e-12) {
      x += alpha * ph;
      rel = s.norm() / bnorm;
      break;
    }
    const Eigen::VectorXd sh = lap_precond(g, lam, s);
    const Eigen::VectorXd t = M * sh;
    omega = t.dot(s) / t.dot(t);
    x += alpha * ph + omega * sh;
    r = s - omega * t;
    rho = rho1;
    rel = r.norm() / bnorm;
    if (rel < 1e-12) break;
  }
  if (err) *err = rel;
  return x;
}

// The interior-restricted operator depends only on the grid, so one assembly
// serves every decomposition on that grid.
const SpMat& lame_matrix(const GridSpec& g) {
  static std::mutex mu;
  static std::map<std::pair<int, double>, std::shared_ptr<SpMat>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[{g.N, g.L}];
  if (!slot) {
    const int Ni = g.num_interior();
    SpMat P[3], Lap(g.num_nodes(), g.num_nodes());
    for (int a = 0; a < 3; ++a) {
      P[a] = first_diff(g, a);
      Lap += second_diff(g, a);
    }
    std::vector<Eigen::Triplet<double>> trip;
    for (int k = 0; k < 3; ++k)
      for (int c = 0; c < 3; ++c) {
        // -(1/2) Lap delta_kc - (1/6) d_k d_c (grad of div, composed)
        SpMat block = SpMat(-(1.0 / 6.0) * (P[k] * P[c]));
        if (k == c) block -= 0.5 * Lap;
        append_block(g, block, k, c, trip);
      }
    slot = std::make_shared<SpMat>(3 * Ni, 3 * Ni);
    slot->setFromTriplets(trip.begin(), trip.end());
    slot->makeCompressed();
  }
  return *slot;
}

}  // namespace

VectorField solve_elliptic_system(const VectorField& F, double* residual) {
  const GridSpec& g = *F.grid;
  const int Ni = g.num_interior();
  const SpMat& M = lame_matrix(g);
  const Eigen::VectorXd lam = dirichlet_eigs(g);

  Eigen::VectorXd bre(3 * Ni), bim(3 * Ni);
  for (int p = 0; p < Ni; ++p) {
    const int id = g.interior_nodes[p];
    for (int k = 0; k < 3; ++k) {
      bre[3 * p + k] = F.at(id, k).real();
      bim[3 * p + k] = F.at(id, k).imag();
    }
  }
  double worst = 0.0, err = 0.0;
  Eigen::VectorXd xre = bicgstab_dst(g, M, lam, bre, &err);
  worst = std::max(worst, err);
  Eigen::VectorXd xim = bicgstab_dst(g, M, lam, bim, &err);
  worst = std::max(worst, err);
  if (worst > 1e-10)
    throw std::runtime_error("elliptic system solve stalled, residual " +
                             std::to_string(worst));
  if (residual) *residual = worst;

  VectorField V(F.grid);
  for (int p = 0; p < Ni; ++p) {
    const int id = g.interior_nodes[p];
    for (int k = 0; k < 3; ++k)
      V.at(id, k) = Complex(xre[3 * p + k], xim[3 * p + k]);
  }
  return V;
}

TensorHodge decompose_tensor(const SymTensorField& A) {
  const auto grid = A.grid;
  const GridSpec& g = *grid;

  // Right-hand side F = -div A + (1/3) grad(trace A).
  VectorField divA = tensor_divergence(A);
  ScalarField trA = tensor_trace(A);
  VectorField gradTr = gradient(trA);
  VectorField F(grid);
  F.v = -divA.v + (1.0 / 3.0) * gradTr.v;

  TensorHodge out;
  out.V = solve_elliptic_system(F, &out.bvp_residual);

  ScalarField divV = divergence(out.V);
  out.theta = ScalarField(grid);
  out.theta.v = (trA.v - divV.v) / 3.0;

  SymTensorField sgV = sym_grad(out.V);
  out.A_prime = SymTensorField(grid);
  out.A_prime.v = A.v - sgV.v;
  for (int id = 0; id < g.num_nodes(); ++id)
    for (int k = 0; k < 3; ++k)
      out.A_prime.at(id, sym_index(k, k)) -= out.theta.v[id];

  out.div_norm = l2_norm(tensor_divergence(out.A_prime));
  out.trace_norm = l2_norm(tensor_trace(out.A_prime));
  return out;
}

VectorHodge decompose_vector(const VectorField& X) {
  const auto grid = X.grid;
  const GridSpec& g = *grid;
  const int Ni = g.num_interior();
  const int ni = g.N - 2;
  const Eigen::VectorXd lam = dirichlet_eigs(g);
  const double scale = 1.0 / std::pow(2.0 * (g.N - 1), 3);

  // -Lap theta = -div X with theta = 0 on the boundary: the central-stencil
  // Dirichlet Laplacian diagonalizes exactly in the sine basis.
  ScalarField divX = divergence(X);
  Eigen::VectorXd bre(Ni), bim(Ni);
  for (int p = 0; p < Ni; ++p) {
    const Complex val = -divX.v[g.interior_nodes[p]];
    bre[p] = val.real();
    bim[p] = val.imag();
  }
  for (Eigen::VectorXd* part : {&bre, &bim}) {
    dst3(*part, ni);
    int p = 0;
    for (int ix = 0; ix < ni; ++ix)
      for (int iy = 0; iy < ni; ++iy)
        for (int iz = 0; iz < ni; ++iz, ++p)
          (*part)[p] /= lam[ix] + lam[iy] + lam[iz];
    dst3(*part, ni);
    *part *= scale;
  }

  VectorHodge out;
  out.theta = ScalarField(grid);
  for (int p = 0; p < Ni; ++p)
    out.theta.v[g.interior_nodes[p]] = Complex(bre[p], bim[p]);

  // Explicit residual of the solved equation on interior nodes.
  ScalarField lapTh = laplacian(out.theta);
  double rnum = 0.0, rden = 0.0;
  for (int id : g.interior_nodes) {
    rnum += std::norm(-lapTh.v[id] + divX.v[id]);
    rden += std::norm(divX.v[id]);
  }
  out.bvp_residual = rden > 0.0 ? std::sqrt(rnum / rden) : 0.0;
  if (out.bvp_residual > 1e-10)
    throw std::runtime_error("poisson solve stalled, residual " +
                             std::to_string(out.bvp_residual));

  VectorField gradTh = gradient(out.theta);
  out.X_prime = VectorField(grid);
  out.X_prime.v = X.v - gradTh.v;
  out.div_norm = l2_norm(divergence(out.X_prime));
  return out;
}

}  // namespace polyharm
