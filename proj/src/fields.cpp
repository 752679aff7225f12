#include "polyharm/fields.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace polyharm {

namespace {

void check_support(const Vec3& center, double rho, double L) {
  const double reach = center.cwiseAbs().maxCoeff() + rho;
  if (reach >= L)
    throw std::invalid_argument("bump support escapes the domain");
}

}  // namespace

double bump_value(const Vec3& x, const Vec3& center, double rho) {
  const double s = (x - center).squaredNorm() / (rho * rho);
  if (s >= 1.0) return 0.0;
  return std::exp(1.0 - 1.0 / (1.0 - s));
}

Vec3 bump_gradient(const Vec3& x, const Vec3& center, double rho) {
  const Vec3 u = x - center;
  const double s = u.squaredNorm() / (rho * rho);
  if (s >= 1.0) return Vec3::Zero();
  const double t = 1.0 - s;
  // d/ds of exp(1 - 1/t) is -exp(1 - 1/t)/t^2; ds/dx = 2u/rho^2.
  return std::exp(1.0 - 1.0 / t) * (-1.0 / (t * t)) * (2.0 / (rho * rho)) * u;
}

ScalarField bump_scalar(std::shared_ptr<const GridSpec> grid, const Vec3& center,
                        double rho, Complex amplitude) {
  check_support(center, rho, grid->L);
  ScalarField f(grid);
  for (int id = 0; id < f.size(); ++id)
    f.v[id] = amplitude * bump_value(grid->point(id), center, rho);
  return f;
}

namespace {

// Polynomial bump (1-s)^p and its derivatives in s, s = |x-c|^2/rho^2.
struct PolyBump {
  static constexpr int p = 8;
  double d[5];  // f, f', f'', f''', f''''
  explicit PolyBump(double s) {
    if (s >= 1.0) {
      for (double& x : d) x = 0.0;
      return;
    }
    double fact = 1.0;
    for (int k = 0; k <= 4; ++k) {
      d[k] = fact * std::pow(1.0 - s, p - k);
      fact *= -(p - k);
    }
  }
};

inline double eps3(int i, int j, int k) {
  if (i == j || j == k || i == k) return 0.0;
  return ((j - i + 3) % 3 == 1) ? 1.0 : -1.0;
}

}  // namespace

SymTensorField tt_tensor_bump(std::shared_ptr<const GridSpec> grid,
                              const Vec3& center, double rho, const Vec3& a,
                              const Vec3& b, double amplitude) {
  check_support(center, rho, grid->L);
  if (a.cross(b).norm() < 1e-12 * a.norm() * b.norm())
    throw std::invalid_argument("tt_tensor_bump needs independent directions");

  // Coefficient tensors of the degree-4 symbol
  //   P_jk(xi) = |xi x b|^2 (xi x a)_j (xi x a)_k - (a <-> b),
  // expanded as sum over monomials xi_p xi_r xi_t xi_v.  The trace of P
  // vanishes identically, so the resulting field is trace-free pointwise,
  // and P_jk(xi) xi_k = 0 makes it divergence-free in the continuum.
  double Wa[3][3][3][3], Wb[3][3][3][3];  // W[j][p][k][r]
  for (int j = 0; j < 3; ++j)
    for (int pp = 0; pp < 3; ++pp)
      for (int k = 0; k < 3; ++k)
        for (int r = 0; r < 3; ++r) {
          double wa = 0.0, wb = 0.0;
          for (int al = 0; al < 3; ++al)
            for (int be = 0; be < 3; ++be) {
              const double e = eps3(j, pp, al) * eps3(k, r, be);
              wa += e * a[al] * a[be];
              wb += e * b[al] * b[be];
            }
          Wa[j][pp][k][r] = wa;
          Wb[j][pp][k][r] = wb;
        }
  double Qa[3][3], Qb[3][3];  // |xi x a|^2 = Qa[t][v] xi_t xi_v
  for (int t = 0; t < 3; ++t)
    for (int v = 0; v < 3; ++v) {
      Qa[t][v] = a.squaredNorm() * (t == v) - a[t] * a[v];
      Qb[t][v] = b.squaredNorm() * (t == v) - b[t] * b[v];
    }

  SymTensorField S(grid);
  const double inv = 2.0 / (rho * rho);  // d s / d u_a = inv * u_a
  double maxabs = 0.0;
  for (int id = 0; id < S.size(); ++id) {
    const Vec3 u = grid->point(id) - center;
    const double s = u.squaredNorm() / (rho * rho);
    if (s >= 1.0) continue;
    PolyBump f(s);
    const Vec3 sa = inv * u;  // first derivatives of s
    // Fourth mixed partial of f(s(x)) by Faa di Bruno; s is quadratic so
    // only s_a and the constant s_ab = inv * delta_ab survive.
    auto d4 = [&](int p1, int p2, int p3, int p4) {
      const double q12 = (p1 == p2) * inv, q13 = (p1 == p3) * inv,
                   q14 = (p1 == p4) * inv, q23 = (p2 == p3) * inv,
                   q24 = (p2 == p4) * inv, q34 = (p3 == p4) * inv;
      return f.d[4] * sa[p1] * sa[p2] * sa[p3] * sa[p4] +
             f.d[3] * (q12 * sa[p3] * sa[p4] + q13 * sa[p2] * sa[p4] +
                       q14 * sa[p2] * sa[p3] + q23 * sa[p1] * sa[p4] +
                       q24 * sa[p1] * sa[p3] + q34 * sa[p1] * sa[p2]) +
             f.d[2] * (q12 * q34 + q13 * q24 + q14 * q23);
    };
    double d4tab[3][3][3][3];
    for (int p1 = 0; p1 < 3; ++p1)
      for (int p2 = p1; p2 < 3; ++p2)
        for (int p3 = p2; p3 < 3; ++p3)
          for (int p4 = p3; p4 < 3; ++p4) {
            const double val = d4(p1, p2, p3, p4);
            int idx[4] = {p1, p2, p3, p4};
            std::sort(idx, idx + 4);
            do {
              d4tab[idx[0]][idx[1]][idx[2]][idx[3]] = val;
            } while (std::next_permutation(idx, idx + 4));
          }
    for (int j = 0; j < 3; ++j)
      for (int k = j; k < 3; ++k) {
        double acc = 0.0;
        for (int pp = 0; pp < 3; ++pp)
          for (int r = 0; r < 3; ++r)
            for (int t = 0; t < 3; ++t)
              for (int v = 0; v < 3; ++v)
                acc += (Qb[t][v] * Wa[j][pp][k][r] -
                        Qa[t][v] * Wb[j][pp][k][r]) *
                       d4tab[pp][r][t][v];
        S.at(id, sym_index(j, k)) = acc;
        maxabs = std::max(maxabs, std::abs(acc));
      }
  }
  if (maxabs > 0.0) S.v *= amplitude / maxabs;
  return S;
}

void CoefficientSet::validate() const {
  if (m < 2) throw std::invalid_argument("operator order m must be >= 2");
  check_same_grid(*A.grid, *B.grid);
  check_same_grid(*A.grid, *q.grid);
  if (m == 2 && !isotropic && A.v.cwiseAbs().maxCoeff() > 0.0)
    throw std::invalid_argument("m = 2 requires isotropic A");
}

namespace {

Vec3 rand_center(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-0.25, 0.25);
  return {d(rng), d(rng), d(rng)};
}

Complex rand_amp(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> re(0.5, 1.0), im(-0.3, 0.3);
  return {re(rng), im(rng)};
}

Vec3 rand_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Vec3 v{d(rng), d(rng), d(rng)};
  while (v.norm() < 1e-3) v = Vec3{d(rng), d(rng), d(rng)};
  return v.normalized();
}

}  // namespace

Scenario make_coefficients(std::shared_ptr<const GridSpec> grid,
                           const std::string& recipe_name, std::uint64_t seed,
                           int m) {
  nlohmann::json doc{{"recipe", recipe_name}, {"seed", seed}, {"m", m}};
  return make_coefficients(grid, doc);
}

Scenario make_coefficients(std::shared_ptr<const GridSpec> grid,
                           const nlohmann::json& doc) {
  const std::string name = doc.at("recipe");
  const std::uint64_t seed = doc.value("seed", 1ull);
  const int m = doc.value("m", 2);
  std::mt19937_64 rng(seed);

  Scenario sc;
  sc.name = name;
  CoefficientSet& c = sc.coeffs;
  c.m = m;
  c.A = SymTensorField(grid);
  c.B = VectorField(grid);
  c.q = ScalarField(grid);

  struct Bump {
    Vec3 center;
    double radius;
    Complex amp;
    std::string target;
  };
  std::vector<Bump> bumps;
  if (doc.contains("bumps")) {
    for (const auto& b : doc.at("bumps")) {
      Bump bb;
      auto ctr = b.at("center");
      bb.center = Vec3(ctr.at(0), ctr.at(1), ctr.at(2));
      bb.radius = b.at("radius");
      if (b.at("amplitude").is_array())
        bb.amp = Complex(b.at("amplitude").at(0), b.at("amplitude").at(1));
      else
        bb.amp = Complex(double(b.at("amplitude")), 0.0);
      bb.target = b.value("target", "q");
      bumps.push_back(bb);
    }
  }
  auto next_bump = [&](const std::string& target) {
    for (const Bump& b : bumps)
      if (b.target == target) return b;
    return Bump{rand_center(rng), 0.5, rand_amp(rng), target};
  };
  double support = 0.0;
  auto note = [&](const Bump& b) {
    support = std::max(support, b.center.cwiseAbs().maxCoeff() + b.radius);
  };
  auto add_scalar = [&](ScalarField& dst, const Bump& b) {
    note(b);
    ScalarField f = bump_scalar(grid, b.center, b.radius, b.amp);
    dst.v += f.v;
  };
  auto fill_B_bumps = [&] {
    for (int k = 0; k < 3; ++k) {
      Bump b = next_bump("B");
      if (k > 0 && !doc.contains("bumps")) b = Bump{rand_center(rng), 0.5, rand_amp(rng), "B"};
      note(b);
      for (int id = 0; id < c.B.size(); ++id)
        c.B.at(id, k) += b.amp * bump_value(grid->point(id), b.center, b.radius);
    }
  };
  auto make_potential_A = [&] {
    sc.V_truth = VectorField(grid);
    sc.theta_truth = ScalarField(grid);
    Bump bv[3] = {next_bump("V"), Bump{rand_center(rng), 0.5, rand_amp(rng), "V"},
                  Bump{rand_center(rng), 0.5, rand_amp(rng), "V"}};
    Bump bt = next_bump("theta");
    note(bt);
    for (int k = 0; k < 3; ++k) note(bv[k]);
    for (int id = 0; id < c.A.size(); ++id) {
      const Vec3 x = grid->point(id);
      CVec3 V = CVec3::Zero();
      Eigen::Matrix3cd G = Eigen::Matrix3cd::Zero();  // G(j,k) = d_j V_k
      for (int k = 0; k < 3; ++k) {
        V[k] = bv[k].amp * bump_value(x, bv[k].center, bv[k].radius);
        const Vec3 g = bump_gradient(x, bv[k].center, bv[k].radius);
        for (int j = 0; j < 3; ++j) G(j, k) = bv[k].amp * g[j];
      }
      const Complex th = bt.amp * bump_value(x, bt.center, bt.radius);
      sc.theta_truth->v[id] = th;
      for (int k = 0; k < 3; ++k) sc.V_truth->at(id, k) = V[k];
      for (int j = 0; j < 3; ++j)
        for (int k = j; k < 3; ++k)
          c.A.at(id, sym_index(j, k)) +=
              0.5 * (G(j, k) + G(k, j)) + (j == k ? th : Complex(0.0));
    }
  };
  auto make_divfree_A = [&] {
    Bump b = next_bump("A");
    note(b);
    const Vec3 da = rand_unit(rng);
    Vec3 db = rand_unit(rng);
    while (da.cross(db).norm() < 0.2) db = rand_unit(rng);
    SymTensorField S =
        tt_tensor_bump(grid, b.center, b.radius, da, db, std::abs(b.amp));
    c.A.v += S.v;
  };

  if (name == "zero") {
    // nothing
  } else if (name == "q-only") {
    add_scalar(c.q, next_bump("q"));
    if (!doc.contains("bumps"))
      add_scalar(c.q, Bump{rand_center(rng), 0.45, rand_amp(rng), "q"});
  } else if (name == "B-only") {
    fill_B_bumps();
  } else if (name == "B-gradient") {
    Bump b = next_bump("B");
    note(b);
    for (int id = 0; id < c.B.size(); ++id) {
      const Vec3 g = bump_gradient(grid->point(id), b.center, b.radius);
      for (int k = 0; k < 3; ++k) c.B.at(id, k) = b.amp * g[k];
    }
  } else if (name == "B-divfree") {
    // curl of a bump vector potential, componentwise analytic.
    Bump bw[3] = {next_bump("B"), Bump{rand_center(rng), 0.5, rand_amp(rng), "B"},
                  Bump{rand_center(rng), 0.5, rand_amp(rng), "B"}};
    for (int k = 0; k < 3; ++k) note(bw[k]);
    for (int id = 0; id < c.B.size(); ++id) {
      const Vec3 x = grid->point(id);
      Eigen::Matrix3cd G = Eigen::Matrix3cd::Zero();  // G(j,k) = d_j W_k
      for (int k = 0; k < 3; ++k) {
        const Vec3 g = bump_gradient(x, bw[k].center, bw[k].radius);
        for (int j = 0; j < 3; ++j) G(j, k) = bw[k].amp * g[j];
      }
      c.B.at(id, 0) = G(1, 2) - G(2, 1);
      c.B.at(id, 1) = G(2, 0) - G(0, 2);
      c.B.at(id, 2) = G(0, 1) - G(1, 0);
    }
  } else if (name == "A-divfree") {
    if (m == 2) throw std::invalid_argument("m = 2 requires isotropic A");
    make_divfree_A();
  } else if (name == "A-potential") {
    if (m == 2) throw std::invalid_argument("m = 2 requires isotropic A");
    make_potential_A();
  } else if (name == "A-isotropic") {
    if (m == 2) throw std::invalid_argument("use isotropic-m2 when m = 2");
    Bump bt = next_bump("theta");
    sc.theta_truth = ScalarField(grid);
    note(bt);
    for (int id = 0; id < c.A.size(); ++id) {
      const Complex th = bt.amp * bump_value(grid->point(id), bt.center, bt.radius);
      sc.theta_truth->v[id] = th;
      for (int k = 0; k < 3; ++k) c.A.at(id, sym_index(k, k)) = th;
    }
  } else if (name == "isotropic-m2") {
    if (m != 2) throw std::invalid_argument("isotropic-m2 requires m = 2");
    c.isotropic = true;
    Bump ba = next_bump("a");
    sc.a_truth = ScalarField(grid);
    note(ba);
    for (int id = 0; id < c.A.size(); ++id) {
      const Complex a = ba.amp * bump_value(grid->point(id), ba.center, ba.radius);
      sc.a_truth->v[id] = a;
      for (int k = 0; k < 3; ++k) c.A.at(id, sym_index(k, k)) = a;
    }
  } else if (name == "combined") {
    if (m == 2) {
      c.isotropic = true;
      Bump ba = next_bump("a");
      sc.a_truth = ScalarField(grid);
      note(ba);
      for (int id = 0; id < c.A.size(); ++id) {
        const Complex a = ba.amp * bump_value(grid->point(id), ba.center, ba.radius);
        sc.a_truth->v[id] = a;
        for (int k = 0; k < 3; ++k) c.A.at(id, sym_index(k, k)) = a;
      }
    } else {
      make_divfree_A();
      make_potential_A();
    }
    fill_B_bumps();
    add_scalar(c.q, next_bump("q"));
  } else {
    throw std::invalid_argument("unknown recipe: " + name);
  }

  c.support_radius = support;
  if (support >= grid->L)
    throw std::invalid_argument("recipe support escapes the domain");
  c.validate();
  return sc;
}

namespace {

template <int NC>
void fourier_accumulate(const FieldT<NC>& f, const Vec3& xi, Complex* out) {
  for (int c = 0; c < NC; ++c) out[c] = 0.0;
  for (int id = 0; id < f.size(); ++id) {
    const Vec3 x = f.grid->point(id);
    const Complex ph =
        f.grid->vol_weight[id] * std::exp(Complex(0.0, -x.dot(xi)));
    for (int c = 0; c < NC; ++c) out[c] += ph * f.at(id, c);
  }
}

}  // namespace

Complex fourier_truth(const ScalarField& f, const Vec3& xi) {
  Complex out;
  fourier_accumulate(f, xi, &out);
  return out;
}

CVec3 fourier_truth(const VectorField& f, const Vec3& xi) {
  CVec3 out;
  fourier_accumulate(f, xi, out.data());
  return out;
}

Eigen::Matrix3cd fourier_truth(const SymTensorField& f, const Vec3& xi) {
  Complex packed[6];
  fourier_accumulate(f, xi, packed);
  Eigen::Matrix3cd out;
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 3; ++k) out(j, k) = packed[sym_index(j, k)];
  return out;
}

Eigen::Matrix3cd tensor_at(const SymTensorField& A, int node) {
  Eigen::Matrix3cd out;
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 3; ++k) out(j, k) = A.at(node, sym_index(j, k));
  return out;
}

CoefficientSet adjoint_coefficients(const CoefficientSet& c) {
  const auto grid = c.q.grid;
  const GridSpec& g = *grid;
  CoefficientSet s;
  s.m = c.m;
  s.support_radius = c.support_radius;
  s.isotropic = c.isotropic;
  s.A = SymTensorField(grid);
  s.B = VectorField(grid);
  s.q = ScalarField(grid);

  Eigen::VectorXcd Abar = c.A.v.conjugate();
  s.A.v = Abar;

  // B*_k = conj B_k + 2 sum_j D_j conj A_jk, D = -i grad.
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXcd acc = Eigen::VectorXcd::Zero(g.num_nodes());
    for (int j = 0; j < 3; ++j)
      acc += partial(g, Abar, 6, sym_index(j, k), j);
    for (int id = 0; id < g.num_nodes(); ++id)
      s.B.at(id, k) =
          std::conj(c.B.at(id, k)) + Complex(0.0, -2.0) * acc[id];
  }

  // q* = conj q - i div(conj B) + sum_jk D_k D_j conj A_jk.
  Eigen::VectorXcd Bbar = c.B.v.conjugate();
  Eigen::VectorXcd divB = Eigen::VectorXcd::Zero(g.num_nodes());
  for (int j = 0; j < 3; ++j) divB += partial(g, Bbar, 3, j, j);
  Eigen::VectorXcd d2A = Eigen::VectorXcd::Zero(g.num_nodes());
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 3; ++k) {
      if (j == k) {
        d2A += partial2(g, Abar, 6, sym_index(j, k), j);
      } else {
        Eigen::VectorXcd dj = partial(g, Abar, 6, sym_index(j, k), j);
        d2A += partial(g, dj, 1, 0, k);
      }
    }
  s.q.v = c.q.v.conjugate() - Complex(0.0, 1.0) * divB - d2A;
  return s;
}

}  // namespace polyharm
