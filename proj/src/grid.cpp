#include "polyharm/grid.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace polyharm {

GridSpec::GridSpec(int N_, double L_) : N(N_), L(L_) {
  if (N % 2 == 0) throw std::invalid_argument("N must be odd");
  if (N < 17) throw std::invalid_argument("N must be >= 17");
  if (L <= 0.0) throw std::invalid_argument("L must be positive");
  dx = 2.0 * L / (N - 1);

  const int M = num_nodes();
  boundary_pos.assign(M, -1);
  interior_pos.assign(M, -1);
  vol_weight.assign(M, 0.0);

  for (int ix = 0; ix < N; ++ix)
    for (int iy = 0; iy < N; ++iy)
      for (int iz = 0; iz < N; ++iz) {
        const int id = flat(ix, iy, iz);
        const int idx[3] = {ix, iy, iz};
        int extremes = 0;
        int first_axis = -1, side = 0;
        for (int a = 0; a < 3; ++a) {
          if (idx[a] == 0 || idx[a] == N - 1) {
            ++extremes;
            if (first_axis < 0) {
              first_axis = a;
              side = (idx[a] == N - 1);
            }
          }
        }
        vol_weight[id] = dx * dx * dx / (1 << extremes);
        if (extremes > 0) {
          boundary_pos[id] = static_cast<int>(boundary_nodes.size());
          boundary_nodes.push_back(id);
          face.push_back(static_cast<std::uint8_t>(2 * first_axis + side));
        } else {
          interior_pos[id] = static_cast<int>(interior_nodes.size());
          interior_nodes.push_back(id);
        }
      }

  // Surface weights: 2-D trapezoid per face, summed over incident faces.
  surf_weight.assign(boundary_nodes.size(), 0.0);
  for (std::size_t b = 0; b < boundary_nodes.size(); ++b) {
    const auto idx = unflat(boundary_nodes[b]);
    for (int a = 0; a < 3; ++a) {
      if (idx[a] != 0 && idx[a] != N - 1) continue;
      // Tangential axes decide the 2-D trapezoid corner factor.
      int tang_extremes = 0;
      for (int t = 0; t < 3; ++t) {
        if (t == a) continue;
        if (idx[t] == 0 || idx[t] == N - 1) ++tang_extremes;
      }
      surf_weight[b] += dx * dx / (1 << tang_extremes);
    }
  }
}

std::shared_ptr<const GridSpec> build_grid(int N, double L) {
  return std::make_shared<const GridSpec>(N, L);
}

void check_same_grid(const GridSpec& a, const GridSpec& b) {
  if (a.N != b.N || a.L != b.L)
    throw std::invalid_argument("grid mismatch between operands");
}

namespace {

// Step along one axis in flattened indexing.
inline int stride(const GridSpec& g, int axis) {
  return axis == 0 ? g.N * g.N : (axis == 1 ? g.N : 1);
}

}  // namespace

Eigen::VectorXcd partial(const GridSpec& g, const Eigen::VectorXcd& vals,
                         int ncomp, int c, int axis) {
  const int N = g.N;
  const int s = stride(g, axis);
  const double inv2dx = 0.5 / g.dx;
  Eigen::VectorXcd out(g.num_nodes());
  for (int id = 0; id < g.num_nodes(); ++id) {
    const int i = g.unflat(id)[axis];
    const auto val = [&](int off) { return vals[(id + off * s) * ncomp + c]; };
    if (i == 0) {
      out[id] = (-3.0 * val(0) + 4.0 * val(1) - val(2)) * inv2dx;
    } else if (i == N - 1) {
      out[id] = (3.0 * val(0) - 4.0 * val(-1) + val(-2)) * inv2dx;
    } else {
      out[id] = (val(1) - val(-1)) * inv2dx;
    }
  }
  return out;
}

Eigen::VectorXcd partial2(const GridSpec& g, const Eigen::VectorXcd& vals,
                          int ncomp, int c, int axis) {
  const int N = g.N;
  const int s = stride(g, axis);
  const double invdx2 = 1.0 / (g.dx * g.dx);
  Eigen::VectorXcd out(g.num_nodes());
  for (int id = 0; id < g.num_nodes(); ++id) {
    const int i = g.unflat(id)[axis];
    const auto val = [&](int off) { return vals[(id + off * s) * ncomp + c]; };
    if (i == 0) {
      out[id] = (2.0 * val(0) - 5.0 * val(1) + 4.0 * val(2) - val(3)) * invdx2;
    } else if (i == N - 1) {
      out[id] =
          (2.0 * val(0) - 5.0 * val(-1) + 4.0 * val(-2) - val(-3)) * invdx2;
    } else {
      out[id] = (val(1) - 2.0 * val(0) + val(-1)) * invdx2;
    }
  }
  return out;
}

ScalarField laplacian(const ScalarField& f) {
  ScalarField out(f.grid);
  for (int a = 0; a < 3; ++a) out.v += partial2(*f.grid, f.v, 1, 0, a);
  return out;
}

VectorField gradient(const ScalarField& f) {
  VectorField out(f.grid);
  for (int a = 0; a < 3; ++a) {
    Eigen::VectorXcd d = partial(*f.grid, f.v, 1, 0, a);
    for (int id = 0; id < f.size(); ++id) out.at(id, a) = d[id];
  }
  return out;
}

ScalarField divergence(const VectorField& f) {
  ScalarField out(f.grid);
  for (int a = 0; a < 3; ++a) out.v += partial(*f.grid, f.v, 3, a, a);
  return out;
}

BoundaryField normal_trace(const ScalarField& f) {
  const GridSpec& g = *f.grid;
  if (g.N < 3) throw std::invalid_argument("grid too small for normal stencil");
  BoundaryField out(f.grid);
  const double inv2dx = 0.5 / g.dx;
  for (int b = 0; b < g.num_boundary(); ++b) {
    const int id = g.boundary_nodes[b];
    const int fc = g.face[b];
    const int axis = fc / 2;
    // Step pointing inward from the face; the (3,-4,1) stencil along it is
    // the one-sided derivative in the outward direction.
    const int s = (fc % 2 ? -1 : 1) * stride(g, axis);
    out.v[b] = (3.0 * f.v[id] - 4.0 * f.v[id + s] + f.v[id + 2 * s]) * inv2dx;
  }
  return out;
}

BoundaryField boundary_restrict(const ScalarField& f) {
  BoundaryField out(f.grid);
  for (int b = 0; b < f.grid->num_boundary(); ++b)
    out.v[b] = f.v[f.grid->boundary_nodes[b]];
  return out;
}

template <int NC>
Complex quadrature(const FieldT<NC>& a, const FieldT<NC>& b) {
  check_same_grid(*a.grid, *b.grid);
  Complex acc = 0.0;
  for (int id = 0; id < a.size(); ++id) {
    Complex s = 0.0;
    for (int c = 0; c < NC; ++c) s += a.at(id, c) * std::conj(b.at(id, c));
    acc += a.grid->vol_weight[id] * s;
  }
  return acc;
}

template Complex quadrature<1>(const FieldT<1>&, const FieldT<1>&);
template Complex quadrature<3>(const FieldT<3>&, const FieldT<3>&);
template Complex quadrature<6>(const FieldT<6>&, const FieldT<6>&);

Complex quadrature(const BoundaryField& a, const BoundaryField& b) {
  check_same_grid(*a.grid, *b.grid);
  Complex acc = 0.0;
  for (int i = 0; i < a.v.size(); ++i)
    acc += a.grid->surf_weight[i] * a.v[i] * std::conj(b.v[i]);
  return acc;
}

void dump_field(const std::string& path, const GridSpec& g,
                const Eigen::VectorXcd& vals, int components,
                const std::string& kind) {
  std::ofstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open " + path);
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    const double re = vals[i].real(), im = vals[i].imag();
    bin.write(reinterpret_cast<const char*>(&re), sizeof(double));
    bin.write(reinterpret_cast<const char*>(&im), sizeof(double));
  }
  nlohmann::json side{
      {"N", g.N}, {"L", g.L}, {"components", components}, {"kind", kind}};
  std::ofstream js(path + ".json");
  js << side.dump(2) << "\n";
}

FieldDump load_field(const std::string& path) {
  std::ifstream js(path + ".json");
  if (!js) throw std::runtime_error("missing sidecar for " + path);
  nlohmann::json side = nlohmann::json::parse(js);
  FieldDump d;
  d.N = side.at("N");
  d.L = side.at("L");
  d.components = side.at("components");
  d.kind = side.value("kind", "");
  const std::size_t count =
      static_cast<std::size_t>(d.N) * d.N * d.N * d.components;
  d.vals.resize(count);
  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open " + path);
  for (std::size_t i = 0; i < count; ++i) {
    double re, im;
    bin.read(reinterpret_cast<char*>(&re), sizeof(double));
    bin.read(reinterpret_cast<char*>(&im), sizeof(double));
    d.vals[i] = Complex(re, im);
  }
  if (!bin) throw std::runtime_error("truncated dump " + path);
  return d;
}

}  // namespace polyharm
