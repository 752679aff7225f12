#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace polyharm {

using Complex = std::complex<double>;
using Vec3 = Eigen::Vector3d;
using CVec3 = Eigen::Vector3cd;

/// Uniform tensor grid on the open box (-L, L)^3.  N nodes per axis,
/// N odd so that the origin is a node.  Node (ix,iy,iz) sits at
/// x_a = -L + i_a * dx and is flattened as (ix*N + iy)*N + iz.
class GridSpec {
public:
  GridSpec(int N, double L);

  int N;
  double L;
  double dx;

  int num_nodes() const { return N * N * N; }
  int num_boundary() const { return static_cast<int>(boundary_nodes.size()); }
  int num_interior() const { return static_cast<int>(interior_nodes.size()); }

  int flat(int ix, int iy, int iz) const { return (ix * N + iy) * N + iz; }
  std::array<int, 3> unflat(int id) const {
    return {id / (N * N), (id / N) % N, id % N};
  }
  double coord(int i) const { return -L + i * dx; }
  Vec3 point(int id) const {
    auto [ix, iy, iz] = unflat(id);
    return {coord(ix), coord(iy), coord(iz)};
  }
  bool is_boundary(int id) const { return boundary_pos[id] >= 0; }

  /// Flattened node ids, lexicographic order.
  std::vector<int> boundary_nodes;
  std::vector<int> interior_nodes;
  /// Per node: position within boundary_nodes, or -1 for interior nodes.
  std::vector<int> boundary_pos;
  /// Per node: position within interior_nodes, or -1 for boundary nodes.
  std::vector<int> interior_pos;
  /// Designated face per boundary node, axis priority x < y < z.
  /// Encoding: 2*axis + (side > 0), i.e. 0:x-, 1:x+, 2:y-, 3:y+, 4:z-, 5:z+.
  std::vector<std::uint8_t> face;
  /// Trapezoidal volume weight per node (dx^3 with 1/2 per extreme axis).
  std::vector<double> vol_weight;
  /// Surface quadrature weight per boundary node, summed over incident faces.
  std::vector<double> surf_weight;

  /// Outward unit normal of the designated face.
  Vec3 normal_of_face(int f) const {
    Vec3 nu = Vec3::Zero();
    nu[f / 2] = (f % 2) ? 1.0 : -1.0;
    return nu;
  }
};

std::shared_ptr<const GridSpec> build_grid(int N, double L);

template <int NC>
struct FieldT {
  std::shared_ptr<const GridSpec> grid;
  Eigen::VectorXcd v;  // node-major, component-minor: v[node*NC + c]

  FieldT() = default;
  explicit FieldT(std::shared_ptr<const GridSpec> g)
      : grid(std::move(g)), v(Eigen::VectorXcd::Zero(grid->num_nodes() * NC)) {}

  static constexpr int components = NC;
  Complex& at(int node, int c = 0) { return v[node * NC + c]; }
  Complex at(int node, int c = 0) const { return v[node * NC + c]; }
  int size() const { return grid->num_nodes(); }
};

using ScalarField = FieldT<1>;
using VectorField = FieldT<3>;
/// Symmetric tensor, upper triangle stored as (11,12,13,22,23,33).
using SymTensorField = FieldT<6>;

/// Index of entry (j,k) of a symmetric 3x3 tensor in the packed layout.
inline int sym_index(int j, int k) {
  static constexpr int tab[3][3] = {{0, 1, 2}, {1, 3, 4}, {2, 4, 5}};
  return tab[j][k];
}

/// Boundary scalar data, one value per boundary node (GridSpec order).
struct BoundaryField {
  std::shared_ptr<const GridSpec> grid;
  Eigen::VectorXcd v;

  BoundaryField() = default;
  explicit BoundaryField(std::shared_ptr<const GridSpec> g)
      : grid(std::move(g)), v(Eigen::VectorXcd::Zero(grid->num_boundary())) {}
};

// Differential calculus.  Central 2nd-order stencils on interior nodes,
// one-sided 2nd-order at boundary nodes; exact on polynomials of degree <= 2.
ScalarField laplacian(const ScalarField& f);
VectorField gradient(const ScalarField& f);
ScalarField divergence(const VectorField& f);

/// d/dx_axis of component c, full grid.
Eigen::VectorXcd partial(const GridSpec& g, const Eigen::VectorXcd& vals,
                         int ncomp, int c, int axis);
/// d^2/dx_axis^2 of component c, full grid.
Eigen::VectorXcd partial2(const GridSpec& g, const Eigen::VectorXcd& vals,
                          int ncomp, int c, int axis);

/// Outward normal derivative on each boundary node (designated face,
/// one-sided 3-point stencil along the face normal).
BoundaryField normal_trace(const ScalarField& f);

/// Restriction of a scalar field to the boundary nodes.
BoundaryField boundary_restrict(const ScalarField& f);

/// Trapezoidal integral of a * conj(b) over the volume (componentwise sum).
template <int NC>
Complex quadrature(const FieldT<NC>& a, const FieldT<NC>& b);
/// Trapezoidal integral of a * conj(b) over the boundary surface.
Complex quadrature(const BoundaryField& a, const BoundaryField& b);

template <int NC>
double l2_norm(const FieldT<NC>& a) {
  return std::sqrt(std::abs(quadrature(a, a)));
}

// Binary field dumps: little-endian (re, im) float64 pairs, node-major and
// component-minor, plus a JSON sidecar {N, L, components, kind}.
void dump_field(const std::string& path, const GridSpec& g,
                const Eigen::VectorXcd& vals, int components,
                const std::string& kind);
struct FieldDump {
  int N;
  double L;
  int components;
  std::string kind;
  Eigen::VectorXcd vals;
};
FieldDump load_field(const std::string& path);

void check_same_grid(const GridSpec& a, const GridSpec& b);

}  // namespace polyharm
