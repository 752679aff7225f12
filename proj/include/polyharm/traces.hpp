#pragma once

#include <vector>

#include "polyharm/grid.hpp"

namespace polyharm {

/// Navier data tuple: components f_j prescribe the iterated-Laplacian traces
/// of the solution, one complex value per boundary node.
struct NavierTrace {
  std::shared_ptr<const GridSpec> grid;
  std::vector<Eigen::VectorXcd> f;

  NavierTrace() = default;
  NavierTrace(std::shared_ptr<const GridSpec> g, int m)
      : grid(std::move(g)),
        f(m, Eigen::VectorXcd::Zero(grid->num_boundary())) {}
  int order() const { return static_cast<int>(f.size()); }
};

/// Neumann data tuple: g_j = outward normal derivative of the j-th iterated
/// Laplacian of the solution on the boundary.
struct NeumannTrace {
  std::shared_ptr<const GridSpec> grid;
  std::vector<Eigen::VectorXcd> g;

  NeumannTrace() = default;
  NeumannTrace(std::shared_ptr<const GridSpec> gr, int m)
      : grid(std::move(gr)),
        g(m, Eigen::VectorXcd::Zero(grid->num_boundary())) {}
  int order() const { return static_cast<int>(g.size()); }
};

}  // namespace polyharm
