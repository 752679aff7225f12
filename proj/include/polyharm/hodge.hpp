#pragma once

#include "polyharm/grid.hpp"

namespace polyharm {

/// A = A_prime + sym_grad(V) + theta * id with A_prime trace-free and
/// (to discretization accuracy) divergence-free, V = 0 on the boundary.
struct TensorHodge {
  SymTensorField A_prime;
  VectorField V;
  ScalarField theta;
  double div_norm = 0.0;    // ||div A_prime||_2
  double trace_norm = 0.0;  // ||trace A_prime||_2, zero up to rounding
  double bvp_residual = 0.0;
};

/// X = X_prime + grad(theta) with theta = 0 on the boundary.
struct VectorHodge {
  VectorField X_prime;
  ScalarField theta;
  double div_norm = 0.0;  // ||div X_prime||_2
  double bvp_residual = 0.0;
};

/// Solves -div(sym_grad V) + (1/3) grad(div V) = F, V = 0 on the boundary.
/// Krylov relative residual target 1e-10, iteration cap 10 N^3.
VectorField solve_elliptic_system(const VectorField& F,
                                  double* residual = nullptr);

TensorHodge decompose_tensor(const SymTensorField& A);
VectorHodge decompose_vector(const VectorField& X);

/// (sym_grad V)_jk = (d_j V_k + d_k V_j)/2 with grid stencils.
SymTensorField sym_grad(const VectorField& V);
/// (div A)_k = sum_j d_j A_jk.
VectorField tensor_divergence(const SymTensorField& A);
ScalarField tensor_trace(const SymTensorField& A);

}  // namespace polyharm
