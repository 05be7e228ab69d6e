// SPDX-License-Identifier: MIT
//
// Dense complex linear algebra and quantum-information primitives.

#pragma once

#include "qep/types.hpp"

namespace qep {

// Kronecker product, system factor first.
Matrix tensor(const Matrix& a, const Matrix& b);
Vector tensor(const Vector& a, const Vector& b);

// Reduced state over the kept factors (ascending index order preserved).
// `dims` lists all tensor factors of `rho`.
Matrix partial_trace(const Matrix& rho, const std::vector<int>& dims,
                     const std::vector<int>& keep);
DensityOperator partial_trace(const DensityOperator& rho, const std::vector<int>& keep);

struct EigResult {
  RVector values;   // ascending
  Matrix vectors;   // columns; phase fixed so the first nonzero entry is real > 0
  bool degenerate;  // some adjacent gap below tol::degeneracy
};

// Hermitian eigendecomposition with deterministic ordering and phases.
EigResult eig_hermitian(const Matrix& h);

ProjectiveBasis basis_from_eig(const EigResult& e);

// exp(scale * H) for Hermitian H, evaluated spectrally (exactly unitary for
// purely imaginary scale).
Matrix expm_hermitian(const Matrix& h, Complex scale);

// pi^p for Hermitian positive definite pi.
Matrix power_hermitian(const Matrix& pi, double p);

// -sum lambda ln lambda, eigenvalues in [-tol::positivity, 0] clamped to 0.
double von_neumann_entropy(const Matrix& rho);

// Shannon entropy of a probability vector with the same clamping.
double shannon_entropy(const RVector& p);

// Tr[rho (ln rho - ln sigma)]. Throws a runtime error when rho has weight
// beyond tol::support outside the support of sigma (infinite divergence).
double relative_entropy(const Matrix& rho, const Matrix& sigma);

// S(rho_A) + S(rho_B) - S(rho_AB) for a bipartite state.
double mutual_information(const DensityOperator& rho);

// Time-ordered product of midpoint exponentials exp(-i H(t_mid) dt / hbar).
// The slice count is doubled until the product moves by less than
// tol::slice_conv; unitarity of the result is enforced to tol::unitarity.
Matrix time_ordered_unitary(const Protocol& p);

// Entrywise conjugation in the reference basis of `theta`.
Matrix time_reverse(const TimeReversal& theta, const Matrix& m);

// Protocol of the backward process: H~(s) = Theta H(duration - s) Theta^dag.
Protocol reversed_protocol(const Protocol& p, const TimeReversal& theta);

// max |a_ij - b_ij|
double max_abs_diff(const Matrix& a, const Matrix& b);

// Trace distance (1/2) ||a - b||_1 for Hermitian a, b.
double trace_distance(const Matrix& a, const Matrix& b);

}  // namespace qep
