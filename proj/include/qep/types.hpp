// SPDX-License-Identifier: MIT
//
// Shared value types and tolerance constants.
//
// Conventions used across the library:
//   * all entropies are in nats (natural logarithm, k_B = 1),
//   * hbar is carried explicitly by Protocol / LindbladModel,
//   * matrices are dense column-major complex doubles.

#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <complex>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qep {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;
using RMatrix = Eigen::MatrixXd;
using SpMatrix = Eigen::SparseMatrix<Complex>;

// Tolerances. Values chosen for double precision at dimensions up to ~10^3;
// see the design notes in README.md.
namespace tol {
inline constexpr double hermitian = 1e-10;    // Hermiticity residual
inline constexpr double trace_one = 1e-10;    // trace deviation from 1
inline constexpr double positivity = 1e-10;   // admissible negative eigenvalue
inline constexpr double unitarity = 1e-9;     // ||U^dag U - I||
inline constexpr double probability = 1e-10;  // distribution normalization
inline constexpr double cptp = 1e-9;          // ||sum M^dag M - I||
inline constexpr double fixed_point = 1e-9;   // invariant-state residual
inline constexpr double positive_definite = 1e-12;  // min eigenvalue of pi
inline constexpr double ladder = 1e-9;        // gap spread in ladder check
inline constexpr double ladder_coef = 1e-12;  // coefficient cutoff in ladder check
inline constexpr double degeneracy = 1e-9;    // adjacent-eigenvalue gap
inline constexpr double eig_recon = 1e-10;    // eigendecomposition residual
inline constexpr double support = 1e-12;      // support inclusion for rel. entropy
inline constexpr double ft_detailed = 1e-10;  // detailed-FT residual (enumeration)
inline constexpr double consistency = 1e-10;  // arithmetic identities
inline constexpr double ode_endpoint = 1e-8;  // RK4 step-halving endpoint gate
inline constexpr double slice_conv = 1e-11;   // time-ordered product doubling gate
inline constexpr double log_clamp = 1e-14;    // eigenvalue clamp inside ln(rho)
inline constexpr double commutator = 1e-9;    // [H, K2], [H, Phi] for the split
inline constexpr double zero_prob = 1e-300;   // drop threshold for enumeration
}  // namespace tol

// Density operator with subsystem dimension metadata. `dims` lists the
// tensor factors (system first); their product equals the matrix dimension.
struct DensityOperator {
  Matrix m;
  std::vector<int> dims;

  int dim() const { return static_cast<int>(m.rows()); }
};

// Validates Hermiticity, unit trace and positive semidefiniteness.
// `who` names the calling operation in error messages.
void check_density(const Matrix& rho, const std::string& who);
void check_density(const DensityOperator& rho, const std::string& who);

// Ordered orthonormal rank-1 measurement basis, stored as state vectors.
struct ProjectiveBasis {
  std::vector<Vector> states;

  int size() const { return static_cast<int>(states.size()); }
  Matrix projector(int i) const { return states.at(i) * states.at(i).adjoint(); }
};

// Checks orthonormality and completeness of `b` on dimension d.
void check_basis(const ProjectiveBasis& b, int d, const std::string& who);

// Piecewise Hamiltonian drive H(t) over [0, duration]; `hamiltonian` returns
// an energy-units matrix, hbar converts to angular frequency.
struct Protocol {
  double duration = 0.0;
  int n_slices = 128;
  double hbar = 1.0;
  std::function<Matrix(double)> hamiltonian;
};

// Anti-unitary time reversal: complex conjugation in a reference basis
// (columns of `basis`; empty means the computational basis).
struct TimeReversal {
  Matrix basis;  // optional; unitary when present

  // Theta |psi>
  Vector apply(const Vector& psi) const {
    if (basis.size() == 0) return psi.conjugate();
    return basis * (basis.adjoint() * psi).conjugate();
  }
  // Theta X Theta^dag
  Matrix apply(const Matrix& x) const {
    if (basis.size() == 0) return x.conjugate();
    return basis * (basis.adjoint() * x * basis).conjugate() * basis.adjoint();
  }
};

// Counter-based per-trajectory random streams: every trajectory index gets
// its own generator, so sampled results do not depend on worker count.
namespace rng {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro-independent generator: a splitmix64 chain keyed by (seed, index).
class Stream {
 public:
  Stream(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t s = seed;
    (void)splitmix64(s);
    s ^= 0x632be59bd9b4e019ULL * (index + 1);
    state_ = splitmix64(s) ^ index;
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

}  // namespace rng

}  // namespace qep
