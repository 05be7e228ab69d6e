// SPDX-License-Identifier: MIT

#include "qep/core.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace qep {

namespace {

double max_abs(const Matrix& a) { return a.cwiseAbs().maxCoeff(); }

double scale_of(const Matrix& a) { return std::max(1.0, max_abs(a)); }

}  // namespace

double max_abs_diff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

void check_density(const Matrix& rho, const std::string& who) {
  if (rho.rows() != rho.cols() || rho.rows() == 0)
    throw std::invalid_argument("qep: " + who + ": density matrix must be square");
  if (!rho.allFinite())
    throw std::invalid_argument("qep: " + who + ": density matrix has non-finite entries");
  const double s = scale_of(rho);
  if (max_abs_diff(rho, rho.adjoint()) > tol::hermitian * s)
    throw std::invalid_argument("qep: " + who + ": density matrix is not Hermitian");
  if (std::abs(rho.trace().real() - 1.0) > tol::trace_one ||
      std::abs(rho.trace().imag()) > tol::trace_one)
    throw std::invalid_argument("qep: " + who + ": density matrix trace differs from 1");
  Eigen::SelfAdjointEigenSolver<Matrix> es(rho, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -tol::positivity)
    throw std::invalid_argument("qep: " + who + ": density matrix has a negative eigenvalue");
}

void check_density(const DensityOperator& rho, const std::string& who) {
  int prod = 1;
  for (int d : rho.dims) prod *= d;
  if (prod != rho.dim())
    throw std::invalid_argument("qep: " + who + ": dims metadata does not match matrix size");
  check_density(rho.m, who);
}

void check_basis(const ProjectiveBasis& b, int d, const std::string& who) {
  if (b.size() != d)
    throw std::invalid_argument("qep: " + who + ": basis must have exactly " +
                                std::to_string(d) + " states");
  for (int i = 0; i < d; ++i) {
    if (b.states[i].size() != d)
      throw std::invalid_argument("qep: " + who + ": basis state dimension mismatch");
    for (int j = 0; j <= i; ++j) {
      const Complex ip = b.states[j].dot(b.states[i]);
      const double target = (i == j) ? 1.0 : 0.0;
      if (std::abs(ip - target) > 1e-9)
        throw std::invalid_argument("qep: " + who + ": basis is not orthonormal");
    }
  }
}

Matrix tensor(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Vector tensor(const Vector& a, const Vector& b) {
  Vector out(a.size() * b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i)
    out.segment(i * b.size(), b.size()) = a(i) * b;
  return out;
}

Matrix partial_trace(const Matrix& rho, const std::vector<int>& dims,
                     const std::vector<int>& keep) {
  const int nf = static_cast<int>(dims.size());
  if (nf < 1) throw std::invalid_argument("qep: partial_trace: empty dims");
  int total = 1;
  for (int d : dims) {
    if (d < 1) throw std::invalid_argument("qep: partial_trace: nonpositive factor");
    total *= d;
  }
  if (rho.rows() != total || rho.cols() != total)
    throw std::invalid_argument("qep: partial_trace: dims do not match matrix size");

  std::vector<bool> kept(nf, false);
  for (int k : keep) {
    if (k < 0 || k >= nf)
      throw std::invalid_argument("qep: partial_trace: keep index out of range");
    kept[k] = true;
  }

  int dk = 1, dt = 1;
  for (int f = 0; f < nf; ++f) (kept[f] ? dk : dt) *= dims[f];

  // Strides of each factor in the full index, row-major subsystem ordering.
  std::vector<int> stride(nf, 1);
  for (int f = nf - 2; f >= 0; --f) stride[f] = stride[f + 1] * dims[f + 1];

  // Enumerate kept and traced multi-indices as flat offsets.
  std::vector<int> koff(dk, 0), toff(dt, 0);
  {
    int reps = 1;
    for (int f = 0; f < nf; ++f) {
      if (!kept[f]) continue;
      const int block = dk / (reps * dims[f]);
      for (int i = 0; i < dk; ++i) {
        const int digit = (i / block) % dims[f];
        koff[i] += digit * stride[f];
      }
      reps *= dims[f];
    }
    reps = 1;
    for (int f = 0; f < nf; ++f) {
      if (kept[f]) continue;
      const int block = dt / (reps * dims[f]);
      for (int i = 0; i < dt; ++i) {
        const int digit = (i / block) % dims[f];
        toff[i] += digit * stride[f];
      }
      reps *= dims[f];
    }
  }

  Matrix out = Matrix::Zero(dk, dk);
  for (int i = 0; i < dk; ++i)
    for (int j = 0; j < dk; ++j) {
      Complex acc(0, 0);
      for (int t = 0; t < dt; ++t) acc += rho(koff[i] + toff[t], koff[j] + toff[t]);
      out(i, j) = acc;
    }
  return out;
}

DensityOperator partial_trace(const DensityOperator& rho, const std::vector<int>& keep) {
  DensityOperator out;
  out.m = partial_trace(rho.m, rho.dims, keep);
  for (int k : keep) out.dims.push_back(rho.dims.at(k));
  return out;
}

EigResult eig_hermitian(const Matrix& h) {
  if (h.rows() != h.cols())
    throw std::invalid_argument("qep: eig_hermitian: matrix must be square");
  const double s = scale_of(h);
  if (max_abs_diff(h, h.adjoint()) > tol::hermitian * s)
    throw std::invalid_argument("qep: eig_hermitian: matrix is not Hermitian");

  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  EigResult r;
  r.values = es.eigenvalues();
  r.vectors = es.eigenvectors();
  r.degenerate = false;
  for (Eigen::Index i = 0; i + 1 < r.values.size(); ++i)
    if (r.values(i + 1) - r.values(i) < tol::degeneracy) r.degenerate = true;

  // Phase convention: first entry of modulus > 1e-12 made real positive.
  for (Eigen::Index c = 0; c < r.vectors.cols(); ++c) {
    for (Eigen::Index i = 0; i < r.vectors.rows(); ++i) {
      const Complex v = r.vectors(i, c);
      if (std::abs(v) > 1e-12) {
        r.vectors.col(c) *= std::conj(v) / std::abs(v);
        break;
      }
    }
  }

  const Matrix recon =
      r.vectors * r.values.cast<Complex>().asDiagonal() * r.vectors.adjoint();
  if (max_abs_diff(recon, h) > tol::eig_recon * s)
    throw std::runtime_error("qep: eig_hermitian: reconstruction residual too large");
  return r;
}

ProjectiveBasis basis_from_eig(const EigResult& e) {
  ProjectiveBasis b;
  for (Eigen::Index c = 0; c < e.vectors.cols(); ++c) b.states.push_back(e.vectors.col(c));
  return b;
}

Matrix expm_hermitian(const Matrix& h, Complex scale) {
  const EigResult e = eig_hermitian(h);
  Vector d(e.values.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = std::exp(scale * e.values(i));
  return e.vectors * d.asDiagonal() * e.vectors.adjoint();
}

Matrix power_hermitian(const Matrix& pi, double p) {
  const EigResult e = eig_hermitian(pi);
  if (e.values.minCoeff() <= 0.0 && p < 0.0)
    throw std::invalid_argument("qep: power_hermitian: negative power of singular matrix");
  Vector d(e.values.size());
  for (Eigen::Index i = 0; i < d.size(); ++i)
    d(i) = std::pow(std::max(e.values(i), 0.0), p);
  return e.vectors * d.asDiagonal() * e.vectors.adjoint();
}

double von_neumann_entropy(const Matrix& rho) {
  check_density(rho, "von_neumann_entropy");
  Eigen::SelfAdjointEigenSolver<Matrix> es(rho, Eigen::EigenvaluesOnly);
  double s = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double p = es.eigenvalues()(i);
    if (p > 0.0) s -= p * std::log(p);
  }
  return std::max(s, 0.0);
}

double shannon_entropy(const RVector& p) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) < -tol::positivity)
      throw std::invalid_argument("qep: shannon_entropy: negative probability");
    if (p(i) > 0.0) s -= p(i) * std::log(p(i));
  }
  return std::max(s, 0.0);
}

double relative_entropy(const Matrix& rho, const Matrix& sigma) {
  check_density(rho, "relative_entropy");
  check_density(sigma, "relative_entropy");
  if (rho.rows() != sigma.rows())
    throw std::invalid_argument("qep: relative_entropy: dimension mismatch");

  const EigResult er = eig_hermitian(rho);
  const EigResult es = eig_hermitian(sigma);

  // Support check: weight of rho on the null space of sigma.
  double null_weight = 0.0;
  for (Eigen::Index j = 0; j < es.values.size(); ++j) {
    if (es.values(j) <= tol::support) {
      const Vector u = es.vectors.col(j);
      null_weight += std::real(u.dot(rho * u));
    }
  }
  if (null_weight > tol::support)
    throw std::runtime_error(
        "qep: relative_entropy: rho has support outside sigma (infinite divergence)");

  double tr_rho_ln_rho = 0.0;
  for (Eigen::Index i = 0; i < er.values.size(); ++i) {
    const double p = er.values(i);
    if (p > 0.0) tr_rho_ln_rho += p * std::log(p);
  }
  double tr_rho_ln_sigma = 0.0;
  for (Eigen::Index j = 0; j < es.values.size(); ++j) {
    const double q = es.values(j);
    if (q > tol::support) {
      const Vector u = es.vectors.col(j);
      tr_rho_ln_sigma += std::real(u.dot(rho * u)) * std::log(q);
    }
  }
  return tr_rho_ln_rho - tr_rho_ln_sigma;
}

double mutual_information(const DensityOperator& rho) {
  if (rho.dims.size() != 2)
    throw std::invalid_argument("qep: mutual_information: state must be bipartite");
  const Matrix ra = partial_trace(rho.m, rho.dims, {0});
  const Matrix rb = partial_trace(rho.m, rho.dims, {1});
  return von_neumann_entropy(ra) + von_neumann_entropy(rb) - von_neumann_entropy(rho.m);
}

namespace {

// Fourth-order commutator-free exponential product: two Gauss-Legendre
// Hamiltonian evaluations combine into two exponentials per slice.
Matrix sliced_product(const Protocol& p, int n) {
  const double dt = p.duration / n;
  const double r = std::sqrt(3.0) / 6.0;
  const double a1 = 0.25 + r, a2 = 0.25 - r;
  const Eigen::Index d = p.hamiltonian(0.0).rows();
  const Complex scale(0, -dt / p.hbar);
  Matrix u = Matrix::Identity(d, d);
  for (int k = 0; k < n; ++k) {
    const Matrix h1 = p.hamiltonian((k + 0.5 - r) * dt);
    const Matrix h2 = p.hamiltonian((k + 0.5 + r) * dt);
    u = expm_hermitian(a2 * h1 + a1 * h2, scale) *
        (expm_hermitian(a1 * h1 + a2 * h2, scale) * u);
  }
  return u;
}

}  // namespace

Matrix time_ordered_unitary(const Protocol& p) {
  if (!p.hamiltonian) throw std::invalid_argument("qep: time_ordered_unitary: no Hamiltonian");
  if (p.n_slices < 1) throw std::invalid_argument("qep: time_ordered_unitary: n_slices < 1");
  if (p.duration < 0.0) throw std::invalid_argument("qep: time_ordered_unitary: negative duration");
  if (p.duration == 0.0) {
    const Eigen::Index d = p.hamiltonian(0.0).rows();
    return Matrix::Identity(d, d);
  }

  int n = p.n_slices;
  Matrix u = sliced_product(p, n);
  for (int iter = 0; iter < 16; ++iter) {
    const Matrix u2 = sliced_product(p, 2 * n);
    const double diff = max_abs_diff(u, u2);
    u = u2;
    n *= 2;
    if (diff <= tol::slice_conv) {
      const Matrix id = Matrix::Identity(u.rows(), u.cols());
      if (max_abs_diff(u.adjoint() * u, id) > tol::unitarity)
        throw std::runtime_error("qep: time_ordered_unitary: unitarity residual too large");
      return u;
    }
  }
  throw std::runtime_error("qep: time_ordered_unitary: slice doubling did not converge");
}

Matrix time_reverse(const TimeReversal& theta, const Matrix& m) { return theta.apply(m); }

Protocol reversed_protocol(const Protocol& p, const TimeReversal& theta) {
  Protocol r = p;
  const double tau = p.duration;
  const auto h = p.hamiltonian;
  r.hamiltonian = [tau, h, theta](double s) { return theta.apply(h(tau - s)); };
  return r;
}

double trace_distance(const Matrix& a, const Matrix& b) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a - b, Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

}  // namespace qep
