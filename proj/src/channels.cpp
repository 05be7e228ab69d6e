// SPDX-License-Identifier: MIT

#include "qep/channels.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

namespace qep {

namespace {

Matrix completeness_sum(const KrausMap& map) {
  Matrix s = Matrix::Zero(map.dim, map.dim);
  for (const auto& op : map.ops) s += op.m.adjoint() * op.m;
  return s;
}

}  // namespace

void check_cptp(const KrausMap& map, double tolerance, const std::string& who) {
  if (map.dim <= 0 || map.ops.empty())
    throw std::invalid_argument("qep: " + who + ": empty Kraus map");
  for (const auto& op : map.ops)
    if (op.m.rows() != map.dim || op.m.cols() != map.dim)
      throw std::invalid_argument("qep: " + who + ": operator dimension mismatch");
  const Matrix s = completeness_sum(map);
  const double resid = max_abs_diff(s, Matrix::Identity(map.dim, map.dim));
  if (resid > tolerance)
    throw std::invalid_argument("qep: " + who + ": completeness residual " +
                                std::to_string(resid) + " exceeds tolerance");
}

KrausMap kraus_from_unitary(const Matrix& u, const RVector& q,
                            const ProjectiveBasis& env_init,
                            const ProjectiveBasis& env_final, int dim_s) {
  if (u.rows() != u.cols())
    throw std::invalid_argument("qep: kraus_from_unitary: unitary must be square");
  if (dim_s < 1 || u.rows() % dim_s != 0)
    throw std::invalid_argument("qep: kraus_from_unitary: system dimension mismatch");
  const int dim_e = static_cast<int>(u.rows()) / dim_s;
  if (max_abs_diff(u.adjoint() * u, Matrix::Identity(u.rows(), u.rows())) > tol::unitarity)
    throw std::invalid_argument("qep: kraus_from_unitary: input is not unitary");
  check_basis(env_init, dim_e, "kraus_from_unitary(env_init)");
  check_basis(env_final, dim_e, "kraus_from_unitary(env_final)");
  if (q.size() != dim_e)
    throw std::invalid_argument("qep: kraus_from_unitary: spectrum size mismatch");
  if (q.minCoeff() < -tol::positivity ||
      std::abs(q.sum() - 1.0) > tol::probability)
    throw std::invalid_argument("qep: kraus_from_unitary: invalid environment spectrum");

  KrausMap map;
  map.dim = dim_s;
  for (int nu = 0; nu < dim_e; ++nu) {
    // Columns U |s, phi_nu> for all system basis states s.
    Matrix r(dim_s * dim_e, dim_s);
    for (int s = 0; s < dim_s; ++s) {
      Vector in = Vector::Zero(dim_s * dim_e);
      for (int e = 0; e < dim_e; ++e) in(s * dim_e + e) = env_init.states[nu](e);
      r.col(s) = u * in;
    }
    for (int mu = 0; mu < dim_e; ++mu) {
      KrausOperator op;
      op.m = Matrix::Zero(dim_s, dim_s);
      for (int sp = 0; sp < dim_s; ++sp)
        for (int s = 0; s < dim_s; ++s) {
          Complex amp(0, 0);
          for (int e = 0; e < dim_e; ++e)
            amp += std::conj(env_final.states[mu](e)) * r(sp * dim_e + e, s);
          op.m(sp, s) = amp;
        }
      op.m *= std::sqrt(std::max(q(nu), 0.0));
      op.in_index = nu;
      op.out_index = mu;
      op.label = "nu=" + std::to_string(nu) + ",mu=" + std::to_string(mu);
      map.ops.push_back(std::move(op));
    }
  }
  check_cptp(map, tol::cptp, "kraus_from_unitary");
  return map;
}

void assign_sigma_from_distributions(KrausMap& map, const RVector& q,
                                     const RVector& q_tilde) {
  for (auto& op : map.ops) {
    if (op.in_index < 0 || op.out_index < 0 || op.in_index >= q.size() ||
        op.out_index >= q_tilde.size())
      throw std::invalid_argument(
          "qep: assign_sigma_from_distributions: operator lacks (nu, mu) labels");
    const double qn = q(op.in_index), qm = q_tilde(op.out_index);
    if (qn <= 0.0) {
      // Operator is identically zero (sqrt(q_nu) factor); sigma unused.
      op.sigma_e = 0.0;
      continue;
    }
    if (qm <= 0.0)
      throw std::invalid_argument(
          "qep: assign_sigma_from_distributions: zero backward weight");
    op.sigma_e = std::log(qn) - std::log(qm);
  }
}

Matrix apply(const KrausMap& map, const Matrix& rho) {
  if (rho.rows() != map.dim || rho.cols() != map.dim)
    throw std::invalid_argument("qep: apply: state dimension mismatch");
  Matrix out = Matrix::Zero(map.dim, map.dim);
  for (const auto& op : map.ops) out += op.m * rho * op.m.adjoint();
  return out;
}

DensityOperator apply(const KrausMap& map, const DensityOperator& rho) {
  return DensityOperator{qep::apply(map, rho.m), rho.dims};
}

std::pair<Matrix, double> apply_operation(const KrausOperator& op, const Matrix& rho) {
  if (rho.rows() != op.m.cols())
    throw std::invalid_argument("qep: apply_operation: state dimension mismatch");
  Matrix out = op.m * rho * op.m.adjoint();
  return {out, out.trace().real()};
}

Matrix invariant_state(const KrausMap& map) {
  check_cptp(map, tol::cptp, "invariant_state");
  const int d = map.dim;
  Matrix fixed;

  if (d <= 16) {
    // vec(M rho M^dag) = (conj(M) kron M) vec(rho), column-major vec.
    Matrix t = Matrix::Zero(d * d, d * d);
    for (const auto& op : map.ops) t += tensor(op.m.conjugate(), op.m);
    Eigen::ComplexEigenSolver<Matrix> es(t);
    if (es.info() != Eigen::Success)
      throw std::runtime_error("qep: invariant_state: eigensolver failed");
    Eigen::Index best = 0;
    double best_dist = std::abs(es.eigenvalues()(0) - Complex(1, 0));
    for (Eigen::Index i = 1; i < es.eigenvalues().size(); ++i) {
      const double dist = std::abs(es.eigenvalues()(i) - Complex(1, 0));
      if (dist < best_dist) {
        best_dist = dist;
        best = i;
      }
    }
    if (best_dist > tol::fixed_point)
      throw std::runtime_error(
          "qep: invariant_state: no eigenvalue within tolerance of 1");
    Vector v = es.eigenvectors().col(best);
    fixed = Eigen::Map<Matrix>(v.data(), d, d);
    const Complex tr = fixed.trace();
    if (std::abs(tr) < 1e-12)
      throw std::runtime_error("qep: invariant_state: traceless fixed point");
    fixed *= std::conj(tr) / std::abs(tr);  // make the trace real positive
  } else {
    // Power iteration on the map itself.
    fixed = Matrix::Identity(d, d) / static_cast<double>(d);
    for (int it = 0; it < 200000; ++it) {
      Matrix next = qep::apply(map, fixed);
      next = (next + next.adjoint()) / 2.0;
      next /= next.trace().real();
      const double delta = max_abs_diff(next, fixed);
      fixed = next;
      if (delta < 1e-14) break;
    }
  }

  fixed = (fixed + fixed.adjoint()) / 2.0;
  const double tr = fixed.trace().real();
  if (std::abs(tr) < 1e-12)
    throw std::runtime_error("qep: invariant_state: traceless fixed point");
  fixed /= tr;

  if (max_abs_diff(qep::apply(map, fixed), fixed) > tol::fixed_point)
    throw std::runtime_error("qep: invariant_state: fixed-point residual too large");
  Eigen::SelfAdjointEigenSolver<Matrix> es(fixed, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() <= tol::positive_definite)
    throw std::runtime_error("qep: invariant_state: fixed point is not positive definite");
  return fixed;
}

NonequilibriumPotential nonequilibrium_potential(const Matrix& pi) {
  check_density(pi, "nonequilibrium_potential");
  const EigResult e = eig_hermitian(pi);
  if (e.values.minCoeff() <= tol::positive_definite)
    throw std::invalid_argument(
        "qep: nonequilibrium_potential: pi is not positive definite");
  NonequilibriumPotential pot;
  pot.phi = -e.values.array().log();
  pot.basis = e.vectors;
  double z = 0.0;
  for (Eigen::Index i = 0; i < pot.phi.size(); ++i) z += std::exp(-pot.phi(i));
  if (std::abs(z - 1.0) > tol::trace_one)
    throw std::runtime_error("qep: nonequilibrium_potential: potential not normalized");
  return pot;
}

ConditionReport check_ladder_condition(const KrausMap& map,
                                       const NonequilibriumPotential& pot,
                                       double tau_ladder, double tau_coef) {
  ConditionReport rep;
  rep.satisfied = true;
  const int d = map.dim;
  if (pot.phi.size() != d)
    throw std::invalid_argument("qep: check_ladder_condition: dimension mismatch");

  for (size_t k = 0; k < map.ops.size(); ++k) {
    // b(j, i) = <pi_j| M |pi_i> multiplies |pi_j><pi_i|, gap phi_j - phi_i.
    const Matrix b = pot.basis.adjoint() * map.ops[k].m * pot.basis;
    const double cut = tau_coef * std::max(1.0, b.cwiseAbs().maxCoeff());
    bool any = false;
    double gap_min = 0.0, gap_max = 0.0, mean_num = 0.0, mean_den = 0.0;
    std::pair<int, int> at_min{-1, -1}, at_max{-1, -1};
    for (int j = 0; j < d; ++j)
      for (int i = 0; i < d; ++i) {
        const double w = std::abs(b(j, i));
        if (w <= cut) continue;
        const double gap = pot.phi(j) - pot.phi(i);
        if (!any || gap < gap_min) {
          gap_min = gap;
          at_min = {i, j};
        }
        if (!any || gap > gap_max) {
          gap_max = gap;
          at_max = {i, j};
        }
        mean_num += w * w * gap;
        mean_den += w * w;
        any = true;
      }
    if (!any) {
      rep.dphi.push_back(0.0);  // zero operator: no transitions
      continue;
    }
    if (gap_max - gap_min > tau_ladder) {
      rep.satisfied = false;
      rep.witness_op = static_cast<int>(k);
      rep.witness_entry_a = at_min;
      rep.witness_entry_b = at_max;
      rep.witness_coefficient =
          std::min(std::abs(b(at_min.second, at_min.first)),
                   std::abs(b(at_max.second, at_max.first)));
      std::ostringstream os;
      os << "operator " << (map.ops[k].label.empty() ? std::to_string(k)
                                                     : map.ops[k].label)
         << " connects (" << at_min.first << "->" << at_min.second << ") with gap "
         << gap_min << " and (" << at_max.first << "->" << at_max.second
         << ") with gap " << gap_max << " (coefficient magnitude >= "
         << rep.witness_coefficient << ")";
      rep.witness = os.str();
      rep.dphi.clear();
      return rep;
    }
    rep.dphi.push_back(mean_num / mean_den);
  }
  return rep;
}

void stamp_potential_gaps(KrausMap& map, const ConditionReport& report) {
  if (!report.satisfied)
    throw std::invalid_argument("qep: stamp_potential_gaps: condition not satisfied");
  if (report.dphi.size() != map.ops.size())
    throw std::invalid_argument("qep: stamp_potential_gaps: size mismatch");
  for (size_t k = 0; k < map.ops.size(); ++k) map.ops[k].dphi = report.dphi[k];
}

KrausMap backward_map(const KrausMap& map, const TimeReversal& theta) {
  KrausMap out;
  out.dim = map.dim;
  for (const auto& op : map.ops) {
    if (!op.sigma_e)
      throw std::invalid_argument("qep: backward_map: operator '" + op.label +
                                  "' has no sigma_e assigned");
    KrausOperator rev;
    rev.m = std::exp(-*op.sigma_e / 2.0) * theta.apply(Matrix(op.m.adjoint()));
    rev.label = "~" + op.label;
    rev.in_index = op.out_index;
    rev.out_index = op.in_index;
    rev.sigma_e = -*op.sigma_e;
    if (op.dphi) rev.dphi = -*op.dphi;
    out.ops.push_back(std::move(rev));
  }
  check_cptp(out, tol::cptp, "backward_map (inconsistent entropy assignment)");
  return out;
}

KrausMap dual_reverse_map(const KrausMap& map, const Matrix& pi,
                          const TimeReversal& theta) {
  check_density(pi, "dual_reverse_map");
  if (max_abs_diff(qep::apply(map, pi), pi) > tol::fixed_point)
    throw std::invalid_argument("qep: dual_reverse_map: pi is not invariant");
  const Matrix pi_half = power_hermitian(pi, 0.5);
  const Matrix pi_inv_half = power_hermitian(pi, -0.5);

  // Annotations are available only when the ladder condition holds.
  const NonequilibriumPotential pot = nonequilibrium_potential(pi);
  const ConditionReport rep = check_ladder_condition(map, pot);

  KrausMap out;
  out.dim = map.dim;
  for (size_t k = 0; k < map.ops.size(); ++k) {
    const auto& op = map.ops[k];
    KrausOperator dr;
    dr.m = theta.apply(Matrix(pi_half * op.m.adjoint() * pi_inv_half));
    dr.label = "~D" + op.label;
    dr.in_index = op.out_index;
    dr.out_index = op.in_index;
    if (rep.satisfied) {
      if (op.sigma_e) dr.sigma_e = *op.sigma_e + 2.0 * rep.dphi[k];
      dr.dphi = -rep.dphi[k];
    }
    out.ops.push_back(std::move(dr));
  }
  check_cptp(out, tol::cptp, "dual_reverse_map");
  const Matrix pi_rev = theta.apply(pi);
  if (max_abs_diff(qep::apply(out, pi_rev), pi_rev) > tol::fixed_point)
    throw std::runtime_error(
        "qep: dual_reverse_map: Theta pi Theta^dag is not invariant for the result");
  return out;
}

KrausMap dual_map(const KrausMap& map, const Matrix& pi, const TimeReversal& theta) {
  check_density(pi, "dual_map");
  for (const auto& op : map.ops)
    if (!op.sigma_e)
      throw std::invalid_argument("qep: dual_map: operator '" + op.label +
                                  "' has no sigma_e assigned");

  const NonequilibriumPotential pot = nonequilibrium_potential(pi);
  const ConditionReport rep = check_ladder_condition(map, pot);
  if (!rep.satisfied)
    throw std::invalid_argument("qep: dual_map: ladder condition violated: " +
                                rep.witness);

  const KrausMap backward = backward_map(map, theta);
  const Matrix pi_rev = theta.apply(pi);
  const double resid = max_abs_diff(qep::apply(backward, pi_rev), pi_rev);
  if (resid > tol::fixed_point)
    throw std::invalid_argument(
        "qep: dual_map: backward map does not preserve Theta pi Theta^dag (residual " +
        std::to_string(resid) + ")");

  KrausMap out;
  out.dim = map.dim;
  for (size_t k = 0; k < map.ops.size(); ++k) {
    const auto& op = map.ops[k];
    KrausOperator d;
    d.m = std::exp(-(*op.sigma_e + rep.dphi[k]) / 2.0) * op.m;
    d.label = "D" + op.label;
    d.in_index = op.in_index;
    d.out_index = op.out_index;
    d.sigma_e = -*op.sigma_e - 2.0 * rep.dphi[k];
    d.dphi = rep.dphi[k];
    out.ops.push_back(std::move(d));
  }
  check_cptp(out, tol::cptp, "dual_map");
  return out;
}

Concatenation concatenate(const std::vector<KrausMap>& maps) {
  if (maps.empty()) throw std::invalid_argument("qep: concatenate: no maps");
  Concatenation c;
  for (const auto& m : maps) {
    if (m.dim != maps.front().dim)
      throw std::invalid_argument("qep: concatenate: dimension mismatch");
    c.steps.push_back(m);
    c.pis.push_back(invariant_state(m));
    c.potentials.push_back(nonequilibrium_potential(c.pis.back()));
  }
  return c;
}

std::pair<double, double> potential_change_split(const Concatenation& conc,
                                                 const std::vector<Matrix>& states) {
  const size_t n = conc.steps.size();
  if (states.size() != n + 1)
    throw std::invalid_argument(
        "qep: potential_change_split: need one state per step boundary");
  const Matrix phi_first = conc.potentials.front().matrix();
  const Matrix phi_last = conc.potentials.back().matrix();
  const double boundary = (states.back() * phi_last).trace().real() -
                          (states.front() * phi_first).trace().real();
  double path = 0.0;
  for (size_t l = 1; l < n; ++l) {
    const Matrix dphi = conc.potentials[l].matrix() - conc.potentials[l - 1].matrix();
    path -= (states[l] * dphi).trace().real();
  }
  return {boundary, path};
}

}  // namespace qep
