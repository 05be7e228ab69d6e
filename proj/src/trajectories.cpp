// SPDX-License-Identifier: MIT

#include "qep/trajectories.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace qep {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kIndexCap = 256;       // joint dimension cap for enumeration
constexpr int kTupleCap = 65536;     // outcome tuples per concatenation

double safe_log(double x) { return x > 0.0 ? std::log(x) : -kInf; }

RVector basis_weights(const Matrix& rho, const ProjectiveBasis& b) {
  RVector w(b.size());
  for (int i = 0; i < b.size(); ++i)
    w(i) = std::max(
        0.0, (b.states[i].adjoint() * rho * b.states[i]).value().real());
  return w;
}

void check_dephasing_invariant(const Matrix& rho, const ProjectiveBasis& b,
                               const std::string& who) {
  Matrix dephased = Matrix::Zero(rho.rows(), rho.cols());
  for (const auto& s : b.states) {
    const Matrix proj = s * s.adjoint();
    dephased += proj * rho * proj;
  }
  if (max_abs_diff(dephased, rho) > tol::consistency)
    throw std::invalid_argument(
        "qep: " + who + ": supplied basis does not diagonalize the state");
}

ProjectiveBasis eigenbasis_or_throw(const Matrix& rho, const std::string& who) {
  const EigResult e = eig_hermitian(rho);
  if (e.degenerate)
    throw std::invalid_argument(
        "qep: " + who +
        ": degenerate spectrum requires an explicit measurement basis");
  return basis_from_eig(e);
}

TimeReversal joint_reversal(const TimeReversal& ts, const TimeReversal& te,
                            int ds, int de) {
  if (ts.basis.size() == 0 && te.basis.size() == 0) return {};
  const Matrix bs =
      ts.basis.size() != 0 ? ts.basis : Matrix(Matrix::Identity(ds, ds));
  const Matrix be =
      te.basis.size() != 0 ? te.basis : Matrix(Matrix::Identity(de, de));
  return TimeReversal{tensor(bs, be)};
}

// Columns tensor(s_n, e_nu) indexed n * dim_e + nu.
Matrix joint_columns(const ProjectiveBasis& s, const ProjectiveBasis& e) {
  const int ds = s.size(), de = e.size();
  Matrix f(ds * de, ds * de);
  for (int n = 0; n < ds; ++n)
    for (int nu = 0; nu < de; ++nu)
      f.col(n * de + nu) = tensor(s.states[n], e.states[nu]);
  return f;
}

Matrix reversed_columns(const TimeReversal& theta, const Matrix& cols) {
  Matrix out(cols.rows(), cols.cols());
  for (Eigen::Index j = 0; j < cols.cols(); ++j)
    out.col(j) = theta.apply(Vector(cols.col(j)));
  return out;
}

// <bra_i| op |ket_j> tables for a basis pair.
Matrix amplitude_table(const ProjectiveBasis& bra, const Matrix& op,
                       const ProjectiveBasis& ket) {
  Matrix a(bra.size(), ket.size());
  for (int i = 0; i < bra.size(); ++i)
    for (int j = 0; j < ket.size(); ++j)
      a(i, j) = (bra.states[i].adjoint() * op * ket.states[j]).value();
  return a;
}

double shannon_of_table(const RMatrix& table) {
  return shannon_entropy(
      Eigen::Map<const RVector>(table.data(), table.size()));
}

}  // namespace

ResolvedBipartite resolve(const BipartiteProcess& p) {
  check_density(p.rho_s, "resolve(rho_S)");
  check_density(p.rho_e, "resolve(rho_E)");
  ResolvedBipartite rp;
  rp.dim_s = p.rho_s.dim();
  rp.dim_e = p.rho_e.dim();
  rp.theta_s = p.theta_s;
  rp.theta_e = p.theta_e;
  rp.backward_init = p.backward_init;
  const int d = rp.dim_s * rp.dim_e;
  const TimeReversal theta =
      joint_reversal(p.theta_s, p.theta_e, rp.dim_s, rp.dim_e);

  if (p.protocol) {
    if (!p.protocol->hamiltonian)
      throw std::invalid_argument("qep: resolve: protocol without hamiltonian");
    if (p.protocol->hamiltonian(0.0).rows() != d)
      throw std::invalid_argument(
          "qep: resolve: protocol hamiltonian dimension mismatch");
    rp.u = time_ordered_unitary(*p.protocol);
    rp.u_rev = time_ordered_unitary(reversed_protocol(*p.protocol, theta));
    if (max_abs_diff(rp.u_rev, theta.apply(Matrix(rp.u.adjoint()))) >
        tol::unitarity)
      throw std::runtime_error(
          "qep: resolve: micro-reversibility residual exceeds tolerance");
  } else {
    if (p.u.rows() != d || p.u.cols() != d)
      throw std::invalid_argument("qep: resolve: unitary dimension mismatch");
    if (max_abs_diff(p.u.adjoint() * p.u, Matrix::Identity(d, d)) >
        tol::unitarity)
      throw std::invalid_argument("qep: resolve: evolution is not unitary");
    rp.u = p.u;
    rp.u_rev = theta.apply(Matrix(rp.u.adjoint()));
  }

  if (!p.s_init.states.empty()) {
    check_basis(p.s_init, rp.dim_s, "resolve(s_init)");
    check_dephasing_invariant(p.rho_s.m, p.s_init, "resolve(s_init)");
    rp.s_init = p.s_init;
  } else {
    rp.s_init = eigenbasis_or_throw(p.rho_s.m, "resolve(rho_S)");
  }
  if (!p.e_init.states.empty()) {
    check_basis(p.e_init, rp.dim_e, "resolve(e_init)");
    check_dephasing_invariant(p.rho_e.m, p.e_init, "resolve(e_init)");
    rp.e_init = p.e_init;
  } else {
    rp.e_init = eigenbasis_or_throw(p.rho_e.m, "resolve(rho_E)");
  }
  check_basis(p.s_final, rp.dim_s, "resolve(s_final)");
  check_basis(p.e_final, rp.dim_e, "resolve(e_final)");
  rp.s_final = p.s_final;
  rp.e_final = p.e_final;

  rp.p = basis_weights(p.rho_s.m, rp.s_init);
  rp.q = basis_weights(p.rho_e.m, rp.e_init);
  rp.map = kraus_from_unitary(rp.u, rp.q, rp.e_init, rp.e_final, rp.dim_s);

  rp.rho_se_final = rp.u * tensor(p.rho_s.m, p.rho_e.m) * rp.u.adjoint();
  rp.varrho_star = RMatrix(rp.dim_s, rp.dim_e);
  for (int m = 0; m < rp.dim_s; ++m)
    for (int mu = 0; mu < rp.dim_e; ++mu) {
      const Vector v = tensor(rp.s_final.states[m], rp.e_final.states[mu]);
      rp.varrho_star(m, mu) =
          std::max(0.0, (v.adjoint() * rp.rho_se_final * v).value().real());
    }
  rp.p_star = rp.varrho_star.rowwise().sum();
  rp.q_star = rp.varrho_star.colwise().sum().transpose();

  switch (p.backward_init) {
    case BackwardInit::inverted_correlated:
      rp.varrho_tilde = rp.varrho_star;
      break;
    case BackwardInit::product:
      rp.varrho_tilde = rp.p_star * rp.q_star.transpose();
      break;
    case BackwardInit::reset:
      rp.varrho_tilde =
          rp.p_star * basis_weights(p.rho_e.m, rp.e_final).transpose();
      break;
    case BackwardInit::custom:
      if (p.custom_rho_s.rows() != rp.dim_s ||
          p.custom_rho_e.rows() != rp.dim_e)
        throw std::invalid_argument(
            "qep: resolve: custom backward state missing or mis-sized");
      check_density(p.custom_rho_s, "resolve(custom_rho_s)");
      check_density(p.custom_rho_e, "resolve(custom_rho_e)");
      rp.varrho_tilde =
          basis_weights(p.custom_rho_s, rp.s_final) *
          basis_weights(p.custom_rho_e, rp.e_final).transpose();
      break;
  }
  if (std::abs(rp.varrho_tilde.sum() - 1.0) > tol::probability)
    throw std::runtime_error("qep: resolve: backward weights not normalized");
  rp.p_tilde = rp.varrho_tilde.rowwise().sum();
  rp.q_tilde = rp.varrho_tilde.colwise().sum().transpose();
  rp.i_tilde_zero =
      (rp.varrho_tilde - rp.p_tilde * rp.q_tilde.transpose())
          .cwiseAbs()
          .maxCoeff() < 1e-14;

  for (auto& op : rp.map.ops) {
    const double qn = rp.q(op.in_index);
    const double qm = rp.q_tilde(op.out_index);
    if (qn <= 0.0)
      op.sigma_e = 0.0;  // zero operator, never visited
    else if (qm > 0.0)
      op.sigma_e = std::log(qn) - std::log(qm);
    // else: left unset; companion maps are unavailable
  }

  // Adiabatic split context: unique positive-definite invariant state,
  // ladder condition, uncorrelated backward weights.
  try {
    const Matrix pi = invariant_state(rp.map);
    rp.pi = pi;
    const auto rep = check_ladder_condition(rp.map, nonequilibrium_potential(pi));
    if (!rep.satisfied) {
      rp.split_reason = "ladder condition violated: " + rep.witness;
    } else {
      stamp_potential_gaps(rp.map, rep);
      if (rp.i_tilde_zero) {
        rp.dual = dual_map(rp.map, pi, rp.theta_s);
        rp.dual_reverse = dual_reverse_map(rp.map, pi, rp.theta_s);
      } else {
        rp.split_reason = "correlated backward initialization";
      }
    }
  } catch (const std::exception& ex) {
    rp.dual.reset();
    rp.dual_reverse.reset();
    if (rp.split_reason.empty()) rp.split_reason = ex.what();
  }
  return rp;
}

namespace {

// Shared enumeration over (n, nu, mu, m); `keep_backward` selects which
// support (forward or backward) defines the record list.
std::vector<TrajectoryRecord> enumerate_bipartite(const ResolvedBipartite& rp,
                                                  bool keep_backward) {
  const int ds = rp.dim_s, de = rp.dim_e;
  if (ds * de > kIndexCap)
    throw std::invalid_argument(
        "qep: forward_distribution: joint dimension exceeds the enumeration "
        "cap; use sampling");
  const TimeReversal theta = joint_reversal(rp.theta_s, rp.theta_e, ds, de);
  const Matrix f_init = joint_columns(rp.s_init, rp.e_init);
  const Matrix f_fin = joint_columns(rp.s_final, rp.e_final);
  const Matrix amp_f = f_fin.adjoint() * rp.u * f_init;  // (m mu, n nu)
  const Matrix amp_b = reversed_columns(theta, f_init).adjoint() * rp.u_rev *
                       reversed_columns(theta, f_fin);  // (n nu, m mu)

  std::vector<Matrix> amp_d, amp_dr;
  if (rp.dual && rp.dual_reverse) {
    ProjectiveBasis s_init_rev, s_fin_rev;
    for (const auto& v : rp.s_init.states)
      s_init_rev.states.push_back(rp.theta_s.apply(v));
    for (const auto& v : rp.s_final.states)
      s_fin_rev.states.push_back(rp.theta_s.apply(v));
    for (int k = 0; k < static_cast<int>(rp.map.ops.size()); ++k) {
      amp_d.push_back(
          amplitude_table(rp.s_final, rp.dual->ops[k].m, rp.s_init));
      amp_dr.push_back(
          amplitude_table(s_init_rev, rp.dual_reverse->ops[k].m, s_fin_rev));
    }
  }

  std::vector<TrajectoryRecord> records;
  double total = 0.0;
  for (int n = 0; n < ds; ++n)
    for (int k = 0; k < static_cast<int>(rp.map.ops.size()); ++k) {
      const int nu = rp.map.ops[k].in_index;
      const int mu = rp.map.ops[k].out_index;
      for (int m = 0; m < ds; ++m) {
        const double w_f = std::norm(amp_f(m * de + mu, n * de + nu));
        const double w_b = std::norm(amp_b(n * de + nu, m * de + mu));
        TrajectoryRecord rec;
        rec.n = n;
        rec.m = m;
        rec.ops = {k};
        rec.p = rp.p(n) * rp.q(nu) * w_f;
        rec.p_rev = rp.varrho_tilde(m, mu) * w_b;
        const double kept = keep_backward ? rec.p_rev : rec.p;
        if (kept <= tol::zero_prob) continue;
        if (!amp_d.empty()) {
          rec.p_dual = rp.p(n) * std::norm(amp_d[k](m, n));
          rec.p_dual_rev = rp.p_tilde(m) * std::norm(amp_dr[k](n, m));
        }
        total += kept;
        records.push_back(std::move(rec));
      }
    }
  if (std::abs(total - 1.0) > tol::probability)
    throw std::runtime_error(
        "qep: trajectory enumeration does not sum to one (residual " +
        std::to_string(std::abs(total - 1.0)) + ")");
  return records;
}

}  // namespace

std::vector<TrajectoryRecord> forward_distribution(const ResolvedBipartite& rp) {
  return enumerate_bipartite(rp, false);
}

std::vector<TrajectoryRecord> forward_distribution(const BipartiteProcess& p) {
  return forward_distribution(resolve(p));
}

std::vector<TrajectoryRecord> backward_distribution(const ResolvedBipartite& rp) {
  return enumerate_bipartite(rp, true);
}

std::vector<TrajectoryRecord> backward_distribution(const BipartiteProcess& p) {
  return backward_distribution(resolve(p));
}

EntropyLedger entropy_ledger(const TrajectoryRecord& rec,
                             const ResolvedBipartite& rp) {
  const auto& op = rp.map.ops.at(rec.ops.at(0));
  const int nu = op.in_index, mu = op.out_index;
  const double pn = rp.p(rec.n);
  const double ptm = rp.p_tilde(rec.m);
  const double qn = rp.q(nu);
  const double qtm = rp.q_tilde(mu);
  const double vt = rp.varrho_tilde(rec.m, mu);

  EntropyLedger led;
  led.sigma_s = safe_log(pn) - safe_log(ptm);
  led.sigma_e = safe_log(qn) - safe_log(qtm);
  led.i_tilde = safe_log(vt) - safe_log(ptm) - safe_log(qtm);
  if (vt <= 0.0 || ptm <= 0.0 || qtm <= 0.0) {
    led.infinite = true;
    led.delta_s = kInf;
  } else {
    led.delta_s = led.sigma_s + led.sigma_e - led.i_tilde;
  }
  led.sigma_e_parts = {led.sigma_e};
  if (op.dphi && rp.i_tilde_zero && !led.infinite) {
    led.split_valid = true;
    led.delta_s_a = led.sigma_e + *op.dphi;
    led.delta_s_na = led.sigma_s - *op.dphi;
  }
  return led;
}

std::optional<std::pair<double, double>> split_entropy(
    const TrajectoryRecord& rec, const ResolvedBipartite& rp,
    const Matrix& pi) {
  if (!rp.i_tilde_zero) return std::nullopt;
  const auto rep =
      check_ladder_condition(rp.map, nonequilibrium_potential(pi));
  if (!rep.satisfied) return std::nullopt;
  const int k = rec.ops.at(0);
  const auto& op = rp.map.ops.at(k);
  const double qn = rp.q(op.in_index);
  const double qtm = rp.q_tilde(op.out_index);
  const double ptm = rp.p_tilde(rec.m);
  if (qn <= 0.0 || qtm <= 0.0 || ptm <= 0.0) return std::nullopt;
  const double sigma_s = std::log(rp.p(rec.n)) - std::log(ptm);
  const double sigma_e = std::log(qn) - std::log(qtm);
  return std::make_pair(sigma_e + rep.dphi[k], sigma_s - rep.dphi[k]);
}

AverageReport average_entropies(const ResolvedBipartite& rp) {
  AverageReport r;
  const auto records = forward_distribution(rp);
  for (const auto& rec : records) {
    const EntropyLedger led = entropy_ledger(rec, rp);
    if (led.infinite) {
      r.ft_breaking = true;
      r.delta_s = kInf;
      continue;
    }
    r.delta_s += rec.p * led.delta_s;
    r.sigma_s += rec.p * led.sigma_s;
    r.sigma_e += rec.p * led.sigma_e;
    r.i_tilde += rec.p * led.i_tilde;
  }

  const double s_p = shannon_entropy(rp.p);
  const double s_q = shannon_entropy(rp.q);
  const double s_p_star = shannon_entropy(rp.p_star);
  const double s_q_star = shannon_entropy(rp.q_star);
  const double s_joint_star = shannon_of_table(rp.varrho_star);
  const Matrix rho_s_prime =
      partial_trace(rp.rho_se_final, {rp.dim_s, rp.dim_e}, {0});
  const Matrix rho_e_prime =
      partial_trace(rp.rho_se_final, {rp.dim_s, rp.dim_e}, {1});

  r.inclusive = s_joint_star - (s_p + s_q);
  r.non_inclusive = (s_p_star - s_p) + (s_q_star - s_q);
  r.mutual_info_final = von_neumann_entropy(rho_s_prime) +
                        von_neumann_entropy(rho_e_prime) -
                        von_neumann_entropy(rp.rho_se_final);
  r.measurement_part = (s_p_star - von_neumann_entropy(rho_s_prime)) +
                       (s_q_star - von_neumann_entropy(rho_e_prime));
  const double mutual_info_star = s_p_star + s_q_star - s_joint_star;
  r.correlation_part = r.mutual_info_final - mutual_info_star;
  if (rp.backward_init == BackwardInit::reset) {
    Matrix rho_e_star = Matrix::Zero(rp.dim_e, rp.dim_e);
    for (int mu = 0; mu < rp.dim_e; ++mu)
      rho_e_star += rp.q_star(mu) * rp.e_final.projector(mu);
    Matrix rho_e = Matrix::Zero(rp.dim_e, rp.dim_e);
    for (int nu = 0; nu < rp.dim_e; ++nu)
      rho_e += rp.q(nu) * rp.e_init.projector(nu);
    r.reset_extra = relative_entropy(rho_e_star, rho_e);
  }
  return r;
}

AverageReport average_entropies(const BipartiteProcess& p) {
  return average_entropies(resolve(p));
}

namespace {

DetailedFtReport detailed_report(
    const std::vector<TrajectoryRecord>& records,
    const std::function<EntropyLedger(const TrajectoryRecord&)>& ledger_of) {
  DetailedFtReport rep;
  bool any_split = false;
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    const EntropyLedger led = ledger_of(rec);
    if (led.infinite || rec.p_rev <= 0.0) continue;
    const double resid = std::abs(std::log(rec.p / rec.p_rev) - led.delta_s);
    if (resid > rep.max_residual_total) {
      rep.max_residual_total = resid;
      rep.worst_record = static_cast<int>(i);
    }
    double worst_here = resid;
    if (led.split_valid && rec.p_dual && rec.p_dual_rev && *rec.p_dual > 0.0 &&
        *rec.p_dual_rev > 0.0) {
      any_split = true;
      const double res_a =
          std::abs(std::log(rec.p / *rec.p_dual) - led.delta_s_a);
      const double res_na =
          std::abs(std::log(rec.p / *rec.p_dual_rev) - led.delta_s_na);
      rep.max_residual_adiabatic = std::max(rep.max_residual_adiabatic, res_a);
      rep.max_residual_nonadiabatic =
          std::max(rep.max_residual_nonadiabatic, res_na);
      worst_here = std::max({worst_here, res_a, res_na});
    }
    if (worst_here > tol::ft_detailed)
      rep.overruns.push_back(static_cast<int>(i));
  }
  rep.split_checked = any_split;
  return rep;
}

}  // namespace

DetailedFtReport verify_detailed_ft(const ResolvedBipartite& rp) {
  const auto records = forward_distribution(rp);
  return detailed_report(records, [&](const TrajectoryRecord& rec) {
    return entropy_ledger(rec, rp);
  });
}

DetailedFtReport verify_detailed_ft(const BipartiteProcess& p) {
  return verify_detailed_ft(resolve(p));
}

DetailedFtReport verify_detailed_ft(const ResolvedChain& rc) {
  const auto records = concatenation_distribution(rc);
  return detailed_report(records, [&](const TrajectoryRecord& rec) {
    return entropy_ledger(rec, rc);
  });
}

FtEstimate verify_integral_ft(const std::vector<TrajectoryRecord>& records,
                              FtKind which, bool sampled) {
  if (records.empty())
    throw std::invalid_argument("qep: verify_integral_ft: no trajectories");
  FtEstimate est;
  est.sampled = sampled;
  est.available = true;

  const auto weight_of = [&](const TrajectoryRecord& r) -> std::optional<double> {
    switch (which) {
      case FtKind::total:
        return r.p_rev;
      case FtKind::adiabatic:
        return r.p_dual;
      case FtKind::nonadiabatic:
        return r.p_dual_rev;
    }
    return std::nullopt;
  };

  for (const auto& rec : records)
    if (!weight_of(rec)) {
      est.available = false;
      return est;
    }

  if (!sampled) {
    double value = 0.0, mean = 0.0;
    for (const auto& rec : records) {
      const double px = *weight_of(rec);
      value += px;
      if (px <= 0.0 && rec.p > 0.0) {
        est.ft_breaking = true;
        mean = kInf;
      } else if (rec.p > 0.0) {
        mean += rec.p * std::log(rec.p / px);
      }
    }
    est.value = value;
    est.mean_entropy = mean;
    return est;
  }

  const double n = static_cast<double>(records.size());
  double sum = 0.0, sum_sq = 0.0, mean_entropy = 0.0;
  for (const auto& rec : records) {
    const double px = *weight_of(rec);
    if (px <= 0.0) {
      est.ft_breaking = true;
      mean_entropy = kInf;
      continue;  // e^{-inf} = 0 contribution
    }
    const double w = px / rec.p;
    sum += w;
    sum_sq += w * w;
    if (!est.ft_breaking) mean_entropy += std::log(rec.p / px) / n;
  }
  est.value = sum / n;
  est.mean_entropy = mean_entropy;
  if (records.size() > 1) {
    const double var = std::max(0.0, (sum_sq - sum * sum / n) / (n - 1.0));
    est.std_error = std::sqrt(var / n);
  }
  return est;
}

namespace {

std::vector<TrajectoryRecord> categorical_draws(
    const std::vector<TrajectoryRecord>& dist, int n, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("qep: sample_trajectories: n < 0");
  std::vector<double> cdf(dist.size());
  double acc = 0.0;
  for (size_t i = 0; i < dist.size(); ++i) {
    acc += dist[i].p;
    cdf[i] = acc;
  }
  std::vector<TrajectoryRecord> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    rng::Stream stream(seed, static_cast<std::uint64_t>(i));
    const double u = stream.uniform() * acc;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const size_t idx =
        std::min(dist.size() - 1,
                 static_cast<size_t>(std::distance(cdf.begin(), it)));
    out.push_back(dist[idx]);
  }
  return out;
}

}  // namespace

std::vector<TrajectoryRecord> sample_trajectories(const BipartiteProcess& p,
                                                  int n, std::uint64_t seed) {
  return categorical_draws(forward_distribution(p), n, seed);
}

std::vector<TrajectoryRecord> sample_trajectories(const ChainProcess& c, int n,
                                                  std::uint64_t seed) {
  return categorical_draws(concatenation_distribution(resolve(c)), n, seed);
}

ResolvedChain resolve(const ChainProcess& c) {
  check_density(c.rho_s, "resolve(chain rho_S)");
  if (c.chain.steps.empty())
    throw std::invalid_argument("qep: resolve: empty concatenation");
  const int ds = c.rho_s.dim();
  for (const auto& step : c.chain.steps)
    if (step.dim != ds)
      throw std::invalid_argument("qep: resolve: concatenation dimension mismatch");

  ResolvedChain rc;
  rc.chain = c.chain;
  rc.theta_s = c.theta_s;
  if (!c.s_init.states.empty()) {
    check_basis(c.s_init, ds, "resolve(s_init)");
    check_dephasing_invariant(c.rho_s.m, c.s_init, "resolve(s_init)");
    rc.s_init = c.s_init;
  } else {
    rc.s_init = eigenbasis_or_throw(c.rho_s.m, "resolve(chain rho_S)");
  }
  check_basis(c.s_final, ds, "resolve(s_final)");
  rc.s_final = c.s_final;
  rc.p = basis_weights(c.rho_s.m, rc.s_init);

  rc.rho_final = c.rho_s.m;
  for (const auto& step : rc.chain.steps)
    rc.rho_final = qep::apply(step, rc.rho_final);
  if (c.p_tilde) {
    if (c.p_tilde->size() != ds || c.p_tilde->minCoeff() < 0.0 ||
        std::abs(c.p_tilde->sum() - 1.0) > tol::probability)
      throw std::invalid_argument("qep: resolve: invalid p_tilde override");
    rc.p_tilde = *c.p_tilde;
  } else {
    rc.p_tilde = basis_weights(rc.rho_final, rc.s_final);
  }

  for (const auto& step : rc.chain.steps)
    for (const auto& op : step.ops)
      if (!op.sigma_e)
        throw std::invalid_argument(
            "qep: resolve: concatenation step lacks sigma_e on operator '" +
            op.label + "'");

  rc.split_valid = true;
  for (size_t l = 0; l < rc.chain.steps.size(); ++l) {
    const auto rep =
        check_ladder_condition(rc.chain.steps[l], rc.chain.potentials[l]);
    if (!rep.satisfied) {
      rc.split_valid = false;
      rc.split_reason = "step " + std::to_string(l) +
                        ": ladder condition violated: " + rep.witness;
      break;
    }
    stamp_potential_gaps(rc.chain.steps[l], rep);
  }

  for (size_t l = 0; l < rc.chain.steps.size(); ++l)
    rc.backwards.push_back(backward_map(rc.chain.steps[l], rc.theta_s));
  if (rc.split_valid) {
    try {
      for (size_t l = 0; l < rc.chain.steps.size(); ++l) {
        rc.duals.push_back(
            dual_map(rc.chain.steps[l], rc.chain.pis[l], rc.theta_s));
        rc.dual_reverses.push_back(dual_reverse_map(
            rc.chain.steps[l], rc.chain.pis[l], rc.theta_s));
      }
    } catch (const std::exception& ex) {
      rc.duals.clear();
      rc.dual_reverses.clear();
      rc.split_valid = false;
      rc.split_reason = ex.what();
    }
  }
  return rc;
}

std::vector<TrajectoryRecord> concatenation_distribution(const ResolvedChain& rc) {
  const int ds = rc.s_init.size();
  const size_t n_steps = rc.chain.steps.size();
  std::size_t tuples = static_cast<std::size_t>(ds) * ds;
  for (const auto& step : rc.chain.steps) {
    tuples *= step.ops.size();
    if (tuples > kTupleCap)
      throw std::invalid_argument(
          "qep: concatenation_distribution: outcome space exceeds the "
          "enumeration cap; use sampling");
  }

  ProjectiveBasis s_init_rev, s_fin_rev;
  for (const auto& v : rc.s_init.states)
    s_init_rev.states.push_back(rc.theta_s.apply(v));
  for (const auto& v : rc.s_final.states)
    s_fin_rev.states.push_back(rc.theta_s.apply(v));

  std::vector<TrajectoryRecord> records;
  std::vector<int> path(n_steps, 0);
  double total = 0.0;
  const int dim = rc.chain.steps.front().dim;

  // Iterate over all operator paths; per path, build the composed forward,
  // backward (reverse order) and dual operators, then sweep (n, m).
  while (true) {
    Matrix fwd = Matrix::Identity(dim, dim);
    Matrix bwd = Matrix::Identity(dim, dim);
    Matrix dual = Matrix::Identity(dim, dim);
    Matrix dual_rev = Matrix::Identity(dim, dim);
    for (size_t l = 0; l < n_steps; ++l) {
      fwd = rc.chain.steps[l].ops[path[l]].m * fwd;
      bwd = bwd * rc.backwards[l].ops[path[l]].m;
      if (rc.split_valid) {
        dual = rc.duals[l].ops[path[l]].m * dual;
        dual_rev = dual_rev * rc.dual_reverses[l].ops[path[l]].m;
      }
    }
    const Matrix amp_f = amplitude_table(rc.s_final, fwd, rc.s_init);
    const Matrix amp_b = amplitude_table(s_init_rev, bwd, s_fin_rev);
    Matrix amp_d, amp_dr;
    if (rc.split_valid) {
      amp_d = amplitude_table(rc.s_final, dual, rc.s_init);
      amp_dr = amplitude_table(s_init_rev, dual_rev, s_fin_rev);
    }
    for (int n = 0; n < ds; ++n)
      for (int m = 0; m < ds; ++m) {
        TrajectoryRecord rec;
        rec.n = n;
        rec.m = m;
        rec.ops = path;
        rec.p = rc.p(n) * std::norm(amp_f(m, n));
        if (rec.p <= tol::zero_prob) continue;
        rec.p_rev = rc.p_tilde(m) * std::norm(amp_b(n, m));
        if (rc.split_valid) {
          rec.p_dual = rc.p(n) * std::norm(amp_d(m, n));
          rec.p_dual_rev = rc.p_tilde(m) * std::norm(amp_dr(n, m));
        }
        total += rec.p;
        records.push_back(std::move(rec));
      }
    // advance the mixed-radix path counter
    size_t l = 0;
    for (; l < n_steps; ++l) {
      if (++path[l] < static_cast<int>(rc.chain.steps[l].ops.size())) break;
      path[l] = 0;
    }
    if (l == n_steps) break;
  }
  if (std::abs(total - 1.0) > tol::probability)
    throw std::runtime_error(
        "qep: concatenation_distribution: probabilities sum to " +
        std::to_string(total));
  return records;
}

std::vector<TrajectoryRecord> concatenation_distribution(
    const Concatenation& c, const DensityOperator& rho_s,
    const ProjectiveBasis& final_basis) {
  ChainProcess chain;
  chain.chain = c;
  chain.rho_s = rho_s;
  chain.s_final = final_basis;
  return concatenation_distribution(resolve(chain));
}

EntropyLedger entropy_ledger(const TrajectoryRecord& rec,
                             const ResolvedChain& rc) {
  EntropyLedger led;
  const double pn = rc.p(rec.n);
  const double ptm = rc.p_tilde(rec.m);
  led.sigma_s = safe_log(pn) - safe_log(ptm);
  double dphi_sum = 0.0;
  bool dphi_ok = rc.split_valid;
  for (size_t l = 0; l < rec.ops.size(); ++l) {
    const auto& op = rc.chain.steps[l].ops.at(rec.ops[l]);
    led.sigma_e_parts.push_back(op.sigma_e.value());
    led.sigma_e += op.sigma_e.value();
    if (op.dphi)
      dphi_sum += *op.dphi;
    else
      dphi_ok = false;
  }
  led.i_tilde = 0.0;
  if (ptm <= 0.0) {
    led.infinite = true;
    led.delta_s = kInf;
  } else {
    led.delta_s = led.sigma_s + led.sigma_e;
  }
  if (dphi_ok && !led.infinite) {
    led.split_valid = true;
    led.delta_s_a = led.sigma_e + dphi_sum;
    led.delta_s_na = led.sigma_s - dphi_sum;
  }
  return led;
}

ResolvedMultiEnv resolve(const MultiEnvProcess& p) {
  if (p.ancillas.empty())
    throw std::invalid_argument("qep: resolve: no ancillas");
  if (p.backward_init != BackwardInit::product &&
      p.backward_init != BackwardInit::reset)
    throw std::invalid_argument(
        "qep: resolve: multipartite environments support product or reset "
        "backward initialization");
  if (p.e_finals.size() != p.ancillas.size())
    throw std::invalid_argument("qep: resolve: one final basis per ancilla");

  ResolvedMultiEnv rme;
  Matrix rho_e = Matrix::Identity(1, 1);
  for (size_t r = 0; r < p.ancillas.size(); ++r) {
    check_density(p.ancillas[r], "resolve(ancilla)");
    rme.e_dims.push_back(p.ancillas[r].dim());
    rho_e = tensor(rho_e, p.ancillas[r].m);
  }
  const int de = static_cast<int>(rho_e.rows());

  // Per-ancilla initial bases; the flat basis is their tensor product with
  // the last ancilla's index fastest.
  std::vector<ProjectiveBasis> inits(p.ancillas.size());
  for (size_t r = 0; r < p.ancillas.size(); ++r) {
    if (r < p.e_inits.size() && !p.e_inits[r].states.empty()) {
      check_basis(p.e_inits[r], rme.e_dims[r], "resolve(e_init)");
      check_dephasing_invariant(p.ancillas[r].m, p.e_inits[r],
                                "resolve(e_init)");
      inits[r] = p.e_inits[r];
    } else {
      inits[r] = eigenbasis_or_throw(p.ancillas[r].m, "resolve(ancilla)");
    }
    check_basis(p.e_finals[r], rme.e_dims[r], "resolve(e_final)");
    rme.q_parts.push_back(basis_weights(p.ancillas[r].m, inits[r]));
  }

  ProjectiveBasis e_init_flat, e_final_flat;
  std::vector<int> idx(p.ancillas.size(), 0);
  for (int flat = 0; flat < de; ++flat) {
    Vector vi = Vector::Ones(1), vf = Vector::Ones(1);
    for (size_t r = 0; r < p.ancillas.size(); ++r) {
      vi = tensor(vi, inits[r].states[idx[r]]);
      vf = tensor(vf, p.e_finals[r].states[idx[r]]);
    }
    e_init_flat.states.push_back(vi);
    e_final_flat.states.push_back(vf);
    for (int r = static_cast<int>(p.ancillas.size()) - 1; r >= 0; --r) {
      if (++idx[r] < rme.e_dims[r]) break;
      idx[r] = 0;
    }
  }

  BipartiteProcess flat;
  flat.rho_s = p.rho_s;
  flat.rho_e = DensityOperator{rho_e, rme.e_dims};
  flat.u = p.u;
  flat.s_init = p.s_init;
  flat.e_init = e_init_flat;
  flat.s_final = p.s_final;
  flat.e_final = e_final_flat;
  flat.theta_s = p.theta_s;
  flat.backward_init = BackwardInit::product;
  rme.flat = resolve(flat);

  // Replace the joint backward environment weights with the per-ancilla
  // product required by an uncorrelated multipartite backward state.
  for (size_t r = 0; r < p.ancillas.size(); ++r) {
    RVector qt;
    if (p.backward_init == BackwardInit::reset) {
      qt = basis_weights(p.ancillas[r].m, p.e_finals[r]);
    } else {
      // marginal of the measured final distribution on ancilla r
      qt = RVector::Zero(rme.e_dims[r]);
      int stride = 1;
      for (size_t s = r + 1; s < p.ancillas.size(); ++s)
        stride *= rme.e_dims[s];
      for (int mu = 0; mu < de; ++mu)
        qt((mu / stride) % rme.e_dims[r]) += rme.flat.q_star(mu);
    }
    rme.q_tilde_parts.push_back(qt);
  }
  RVector q_tilde_flat = RVector::Ones(1);
  for (const auto& qt : rme.q_tilde_parts) {
    RVector next(q_tilde_flat.size() * qt.size());
    for (Eigen::Index a = 0; a < q_tilde_flat.size(); ++a)
      for (Eigen::Index b = 0; b < qt.size(); ++b)
        next(a * qt.size() + b) = q_tilde_flat(a) * qt(b);
    q_tilde_flat = next;
  }
  rme.flat.q_tilde = q_tilde_flat;
  rme.flat.varrho_tilde = rme.flat.p_tilde * q_tilde_flat.transpose();
  rme.flat.i_tilde_zero = true;
  rme.flat.dual.reset();
  rme.flat.dual_reverse.reset();
  rme.flat.split_reason = "multipartite backward weights reassign sigma_e";
  for (auto& op : rme.flat.map.ops) {
    const double qn = rme.flat.q(op.in_index);
    const double qm = rme.flat.q_tilde(op.out_index);
    if (qn <= 0.0)
      op.sigma_e = 0.0;
    else if (qm > 0.0)
      op.sigma_e = std::log(qn) - std::log(qm);
    else
      op.sigma_e.reset();
  }
  return rme;
}

EntropyLedger entropy_ledger(const TrajectoryRecord& rec,
                             const ResolvedMultiEnv& rme) {
  EntropyLedger led = entropy_ledger(rec, rme.flat);
  const auto& op = rme.flat.map.ops.at(rec.ops.at(0));
  led.sigma_e_parts.clear();
  int stride = rme.flat.dim_e;
  for (size_t r = 0; r < rme.e_dims.size(); ++r) {
    stride /= rme.e_dims[r];
    const int nu_r = (op.in_index / stride) % rme.e_dims[r];
    const int mu_r = (op.out_index / stride) % rme.e_dims[r];
    led.sigma_e_parts.push_back(safe_log(rme.q_parts[r](nu_r)) -
                                safe_log(rme.q_tilde_parts[r](mu_r)));
  }
  return led;
}

std::vector<double> perturbative_relative_entropy_check(
    const DensityOperator& rho_e, const Matrix& delta,
    const std::vector<double>& eps_list) {
  check_density(rho_e, "perturbative_relative_entropy_check");
  const int d = rho_e.dim();
  if (delta.rows() != d || delta.cols() != d)
    throw std::invalid_argument(
        "qep: perturbative_relative_entropy_check: perturbation dimension "
        "mismatch");
  const double scale = std::max(1.0, delta.cwiseAbs().maxCoeff());
  if (max_abs_diff(delta, delta.adjoint()) > tol::hermitian * scale)
    throw std::invalid_argument(
        "qep: perturbative_relative_entropy_check: perturbation not Hermitian");
  if (std::abs(delta.trace()) > tol::trace_one * scale)
    throw std::invalid_argument(
        "qep: perturbative_relative_entropy_check: perturbation not traceless");

  std::vector<double> ratios;
  for (const double eps : eps_list) {
    if (eps == 0.0)
      throw std::invalid_argument(
          "qep: perturbative_relative_entropy_check: eps must be nonzero");
    const Matrix shifted = rho_e.m + eps * delta;
    Eigen::SelfAdjointEigenSolver<Matrix> es(shifted, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -tol::positivity)
      throw std::invalid_argument(
          "qep: perturbative_relative_entropy_check: positivity violated at "
          "eps = " +
          std::to_string(eps));
    ratios.push_back(relative_entropy(shifted, rho_e.m) / (eps * eps));
  }
  return ratios;
}

}  // namespace qep
