// SPDX-License-Identifier: MIT

#include "qep/lindblad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace qep {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double safe_log(double x) { return x > 0.0 ? std::log(x) : -kInf; }

double sp_max_abs(const SpMatrix& m) {
  double mx = 0.0;
  for (int k = 0; k < m.outerSize(); ++k)
    for (SpMatrix::InnerIterator it(m, k); it; ++it)
      mx = std::max(mx, std::abs(it.value()));
  return mx;
}

// Tr[A rho] for sparse A.
Complex sp_trace_product(const SpMatrix& a, const Matrix& rho) {
  Complex tr = 0.0;
  for (int k = 0; k < a.outerSize(); ++k)
    for (SpMatrix::InnerIterator it(a, k); it; ++it)
      tr += it.value() * rho(it.col(), it.row());
  return tr;
}

// Tr[A B] without forming the product.
Complex trace_product(const Matrix& a, const Matrix& b) {
  return (a.transpose().cwiseProduct(b)).sum();
}

double default_step(const LindbladModel& m) {
  const double rate =
      std::max({sp_max_abs(m.ldl_sum), sp_max_abs(m.h) / m.hbar, 1e-12});
  return 1e-3 / rate;
}

void require_prepared(const LindbladModel& m, const std::string& who) {
  if (!m.prepared)
    throw std::invalid_argument("qep: " + who + ": model not prepared");
}

Matrix clamped_log(const Matrix& h, double* min_eig = nullptr) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("qep: entropy_rates: eigensolver failed");
  if (min_eig) *min_eig = es.eigenvalues().minCoeff();
  RVector lv = es.eigenvalues().cwiseMax(tol::log_clamp).array().log();
  return es.eigenvectors() * lv.cast<Complex>().asDiagonal() *
         es.eigenvectors().adjoint();
}

ProjectiveBasis eigenbasis_or_throw(const Matrix& rho, const std::string& who) {
  const EigResult e = eig_hermitian(rho);
  if (e.degenerate)
    throw std::invalid_argument(
        "qep: " + who +
        ": degenerate spectrum requires an explicit measurement basis");
  return basis_from_eig(e);
}

int draw_categorical(const RVector& w, double u) {
  const double total = w.sum();
  double acc = 0.0;
  for (int i = 0; i < w.size(); ++i) {
    acc += w(i);
    if (u * total < acc) return i;
  }
  return static_cast<int>(w.size()) - 1;
}

Matrix kron_dense(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

}  // namespace

LindbladModel& prepare(LindbladModel& m) {
  if (m.dim < 2) throw std::invalid_argument("qep: prepare: dim < 2");
  if (m.hbar <= 0.0) throw std::invalid_argument("qep: prepare: hbar <= 0");
  if (m.h.rows() != m.dim || m.h.cols() != m.dim)
    throw std::invalid_argument("qep: prepare: Hamiltonian dimension mismatch");
  const Matrix hd = m.h;
  const double hscale = std::max(1.0, hd.cwiseAbs().maxCoeff());
  if (max_abs_diff(hd, hd.adjoint()) > tol::hermitian * hscale)
    throw std::invalid_argument("qep: prepare: Hamiltonian not Hermitian");
  if (m.pi) check_density(*m.pi, "prepare(pi)");

  m.ldl.clear();
  SpMatrix sum(m.dim, m.dim);
  for (const auto& op : m.jumps) {
    if (op.l.rows() != m.dim || op.l.cols() != m.dim)
      throw std::invalid_argument(
          "qep: prepare: jump operator dimension mismatch ('" + op.label +
          "')");
    SpMatrix ldl = SpMatrix(op.l.adjoint()) * op.l;
    m.ldl.push_back(ldl);
    sum = sum + ldl;
  }
  m.ldl_sum = sum;
  m.h_eff = SpMatrix(m.h - Complex(0.0, 0.5 * m.hbar) * sum);
  m.prepared = true;
  return m;
}

namespace {

// Allocation-free core of liouvillian_apply; out and work are caller-owned
// d x d buffers so the integrator loop never touches the allocator.
void liouvillian_apply_into(const LindbladModel& m, const Matrix& rho,
                            Matrix& out, Matrix& work) {
  const Complex mi(0.0, -1.0 / m.hbar);
  work.noalias() = m.h * rho;
  out.noalias() = mi * work;
  out.noalias() -= mi * work.adjoint();
  for (size_t k = 0; k < m.jumps.size(); ++k) {
    work.noalias() = m.jumps[k].l * rho;
    out.noalias() += work * m.jumps[k].l.adjoint();
    work.noalias() = m.ldl[k] * rho;
    out.noalias() -= 0.5 * work;
    out.noalias() -= 0.5 * work.adjoint();
  }
}

}  // namespace

Matrix liouvillian_apply(const LindbladModel& m, const Matrix& rho, double) {
  require_prepared(m, "liouvillian_apply");
  if (rho.rows() != m.dim || rho.cols() != m.dim)
    throw std::invalid_argument("qep: liouvillian_apply: dimension mismatch");
  Matrix out(m.dim, m.dim);
  Matrix work(m.dim, m.dim);
  liouvillian_apply_into(m, rho, out, work);
  return out;
}

Matrix dissipator_apply(const LindbladModel& m, const Matrix& rho,
                        const std::vector<int>& which) {
  require_prepared(m, "dissipator_apply");
  std::vector<int> idx = which;
  if (idx.empty())
    for (size_t k = 0; k < m.jumps.size(); ++k)
      idx.push_back(static_cast<int>(k));
  Matrix out = Matrix::Zero(m.dim, m.dim);
  for (int k : idx) {
    if (k < 0 || k >= static_cast<int>(m.jumps.size()))
      throw std::invalid_argument("qep: dissipator_apply: bad operator index");
    const Matrix lr = m.jumps[k].l * rho;
    out += lr * m.jumps[k].l.adjoint();
    const Matrix ar = m.ldl[k] * rho;
    out -= 0.5 * (ar + Matrix(ar.adjoint()));
  }
  return out;
}

namespace {

// One RK4 sweep from t0 over n_steps of size h, with trace monitoring and
// positivity screens at callback emissions.
Matrix rk4_sweep(const LindbladModel& m, Matrix rho, double t0, double h,
                 long n_steps, int emit_every, int positivity_dim_cap,
                 const std::function<void(double, const Matrix&)>& cb) {
  const auto check_state = [&](const Matrix& r, double t) {
    double min_eig;
    if (m.dim <= positivity_dim_cap) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(r, Eigen::EigenvaluesOnly);
      min_eig = es.eigenvalues().minCoeff();
    } else {
      min_eig = r.diagonal().real().minCoeff();
    }
    if (min_eig < -1e-9)
      throw std::runtime_error(
          "qep: integrate: positivity breach (" + std::to_string(min_eig) +
          ") at t = " + std::to_string(t) + "; reduce the step size");
  };
  if (cb) {
    check_state(rho, t0);
    cb(t0, rho);
  }
  Matrix k1(m.dim, m.dim), k2(m.dim, m.dim), k3(m.dim, m.dim);
  Matrix k4(m.dim, m.dim), stage(m.dim, m.dim), work(m.dim, m.dim);
  for (long s = 0; s < n_steps; ++s) {
    const double t = t0 + s * h;
    liouvillian_apply_into(m, rho, k1, work);
    stage.noalias() = rho + (0.5 * h) * k1;
    liouvillian_apply_into(m, stage, k2, work);
    stage.noalias() = rho + (0.5 * h) * k2;
    liouvillian_apply_into(m, stage, k3, work);
    stage.noalias() = rho + h * k3;
    liouvillian_apply_into(m, stage, k4, work);
    rho += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    stage.noalias() = rho.adjoint();
    rho += stage;
    rho *= 0.5;
    if (std::abs(rho.trace().real() - 1.0) > 1e-8)
      throw std::runtime_error(
          "qep: integrate: trace drift at t = " + std::to_string(t + h) +
          "; reduce the step size");
    if (cb && ((s + 1) % emit_every == 0 || s + 1 == n_steps)) {
      check_state(rho, t + h);
      cb(t + h, rho);
    }
  }
  return rho;
}

Matrix propagate(const LindbladModel& m, const Matrix& rho, double t0,
                 double t1, double dt, int positivity_dim_cap) {
  if (t1 <= t0) return rho;
  const long n = std::max(1L, static_cast<long>(std::ceil(
                                  (t1 - t0) / dt - 1e-9)));
  return rk4_sweep(m, rho, t0, (t1 - t0) / n, n, 1, positivity_dim_cap,
                   nullptr);
}

}  // namespace

std::vector<Matrix> integrate(const LindbladModel& m,
                              const DensityOperator& rho0,
                              const std::vector<double>& t_grid,
                              const IntegrateOptions& opt) {
  require_prepared(m, "integrate");
  check_density(rho0, "integrate");
  if (rho0.dim() != m.dim)
    throw std::invalid_argument("qep: integrate: state dimension mismatch");
  if (t_grid.empty()) throw std::invalid_argument("qep: integrate: empty grid");
  if (t_grid.front() < 0.0)
    throw std::invalid_argument("qep: integrate: negative time");
  for (size_t i = 1; i < t_grid.size(); ++i)
    if (t_grid[i] <= t_grid[i - 1])
      throw std::invalid_argument("qep: integrate: grid not increasing");
  const double dt = opt.dt > 0.0 ? opt.dt : default_step(m);

  const auto run = [&](double step) {
    std::vector<Matrix> states;
    Matrix rho = rho0.m;
    double t = 0.0;
    for (const double tg : t_grid) {
      rho = propagate(m, rho, t, tg, step, opt.positivity_dim_cap);
      t = tg;
      states.push_back(rho);
    }
    return states;
  };

  std::vector<Matrix> states = run(dt);
  if (opt.richardson) {
    const std::vector<Matrix> halved = run(0.5 * dt);
    if (max_abs_diff(states.back(), halved.back()) > tol::ode_endpoint)
      throw std::runtime_error(
          "qep: integrate: endpoint not converged at this step size");
    states = halved;
  }
  for (const auto& s : states) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(s, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-9)
      throw std::runtime_error(
          "qep: integrate: positivity breach in emitted state; reduce the "
          "step size");
  }
  return states;
}

Matrix integrate_callback(const LindbladModel& m, const DensityOperator& rho0,
                          double t_f, double dt,
                          const std::function<void(double, const Matrix&)>& cb,
                          int emit_every) {
  require_prepared(m, "integrate_callback");
  check_density(rho0, "integrate_callback");
  if (rho0.dim() != m.dim)
    throw std::invalid_argument(
        "qep: integrate_callback: state dimension mismatch");
  if (t_f <= 0.0 || dt <= 0.0)
    throw std::invalid_argument("qep: integrate_callback: need t_f, dt > 0");
  if (emit_every < 1)
    throw std::invalid_argument("qep: integrate_callback: emit_every < 1");
  const long n = std::max(1L, static_cast<long>(std::ceil(t_f / dt - 1e-9)));
  return rk4_sweep(m, rho0.m, 0.0, t_f / n, n, emit_every, 64, cb);
}

LindbladModel& assign_environment_entropies(LindbladModel& m) {
  if (!m.prepared) prepare(m);
  const int k_ops = static_cast<int>(m.jumps.size());
  std::vector<Matrix> dense;
  dense.reserve(k_ops);
  for (const auto& op : m.jumps) dense.push_back(Matrix(op.l));

  for (int i = 0; i < k_ops; ++i) {
    if (m.jumps[i].sigma_e) continue;
    const double scale = dense[i].cwiseAbs().maxCoeff();
    if (scale == 0.0) {
      m.jumps[i].sigma_e = 0.0;
      continue;
    }
    if (max_abs_diff(dense[i], dense[i].adjoint()) < tol::hermitian * scale) {
      m.jumps[i].sigma_e = 0.0;
      continue;
    }
    bool paired = false;
    for (int j = 0; j < k_ops && !paired; ++j) {
      if (j == i || m.jumps[j].sigma_e) continue;
      // Test L_j = c L_i^dag.
      const Matrix a = dense[i].adjoint();
      const Complex c =
          (a.adjoint() * dense[j]).trace() / (a.adjoint() * a).trace();
      if (std::abs(c) == 0.0) continue;
      if (max_abs_diff(dense[j], c * a) >
          1e-10 * dense[j].cwiseAbs().maxCoeff())
        continue;
      const double sigma = -2.0 * std::log(std::abs(c));
      m.jumps[i].sigma_e = sigma;
      m.jumps[j].sigma_e = -sigma;
      paired = true;
    }
    if (!paired)
      throw std::invalid_argument(
          "qep: assign_environment_entropies: unpaired jump operator '" +
          m.jumps[i].label + "' requires a user-supplied exchange entropy");
  }

  const double resid = trace_preservation_residual(m);
  const double scale = std::max(1.0, sp_max_abs(m.ldl_sum));
  if (resid > tol::consistency * scale)
    throw std::runtime_error(
        "qep: assign_environment_entropies: inconsistent exchange entropies "
        "(residual " +
        std::to_string(resid) + ")");
  return m;
}

double trace_preservation_residual(const LindbladModel& m) {
  require_prepared(m, "trace_preservation_residual");
  Matrix acc = Matrix::Zero(m.dim, m.dim);
  for (size_t k = 0; k < m.jumps.size(); ++k) {
    if (!m.jumps[k].sigma_e)
      throw std::invalid_argument(
          "qep: trace_preservation_residual: exchange entropy missing on '" +
          m.jumps[k].label + "'");
    acc += Matrix(m.ldl[k]);
    acc -= std::exp(-*m.jumps[k].sigma_e) *
           Matrix(m.jumps[k].l * SpMatrix(m.jumps[k].l.adjoint()));
  }
  return acc.cwiseAbs().maxCoeff();
}

JumpLadderStatus stamp_jump_gaps(LindbladModel& m) {
  require_prepared(m, "stamp_jump_gaps");
  const Matrix pi = m.pi ? *m.pi : invariant_state_numeric(m);
  NonequilibriumPotential pot;
  try {
    pot = nonequilibrium_potential(pi);
  } catch (const std::invalid_argument& ex) {
    // A numerically singular stationary state has no usable potential; the
    // split is unavailable rather than the model ill-formed.
    JumpLadderStatus st;
    st.witness = ex.what();
    for (auto& op : m.jumps) op.dphi.reset();
    m.ladder = st;
    return st;
  }
  const Matrix phi = pot.matrix();

  JumpLadderStatus st;
  const Matrix hd = m.h;
  const Matrix rd = m.ldl_sum;
  const double hs = std::max(1.0, hd.cwiseAbs().maxCoeff());
  const double rs = std::max(1.0, rd.cwiseAbs().maxCoeff());
  st.h_commutator = max_abs_diff(hd * phi, phi * hd);
  st.rate_commutator = max_abs_diff(rd * phi, phi * rd);

  // Reuse the channel-level ladder checker on the jump list.
  KrausMap probe;
  probe.dim = m.dim;
  for (const auto& op : m.jumps)
    probe.ops.push_back({Matrix(op.l), op.label, -1, -1, op.sigma_e,
                         std::nullopt});
  const ConditionReport rep = check_ladder_condition(probe, pot);

  if (st.h_commutator > tol::commutator * hs ||
      st.rate_commutator > tol::commutator * rs) {
    st.available = false;
    st.witness = "no-jump generator mixes potential levels";
  } else if (!rep.satisfied) {
    st.available = false;
    st.witness = rep.witness;
  } else {
    st.available = true;
    for (size_t k = 0; k < m.jumps.size(); ++k)
      m.jumps[k].dphi = rep.dphi[k];
  }
  if (!st.available)
    for (auto& op : m.jumps) op.dphi.reset();
  m.ladder = st;
  return st;
}

KrausMap step_kraus_map(const LindbladModel& m, double dt,
                        StepKrausVariant v) {
  require_prepared(m, "step_kraus_map");
  if (dt <= 0.0) throw std::invalid_argument("qep: step_kraus_map: dt <= 0");
  const Matrix id = Matrix::Identity(m.dim, m.dim);
  Matrix m0;
  if (v == StepKrausVariant::normalized) {
    const Matrix a = id - dt * Matrix(m.ldl_sum);
    Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < 1e-12)
      throw std::invalid_argument(
          "qep: step_kraus_map: dt too large for a trace preserving step");
    m0 = expm_hermitian(Matrix(m.h), Complex(0.0, -dt / m.hbar)) *
         power_hermitian(a, 0.5);
  } else {
    m0 = id - Complex(0.0, dt / m.hbar) * Matrix(m.h_eff);
  }
  KrausMap map;
  map.dim = m.dim;
  const bool ladder_ok = m.ladder && m.ladder->available;
  map.ops.push_back({m0, "nojump", -1, -1, 0.0,
                     ladder_ok ? std::optional<double>(0.0) : std::nullopt});
  const double root_dt = std::sqrt(dt);
  for (const auto& op : m.jumps)
    map.ops.push_back(
        {root_dt * Matrix(op.l), op.label, -1, -1, op.sigma_e, op.dphi});
  if (v == StepKrausVariant::normalized) check_cptp(map, tol::cptp, "step_kraus_map");
  return map;
}

namespace {

struct EffPropagator {
  // Dense spectral decomposition of the non-Hermitian effective generator.
  Eigen::VectorXcd lam;
  Matrix v;
  Eigen::PartialPivLU<Matrix> lu;
  double hbar = 1.0;

  explicit EffPropagator(const LindbladModel& m) : hbar(m.hbar) {
    Eigen::ComplexEigenSolver<Matrix> ces(Matrix(m.h_eff));
    if (ces.info() != Eigen::Success)
      throw std::runtime_error("qep: unravel: effective generator eigensolver failed");
    lam = ces.eigenvalues();
    v = ces.eigenvectors();
    lu.compute(v);
  }

  Vector at(const Vector& psi0, double t) const {
    Vector c = lu.solve(psi0);
    for (Eigen::Index i = 0; i < c.size(); ++i)
      c(i) *= std::exp(Complex(0.0, -t / hbar) * lam(i));
    return v * c;
  }
};

Vector normalized_or_throw(Vector psi) {
  const double nrm = psi.norm();
  if (nrm < 1e-150)
    throw std::runtime_error("qep: unravel: state norm vanished");
  return psi / nrm;
}

}  // namespace

UnravelResult unravel(const LindbladModel& m, const DensityOperator& rho0,
                      double t_f, double dt, int n, std::uint64_t seed,
                      const ProjectiveBasis& final_basis,
                      const UnravelOptions& opt) {
  require_prepared(m, "unravel");
  check_density(rho0, "unravel");
  if (rho0.dim() != m.dim)
    throw std::invalid_argument("qep: unravel: state dimension mismatch");
  if (t_f <= 0.0) throw std::invalid_argument("qep: unravel: t_f <= 0");
  if (n < 0) throw std::invalid_argument("qep: unravel: n < 0");
  if (opt.method == UnravelMethod::stepwise && dt <= 0.0)
    throw std::invalid_argument("qep: unravel: stepwise sampling needs dt > 0");
  check_basis(final_basis, m.dim, "unravel(final_basis)");
  if (opt.batches < 1) throw std::invalid_argument("qep: unravel: batches < 1");
  if (!opt.checkpoints.empty() && n < opt.batches)
    throw std::invalid_argument("qep: unravel: fewer trajectories than batches");

  std::vector<double> cps = opt.checkpoints;
  std::sort(cps.begin(), cps.end());
  if (!cps.empty() && (cps.front() < 0.0 || cps.back() > t_f))
    throw std::invalid_argument("qep: unravel: checkpoint outside [0, t_f]");

  ProjectiveBasis init = opt.initial_basis;
  if (init.states.empty())
    init = eigenbasis_or_throw(rho0.m, "unravel(rho0)");
  else
    check_basis(init, m.dim, "unravel(initial_basis)");
  RVector weights(init.size());
  for (int i = 0; i < init.size(); ++i)
    weights(i) = std::max(
        0.0,
        (init.states[i].adjoint() * rho0.m * init.states[i]).value().real());

  UnravelResult result;
  if (opt.method == UnravelMethod::stepwise &&
      dt * sp_max_abs(m.ldl_sum) > 0.05)
    result.warning =
        "dt * max jump rate exceeds 0.05; first-order jump probabilities are "
        "coarse";

  result.checkpoint_means.assign(
      cps.size(), std::vector<Matrix>(opt.batches, Matrix::Zero(m.dim, m.dim)));
  std::vector<std::vector<long>> cp_counts(
      cps.size(), std::vector<long>(opt.batches, 0));

  std::optional<EffPropagator> prop;
  if (opt.method == UnravelMethod::gillespie) prop.emplace(m);

  const int k_ops = static_cast<int>(m.jumps.size());
  for (int traj = 0; traj < n; ++traj) {
    rng::Stream stream(seed, static_cast<std::uint64_t>(traj));
    const int batch = traj % opt.batches;
    JumpTrajectory rec;
    rec.n = draw_categorical(weights, stream.uniform());
    Vector psi = init.states[rec.n];
    if (opt.record_states) rec.states.push_back(psi);
    double t = 0.0;
    size_t cp = 0;
    const auto accumulate_to = [&](double t_now, const auto& state_at) {
      while (cp < cps.size() && cps[cp] <= t_now + 1e-12) {
        const Vector at_cp = state_at(cps[cp]);
        result.checkpoint_means[cp][batch] += at_cp * at_cp.adjoint();
        ++cp_counts[cp][batch];
        ++cp;
      }
    };
    accumulate_to(0.0, [&](double) { return psi; });

    if (opt.method == UnravelMethod::stepwise) {
      while (t < t_f - 1e-12) {
        const double h = std::min(dt, t_f - t);
        RVector q(k_ops);
        for (int k = 0; k < k_ops; ++k)
          q(k) = h * std::max(0.0, psi.dot(m.ldl[k] * psi).real());
        const double q_tot = q.sum();
        const double u = stream.uniform();
        if (u < q_tot) {
          const int k = draw_categorical(q, u / q_tot);
          psi = normalized_or_throw(m.jumps[k].l * psi);
          rec.events.push_back(
              {k, t + h, m.jumps[k].sigma_e, m.jumps[k].dphi});
          if (opt.record_states) rec.states.push_back(psi);
        } else {
          psi = normalized_or_throw(
              psi - Complex(0.0, h / m.hbar) * (m.h_eff * psi));
        }
        t += h;
        accumulate_to(t, [&](double) { return psi; });
      }
    } else {
      while (t < t_f - 1e-12) {
        const double t_rem = t_f - t;
        const double u = stream.uniform();
        const Vector base = psi;
        const auto survival = [&](double tau) {
          return prop->at(base, tau).squaredNorm();
        };
        if (survival(t_rem) >= u) {
          accumulate_to(t + t_rem, [&](double tc) {
            return normalized_or_throw(prop->at(base, tc - t));
          });
          psi = normalized_or_throw(prop->at(base, t_rem));
          t = t_f;
          break;
        }
        double lo = 0.0, hi = t_rem;
        for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, t_rem);
             ++it) {
          const double mid = 0.5 * (lo + hi);
          (survival(mid) >= u ? lo : hi) = mid;
        }
        const double tau = 0.5 * (lo + hi);
        accumulate_to(t + tau, [&](double tc) {
          return normalized_or_throw(prop->at(base, tc - t));
        });
        const Vector at_jump = prop->at(base, tau);
        RVector q(k_ops);
        for (int k = 0; k < k_ops; ++k)
          q(k) = std::max(0.0, at_jump.dot(m.ldl[k] * at_jump).real());
        if (q.sum() <= 0.0)
          throw std::runtime_error("qep: unravel: vanishing jump rates");
        const int k = draw_categorical(q, stream.uniform());
        psi = normalized_or_throw(m.jumps[k].l * at_jump);
        t += tau;
        rec.events.push_back({k, t, m.jumps[k].sigma_e, m.jumps[k].dphi});
        if (opt.record_states) rec.states.push_back(psi);
        accumulate_to(t, [&](double) { return psi; });
      }
    }

    if (opt.record_states) rec.states.push_back(psi);
    RVector fw(final_basis.size());
    for (int i = 0; i < final_basis.size(); ++i)
      fw(i) = std::norm(final_basis.states[i].dot(psi));
    rec.m = draw_categorical(fw, stream.uniform());
    result.trajectories.push_back(std::move(rec));
  }

  for (size_t c = 0; c < cps.size(); ++c)
    for (int b = 0; b < opt.batches; ++b)
      if (cp_counts[c][b] > 0)
        result.checkpoint_means[c][b] /=
            static_cast<double>(cp_counts[c][b]);
  return result;
}

EntropyLedger trajectory_entropies(const JumpTrajectory& traj,
                                   const LindbladModel& m, double p_n,
                                   double p_tilde_m) {
  EntropyLedger led;
  led.sigma_s = safe_log(p_n) - safe_log(p_tilde_m);
  double dphi_sum = 0.0;
  bool dphi_ok = m.ladder && m.ladder->available;
  for (const auto& ev : traj.events) {
    if (!ev.sigma_e)
      throw std::invalid_argument(
          "qep: trajectory_entropies: exchange entropy missing on a jump");
    led.sigma_e_parts.push_back(*ev.sigma_e);
    led.sigma_e += *ev.sigma_e;
    if (ev.dphi)
      dphi_sum += *ev.dphi;
    else
      dphi_ok = false;
  }
  led.i_tilde = 0.0;
  if (p_tilde_m <= 0.0) {
    led.infinite = true;
    led.delta_s = kInf;
  } else if (p_n <= 0.0) {
    led.infinite = true;
    led.delta_s = -kInf;
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

FtEstimate verify_integral_ft(const std::vector<EntropyLedger>& ledgers,
                              FtKind which) {
  if (ledgers.empty())
    throw std::invalid_argument("qep: verify_integral_ft: no ledgers");
  FtEstimate est;
  est.sampled = true;
  est.available = true;
  const double n = static_cast<double>(ledgers.size());
  double sum = 0.0, sum_sq = 0.0, mean_entropy = 0.0;
  for (const auto& led : ledgers) {
    double x;
    if (which == FtKind::total) {
      x = led.delta_s;
    } else {
      if (!led.split_valid && !led.infinite) {
        est.available = false;
        return est;
      }
      x = which == FtKind::adiabatic ? led.delta_s_a : led.delta_s_na;
    }
    if (led.infinite) {
      est.ft_breaking = true;
      mean_entropy = kInf;
      continue;  // e^{-inf} contributes nothing
    }
    const double w = std::exp(-x);
    sum += w;
    sum_sq += w * w;
    if (!est.ft_breaking) mean_entropy += x / n;
  }
  est.value = sum / n;
  est.mean_entropy = mean_entropy;
  if (ledgers.size() > 1) {
    const double var = std::max(0.0, (sum_sq - sum * sum / n) / (n - 1.0));
    est.std_error = std::sqrt(var / n);
  }
  return est;
}

RatesSample entropy_rates(const LindbladModel& m, const Matrix& rho,
                          double t) {
  require_prepared(m, "entropy_rates");
  if (!m.pi)
    throw std::invalid_argument(
        "qep: entropy_rates: model has no invariant state; set pi first");
  if (rho.rows() != m.dim || rho.cols() != m.dim)
    throw std::invalid_argument("qep: entropy_rates: dimension mismatch");
  for (const auto& op : m.jumps)
    if (!op.sigma_e)
      throw std::invalid_argument(
          "qep: entropy_rates: exchange entropy missing on '" + op.label +
          "'");

  const Matrix drho = liouvillian_apply(m, rho, t);
  RatesSample rs;
  rs.t = t;
  const Matrix log_rho = clamped_log(rho, &rs.min_eigenvalue);
  const Matrix log_pi = clamped_log(*m.pi);
  rs.s_dot = -trace_product(drho, log_rho).real();
  rs.phi_dot = -trace_product(drho, log_pi).real();
  for (size_t k = 0; k < m.jumps.size(); ++k)
    rs.sigma_e_dot +=
        *m.jumps[k].sigma_e * sp_trace_product(m.ldl[k], rho).real();
  rs.s_dot_na = rs.s_dot - rs.phi_dot;
  rs.s_dot_a = rs.sigma_e_dot + rs.phi_dot;
  rs.s_dot_i = rs.s_dot_a + rs.s_dot_na;
  return rs;
}

Matrix clamped_log_density(const Matrix& rho) { return clamped_log(rho); }

double adiabatic_rate(const LindbladModel& m, const Matrix& rho,
                      const Matrix& log_pi) {
  require_prepared(m, "adiabatic_rate");
  const Matrix drho = liouvillian_apply(m, rho);
  double rate = -trace_product(drho, log_pi).real();
  for (size_t k = 0; k < m.jumps.size(); ++k) {
    if (!m.jumps[k].sigma_e)
      throw std::invalid_argument(
          "qep: adiabatic_rate: exchange entropy missing on '" +
          m.jumps[k].label + "'");
    rate += *m.jumps[k].sigma_e * sp_trace_product(m.ldl[k], rho).real();
  }
  return rate;
}

EnergyRates energy_rates(const LindbladModel& m, const Matrix& rho) {
  require_prepared(m, "energy_rates");
  if (rho.rows() != m.dim || rho.cols() != m.dim)
    throw std::invalid_argument("qep: energy_rates: dimension mismatch");
  const SpMatrix& e = m.e_obs ? *m.e_obs : m.h;
  EnergyRates er;
  const SpMatrix he = SpMatrix(m.h * e);
  const SpMatrix eh = SpMatrix(e * m.h);
  er.w_dot = (Complex(0.0, 1.0 / m.hbar) *
              (sp_trace_product(he, rho) - sp_trace_product(eh, rho)))
                 .real();
  er.q_dot = sp_trace_product(e, dissipator_apply(m, rho)).real();
  er.u_dot = er.w_dot + er.q_dot;
  if (m.quadrature)
    er.x_dot =
        sp_trace_product(*m.quadrature, liouvillian_apply(m, rho)).real();
  return er;
}

double spohn_relaxation(const DensityOperator& rho0,
                        const DensityOperator& rho_t, const Matrix& pi) {
  check_density(rho0, "spohn_relaxation(rho0)");
  check_density(rho_t, "spohn_relaxation(rho_t)");
  return relative_entropy(rho0.m, pi) - relative_entropy(rho_t.m, pi);
}

Matrix invariant_state_numeric(const LindbladModel& m) {
  require_prepared(m, "invariant_state_numeric");
  const int d = m.dim;
  if (d <= 32) {
    // Exact null space of the vectorized generator.
    const Matrix id = Matrix::Identity(d, d);
    const Matrix hd = m.h;
    Matrix s = Complex(0.0, -1.0 / m.hbar) *
               (kron_dense(id, hd) - kron_dense(hd.transpose(), id));
    for (size_t k = 0; k < m.jumps.size(); ++k) {
      const Matrix ld = m.jumps[k].l;
      const Matrix ldl = m.ldl[k];
      s += kron_dense(ld.conjugate(), ld);
      s -= 0.5 * (kron_dense(id, ldl) + kron_dense(ldl.transpose(), id));
    }
    Eigen::ComplexEigenSolver<Matrix> ces(s);
    if (ces.info() != Eigen::Success)
      throw std::runtime_error(
          "qep: invariant_state_numeric: eigensolver failed");
    int best = 0;
    for (int i = 1; i < ces.eigenvalues().size(); ++i)
      if (std::abs(ces.eigenvalues()(i)) <
          std::abs(ces.eigenvalues()(best)))
        best = i;
    const double scale = std::max(1.0, sp_max_abs(m.ldl_sum));
    if (std::abs(ces.eigenvalues()(best)) > 1e-8 * scale)
      throw std::runtime_error(
          "qep: invariant_state_numeric: no stationary null vector");
    Vector v = ces.eigenvectors().col(best);
    Matrix fixed = Eigen::Map<Matrix>(v.data(), d, d);
    const Complex tr = fixed.trace();
    if (std::abs(tr) < 1e-12)
      throw std::runtime_error(
          "qep: invariant_state_numeric: traceless null vector; the "
          "stationary state is not unique");
    fixed *= std::conj(tr) / std::abs(tr);
    fixed = 0.5 * (fixed + Matrix(fixed.adjoint()));
    fixed /= fixed.trace().real();
    const double resid = liouvillian_apply(m, fixed).cwiseAbs().maxCoeff();
    if (resid > 1e-9 * scale)
      throw std::runtime_error(
          "qep: invariant_state_numeric: residual " + std::to_string(resid));
    Eigen::SelfAdjointEigenSolver<Matrix> es(fixed, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -tol::positivity)
      throw std::runtime_error(
          "qep: invariant_state_numeric: fixed point not positive");
    return fixed;
  }

  throw std::runtime_error(
      "qep: invariant_state_numeric: dimension " + std::to_string(d) +
      " exceeds the exact-solver cap; supply the invariant state "
      "analytically");
}

}  // namespace qep
