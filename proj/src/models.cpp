// SPDX-License-Identifier: MIT

#include "qep/models.hpp"

#include <Eigen/SparseCore>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace qep {

namespace {

constexpr double kTailTol = 1e-8;  // stationary leakage allowed at the edge

ProjectiveBasis computational_basis_of(int d) {
  ProjectiveBasis b;
  for (int i = 0; i < d; ++i) {
    Vector v = Vector::Zero(d);
    v(i) = 1.0;
    b.states.push_back(v);
  }
  return b;
}

SpMatrix sparse_diag(const std::vector<double>& values) {
  const int d = static_cast<int>(values.size());
  SpMatrix m(d, d);
  for (int i = 0; i < d; ++i)
    if (values[i] != 0.0) m.insert(i, i) = values[i];
  m.makeCompressed();
  return m;
}

// Single matrix unit sqrt(rate) |row><col|.
SpMatrix scaled_unit(int d, int row, int col, double scale) {
  SpMatrix m(d, d);
  m.insert(row, col) = scale;
  m.makeCompressed();
  return m;
}

// Truncated lowering operator, a |n> = sqrt(n) |n-1>.
Matrix lowering(int d) {
  Matrix a = Matrix::Zero(d, d);
  for (int n = 1; n < d; ++n) a(n - 1, n) = std::sqrt(double(n));
  return a;
}

void require_cnot(const CnotParams& p) {
  if (!(p.alpha >= 0.0 && p.alpha <= 1.0))
    throw std::invalid_argument("qep: cnot: alpha must lie in [0, 1]");
  if (!(p.beta_eps >= 0.0) || !std::isfinite(p.beta_eps))
    throw std::invalid_argument("qep: cnot: beta_eps must be finite and >= 0");
  if (!(p.epsilon > 0.0))
    throw std::invalid_argument("qep: cnot: epsilon must be positive");
}

Matrix cnot_unitary() {
  Matrix u = Matrix::Zero(4, 4);
  u(0, 0) = 1.0;  // |00> -> |00>
  u(1, 1) = 1.0;  // |01> -> |01>
  u(3, 2) = 1.0;  // |10> -> |11>
  u(2, 3) = 1.0;  // |11> -> |10>
  return u;
}

Matrix cnot_thermal_target(const CnotParams& p) {
  const double w = std::exp(-p.beta_eps);
  Matrix rho = Matrix::Zero(2, 2);
  rho(0, 0) = 1.0 / (1.0 + w);
  rho(1, 1) = w / (1.0 + w);
  return rho;
}

void require_machine(const MachineParams& p) {
  if (!(p.hw1 > 0.0) || !(p.hw2 > 0.0))
    throw std::invalid_argument("qep: machine: level gaps must be positive");
  if (!(p.beta1 > 0.0) || !(p.beta2 > 0.0) || !(p.beta3 > 0.0))
    throw std::invalid_argument(
        "qep: machine: inverse temperatures must be positive");
  if (!(p.gamma1 > 0.0) || !(p.gamma2 > 0.0) || !(p.gamma3 > 0.0))
    throw std::invalid_argument("qep: machine: couplings must be positive");
}

void require_cavity(const CavityParams& p) {
  if (!(p.omega > 0.0))
    throw std::invalid_argument("qep: cavity: omega must be positive");
  if (!(p.gamma0 > 0.0))
    throw std::invalid_argument("qep: cavity: gamma0 must be positive");
  if (!(p.beta > 0.0))
    throw std::invalid_argument("qep: cavity: beta must be positive");
  if (p.n_max < 8)
    throw std::invalid_argument("qep: cavity: n_max must be at least 8");
}

struct DisplacedThermal {
  Matrix pi;
  double tail = 0.0;
  double displacement_defect = 0.0;
};

DisplacedThermal displaced_thermal(const CavityParams& p) {
  require_cavity(p);
  const int d = p.n_max;
  const Complex alpha = p.alpha();

  Matrix gibbs = Matrix::Zero(d, d);
  double z0 = 0.0;
  for (int n = 0; n < d; ++n) z0 += std::exp(-p.beta * p.omega * n);
  for (int n = 0; n < d; ++n)
    gibbs(n, n) = std::exp(-p.beta * p.omega * n) / z0;

  DisplacedThermal out;
  if (std::abs(alpha) == 0.0) {
    out.pi = gibbs;
  } else {
    // D = e^{alpha a^dag - alpha* a} = e^{iK} with Hermitian K.
    const Matrix a = lowering(d);
    const Matrix k =
        Complex(0.0, -1.0) * (alpha * a.adjoint() - std::conj(alpha) * a);
    const Matrix disp = expm_hermitian(k, Complex(0.0, 1.0));
    Matrix pi = disp * gibbs * disp.adjoint();
    pi = Complex(0.5, 0.0) * (pi + Matrix(pi.adjoint()));
    pi /= pi.trace().real();
    out.pi = pi;
    const Matrix shift_resid =
        disp * a * disp.adjoint() - a + alpha * Matrix::Identity(d, d);
    out.displacement_defect = (shift_resid * pi).cwiseAbs().maxCoeff();
  }
  for (int n = d - 5; n < d; ++n) out.tail += out.pi(n, n).real();
  return out;
}

}  // namespace

Matrix cnot_hamiltonian(const CnotParams& p) {
  require_cnot(p);
  Matrix h = Matrix::Zero(2, 2);
  h(1, 1) = p.epsilon;
  return h;
}

double cnot_work(const CnotParams& p) {
  require_cnot(p);
  const double w = std::exp(-p.beta_eps);
  return p.epsilon * (0.5 - w / (1.0 + w));
}

BipartiteProcess build_cnot(const CnotParams& p) {
  require_cnot(p);
  BipartiteProcess proc;

  Matrix rho_s = 0.5 * Matrix::Identity(2, 2);
  rho_s(0, 1) += 0.5 * p.alpha;
  rho_s(1, 0) += 0.5 * p.alpha;
  proc.rho_s = DensityOperator{rho_s, {2}};
  proc.rho_e = DensityOperator{cnot_thermal_target(p), {2}};

  if (p.alpha > 0.0) {
    const double r = 1.0 / std::sqrt(2.0);
    Vector plus(2), minus(2);
    plus << r, r;
    minus << r, -r;
    proc.s_init.states = {plus, minus};
  }
  proc.e_init = computational_basis_of(2);

  proc.u = cnot_unitary();
  proc.s_final = p.s_final.states.empty() ? computational_basis_of(2) : p.s_final;
  proc.e_final = p.e_final.states.empty() ? computational_basis_of(2) : p.e_final;
  return proc;
}

DensityOperator measured_joint_state(const ResolvedBipartite& r) {
  Matrix rho = Matrix::Zero(r.dim_s * r.dim_e, r.dim_s * r.dim_e);
  for (int m = 0; m < r.dim_s; ++m)
    for (int mu = 0; mu < r.dim_e; ++mu)
      rho += r.varrho_star(m, mu) *
             tensor(r.s_final.projector(m), r.e_final.projector(mu));
  return DensityOperator{rho, {r.dim_s, r.dim_e}};
}

CnotRecovery cnot_second_gate(const CnotParams& p,
                              const DensityOperator& rho_star) {
  require_cnot(p);
  check_density(rho_star, "cnot_second_gate");
  if (rho_star.dim() != 4)
    throw std::invalid_argument(
        "qep: cnot_second_gate: expected a two-qubit state");

  const Matrix u = cnot_unitary();
  const Matrix h = cnot_hamiltonian(p);
  const Matrix h_tot = tensor(h, Matrix::Identity(2, 2)) +
                       tensor(Matrix::Identity(2, 2), h);

  CnotRecovery rec;
  rec.rho_final = u * rho_star.m * u.adjoint();
  rec.w_ext = (h_tot * (rho_star.m - rec.rho_final)).trace().real();
  const Matrix rho_final_s = partial_trace(rec.rho_final, {2, 2}, {0});
  rec.decorrelation =
      max_abs_diff(rec.rho_final, tensor(rho_final_s, cnot_thermal_target(p)));
  return rec;
}

bool MachineParams::equal_couplings() const {
  const double scale = std::max({gamma1, gamma2, gamma3});
  return std::abs(gamma1 - gamma2) <= 1e-12 * scale &&
         std::abs(gamma1 - gamma3) <= 1e-12 * scale;
}

bool MachineParams::cooling_ordering() const {
  if (!(beta1 >= beta3 && beta3 >= beta2)) return false;
  if (beta3 == beta2) return beta1 == beta3;
  return hw2 * (beta3 - beta2) >= hw1 * (beta1 - beta3);
}

LindbladModel build_machine(const MachineParams& p) {
  require_machine(p);
  LindbladModel m;
  m.dim = 3;
  m.h = sparse_diag({0.0, p.hw1, p.hw3()});

  const double hw[3] = {p.hw1, p.hw2, p.hw3()};
  const double beta[3] = {p.beta1, p.beta2, p.beta3};
  const double gamma[3] = {p.gamma1, p.gamma2, p.gamma3};
  const int low[3] = {0, 1, 0};
  const int high[3] = {1, 2, 2};
  for (int r = 0; r < 3; ++r) {
    const double n = 1.0 / std::expm1(beta[r] * hw[r]);
    const std::string digit = std::to_string(r + 1);
    m.jumps.push_back({scaled_unit(3, low[r], high[r],
                                   std::sqrt(gamma[r] * (n + 1.0))),
                       "down" + digit, std::nullopt, std::nullopt});
    m.jumps.push_back({scaled_unit(3, high[r], low[r],
                                   std::sqrt(gamma[r] * n)),
                       "up" + digit, std::nullopt, std::nullopt});
  }

  prepare(m);
  assign_environment_entropies(m);
  if (p.equal_couplings()) {
    const RVector pops = machine_steady_state(p);
    Matrix pi = Matrix::Zero(3, 3);
    for (int i = 0; i < 3; ++i) pi(i, i) = pops(i);
    m.pi = pi;
  } else {
    m.pi = invariant_state_numeric(m);
  }
  stamp_jump_gaps(m);
  return m;
}

RVector machine_steady_state(const MachineParams& p) {
  require_machine(p);
  if (!p.equal_couplings())
    throw std::invalid_argument(
        "qep: machine_steady_state: closed form needs equal bath couplings");
  const double x = std::exp(p.beta1 * p.hw1);
  const double y = std::exp(p.beta2 * p.hw2);
  const double z = std::exp(p.beta3 * p.hw3());
  RVector pops(3);
  pops << z * (2.0 * x * y - 1.0) - x * y, y * (x - 2.0) + z * (2.0 * y - 1.0),
      z + x * y - 2.0;
  return pops / pops.sum();
}

double machine_flow_determinant(const MachineParams& p) {
  require_machine(p);
  return std::exp(p.beta3 * p.hw3()) - std::exp(p.beta1 * p.hw1 + p.beta2 * p.hw2);
}

std::array<double, 3> machine_flows_steady(const MachineParams& p) {
  const RVector pops = machine_steady_state(p);
  const double x = std::exp(p.beta1 * p.hw1);
  const double y = std::exp(p.beta2 * p.hw2);
  const double z = std::exp(p.beta3 * p.hw3());
  const double z_pi = (z * (2.0 * x * y - 1.0) - x * y) +
                      (y * (x - 2.0) + z * (2.0 * y - 1.0)) + (z + x * y - 2.0);
  const double common = p.gamma1 * machine_flow_determinant(p) / z_pi;
  return {p.hw1 * common, p.hw2 * common, -p.hw3() * common};
}

std::array<double, 3> virtual_temperatures(const RVector& pops,
                                           const MachineParams& p) {
  require_machine(p);
  if (pops.size() != 3)
    throw std::invalid_argument("qep: virtual_temperatures: need three populations");
  if (pops.minCoeff() <= 0.0)
    throw std::invalid_argument(
        "qep: virtual_temperatures: populations must be positive");
  return {std::log(pops(0) / pops(1)) / p.hw1,
          std::log(pops(1) / pops(2)) / p.hw2,
          std::log(pops(0) / pops(2)) / p.hw3()};
}

std::array<double, 3> machine_heat_flows(const LindbladModel& m,
                                         const Matrix& rho) {
  if (m.jumps.size() != 6)
    throw std::invalid_argument(
        "qep: machine_heat_flows: expected the six-jump machine model");
  const Matrix h = Matrix(m.h);
  std::array<double, 3> q{};
  for (int r = 0; r < 3; ++r) {
    const Matrix d = dissipator_apply(m, rho, {2 * r, 2 * r + 1});
    q[r] = (h * d).trace().real();
  }
  return q;
}

JumpTrajectory machine_cycle_trajectory(const LindbladModel& m) {
  if (m.jumps.size() != 6)
    throw std::invalid_argument(
        "qep: machine_cycle_trajectory: expected the six-jump machine model");
  JumpTrajectory traj;
  traj.n = 0;
  traj.m = 0;
  const int ks[3] = {1, 3, 4};  // up1, up2, down3
  for (int i = 0; i < 3; ++i) {
    const auto& op = m.jumps[ks[i]];
    traj.events.push_back({ks[i], double(i + 1), op.sigma_e, op.dphi});
  }
  return traj;
}

CavityTruncation cavity_truncation(const CavityParams& p) {
  const DisplacedThermal dt = displaced_thermal(p);
  return {dt.tail, dt.displacement_defect};
}

DensityOperator cavity_steady_state(const CavityParams& p) {
  DisplacedThermal dt = displaced_thermal(p);
  if (dt.tail > kTailTol)
    throw std::invalid_argument(
        "qep: cavity_steady_state: stationary population " +
        std::to_string(dt.tail) + " in the top Fock levels; enlarge n_max");
  return DensityOperator{std::move(dt.pi), {p.n_max}};
}

LindbladModel build_cavity(const CavityParams& p) {
  DensityOperator pi = cavity_steady_state(p);
  const int d = p.n_max;

  LindbladModel m;
  m.dim = d;
  SpMatrix v(d, d);
  SpMatrix x_phi(d, d);
  const Complex phase = std::polar(1.0, std::arg(p.eps));
  for (int n = 0; n + 1 < d; ++n) {
    const double root = std::sqrt(double(n + 1));
    v.insert(n + 1, n) = Complex(0.0, 1.0) * p.eps * root;
    v.insert(n, n + 1) = Complex(0.0, -1.0) * std::conj(p.eps) * root;
    x_phi.insert(n + 1, n) = phase * root;
    x_phi.insert(n, n + 1) = std::conj(phase) * root;
  }
  v.makeCompressed();
  x_phi.makeCompressed();
  m.h = v;

  const Matrix a = lowering(d);
  const double g_down = p.gamma0 * (p.n_th() + 1.0);
  const double g_up = p.gamma0 * p.n_th();
  m.jumps.push_back({SpMatrix((std::sqrt(g_down) * a).sparseView()), "down",
                     std::nullopt, std::nullopt});
  m.jumps.push_back({SpMatrix((std::sqrt(g_up) * a.adjoint()).sparseView()),
                     "up", std::nullopt, std::nullopt});

  std::vector<double> energies(d);
  for (int n = 0; n < d; ++n) energies[n] = p.omega * n;
  m.e_obs = sparse_diag(energies);
  m.quadrature = x_phi;
  m.pi = pi.m;

  prepare(m);
  assign_environment_entropies(m);
  return m;
}

double cavity_power_steady(const CavityParams& p) {
  require_cavity(p);
  return p.omega * p.gamma0 * std::norm(p.alpha());
}

double cavity_energy_steady(const CavityParams& p) {
  require_cavity(p);
  return p.omega * (p.n_th() + std::norm(p.alpha()));
}

EnergyRates cavity_energy_transients(const CavityParams& p, double n0,
                                     double t) {
  require_cavity(p);
  if (!(t >= 0.0))
    throw std::invalid_argument("qep: cavity_energy_transients: t must be >= 0");
  if (!(n0 >= 0.0))
    throw std::invalid_argument("qep: cavity_energy_transients: n0 must be >= 0");
  const double u = std::exp(-0.5 * p.gamma0 * t);
  const double a2 = std::norm(p.alpha());

  EnergyRates er;
  er.w_dot = p.omega * p.gamma0 * a2 * (1.0 - u);
  er.q_dot = -p.gamma0 * p.omega *
             (a2 * (1.0 - u) * (1.0 - u) + (n0 - p.n_th()) * u * u);
  er.u_dot = er.w_dot + er.q_dot;
  er.x_dot = p.gamma0 * std::abs(p.alpha()) * u;
  return er;
}

CavityRates cavity_transients(const CavityParams& p,
                              const DensityOperator& rho0, double t,
                              bool closed_form) {
  require_cavity(p);
  check_density(rho0, "cavity_transients");
  if (rho0.dim() != p.n_max)
    throw std::invalid_argument(
        "qep: cavity_transients: initial state dimension differs from n_max");
  if (!(t >= 0.0))
    throw std::invalid_argument("qep: cavity_transients: t must be >= 0");

  CavityRates r;
  if (closed_form) {
    const Matrix diag_part = rho0.m.diagonal().asDiagonal();
    if (max_abs_diff(rho0.m, diag_part) > 1e-10)
      throw std::invalid_argument(
          "qep: cavity_transients: branch mismatch: the closed forms need a "
          "state diagonal in the number basis; set closed_form = false");
    double z0 = 0.0;
    for (int n = 0; n < p.n_max; ++n) z0 += std::exp(-p.beta * p.omega * n);
    double thermal_gap = 0.0;
    for (int n = 0; n < p.n_max; ++n)
      thermal_gap = std::max(
          thermal_gap, std::abs(rho0.m(n, n).real() -
                                std::exp(-p.beta * p.omega * n) / z0));
    if (thermal_gap > 1e-10)
      throw std::invalid_argument(
          "qep: cavity_transients: branch mismatch: the entropy rates have a "
          "closed form only for the thermal state of the undriven cavity; "
          "set closed_form = false");

    const EnergyRates er = cavity_energy_transients(p, p.n_th(), t);
    r.w_dot = er.w_dot;
    r.q_dot = er.q_dot;
    r.u_dot = er.u_dot;
    r.x_dot = er.x_dot;
    const double u = std::exp(-0.5 * p.gamma0 * t);
    const double rate = p.beta * cavity_power_steady(p);
    r.s_dot = 0.0;
    r.s_dot_a = rate * (1.0 - 2.0 * u);
    r.s_dot_na = rate * u * u;
    r.s_dot_i = rate * (1.0 - u) * (1.0 - u);
    return r;
  }

  LindbladModel m = build_cavity(p);
  Matrix rho = rho0.m;
  if (t > 0.0) {
    IntegrateOptions opt;
    const double rate_scale =
        p.gamma0 * (2.0 * p.n_th() + 1.0) * p.n_max +
        2.0 * std::abs(p.eps) * std::sqrt(double(p.n_max));
    opt.dt = std::min(0.01 / rate_scale, t);
    rho = integrate(m, rho0, {t}, opt).front();
  }
  const RatesSample sr = entropy_rates(m, rho);
  const EnergyRates er = energy_rates(m, rho);
  r.w_dot = er.w_dot;
  r.q_dot = er.q_dot;
  r.u_dot = er.u_dot;
  r.x_dot = er.x_dot;
  r.s_dot = sr.s_dot;
  r.s_dot_a = sr.s_dot_a;
  r.s_dot_na = sr.s_dot_na;
  r.s_dot_i = sr.s_dot_i;
  return r;
}

double adiabatic_sign_change_time(double gamma0) {
  if (!(gamma0 > 0.0))
    throw std::invalid_argument(
        "qep: adiabatic_sign_change_time: gamma0 must be positive");
  return 2.0 * std::log(2.0) / gamma0;
}

}  // namespace qep
