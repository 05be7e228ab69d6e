// SPDX-License-Identifier: MIT
//
// Two-point-measurement statistics for bipartite unitary processes and for
// concatenations of CPTP maps: forward, backward and dual trajectory
// distributions, per-trajectory entropy ledgers, and fluctuation-theorem
// verification by exact enumeration or Monte Carlo sampling.

#pragma once

#include "qep/channels.hpp"
#include "qep/core.hpp"
#include "qep/types.hpp"

namespace qep {

// Initial state of the backward process, Theta rho~ Theta^dag with
//   inverted_correlated: rho~ = rho*_SE          (measured joint state)
//   product:             rho~ = rho*_S (x) rho*_E
//   reset:               rho~ = rho*_S (x) rho_E  (use with Q* = Q)
//   custom:              rho~ = custom_rho_s (x) custom_rho_e
enum class BackwardInit { inverted_correlated, product, reset, custom };

// A bipartite two-point-measurement protocol: local measurements of
// rho_S (x) rho_E in eigenbases, joint unitary evolution, then local
// measurements in the final bases. Either `u` or `protocol` supplies the
// evolution (indices are S-major: |s, e> -> s * dim_E + e). Initial bases
// default to the ascending eigenbases of rho_S / rho_E; they must be given
// explicitly when a spectrum is degenerate and are always checked to leave
// the state invariant under dephasing.
struct BipartiteProcess {
  DensityOperator rho_s;
  DensityOperator rho_e;
  Matrix u;
  std::optional<Protocol> protocol;
  ProjectiveBasis s_init, e_init;
  ProjectiveBasis s_final, e_final;
  TimeReversal theta_s, theta_e;
  BackwardInit backward_init = BackwardInit::inverted_correlated;
  Matrix custom_rho_s, custom_rho_e;
};

// As BipartiteProcess but with R uncorrelated ancillas forming the
// environment; the backward environment weights factorize per ancilla.
struct MultiEnvProcess {
  DensityOperator rho_s;
  std::vector<DensityOperator> ancillas;
  Matrix u;  // S (x) E_1 (x) ... (x) E_R ordering
  ProjectiveBasis s_init;
  std::vector<ProjectiveBasis> e_inits;
  ProjectiveBasis s_final;
  std::vector<ProjectiveBasis> e_finals;
  TimeReversal theta_s;
  BackwardInit backward_init = BackwardInit::product;  // product or reset
};

// One trajectory: boundary outcomes (n, m) plus one Kraus-operator index per
// step (one step for a bipartite process, N for a concatenation). The
// environment labels of step l are step_map.ops[ops[l]].in/out_index.
// Dual probabilities are present when the adiabatic split is available.
struct TrajectoryRecord {
  int n = -1;
  int m = -1;
  std::vector<int> ops;
  double p = 0.0;                    // P(gamma)
  double p_rev = 0.0;                // P~(gamma~)
  std::optional<double> p_dual;      // P_D(gamma)
  std::optional<double> p_dual_rev;  // P~_D(gamma~)
};

// Per-trajectory entropy bookkeeping (nats).
struct EntropyLedger {
  double sigma_s = 0.0;
  double sigma_e = 0.0;
  std::vector<double> sigma_e_parts;  // per ancilla / per step
  double i_tilde = 0.0;
  double delta_s = 0.0;  // sigma_s + sigma_e - i_tilde
  double delta_s_a = 0.0;
  double delta_s_na = 0.0;
  bool split_valid = false;
  bool infinite = false;  // P > 0 with zero backward weight
};

// Fully resolved bipartite process: spectra, bases, the joint unitary, the
// reduced Kraus map (sigma_e assigned from the backward weights) and the
// forward/backward weight tables. Kraus index k = nu * dim_e + mu.
struct ResolvedBipartite {
  int dim_s = 0, dim_e = 0;
  RVector p, q;
  ProjectiveBasis s_init, e_init, s_final, e_final;
  Matrix u;
  Matrix u_rev;  // U of the reversed protocol, Theta U^dag Theta^dag
  TimeReversal theta_s, theta_e;
  KrausMap map;  // dphi stamped when the ladder condition holds
  Matrix rho_se_final;   // U (rho_S (x) rho_E) U^dag
  RMatrix varrho_star;   // (m, mu) final-measurement joint weights
  RVector p_star, q_star;
  RMatrix varrho_tilde;  // backward initialization weights
  RVector p_tilde, q_tilde;
  BackwardInit backward_init = BackwardInit::inverted_correlated;
  bool i_tilde_zero = false;  // backward weights factorize
  std::optional<Matrix> pi;   // invariant state of the reduced map, if unique
  std::optional<KrausMap> dual, dual_reverse;  // present when split available
  std::string split_reason;  // why the adiabatic split is unavailable
};

// Multi-ancilla resolution: the flattened bipartite view plus per-ancilla
// dimensions and weight tables (environment index row-major over ancillas).
struct ResolvedMultiEnv {
  ResolvedBipartite flat;
  std::vector<int> e_dims;
  std::vector<RVector> q_parts;
  std::vector<RVector> q_tilde_parts;
};

// A concatenation endowed with boundary data: initial system state, final
// measurement basis, and backward boundary weights p~ (default: populations
// of the evolved state in the final basis).
struct ChainProcess {
  Concatenation chain;
  DensityOperator rho_s;
  ProjectiveBasis s_init;  // explicit when the spectrum is degenerate
  ProjectiveBasis s_final;
  TimeReversal theta_s;
  std::optional<RVector> p_tilde;
};

struct ResolvedChain {
  Concatenation chain;  // per-op dphi stamped when the split is available
  RVector p;
  ProjectiveBasis s_init, s_final;
  TimeReversal theta_s;
  RVector p_tilde;
  Matrix rho_final;
  std::vector<KrausMap> backwards;  // per-step backward maps
  std::vector<KrausMap> duals, dual_reverses;  // empty when split unavailable
  bool split_valid = false;
  std::string split_reason;  // ladder witness / missing sigma
};

ResolvedBipartite resolve(const BipartiteProcess& p);
ResolvedMultiEnv resolve(const MultiEnvProcess& p);
ResolvedChain resolve(const ChainProcess& c);

// All trajectories with P(gamma) > 0, n-major / nu / mu / m-minor order.
// Backward (and dual, when available) probabilities are filled in.
std::vector<TrajectoryRecord> forward_distribution(const ResolvedBipartite& rp);
std::vector<TrajectoryRecord> forward_distribution(const BipartiteProcess& p);

// All backward trajectories with P~(gamma~) > 0, computed through the
// reversed-protocol unitary (micro-reversibility is verified in resolve).
std::vector<TrajectoryRecord> backward_distribution(const ResolvedBipartite& rp);
std::vector<TrajectoryRecord> backward_distribution(const BipartiteProcess& p);

// Entropy ledger of one trajectory. The chain overload needs no pi: the
// split annotations live on the stamped concatenation.
EntropyLedger entropy_ledger(const TrajectoryRecord& rec,
                             const ResolvedBipartite& rp);
EntropyLedger entropy_ledger(const TrajectoryRecord& rec,
                             const ResolvedMultiEnv& rp);
EntropyLedger entropy_ledger(const TrajectoryRecord& rec,
                             const ResolvedChain& rc);

// (delta_s_a, delta_s_na) for one trajectory with respect to the invariant
// state pi of the reduced map; std::nullopt when the ladder condition fails
// or the backward initialization is correlated.
std::optional<std::pair<double, double>> split_entropy(
    const TrajectoryRecord& rec, const ResolvedBipartite& rp, const Matrix& pi);

// Ensemble averages and state-function values for one process.
struct AverageReport {
  double delta_s = 0.0;  // <Delta_i s> under the configured backward_init
  double sigma_s = 0.0, sigma_e = 0.0, i_tilde = 0.0;
  double inclusive = 0.0;         // S(rho*_SE) - S(rho_SE)
  double non_inclusive = 0.0;     // sum of local entropy changes
  double measurement_part = 0.0;  // local measurement disturbance
  double correlation_part = 0.0;  // I(rho'_SE) - I(rho*_SE)
  double reset_extra = 0.0;       // S(rho*_E || rho_E), reset choice only
  double mutual_info_final = 0.0;  // I(rho'_SE)
  bool ft_breaking = false;  // some P > 0 carries zero backward weight
};
AverageReport average_entropies(const BipartiteProcess& p);
AverageReport average_entropies(const ResolvedBipartite& rp);

// Worst-case detailed fluctuation-theorem residuals over an enumeration.
struct DetailedFtReport {
  double max_residual_total = 0.0;         // |ln(P/P~) - delta_s|
  double max_residual_adiabatic = 0.0;     // |ln(P/P_D) - delta_s_a|
  double max_residual_nonadiabatic = 0.0;  // |ln(P/P~_D) - delta_s_na|
  bool split_checked = false;
  int worst_record = -1;
  std::vector<int> overruns;  // records above tol::ft_detailed
};
DetailedFtReport verify_detailed_ft(const BipartiteProcess& p);
DetailedFtReport verify_detailed_ft(const ResolvedBipartite& rp);
DetailedFtReport verify_detailed_ft(const ResolvedChain& rc);

// <exp(-Delta s)> over an enumeration (std_error = 0) or a set of sampled
// trajectories, together with the second-law corollary <Delta s> >= 0.
enum class FtKind { total, adiabatic, nonadiabatic };
struct FtEstimate {
  double value = 0.0;
  double std_error = 0.0;
  bool available = false;
  bool sampled = false;
  bool ft_breaking = false;    // nonzero-P trajectory with zero weight
  double mean_entropy = 0.0;   // <Delta s>, +inf when ft_breaking
};
FtEstimate verify_integral_ft(const std::vector<TrajectoryRecord>& records,
                              FtKind which, bool sampled = false);

// n i.i.d. draws from the forward distribution; draw i depends only on
// (seed, i) so results are independent of any parallel work split.
std::vector<TrajectoryRecord> sample_trajectories(const BipartiteProcess& p,
                                                  int n, std::uint64_t seed);
std::vector<TrajectoryRecord> sample_trajectories(const ChainProcess& c, int n,
                                                  std::uint64_t seed);

// Enumeration over boundary outcomes and per-step Kraus indices for a
// concatenation: P(gamma) = p_n |<psi*_m| M^(N) ... M^(1) |psi_n>|^2.
// Backward and dual probabilities are computed through the companion maps
// of every step (reverse order for backward / dual-reverse).
std::vector<TrajectoryRecord> concatenation_distribution(const ResolvedChain& rc);
std::vector<TrajectoryRecord> concatenation_distribution(
    const Concatenation& c, const DensityOperator& rho_s,
    const ProjectiveBasis& final_basis);

// S(rho_E + eps * delta || rho_E) / eps^2 for each eps; the ratios approach
// a finite constant as eps -> 0.
std::vector<double> perturbative_relative_entropy_check(
    const DensityOperator& rho_e, const Matrix& delta,
    const std::vector<double>& eps_list);

}  // namespace qep
