// SPDX-License-Identifier: MIT

#include "qep/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace qep {

using nlohmann::json;

const char* version() { return "0.1.0"; }

std::string format17(double v) {
  char buf[64];
  const auto res =
      std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

std::string config_hash(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(
        std::string("qep: config_hash: malformed JSON: ") + e.what());
  }
  const std::string canon = j.dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (const unsigned char c : canon) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

namespace {

const char* mode_name(RunMode m) {
  switch (m) {
    case RunMode::enumerate: return "enumerate";
    case RunMode::sample: return "sample";
    case RunMode::integrate: return "integrate";
    case RunMode::unravel: return "unravel";
  }
  return "";
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where, std::vector<std::string>& bad) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        known = true;
        break;
      }
    if (!known) bad.push_back(where + ": unknown key '" + it.key() + "'");
  }
}

void read_num(const json& obj, const char* key, double& slot,
              const std::string& where, std::vector<std::string>& bad) {
  if (!obj.contains(key)) return;
  if (!obj[key].is_number()) {
    bad.push_back(where + "." + key + ": must be a number");
    return;
  }
  slot = obj[key].get<double>();
}

bool contains_str(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(
        std::string("qep: parse_config: malformed JSON: ") + e.what());
  }
  if (!j.is_object())
    throw std::invalid_argument(
        "qep: parse_config: the config must be a JSON object");

  std::vector<std::string> bad;
  ExperimentConfig c;
  check_keys(j, {"model", "params", "run", "outputs"}, "config", bad);

  bool model_ok = false;
  if (!j.contains("model") || !j["model"].is_string()) {
    bad.push_back(
        "model: required, one of \"cnot\", \"three_level\", \"cavity\"");
  } else {
    c.model = j["model"].get<std::string>();
    model_ok =
        c.model == "cnot" || c.model == "three_level" || c.model == "cavity";
    if (!model_ok) bad.push_back("model: unknown name '" + c.model + "'");
  }

  json params = json::object();
  if (j.contains("params")) {
    if (!j["params"].is_object())
      bad.push_back("params: must be an object");
    else
      params = j["params"];
  }

  if (c.model == "cnot") {
    check_keys(params, {"alpha", "beta_eps", "epsilon"}, "params", bad);
    read_num(params, "alpha", c.cnot.alpha, "params", bad);
    read_num(params, "beta_eps", c.cnot.beta_eps, "params", bad);
    read_num(params, "epsilon", c.cnot.epsilon, "params", bad);
    if (!(c.cnot.alpha >= 0.0 && c.cnot.alpha <= 1.0))
      bad.push_back("params.alpha: must lie in [0, 1]");
    if (!(std::isfinite(c.cnot.beta_eps) && c.cnot.beta_eps >= 0.0))
      bad.push_back("params.beta_eps: must be finite and >= 0");
    if (!(c.cnot.epsilon > 0.0))
      bad.push_back("params.epsilon: must be positive");
  } else if (c.model == "three_level") {
    check_keys(params,
               {"hw1", "hw2", "beta1", "beta2", "beta3", "gamma1", "gamma2",
                "gamma3"},
               "params", bad);
    read_num(params, "hw1", c.machine.hw1, "params", bad);
    read_num(params, "hw2", c.machine.hw2, "params", bad);
    read_num(params, "beta1", c.machine.beta1, "params", bad);
    read_num(params, "beta2", c.machine.beta2, "params", bad);
    read_num(params, "beta3", c.machine.beta3, "params", bad);
    read_num(params, "gamma1", c.machine.gamma1, "params", bad);
    read_num(params, "gamma2", c.machine.gamma2, "params", bad);
    read_num(params, "gamma3", c.machine.gamma3, "params", bad);
    if (!(c.machine.hw1 > 0.0)) bad.push_back("params.hw1: must be positive");
    if (!(c.machine.hw2 > 0.0)) bad.push_back("params.hw2: must be positive");
    if (!(c.machine.beta1 > 0.0))
      bad.push_back("params.beta1: must be positive");
    if (!(c.machine.beta2 > 0.0))
      bad.push_back("params.beta2: must be positive");
    if (!(c.machine.beta3 > 0.0))
      bad.push_back("params.beta3: must be positive");
    if (!(c.machine.gamma1 > 0.0))
      bad.push_back("params.gamma1: must be positive");
    if (!(c.machine.gamma2 > 0.0))
      bad.push_back("params.gamma2: must be positive");
    if (!(c.machine.gamma3 > 0.0))
      bad.push_back("params.gamma3: must be positive");
  } else if (c.model == "cavity") {
    check_keys(params, {"omega", "eps", "gamma0", "beta", "n_max"}, "params",
               bad);
    read_num(params, "omega", c.cavity.omega, "params", bad);
    read_num(params, "gamma0", c.cavity.gamma0, "params", bad);
    read_num(params, "beta", c.cavity.beta, "params", bad);
    if (params.contains("eps")) {
      const json& e = params["eps"];
      if (e.is_number())
        c.cavity.eps = Complex(e.get<double>(), 0.0);
      else if (e.is_array() && e.size() == 2 && e[0].is_number() &&
               e[1].is_number())
        c.cavity.eps = Complex(e[0].get<double>(), e[1].get<double>());
      else
        bad.push_back("params.eps: must be a number or a [re, im] pair");
    }
    if (params.contains("n_max")) {
      if (!params["n_max"].is_number_integer())
        bad.push_back("params.n_max: must be an integer");
      else
        c.cavity.n_max = params["n_max"].get<int>();
    }
    if (!(c.cavity.omega > 0.0))
      bad.push_back("params.omega: must be positive");
    if (!(c.cavity.gamma0 > 0.0))
      bad.push_back("params.gamma0: must be positive");
    if (!(c.cavity.beta > 0.0)) bad.push_back("params.beta: must be positive");
    if (c.cavity.n_max < 8) bad.push_back("params.n_max: must be at least 8");
    if (c.cavity.gamma0 > 0.0) {
      const double a = std::abs(c.cavity.alpha());
      const int floor_n = static_cast<int>(std::ceil(4.0 * a * a + 10.0));
      if (c.cavity.n_max < floor_n)
        bad.push_back("params.n_max: " + std::to_string(c.cavity.n_max) +
                      " is too small for displacement amplitude " +
                      format17(a) + "; need at least " +
                      std::to_string(floor_n));
    }
  }

  json runj = json::object();
  bool have_run = false;
  if (!j.contains("run"))
    bad.push_back("run: required object with at least a mode");
  else if (!j["run"].is_object())
    bad.push_back("run: must be an object");
  else {
    runj = j["run"];
    have_run = true;
  }

  bool have_mode = false;
  if (have_run) {
    check_keys(runj,
               {"mode", "trajectories", "seed", "dt", "t_final", "stride",
                "bin_width", "backward_init", "initial"},
               "run", bad);
    if (!runj.contains("mode") || !runj["mode"].is_string()) {
      bad.push_back(
          "run.mode: required, one of \"enumerate\", \"sample\", "
          "\"integrate\", \"unravel\"");
    } else {
      const std::string ms = runj["mode"].get<std::string>();
      have_mode = true;
      if (ms == "enumerate")
        c.mode = RunMode::enumerate;
      else if (ms == "sample")
        c.mode = RunMode::sample;
      else if (ms == "integrate")
        c.mode = RunMode::integrate;
      else if (ms == "unravel")
        c.mode = RunMode::unravel;
      else {
        have_mode = false;
        bad.push_back("run.mode: unknown mode '" + ms + "'");
      }
    }
  }

  const bool measurement_mode =
      have_mode && (c.mode == RunMode::enumerate || c.mode == RunMode::sample);
  const bool dynamic_mode =
      have_mode && (c.mode == RunMode::integrate || c.mode == RunMode::unravel);

  if (have_mode && model_ok) {
    if (measurement_mode && c.model != "cnot")
      bad.push_back(std::string("run.mode: '") + mode_name(c.mode) +
                    "' applies to the cnot model only");
    if (dynamic_mode && c.model == "cnot")
      bad.push_back(std::string("run.mode: '") + mode_name(c.mode) +
                    "' does not apply to the cnot model");
  }

  if (have_run) {
    if (runj.contains("trajectories")) {
      if (!runj["trajectories"].is_number_integer()) {
        bad.push_back("run.trajectories: must be an integer");
      } else {
        c.trajectories = runj["trajectories"].get<long long>();
        if (c.trajectories < 1 || c.trajectories > 1000000000LL)
          bad.push_back("run.trajectories: must lie in [1, 1e9]");
      }
    }
    if (runj.contains("seed")) {
      if (!runj["seed"].is_number_integer() ||
          (runj["seed"].is_number_integer() && !runj["seed"].is_number_unsigned() &&
           runj["seed"].get<long long>() < 0))
        bad.push_back("run.seed: must be a non-negative integer");
      else
        c.seed = runj["seed"].get<std::uint64_t>();
    }
    read_num(runj, "dt", c.dt, "run", bad);
    read_num(runj, "t_final", c.t_final, "run", bad);
    read_num(runj, "bin_width", c.bin_width, "run", bad);
    if (runj.contains("stride")) {
      if (!runj["stride"].is_number_integer())
        bad.push_back("run.stride: must be an integer");
      else
        c.stride = runj["stride"].get<int>();
    }
    if (runj.contains("backward_init")) {
      const json& bi = runj["backward_init"];
      const std::string v = bi.is_string() ? bi.get<std::string>() : "";
      if (v == "inverted_correlated")
        c.backward_init = BackwardInit::inverted_correlated;
      else if (v == "product")
        c.backward_init = BackwardInit::product;
      else if (v == "reset")
        c.backward_init = BackwardInit::reset;
      else
        bad.push_back(
            "run.backward_init: must be one of \"inverted_correlated\", "
            "\"product\", \"reset\"");
      if (have_mode && !measurement_mode)
        bad.push_back(
            "run.backward_init: applies to modes 'enumerate' and 'sample' "
            "only");
    }
    if (runj.contains("initial")) {
      const json& in = runj["initial"];
      c.initial = in.is_string() ? in.get<std::string>() : "";
      if (c.initial != "ground" && c.initial != "thermal")
        bad.push_back(
            "run.initial: must be \"ground\" or \"thermal\"");
      if (have_mode && !dynamic_mode)
        bad.push_back(
            "run.initial: applies to modes 'integrate' and 'unravel' only");
    }
    if (have_mode) {
      if (measurement_mode && runj.contains("dt"))
        bad.push_back(std::string("run.dt: does not apply to mode '") +
                      mode_name(c.mode) + "'");
      if (measurement_mode && runj.contains("t_final"))
        bad.push_back(std::string("run.t_final: does not apply to mode '") +
                      mode_name(c.mode) + "'");
      if (c.mode != RunMode::integrate && runj.contains("stride"))
        bad.push_back("run.stride: applies to mode 'integrate' only");
      if (c.mode != RunMode::sample && c.mode != RunMode::unravel &&
          runj.contains("bin_width"))
        bad.push_back(
            "run.bin_width: applies to sampled histograms only (modes "
            "'sample' and 'unravel')");
    }
  }

  if (dynamic_mode) {
    if (!(c.dt > 0.0) || !std::isfinite(c.dt))
      bad.push_back(std::string("run.dt: a positive step is required for "
                                "mode '") +
                    mode_name(c.mode) + "'");
    if (!(c.t_final > 0.0) || !std::isfinite(c.t_final))
      bad.push_back(std::string("run.t_final: a positive span is required "
                                "for mode '") +
                    mode_name(c.mode) + "'");
    if (c.dt > 0.0 && c.t_final > 0.0 && c.dt > c.t_final)
      bad.push_back("run.dt: must not exceed t_final");
    if (c.initial.empty())
      c.initial = (c.model == "cavity") ? "thermal" : "ground";
  }
  if (c.stride < 1) bad.push_back("run.stride: must be at least 1");
  if (c.bin_width != 0.0 && !(c.bin_width > 0.0 && std::isfinite(c.bin_width)))
    bad.push_back("run.bin_width: must be positive");

  if (!j.contains("outputs")) {
    bad.push_back(
        "outputs: required array naming histogram, ft_report, or rates");
  } else if (!j["outputs"].is_array()) {
    bad.push_back("outputs: must be an array of strings");
  } else {
    for (const auto& o : j["outputs"]) {
      if (!o.is_string()) {
        bad.push_back("outputs: entries must be strings");
        continue;
      }
      const std::string name = o.get<std::string>();
      if (name != "histogram" && name != "ft_report" && name != "rates") {
        bad.push_back("outputs: unknown entry '" + name + "'");
        continue;
      }
      if (!contains_str(c.outputs, name)) c.outputs.push_back(name);
    }
    if (c.outputs.empty())
      bad.push_back("outputs: must name at least one file");
    if (have_mode) {
      for (const auto& name : c.outputs) {
        if (name == "rates" && c.mode != RunMode::integrate)
          bad.push_back("outputs: 'rates' needs mode 'integrate'");
        if (name != "rates" && c.mode == RunMode::integrate)
          bad.push_back("outputs: '" + name +
                        "' is not produced by mode 'integrate'");
      }
    }
  }

  if (!bad.empty()) {
    std::string msg = "qep: parse_config: " + std::to_string(bad.size()) +
                      " violation(s):";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw std::invalid_argument(msg);
  }
  c.hash = config_hash(text);
  return c;
}

namespace {

bool wants(const ExperimentConfig& c, const char* what) {
  return contains_str(c.outputs, what);
}

FtLine ft_line(const FtEstimate& e) {
  return FtLine{e.value, e.std_error, e.available};
}

std::vector<HistogramRow> merge_exact(std::vector<std::pair<double, double>> vp) {
  std::sort(vp.begin(), vp.end());
  std::vector<HistogramRow> rows;
  std::size_t i = 0;
  while (i < vp.size()) {
    const double anchor = vp[i].first;
    double wsum = 0.0, vsum = 0.0;
    std::size_t k = i;
    while (k < vp.size() && vp[k].first - anchor <= 1e-12) {
      vsum += vp[k].first * vp[k].second;
      wsum += vp[k].second;
      ++k;
    }
    rows.push_back({wsum > 0.0 ? vsum / wsum : anchor, wsum});
    i = k;
  }
  return rows;
}

std::vector<HistogramRow> bin_sampled(std::vector<double> xs, double width) {
  if (xs.empty()) return {};
  const double n = static_cast<double>(xs.size());
  std::sort(xs.begin(), xs.end());
  if (!(width > 0.0)) {
    const std::size_t last = xs.size() - 1;
    const double iqr = xs[(3 * last) / 4] - xs[last / 4];
    width = 2.0 * iqr / std::cbrt(n);
  }
  if (!(width > 0.0) || !std::isfinite(width) ||
      xs.back() - xs.front() < 1e-12) {
    std::vector<std::pair<double, double>> vp;
    vp.reserve(xs.size());
    for (const double x : xs) vp.emplace_back(x, 1.0 / n);
    return merge_exact(std::move(vp));
  }
  const double lo = xs.front();
  std::map<long long, long long> counts;
  for (const double x : xs)
    ++counts[static_cast<long long>(std::floor((x - lo) / width))];
  std::vector<HistogramRow> rows;
  rows.reserve(counts.size());
  for (const auto& [k, cnt] : counts)
    rows.push_back(
        {lo + (static_cast<double>(k) + 0.5) * width, static_cast<double>(cnt) / n});
  return rows;
}

void run_cnot_measurement(const ExperimentConfig& c, ResultBundle& b) {
  BipartiteProcess p = build_cnot(c.cnot);
  p.backward_init = c.backward_init;
  const ResolvedBipartite rp = resolve(p);
  if (c.mode == RunMode::enumerate) {
    const std::vector<TrajectoryRecord> recs = forward_distribution(rp);
    b.steps = static_cast<long long>(recs.size());
    std::vector<std::pair<double, double>> vp;
    vp.reserve(recs.size());
    for (const auto& rec : recs)
      vp.emplace_back(entropy_ledger(rec, rp).delta_s, rec.p);
    b.histogram = merge_exact(std::move(vp));
    b.integral_total = ft_line(verify_integral_ft(recs, FtKind::total));
    b.integral_adiabatic = ft_line(verify_integral_ft(recs, FtKind::adiabatic));
    b.integral_nonadiabatic =
        ft_line(verify_integral_ft(recs, FtKind::nonadiabatic));
  } else {
    const std::vector<TrajectoryRecord> recs =
        sample_trajectories(p, static_cast<int>(c.trajectories), c.seed);
    b.steps = static_cast<long long>(recs.size());
    std::vector<double> xs;
    xs.reserve(recs.size());
    for (const auto& rec : recs)
      xs.push_back(entropy_ledger(rec, rp).delta_s);
    b.histogram = bin_sampled(std::move(xs), c.bin_width);
    b.integral_total = ft_line(verify_integral_ft(recs, FtKind::total, true));
    b.integral_adiabatic =
        ft_line(verify_integral_ft(recs, FtKind::adiabatic, true));
    b.integral_nonadiabatic =
        ft_line(verify_integral_ft(recs, FtKind::nonadiabatic, true));
  }
}

DensityOperator diag_state(const RVector& w) {
  const int d = static_cast<int>(w.size());
  Matrix m = Matrix::Zero(d, d);
  for (int i = 0; i < d; ++i) m(i, i) = w(i);
  return DensityOperator{std::move(m), {d}};
}

struct DynamicSetup {
  LindbladModel m;
  DensityOperator rho0;
};

DynamicSetup dynamic_setup(const ExperimentConfig& c) {
  DynamicSetup s;
  if (c.model == "three_level") {
    s.m = build_machine(c.machine);
    if (c.initial == "thermal") {
      RVector w(3);
      w << 1.0, std::exp(-c.machine.beta3 * c.machine.hw1),
          std::exp(-c.machine.beta3 * c.machine.hw3());
      w /= w.sum();
      s.rho0 = diag_state(w);
    } else {
      RVector w = RVector::Zero(3);
      w(0) = 1.0;
      s.rho0 = diag_state(w);
    }
  } else {
    s.m = build_cavity(c.cavity);
    if (c.initial == "thermal") {
      RVector w(c.cavity.n_max);
      for (int n = 0; n < c.cavity.n_max; ++n)
        w(n) = std::exp(-c.cavity.beta * c.cavity.omega * n);
      w /= w.sum();
      s.rho0 = diag_state(w);
    } else {
      RVector w = RVector::Zero(c.cavity.n_max);
      w(0) = 1.0;
      s.rho0 = diag_state(w);
    }
  }
  if (!s.m.ladder) stamp_jump_gaps(s.m);
  return s;
}

ProjectiveBasis number_basis(int d) {
  ProjectiveBasis b;
  b.states.reserve(d);
  for (int i = 0; i < d; ++i) {
    Vector v = Vector::Zero(d);
    v(i) = 1.0;
    b.states.push_back(std::move(v));
  }
  return b;
}

void run_integrate(const ExperimentConfig& c, ResultBundle& b) {
  const DynamicSetup s = dynamic_setup(c);
  integrate_callback(
      s.m, s.rho0, c.t_final, c.dt,
      [&](double t, const Matrix& rho) {
        const RatesSample rs = entropy_rates(s.m, rho, t);
        const EnergyRates er = energy_rates(s.m, rho);
        b.rates.push_back({t, rs.s_dot, rs.s_dot_i, rs.s_dot_a, rs.s_dot_na,
                           er.w_dot, er.q_dot, er.u_dot, er.x_dot});
      },
      c.stride);
  b.steps = static_cast<long long>(std::ceil(c.t_final / c.dt - 1e-9));
}

void run_unravel(const ExperimentConfig& c, ResultBundle& b) {
  const DynamicSetup s = dynamic_setup(c);
  const int d = s.m.dim;

  IntegrateOptions io;
  io.dt = c.dt;
  const Matrix rho_f = integrate(s.m, s.rho0, {c.t_final}, io).front();

  const ProjectiveBasis basis = number_basis(d);
  UnravelOptions uo;
  uo.method = UnravelMethod::gillespie;
  uo.initial_basis = basis;
  const UnravelResult ur =
      unravel(s.m, s.rho0, c.t_final, 0.0, static_cast<int>(c.trajectories),
              c.seed, basis, uo);

  std::vector<EntropyLedger> ledgers;
  std::vector<double> xs;
  ledgers.reserve(ur.trajectories.size());
  xs.reserve(ur.trajectories.size());
  long long events = 0;
  for (const auto& traj : ur.trajectories) {
    const double pn = s.rho0.m(traj.n, traj.n).real();
    const double pm = rho_f(traj.m, traj.m).real();
    ledgers.push_back(trajectory_entropies(traj, s.m, pn, pm));
    xs.push_back(ledgers.back().delta_s);
    events += static_cast<long long>(traj.events.size());
  }
  b.steps = events;
  b.histogram = bin_sampled(std::move(xs), c.bin_width);
  b.integral_total = ft_line(verify_integral_ft(ledgers, FtKind::total));
  b.integral_adiabatic = ft_line(verify_integral_ft(ledgers, FtKind::adiabatic));
  b.integral_nonadiabatic =
      ft_line(verify_integral_ft(ledgers, FtKind::nonadiabatic));
}

std::string escape_json(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (const char ch : s) {
    if (ch == '"' || ch == '\\') out.push_back('\\');
    out.push_back(ch);
  }
  return out;
}

}  // namespace

ResultBundle run(const ExperimentConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  ResultBundle b;
  b.hash = c.hash;
  b.seed = c.seed;
  b.version = version();
  b.overrides = c.overrides;
  b.has_histogram = wants(c, "histogram");
  b.has_rates = wants(c, "rates");
  b.has_ft = wants(c, "ft_report");

  switch (c.mode) {
    case RunMode::enumerate:
    case RunMode::sample:
      run_cnot_measurement(c, b);
      break;
    case RunMode::integrate:
      run_integrate(c, b);
      break;
    case RunMode::unravel:
      run_unravel(c, b);
      break;
  }
  b.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return b;
}

void emit(const ResultBundle& b, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec)
    throw std::runtime_error("qep: emit: cannot create '" + out_dir +
                             "': " + ec.message());

  const auto write_file = [&](const char* name, const std::string& body) {
    const fs::path path = fs::path(out_dir) / name;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << body;
    f.flush();
    if (!f.good())
      throw std::runtime_error("qep: emit: write failed for '" +
                               path.string() + "'");
  };

  const std::string provenance = "# config_hash=" + b.hash + "\n";

  if (b.has_histogram) {
    std::string s = provenance + "value,probability\n";
    for (const auto& row : b.histogram)
      s += format17(row.value) + "," + format17(row.probability) + "\n";
    write_file("histogram.csv", s);
  }
  if (b.has_rates) {
    std::string s =
        provenance + "t,S_dot,S_dot_i,S_dot_a,S_dot_na,W_dot,Q_dot,U_dot,X_dot\n";
    for (const auto& r : b.rates) {
      s += format17(r.t) + "," + format17(r.s_dot) + "," + format17(r.s_dot_i) +
           "," + format17(r.s_dot_a) + "," + format17(r.s_dot_na) + "," +
           format17(r.w_dot) + "," + format17(r.q_dot) + "," +
           format17(r.u_dot) + "," + format17(r.x_dot) + "\n";
    }
    write_file("rates.csv", s);
  }
  if (b.has_ft) {
    const auto ft_obj = [](const FtLine& f) {
      return std::string("{\"available\": ") + (f.available ? "true" : "false") +
             ", \"stderr\": " + format17(f.std_error) +
             ", \"value\": " + format17(f.value) + "}";
    };
    std::string s = "{\n";
    s += "  \"config_hash\": \"" + b.hash + "\",\n";
    s += "  \"integral_adiabatic\": " + ft_obj(b.integral_adiabatic) + ",\n";
    s += "  \"integral_nonadiabatic\": " + ft_obj(b.integral_nonadiabatic) +
         ",\n";
    s += "  \"integral_total\": " + ft_obj(b.integral_total) + ",\n";
    s += "  \"overrides\": [";
    for (std::size_t i = 0; i < b.overrides.size(); ++i) {
      if (i) s += ", ";
      s += "\"" + escape_json(b.overrides[i]) + "\"";
    }
    s += "],\n";
    s += "  \"seed\": " + std::to_string(b.seed) + ",\n";
    s += "  \"version\": \"" + escape_json(b.version) + "\"\n";
    s += "}\n";
    write_file("ft_report.json", s);
  }
}

std::string kraus_to_json(const KrausMap& map) {
  std::string s = "{\"dim\": " + std::to_string(map.dim) + ", \"ops\": [";
  for (std::size_t k = 0; k < map.ops.size(); ++k) {
    const KrausOperator& op = map.ops[k];
    if (k) s += ", ";
    s += "{\"label\": \"" + escape_json(op.label) + "\"";
    if (op.sigma_e) s += ", \"sigma_e\": " + format17(*op.sigma_e);
    if (op.dphi) s += ", \"dphi\": " + format17(*op.dphi);
    s += ", \"m\": [";
    for (int r = 0; r < op.m.rows(); ++r) {
      if (r) s += ", ";
      s += "[";
      for (int col = 0; col < op.m.cols(); ++col) {
        if (col) s += ", ";
        s += "[" + format17(op.m(r, col).real()) + ", " +
             format17(op.m(r, col).imag()) + "]";
      }
      s += "]";
    }
    s += "]}";
  }
  s += "]}";
  return s;
}

KrausMap kraus_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(
        std::string("qep: kraus_from_json: malformed JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("dim") || !j["dim"].is_number_integer() ||
      !j.contains("ops") || !j["ops"].is_array())
    throw std::invalid_argument(
        "qep: kraus_from_json: expected an object with dim and ops");
  KrausMap map;
  map.dim = j["dim"].get<int>();
  if (map.dim <= 0)
    throw std::invalid_argument("qep: kraus_from_json: dim must be positive");
  for (const auto& o : j["ops"]) {
    if (!o.is_object() || !o.contains("m") || !o["m"].is_array())
      throw std::invalid_argument(
          "qep: kraus_from_json: every op needs a matrix under 'm'");
    KrausOperator op;
    if (o.contains("label")) {
      if (!o["label"].is_string())
        throw std::invalid_argument(
            "qep: kraus_from_json: label must be a string");
      op.label = o["label"].get<std::string>();
    }
    if (o.contains("sigma_e")) {
      if (!o["sigma_e"].is_number())
        throw std::invalid_argument(
            "qep: kraus_from_json: sigma_e must be a number");
      op.sigma_e = o["sigma_e"].get<double>();
    }
    if (o.contains("dphi")) {
      if (!o["dphi"].is_number())
        throw std::invalid_argument(
            "qep: kraus_from_json: dphi must be a number");
      op.dphi = o["dphi"].get<double>();
    }
    const json& rows = o["m"];
    if (static_cast<int>(rows.size()) != map.dim)
      throw std::invalid_argument(
          "qep: kraus_from_json: matrix rows do not match dim");
    op.m = Matrix::Zero(map.dim, map.dim);
    for (int r = 0; r < map.dim; ++r) {
      const json& row = rows[r];
      if (!row.is_array() || static_cast<int>(row.size()) != map.dim)
        throw std::invalid_argument(
            "qep: kraus_from_json: matrices must be square");
      for (int col = 0; col < map.dim; ++col) {
        const json& cell = row[col];
        if (!cell.is_array() || cell.size() != 2 || !cell[0].is_number() ||
            !cell[1].is_number())
          throw std::invalid_argument(
              "qep: kraus_from_json: entries must be [re, im] pairs");
        op.m(r, col) = Complex(cell[0].get<double>(), cell[1].get<double>());
      }
    }
    map.ops.push_back(std::move(op));
  }
  return map;
}

}  // namespace qep
