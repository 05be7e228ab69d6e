// SPDX-License-Identifier: MIT

#include "qep/experiment.hpp"

#include "doctest.h"
#include "test_util.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

using qep::BackwardInit;
using qep::Complex;
using qep::ExperimentConfig;
using qep::FtLine;
using qep::HistogramRow;
using qep::KrausMap;
using qep::KrausOperator;
using qep::Matrix;
using qep::ResultBundle;
using qep::RunMode;

namespace {

std::string spec_example() {
  return R"({"model":"cnot","params":{"alpha":0.8,"beta_eps":2.5},)"
         R"("run":{"mode":"enumerate"},"outputs":["histogram","ft_report"]})";
}

std::string product_enumerate() {
  return R"({"model":"cnot","params":{"alpha":0.8,"beta_eps":2.5},)"
         R"("run":{"mode":"enumerate","backward_init":"product"},)"
         R"("outputs":["histogram","ft_report"]})";
}

double histogram_total(const std::vector<HistogramRow>& rows) {
  double t = 0.0;
  for (const auto& r : rows) t += r.probability;
  return t;
}

double histogram_mean(const std::vector<HistogramRow>& rows) {
  double m = 0.0;
  for (const auto& r : rows) m += r.value * r.probability;
  return m;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(static_cast<bool>(f));
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::filesystem::path fresh_dir(const char* leaf) {
  const auto dir = std::filesystem::temp_directory_path() / leaf;
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("configs validate with every violation reported") {
  const ExperimentConfig c = qep::parse_config(spec_example());
  CHECK(c.model == "cnot");
  CHECK(std::abs(c.cnot.alpha - 0.8) < 1e-15);
  CHECK(std::abs(c.cnot.beta_eps - 2.5) < 1e-15);
  CHECK(c.mode == RunMode::enumerate);
  CHECK(c.backward_init == BackwardInit::inverted_correlated);
  CHECK(c.trajectories == 10000);
  CHECK(c.seed == 1);
  REQUIRE(c.outputs.size() == 2);
  CHECK(c.outputs[0] == "histogram");
  CHECK(c.outputs[1] == "ft_report");
  CHECK(c.hash.size() == 16);

  CHECK_THROWS_WITH_AS(qep::parse_config("not json"),
                       doctest::Contains("malformed"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(qep::parse_config("[1, 2]"),
                       doctest::Contains("must be a JSON object"),
                       std::invalid_argument);

  CHECK_THROWS_WITH_AS(qep::parse_config("{}"),
                       doctest::Contains("3 violation(s)"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(qep::parse_config("{}"), doctest::Contains("model:"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(qep::parse_config("{}"), doctest::Contains("run:"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(qep::parse_config("{}"), doctest::Contains("outputs:"),
                       std::invalid_argument);

  const std::string small_cavity =
      R"({"model":"cavity","params":{"eps":0.4,"gamma0":0.2,"n_max":16},)"
      R"("run":{"mode":"unravel","dt":0.05,"t_final":1.0},)"
      R"("outputs":["ft_report"]})";
  CHECK_THROWS_WITH_AS(qep::parse_config(small_cavity),
                       doctest::Contains("need at least 74"),
                       std::invalid_argument);

  CHECK_THROWS_WITH_AS(
      qep::parse_config(R"({"model":"ising","run":{"mode":"enumerate"},)"
                        R"("outputs":["histogram"]})"),
      doctest::Contains("unknown name 'ising'"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      qep::parse_config(R"({"model":"cnot","extra":1,)"
                        R"("run":{"mode":"enumerate"},)"
                        R"("outputs":["histogram"]})"),
      doctest::Contains("unknown key 'extra'"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      qep::parse_config(R"({"model":"cnot","params":{"kappa":1},)"
                        R"("run":{"mode":"enumerate"},)"
                        R"("outputs":["histogram"]})"),
      doctest::Contains("params: unknown key 'kappa'"), std::invalid_argument);

  const std::string cnot_integrate =
      R"({"model":"cnot","run":{"mode":"integrate","dt":0.1,"t_final":1.0},)"
      R"("outputs":["rates"]})";
  CHECK_THROWS_WITH_AS(qep::parse_config(cnot_integrate),
                       doctest::Contains("does not apply to the cnot model"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      qep::parse_config(R"({"model":"three_level",)"
                        R"("run":{"mode":"enumerate"},)"
                        R"("outputs":["histogram"]})"),
      doctest::Contains("applies to the cnot model only"),
      std::invalid_argument);

  const std::string no_dt =
      R"({"model":"three_level","run":{"mode":"integrate","t_final":1.0},)"
      R"("outputs":["rates"]})";
  CHECK_THROWS_WITH_AS(qep::parse_config(no_dt),
                       doctest::Contains("run.dt: a positive step"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      qep::parse_config(
          R"({"model":"three_level","run":{"mode":"integrate","dt":0.1,)"
          R"("t_final":1.0,"stride":0},"outputs":["rates"]})"),
      doctest::Contains("run.stride: must be at least 1"),
      std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      qep::parse_config(
          R"({"model":"cnot","run":{"mode":"sample","trajectories":0},)"
          R"("outputs":["histogram"]})"),
      doctest::Contains("[1, 1e9]"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      qep::parse_config(
          R"({"model":"cnot","run":{"mode":"sample","bin_width":-1},)"
          R"("outputs":["histogram"]})"),
      doctest::Contains("run.bin_width: must be positive"),
      std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      qep::parse_config(
          R"({"model":"cnot","run":{"mode":"enumerate",)"
          R"("backward_init":"custom"},"outputs":["histogram"]})"),
      doctest::Contains("run.backward_init"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      qep::parse_config(
          R"({"model":"three_level","run":{"mode":"unravel","dt":0.1,)"
          R"("t_final":1.0,"initial":"hot"},"outputs":["ft_report"]})"),
      doctest::Contains("run.initial"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      qep::parse_config(R"({"model":"cnot","run":{"mode":"enumerate"},)"
                        R"("outputs":["rates"]})"),
      doctest::Contains("'rates' needs mode 'integrate'"),
      std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      qep::parse_config(
          R"({"model":"three_level","run":{"mode":"integrate","dt":0.1,)"
          R"("t_final":1.0},"outputs":["histogram"]})"),
      doctest::Contains("not produced by mode 'integrate'"),
      std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      qep::parse_config(R"({"model":"cnot","run":{"mode":"enumerate",)"
                        R"("dt":0.1},"outputs":["histogram"]})"),
      doctest::Contains("run.dt: does not apply"), std::invalid_argument);

  const ExperimentConfig cav = qep::parse_config(
      R"({"model":"cavity","params":{"eps":[0.0,0.05],"gamma0":0.2,)"
      R"("beta":0.6,"n_max":40},"run":{"mode":"unravel","dt":0.05,)"
      R"("t_final":5.0},"outputs":["ft_report"]})");
  CHECK(cav.cavity.eps == Complex(0.0, 0.05));
  CHECK(cav.initial == "thermal");

  const ExperimentConfig mach = qep::parse_config(
      R"({"model":"three_level","run":{"mode":"integrate","dt":0.1,)"
      R"("t_final":1.0},"outputs":["rates"]})");
  CHECK(mach.initial == "ground");
}

TEST_CASE("equivalent configs hash identically") {
  const std::string reordered =
      "{\n  \"outputs\": [\"histogram\", \"ft_report\"],\n"
      "  \"run\": {\"mode\": \"enumerate\"},\n"
      "  \"params\": {\"beta_eps\": 2.5, \"alpha\": 0.8},\n"
      "  \"model\": \"cnot\"\n}";
  const std::string h = qep::config_hash(spec_example());
  CHECK(h == qep::config_hash(reordered));
  CHECK(h.size() == 16);
  for (const char ch : h)
    CHECK(std::isxdigit(static_cast<unsigned char>(ch)));

  const std::string changed =
      R"({"model":"cnot","params":{"alpha":0.81,"beta_eps":2.5},)"
      R"("run":{"mode":"enumerate"},"outputs":["histogram","ft_report"]})";
  CHECK(h != qep::config_hash(changed));
  CHECK(qep::parse_config(spec_example()).hash == h);
  CHECK_THROWS_WITH_AS(qep::config_hash("nope"), doctest::Contains("malformed"),
                       std::invalid_argument);
}

TEST_CASE("enumeration carries the exact distribution") {
  const ResultBundle b = qep::run(qep::parse_config(product_enumerate()));
  CHECK(b.has_histogram);
  CHECK(b.has_ft);
  CHECK(!b.has_rates);
  CHECK(b.steps == 8);
  CHECK(b.seed == 1);
  CHECK(b.version == std::string(qep::version()));

  REQUIRE(b.histogram.size() == 4);
  CHECK(std::abs(histogram_total(b.histogram) - 1.0) < 1e-12);
  CHECK(std::abs(histogram_mean(b.histogram) - 0.79267620338278388) < 1e-12);
  double top_p = 0.0, top_v = 0.0;
  for (const auto& row : b.histogram)
    if (row.probability > top_p) {
      top_p = row.probability;
      top_v = row.value;
    }
  CHECK(std::abs(top_v - 1.2020441111695148) < 1e-12);
  CHECK(std::abs(top_p - 0.83172763798087557) < 1e-12);

  CHECK(b.integral_total.available);
  CHECK(std::abs(b.integral_total.value - 1.0) < 1e-12);
  CHECK(b.integral_total.std_error == 0.0);
  // The reduced gate channel dephases in the computational basis, so its
  // fixed point is degenerate and no invariant state anchors the split.
  CHECK(!b.integral_adiabatic.available);
  CHECK(!b.integral_nonadiabatic.available);

  const ResultBundle inc = qep::run(qep::parse_config(spec_example()));
  CHECK(std::abs(histogram_total(inc.histogram) - 1.0) < 1e-12);
  CHECK(std::abs(histogram_mean(inc.histogram) - 0.36806420716849708) < 1e-12);
  CHECK(inc.integral_total.available);
  CHECK(std::abs(inc.integral_total.value - 1.0) < 1e-12);
}

TEST_CASE("sampling reproduces the enumeration") {
  const std::string text =
      R"({"model":"cnot","params":{"alpha":0.8,"beta_eps":2.5},)"
      R"("run":{"mode":"sample","trajectories":20000,"seed":5,)"
      R"("backward_init":"product"},"outputs":["histogram","ft_report"]})";
  const ExperimentConfig c = qep::parse_config(text);
  const ResultBundle b = qep::run(c);
  CHECK(b.steps == 20000);
  CHECK(std::abs(histogram_total(b.histogram) - 1.0) < 1e-9);
  CHECK(std::abs(histogram_mean(b.histogram) - 0.79267620338278388) < 0.05);
  CHECK(b.integral_total.available);
  CHECK(b.integral_total.std_error > 0.0);
  CHECK(std::abs(b.integral_total.value - 1.0) <
        4.0 * b.integral_total.std_error);

  const ResultBundle again = qep::run(c);
  REQUIRE(again.histogram.size() == b.histogram.size());
  for (std::size_t i = 0; i < b.histogram.size(); ++i) {
    CHECK(again.histogram[i].value == b.histogram[i].value);
    CHECK(again.histogram[i].probability == b.histogram[i].probability);
  }
  CHECK(again.integral_total.value == b.integral_total.value);
  CHECK(again.integral_total.std_error == b.integral_total.std_error);

  ExperimentConfig other = c;
  other.seed = 6;
  CHECK(qep::run(other).integral_total.value != b.integral_total.value);

  const std::string binned =
      R"({"model":"cnot","params":{"alpha":0.8,"beta_eps":2.5},)"
      R"("run":{"mode":"sample","trajectories":2000,"seed":5,)"
      R"("backward_init":"product","bin_width":0.5},)"
      R"("outputs":["histogram"]})";
  const ResultBundle w = qep::run(qep::parse_config(binned));
  REQUIRE(w.histogram.size() > 1);
  for (std::size_t i = 1; i < w.histogram.size(); ++i) {
    const double gap = w.histogram[i].value - w.histogram[i - 1].value;
    CHECK(std::abs(gap / 0.5 - std::round(gap / 0.5)) < 1e-9);
  }
}

TEST_CASE("relaxation rates land in the rates bundle") {
  const std::string text =
      R"({"model":"three_level","run":{"mode":"integrate","dt":0.05,)"
      R"("t_final":5.0,"stride":20},"outputs":["rates"]})";
  const ResultBundle b = qep::run(qep::parse_config(text));
  CHECK(b.has_rates);
  CHECK(!b.has_histogram);
  CHECK(b.steps == 100);
  REQUIRE(b.rates.size() == 6);
  CHECK(b.rates.front().t == 0.0);
  CHECK(std::abs(b.rates.back().t - 5.0) < 1e-9);
  for (std::size_t i = 1; i < b.rates.size(); ++i)
    CHECK(b.rates[i].t > b.rates[i - 1].t);
  for (const auto& r : b.rates) {
    CHECK(std::abs(r.w_dot) < 1e-15);
    CHECK(std::abs(r.x_dot) < 1e-15);
    CHECK(std::abs(r.u_dot - (r.w_dot + r.q_dot)) < 1e-15);
    CHECK(r.s_dot_i > -1e-12);
    CHECK(std::abs(r.s_dot_i - (r.s_dot_a + r.s_dot_na)) < 1e-12);
  }
  CHECK(b.rates.front().q_dot > 0.0);

  const std::string cav_text =
      R"({"model":"cavity","params":{"eps":0.1,"gamma0":0.2,"beta":1.0,)"
      R"("n_max":32},"run":{"mode":"integrate","dt":0.01,"t_final":2.0,)"
      R"("stride":50},"outputs":["rates"]})";
  const ExperimentConfig cc = qep::parse_config(cav_text);
  const ResultBundle cb = qep::run(cc);
  REQUIRE(cb.rates.size() == 5);
  const auto& last = cb.rates.back();
  CHECK(std::abs(last.t - 2.0) < 1e-9);

  qep::CavityParams cp;
  cp.eps = Complex(0.1, 0.0);
  cp.gamma0 = 0.2;
  cp.beta = 1.0;
  cp.n_max = 32;
  qep::RVector w(cp.n_max);
  for (int n = 0; n < cp.n_max; ++n) w(n) = std::exp(-cp.beta * cp.omega * n);
  w /= w.sum();
  Matrix g = Matrix::Zero(cp.n_max, cp.n_max);
  for (int n = 0; n < cp.n_max; ++n) g(n, n) = w(n);
  const qep::CavityRates closed =
      qep::cavity_transients(cp, qep::DensityOperator{g, {cp.n_max}}, 2.0);
  CHECK(std::abs(last.w_dot - closed.w_dot) < 1e-6);
  CHECK(std::abs(last.q_dot - closed.q_dot) < 1e-6);
  CHECK(std::abs(last.s_dot_a - closed.s_dot_a) < 1e-6);
  CHECK(std::abs(last.s_dot_na - closed.s_dot_na) < 1e-6);
}

TEST_CASE("unravel bundles report the split when the ladder allows it") {
  const std::string mach_text =
      R"({"model":"three_level","run":{"mode":"unravel","dt":0.1,)"
      R"("t_final":30.0,"trajectories":200,"seed":11,"initial":"thermal"},)"
      R"("outputs":["histogram","ft_report"]})";
  const ExperimentConfig mc = qep::parse_config(mach_text);
  const ResultBundle mb = qep::run(mc);
  CHECK(std::abs(histogram_total(mb.histogram) - 1.0) < 1e-9);
  for (const FtLine* line : {&mb.integral_total, &mb.integral_adiabatic,
                             &mb.integral_nonadiabatic}) {
    CHECK(line->available);
    CHECK(line->std_error > 0.0);
    CHECK(std::abs(line->value - 1.0) < 5.0 * line->std_error);
  }
  const ResultBundle mb2 = qep::run(mc);
  CHECK(mb2.integral_total.value == mb.integral_total.value);
  CHECK(mb2.integral_adiabatic.value == mb.integral_adiabatic.value);

  const std::string cav_text =
      R"({"model":"cavity","params":{"eps":0.05,"gamma0":0.2,"beta":0.6,)"
      R"("n_max":40},"run":{"mode":"unravel","dt":0.05,"t_final":5.0,)"
      R"("trajectories":50,"seed":3},"outputs":["ft_report"]})";
  const ResultBundle cb = qep::run(qep::parse_config(cav_text));
  CHECK(cb.integral_total.available);
  CHECK(std::abs(cb.integral_total.value - 1.0) <
        5.0 * cb.integral_total.std_error);
  // The coherent drive breaks the jump ladder, so only the total theorem
  // is testable on cavity trajectories.
  CHECK(!cb.integral_adiabatic.available);
  CHECK(!cb.integral_nonadiabatic.available);
}

TEST_CASE("emitted files are byte stable and cross referenced") {
  const ExperimentConfig c = qep::parse_config(product_enumerate());
  const ResultBundle b = qep::run(c);
  const auto dir_a = fresh_dir("qep_emit_a");
  const auto dir_b = fresh_dir("qep_emit_b");
  qep::emit(b, dir_a.string());
  qep::emit(b, dir_b.string());

  const std::string hist = slurp(dir_a / "histogram.csv");
  CHECK(hist == slurp(dir_b / "histogram.csv"));
  CHECK(hist.rfind("# config_hash=" + b.hash + "\n", 0) == 0);
  CHECK(hist.find("value,probability\n") != std::string::npos);
  CHECK(hist.find('\r') == std::string::npos);
  CHECK(hist.back() == '\n');

  const std::string report = slurp(dir_a / "ft_report.json");
  CHECK(report == slurp(dir_b / "ft_report.json"));
  CHECK(report.find("\"config_hash\": \"" + b.hash + "\"") !=
        std::string::npos);
  CHECK(report.find("\"integral_total\"") != std::string::npos);
  CHECK(report.find("\"integral_adiabatic\"") != std::string::npos);
  CHECK(report.find("\"integral_nonadiabatic\"") != std::string::npos);
  CHECK(report.find("\"seed\": 1") != std::string::npos);
  CHECK(report.find("\"available\": false") != std::string::npos);
  CHECK(report.find('\r') == std::string::npos);
  CHECK(report.back() == '\n');
  CHECK(!std::filesystem::exists(dir_a / "rates.csv"));

  const std::string rates_text =
      R"({"model":"three_level","run":{"mode":"integrate","dt":0.1,)"
      R"("t_final":1.0},"outputs":["rates"]})";
  const ResultBundle rb = qep::run(qep::parse_config(rates_text));
  const auto dir_c = fresh_dir("qep_emit_c");
  qep::emit(rb, dir_c.string());
  const std::string rates = slurp(dir_c / "rates.csv");
  CHECK(rates.find("t,S_dot,S_dot_i,S_dot_a,S_dot_na,W_dot,Q_dot,U_dot,X_dot\n") !=
        std::string::npos);
  CHECK(rates.rfind("# config_hash=" + rb.hash + "\n", 0) == 0);
  CHECK(!std::filesystem::exists(dir_c / "histogram.csv"));
  CHECK(!std::filesystem::exists(dir_c / "ft_report.json"));

  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
  std::filesystem::remove_all(dir_c);
}

TEST_CASE("seventeen digit formatting round trips") {
  const double probes[] = {0.1,          1.0 / 3.0, 0.16, 1e-300,
                           12345.678901234567, std::ldexp(1.0, -52),
                           -2.5000000000000004};
  for (const double v : probes) {
    const std::string s = qep::format17(v);
    CHECK(std::stod(s) == v);
  }
  CHECK(qep::format17(1.0) == "1");
  CHECK(qep::format17(0.0) == "0");
  CHECK(qep::format17(0.1) == "0.10000000000000001");
}

TEST_CASE("kraus maps round trip through json") {
  KrausMap map;
  map.dim = 2;
  KrausOperator a;
  a.m = Matrix::Zero(2, 2);
  a.m(0, 0) = Complex(0.6, 0.0);
  a.m(0, 1) = Complex(0.3, -0.4);
  a.m(1, 1) = Complex(1.0 / 3.0, 0.0);
  a.label = "decay \"x\"";
  a.sigma_e = 1.25;
  KrausOperator bb;
  bb.m = Matrix::Identity(2, 2) * Complex(0.0, 0.5);
  bb.label = "drift";
  bb.dphi = -0.75;
  map.ops = {a, bb};

  const std::string text = qep::kraus_to_json(map);
  const KrausMap back = qep::kraus_from_json(text);
  CHECK(back.dim == 2);
  REQUIRE(back.ops.size() == 2);
  CHECK(back.ops[0].label == a.label);
  REQUIRE(static_cast<bool>(back.ops[0].sigma_e));
  CHECK(*back.ops[0].sigma_e == 1.25);
  CHECK(!back.ops[0].dphi);
  REQUIRE(static_cast<bool>(back.ops[1].dphi));
  CHECK(*back.ops[1].dphi == -0.75);
  CHECK(!back.ops[1].sigma_e);
  for (int k = 0; k < 2; ++k)
    for (int r = 0; r < 2; ++r)
      for (int col = 0; col < 2; ++col)
        CHECK(back.ops[k].m(r, col) == map.ops[k].m(r, col));

  const qep::LindbladModel machine = qep::build_machine({});
  const KrausMap step = qep::step_kraus_map(machine, 0.05);
  const KrausMap step_back = qep::kraus_from_json(qep::kraus_to_json(step));
  CHECK(step_back.dim == step.dim);
  REQUIRE(step_back.ops.size() == step.ops.size());
  for (std::size_t k = 0; k < step.ops.size(); ++k) {
    CHECK(step_back.ops[k].label == step.ops[k].label);
    CHECK(step_back.ops[k].sigma_e == step.ops[k].sigma_e);
    CHECK((step_back.ops[k].m - step.ops[k].m).cwiseAbs().maxCoeff() == 0.0);
  }

  CHECK_THROWS_WITH_AS(qep::kraus_from_json("nope"),
                       doctest::Contains("malformed"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(qep::kraus_from_json("{}"),
                       doctest::Contains("expected an object"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(qep::kraus_from_json(R"({"dim":0,"ops":[]})"),
                       doctest::Contains("dim must be positive"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      qep::kraus_from_json(R"({"dim":2,"ops":[{"m":[[[1,0]]]}]})"),
      doctest::Contains("rows do not match dim"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      qep::kraus_from_json(
          R"({"dim":1,"ops":[{"m":[[[1]]]}]})"),
      doctest::Contains("[re, im] pairs"), std::invalid_argument);
}

}  // TEST_SUITE
