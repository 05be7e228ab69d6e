// SPDX-License-Identifier: MIT

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <complex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qep/experiment.hpp"

namespace py = pybind11;

namespace {

qep::BackwardInit backward_init_from(const std::string& name) {
  if (name == "inverted_correlated")
    return qep::BackwardInit::inverted_correlated;
  if (name == "product") return qep::BackwardInit::product;
  if (name == "reset") return qep::BackwardInit::reset;
  throw std::invalid_argument("qep: backward_init: unknown choice '" + name +
                              "'");
}

}  // namespace

PYBIND11_MODULE(pyqep, m) {
  m.doc() = "trajectory entropy production for open quantum systems";

  m.def("version", &qep::version, "library version string");
  m.def("config_hash", &qep::config_hash, py::arg("json_text"),
        "canonical hash of an experiment config");
  m.def("format17", &qep::format17, py::arg("value"),
        "shortest 17-significant-digit decimal form");

  py::class_<qep::HistogramRow>(m, "HistogramRow")
      .def_readonly("value", &qep::HistogramRow::value)
      .def_readonly("probability", &qep::HistogramRow::probability);

  py::class_<qep::RateRow>(m, "RateRow")
      .def_readonly("t", &qep::RateRow::t)
      .def_readonly("s_dot", &qep::RateRow::s_dot)
      .def_readonly("s_dot_i", &qep::RateRow::s_dot_i)
      .def_readonly("s_dot_a", &qep::RateRow::s_dot_a)
      .def_readonly("s_dot_na", &qep::RateRow::s_dot_na)
      .def_readonly("w_dot", &qep::RateRow::w_dot)
      .def_readonly("q_dot", &qep::RateRow::q_dot)
      .def_readonly("u_dot", &qep::RateRow::u_dot)
      .def_readonly("x_dot", &qep::RateRow::x_dot);

  py::class_<qep::FtLine>(m, "FtLine")
      .def_readonly("value", &qep::FtLine::value)
      .def_readonly("std_error", &qep::FtLine::std_error)
      .def_readonly("available", &qep::FtLine::available);

  py::class_<qep::ResultBundle>(m, "ResultBundle")
      .def_readonly("hash", &qep::ResultBundle::hash)
      .def_readonly("seed", &qep::ResultBundle::seed)
      .def_readonly("version", &qep::ResultBundle::version)
      .def_readonly("overrides", &qep::ResultBundle::overrides)
      .def_readonly("histogram", &qep::ResultBundle::histogram)
      .def_readonly("rates", &qep::ResultBundle::rates)
      .def_readonly("integral_total", &qep::ResultBundle::integral_total)
      .def_readonly("integral_adiabatic",
                    &qep::ResultBundle::integral_adiabatic)
      .def_readonly("integral_nonadiabatic",
                    &qep::ResultBundle::integral_nonadiabatic)
      .def_readonly("wall_seconds", &qep::ResultBundle::wall_seconds)
      .def_readonly("steps", &qep::ResultBundle::steps);

  m.def(
      "run_config",
      [](const std::string& text) { return qep::run(qep::parse_config(text)); },
      py::arg("json_text"), "parse a JSON experiment config and run it");

  m.def(
      "emit",
      [](const qep::ResultBundle& b, const std::string& out_dir) {
        qep::emit(b, out_dir);
      },
      py::arg("bundle"), py::arg("out_dir"),
      "write the configured result files into out_dir");

  m.def(
      "cnot_distribution",
      [](double alpha, double beta_eps, const std::string& backward_init) {
        qep::CnotParams cp;
        cp.alpha = alpha;
        cp.beta_eps = beta_eps;
        qep::BipartiteProcess p = qep::build_cnot(cp);
        p.backward_init = backward_init_from(backward_init);
        const qep::ResolvedBipartite rp = qep::resolve(p);
        std::vector<std::pair<double, double>> out;
        for (const auto& rec : qep::forward_distribution(rp))
          out.emplace_back(qep::entropy_ledger(rec, rp).delta_s, rec.p);
        return out;
      },
      py::arg("alpha") = 0.8, py::arg("beta_eps") = 2.5,
      py::arg("backward_init") = "inverted_correlated",
      "exact (delta_s, probability) pairs for one gate application");

  m.def(
      "cnot_work",
      [](double alpha, double beta_eps, double epsilon) {
        qep::CnotParams cp;
        cp.alpha = alpha;
        cp.beta_eps = beta_eps;
        cp.epsilon = epsilon;
        return qep::cnot_work(cp);
      },
      py::arg("alpha") = 0.8, py::arg("beta_eps") = 2.5,
      py::arg("epsilon") = 1.0, "average work done by one gate application");

  m.def(
      "machine_steady_state",
      [](double hw1, double hw2, double beta1, double beta2, double beta3,
         double gamma) {
        qep::MachineParams mp;
        mp.hw1 = hw1;
        mp.hw2 = hw2;
        mp.beta1 = beta1;
        mp.beta2 = beta2;
        mp.beta3 = beta3;
        mp.gamma1 = mp.gamma2 = mp.gamma3 = gamma;
        return qep::machine_steady_state(mp);
      },
      py::arg("hw1") = 1.0, py::arg("hw2") = 1.5, py::arg("beta1") = 5.0,
      py::arg("beta2") = 0.5, py::arg("beta3") = 4.0, py::arg("gamma") = 0.1,
      "closed-form stationary populations of the three-level machine");

  m.def(
      "machine_flows",
      [](double hw1, double hw2, double beta1, double beta2, double beta3,
         double gamma) {
        qep::MachineParams mp;
        mp.hw1 = hw1;
        mp.hw2 = hw2;
        mp.beta1 = beta1;
        mp.beta2 = beta2;
        mp.beta3 = beta3;
        mp.gamma1 = mp.gamma2 = mp.gamma3 = gamma;
        return qep::machine_flows_steady(mp);
      },
      py::arg("hw1") = 1.0, py::arg("hw2") = 1.5, py::arg("beta1") = 5.0,
      py::arg("beta2") = 0.5, py::arg("beta3") = 4.0, py::arg("gamma") = 0.1,
      "stationary heat currents (Q1_dot, Q2_dot, Q3_dot)");

  m.def(
      "cavity_power",
      [](std::complex<double> eps, double gamma0, double omega) {
        qep::CavityParams cp;
        cp.eps = eps;
        cp.gamma0 = gamma0;
        cp.omega = omega;
        return qep::cavity_power_steady(cp);
      },
      py::arg("eps"), py::arg("gamma0"), py::arg("omega") = 1.0,
      "stationary drive power, hbar omega gamma0 |alpha|^2");

  m.def("adiabatic_sign_change_time", &qep::adiabatic_sign_change_time,
        py::arg("gamma0"),
        "time 2 ln 2 / gamma0 where the adiabatic rate changes sign");
}
