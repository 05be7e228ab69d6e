// SPDX-License-Identifier: MIT
// Experiment orchestration: JSON configuration with aggregated validation,
// run dispatch over the built-in models, and bit-stable emission of entropy
// histograms, rate time series, and fluctuation-theorem reports.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qep/models.hpp"

namespace qep {

// Library version string embedded in every report.
const char* version();

// 17 significant digits, '.' decimal separator, locale independent. The
// output parses back to the exact same double.
std::string format17(double v);

// 64-bit FNV-1a over the canonical (key-sorted, whitespace-free) form of a
// JSON document, as 16 hex digits. Equivalent documents hash equally.
std::string config_hash(const std::string& json_text);

enum class RunMode { enumerate, sample, integrate, unravel };

struct ExperimentConfig {
  std::string model;  // "cnot" | "three_level" | "cavity"
  CnotParams cnot;
  MachineParams machine;
  CavityParams cavity;
  RunMode mode = RunMode::enumerate;
  BackwardInit backward_init = BackwardInit::inverted_correlated;
  long long trajectories = 10000;
  std::uint64_t seed = 1;
  double dt = 0.0;       // integration step (integrate / unravel)
  double t_final = 0.0;  // evolution span (integrate / unravel)
  int stride = 1;        // emit a rates row every this many steps
  double bin_width = 0.0;  // sampled histograms; 0 = Freedman-Diaconis
  std::string initial;     // "ground" | "thermal" (integrate / unravel)
  std::vector<std::string> outputs;
  std::string hash;                    // canonical hash of the config text
  std::vector<std::string> overrides;  // flag overrides, for provenance
};

// Parses and validates a config document. Validation gathers every
// violation and reports them all in one exception, one per line.
ExperimentConfig parse_config(const std::string& text);

struct HistogramRow {
  double value = 0.0;
  double probability = 0.0;
};

struct RateRow {
  double t = 0.0;
  double s_dot = 0.0;
  double s_dot_i = 0.0;
  double s_dot_a = 0.0;
  double s_dot_na = 0.0;
  double w_dot = 0.0;
  double q_dot = 0.0;
  double u_dot = 0.0;
  double x_dot = 0.0;
};

struct FtLine {
  double value = 0.0;
  double std_error = 0.0;
  bool available = false;
};

struct ResultBundle {
  std::string hash;
  std::uint64_t seed = 0;
  std::string version;
  std::vector<std::string> overrides;
  bool has_histogram = false;
  bool has_rates = false;
  bool has_ft = false;
  std::vector<HistogramRow> histogram;
  std::vector<RateRow> rates;
  FtLine integral_total, integral_adiabatic, integral_nonadiabatic;
  // Run diagnostics; reported on the console, never written to files, so
  // emitted bytes depend only on (config, seed, version).
  double wall_seconds = 0.0;
  long long steps = 0;
};

// Executes a validated config. Deterministic for a fixed (config, seed).
ResultBundle run(const ExperimentConfig& c);

// Writes histogram.csv / rates.csv / ft_report.json, as requested by the
// config outputs, into out_dir (created if absent). Every file carries the
// config hash; repeated identical runs produce identical bytes.
void emit(const ResultBundle& b, const std::string& out_dir);

// Kraus map serialization: labels, optional sigma_e / dphi annotations, and
// row-major matrices with [re, im] entries. The round trip is exact.
std::string kraus_to_json(const KrausMap& map);
KrausMap kraus_from_json(const std::string& text);

}  // namespace qep
