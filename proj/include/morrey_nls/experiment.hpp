#pragma once

// Config-driven experiments: a validated configuration type, one deterministic
// runner per experiment kind, and JSON/CSV report assembly.  Reports carry
// version stamps, a config hash, and a tolerance next to every headline
// number; identical config + seed reproduces the report byte for byte.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "morrey_nls/gfld_io.hpp"
#include "morrey_nls/stationary_states.hpp"

namespace morrey_nls {

inline constexpr const char* kLibraryVersion = "0.3.0";
inline constexpr int kReportFormatVersion = 1;

// ---------------------------------------------------------------------------
// Experiment kinds and configuration

enum class ExperimentKind {
  norm_suite,
  soliton_orbit,
  threshold_scan,
  critical_numbers,
  profile_synthetic,
  almost_periodicity,
  strichartz_sweep,
};

inline const char* experiment_kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::norm_suite: return "norm-suite";
    case ExperimentKind::soliton_orbit: return "soliton-orbit";
    case ExperimentKind::threshold_scan: return "threshold-scan";
    case ExperimentKind::critical_numbers: return "critical-numbers";
    case ExperimentKind::profile_synthetic: return "profile-synthetic";
    case ExperimentKind::almost_periodicity: return "almost-periodicity";
    case ExperimentKind::strichartz_sweep: return "strichartz-sweep";
  }
  return "unknown";
}

inline ExperimentKind experiment_kind_from_name(const std::string& s) {
  for (ExperimentKind k :
       {ExperimentKind::norm_suite, ExperimentKind::soliton_orbit, ExperimentKind::threshold_scan,
        ExperimentKind::critical_numbers, ExperimentKind::profile_synthetic,
        ExperimentKind::almost_periodicity, ExperimentKind::strichartz_sweep})
    if (s == experiment_kind_name(k)) return k;
  throw std::invalid_argument(
      "unknown experiment kind \"" + s +
      "\" (expected norm-suite | soliton-orbit | threshold-scan | critical-numbers | "
      "profile-synthetic | almost-periodicity | strichartz-sweep)");
}

// The flat parameter set serving all kinds; kind-specific defaults are filled
// at parse time, so the canonical dump below always shows resolved values.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::norm_suite;
  int d = 1;
  double alpha = 1.5;
  double r = 3.5;
  // hat-Morrey flow diagnostics (size function, classification bands); when
  // on, (d, alpha, r) must pass admissible_exponents
  bool hat_diagnostics = true;
  std::size_t n_per_axis = 512;
  int extent_log2 = 4;  // box half-width pi * 2^extent_log2
  double dt = 1e-3;
  double t_end = 1.0;
  std::size_t snapshot_stride = 100;
  bool defocusing = false;
  std::vector<double> c_grid;     // threshold-scan amplitudes
  std::vector<double> boost;      // optional frequency boost of the initial data
  double delta = 0.05;            // almost-periodicity qualification floor
  double C_eta = 8.0;             // compactness window constant
  double eps = 0.25;              // profile-synthetic decomposition threshold
  std::uint64_t seed = 1;
  std::string output_dir = "out";
};

inline double config_extent(const ExperimentConfig& c) {
  return kPi * std::ldexp(1.0, c.extent_log2);
}

namespace detail {

inline void apply_kind_defaults(ExperimentConfig& c) {
  switch (c.kind) {
    case ExperimentKind::norm_suite:
    case ExperimentKind::critical_numbers:
      c.hat_diagnostics = false;  // exponents play a pure norm role here
      break;
    case ExperimentKind::threshold_scan:
      c.dt = 2e-3;
      c.t_end = 6.0;
      c.c_grid = {0.01, 1.0, 3.0};
      break;
    case ExperimentKind::profile_synthetic:
      c.n_per_axis = 2048;
      break;
    default:
      break;
  }
}

}  // namespace detail

// Parses a JSON object; "kind" is mandatory, every other key optional, and
// unknown keys are an error (silent typos would change the experiment).
inline ExperimentConfig parse_config(const ordered_json& j) {
  if (!j.is_object() || j.empty())
    throw std::invalid_argument("config must be a non-empty JSON object with a \"kind\" key");
  if (!j.contains("kind")) throw std::invalid_argument("config misses \"kind\"");

  ExperimentConfig c;
  c.kind = experiment_kind_from_name(j.at("kind").get<std::string>());
  detail::apply_kind_defaults(c);

  const std::set<std::string> known = {
      "kind",  "d",      "alpha",           "r",     "hat_diagnostics", "n_per_axis",
      "extent_log2",     "dt",    "t_end",  "snapshot_stride", "defocusing",
      "c_grid", "boost", "delta", "c_eta",  "eps",   "seed",            "output_dir"};
  for (const auto& item : j.items())
    if (!known.count(item.key()))
      throw std::invalid_argument("config has unknown key \"" + item.key() + "\"");

  try {
    if (j.contains("d")) c.d = j.at("d").get<int>();
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
    if (j.contains("r")) c.r = j.at("r").get<double>();
    if (j.contains("hat_diagnostics")) c.hat_diagnostics = j.at("hat_diagnostics").get<bool>();
    if (j.contains("n_per_axis")) c.n_per_axis = j.at("n_per_axis").get<std::size_t>();
    if (j.contains("extent_log2")) c.extent_log2 = j.at("extent_log2").get<int>();
    if (j.contains("dt")) c.dt = j.at("dt").get<double>();
    if (j.contains("t_end")) c.t_end = j.at("t_end").get<double>();
    if (j.contains("snapshot_stride")) c.snapshot_stride = j.at("snapshot_stride").get<std::size_t>();
    if (j.contains("defocusing")) c.defocusing = j.at("defocusing").get<bool>();
    if (j.contains("c_grid")) c.c_grid = j.at("c_grid").get<std::vector<double>>();
    if (j.contains("boost")) c.boost = j.at("boost").get<std::vector<double>>();
    if (j.contains("delta")) c.delta = j.at("delta").get<double>();
    if (j.contains("c_eta")) c.C_eta = j.at("c_eta").get<double>();
    if (j.contains("eps")) c.eps = j.at("eps").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config type error: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config " + path.string());
  ordered_json j;
  try {
    j = ordered_json::parse(is, nullptr, true, true);  // allow comments
  } catch (const std::exception& e) {
    throw std::invalid_argument("config parse error in " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

// Canonical resolved form; key order is fixed, so its dump is hashable.
inline ordered_json config_json(const ExperimentConfig& c) {
  ordered_json j;
  j["kind"] = experiment_kind_name(c.kind);
  j["d"] = c.d;
  j["alpha"] = c.alpha;
  j["r"] = c.r;
  j["hat_diagnostics"] = c.hat_diagnostics;
  j["n_per_axis"] = c.n_per_axis;
  j["extent_log2"] = c.extent_log2;
  j["dt"] = c.dt;
  j["t_end"] = c.t_end;
  j["snapshot_stride"] = c.snapshot_stride;
  j["defocusing"] = c.defocusing;
  j["c_grid"] = c.c_grid;
  j["boost"] = c.boost;
  j["delta"] = c.delta;
  j["c_eta"] = c.C_eta;
  j["eps"] = c.eps;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  return j;
}

// All violations, not just the first; empty means valid.
inline std::vector<std::string> validate_config(const ExperimentConfig& c) {
  std::vector<std::string> bad;
  const bool grid_kind = c.kind != ExperimentKind::critical_numbers;

  if (c.kind == ExperimentKind::critical_numbers) {
    if (c.d < 3) bad.push_back("critical-numbers needs d >= 3 (energy-critical range)");
  } else {
    if (c.d < 1 || c.d > 4) bad.push_back("d must lie in [1, 4] for grid experiments");
  }
  if (!(c.alpha > 0.0)) bad.push_back("alpha must be positive");
  if (grid_kind) {
    if (!is_pow2(c.n_per_axis) || c.n_per_axis < 8)
      bad.push_back("n_per_axis must be a power of two >= 8");
    if (c.extent_log2 < 0 || c.extent_log2 > 20)
      bad.push_back("extent_log2 must lie in [0, 20]");
  }
  // these kinds run on the dyadic state space whether or not the extra flow
  // diagnostics are requested, so their exponents always need the full check
  const bool needs_state_space = c.kind == ExperimentKind::threshold_scan ||
                                 c.kind == ExperimentKind::profile_synthetic ||
                                 c.kind == ExperimentKind::almost_periodicity ||
                                 c.kind == ExperimentKind::strichartz_sweep;
  if (c.hat_diagnostics || needs_state_space) {
    const AdmissibilityResult adm = admissible_exponents(c.d, c.alpha, c.r);
    if (!adm.ok) bad.push_back("exponents: " + adm.reason);
  }

  const bool flow_kind = c.kind == ExperimentKind::soliton_orbit ||
                         c.kind == ExperimentKind::threshold_scan ||
                         c.kind == ExperimentKind::almost_periodicity;
  if (flow_kind) {
    if (!(c.dt > 0.0)) bad.push_back("dt must be positive");
    if (!(c.t_end > 0.0)) bad.push_back("t_end must be positive");
    if (c.snapshot_stride == 0) bad.push_back("snapshot_stride must be >= 1");
  }
  if (c.kind == ExperimentKind::threshold_scan) {
    if (c.c_grid.size() < 2) bad.push_back("c_grid needs at least two amplitudes");
    for (std::size_t i = 0; i < c.c_grid.size(); ++i) {
      if (!(c.c_grid[i] > 0.0)) {
        bad.push_back("c_grid entries must be positive");
        break;
      }
      if (i > 0 && !(c.c_grid[i] > c.c_grid[i - 1])) {
        bad.push_back("c_grid must be strictly increasing");
        break;
      }
    }
  }
  if (!c.boost.empty() && int(c.boost.size()) != c.d)
    bad.push_back("boost needs one component per axis");
  if (c.kind == ExperimentKind::almost_periodicity) {
    if (!(c.delta > 0.0)) bad.push_back("delta must be positive");
    if (!(c.C_eta > 0.0)) bad.push_back("c_eta must be positive");
  }
  if (c.kind == ExperimentKind::profile_synthetic && !(c.eps > 0.0))
    bad.push_back("eps must be positive");
  if (c.output_dir.empty()) bad.push_back("output_dir must be non-empty");
  return bad;
}

// ---------------------------------------------------------------------------
// Shared validators and report helpers

// Largest modulus on the outermost sample shell; the periodic surrogate of
// the whole-space problem is only trusted while this stays negligible.
inline double boundary_max_abs(const GridField& f) {
  check_field(f);
  if (f.space != Space::Physical)
    throw std::invalid_argument("boundary_max_abs: field must be physical");
  const std::size_t n = f.n_per_axis;
  double m = 0.0;
  std::vector<std::size_t> idx(f.dim, 0);
  for (std::size_t flat = 0; flat < f.total(); ++flat) {
    bool shell = false;
    for (int a = 0; a < f.dim; ++a)
      if (idx[a] == 0 || idx[a] == n - 1) shell = true;
    if (shell) m = std::max(m, std::abs(f.values[flat]));
    for (int a = f.dim - 1; a >= 0; --a) {
      if (++idx[a] < n) break;
      idx[a] = 0;
    }
  }
  return m;
}

inline constexpr double kBoundaryDecayTol = 1e-8;

namespace detail {

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline ordered_json num_with_tol(double value, double tolerance) {
  return ordered_json{{"value", value}, {"tolerance", tolerance}};
}

inline std::string csv_cell(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_csv(const std::filesystem::path& path, const std::string& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("write_csv: cannot open " + path.string());
  os << header << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << '\n';
  }
}

// Deterministic complex gaussian bump: amp e^{-|x-c|^2/(2w^2)} e^{i x.xi}.
inline GridField random_bump(Rng& rng, int d, std::size_t n, double extent) {
  std::vector<double> c(d), xi(d);
  const double amp = rng.uniform(0.5, 2.0);
  const double w = rng.uniform(0.5, 2.0);
  for (int a = 0; a < d; ++a) {
    c[a] = rng.uniform(-2.0, 2.0);
    xi[a] = rng.uniform(-2.0, 2.0);
  }
  return sample_physical(d, n, extent, [&](const std::vector<double>& x) {
    double q = 0.0, phase = 0.0;
    for (int a = 0; a < d; ++a) {
      q += sq((x[a] - c[a]) / w);
      phase += x[a] * xi[a];
    }
    return amp * std::exp(-0.5 * q) * std::polar(1.0, phase);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Threshold scan over initial amplitudes c |-> classify(evolve(c Q))

struct ThresholdPoint {
  double c = 0.0;
  FlowStatus status = FlowStatus::inconclusive;
  double lr = 0.0;                 // dyadic size of c Q
  double homogeneity_ratio = 0.0;  // lr / (c * lr(Q))
  double energy = 0.0;
};

struct ThresholdScan {
  std::vector<ThresholdPoint> table;
  double c_lo = 0.0;  // bracket: last scattered-like amplitude ...
  double c_hi = 0.0;  // ... and the first non-scattered one after it
  bool ordering_ok = false;  // lr(c_lo Q) < lr(Q)
  double lr_Q = 0.0;
};

struct ThresholdScanOptions {
  std::size_t n_per_axis = 512;
  int extent_log2 = 4;
  double dt = 2e-3;
  double t_end = 6.0;
  std::size_t snapshot_stride = 100;
};

// Classifies evolve(c Q) over the amplitude grid and returns the first
// bracket where the label flips away from scattered-like.  Throws when no
// flip exists (widen the grid).
inline ThresholdScan threshold_scan(int d, double alpha, double r,
                                    const std::vector<double>& c_grid,
                                    const ThresholdScanOptions& opt = {}) {
  if (c_grid.size() < 2) throw std::invalid_argument("threshold_scan: need >= 2 amplitudes");
  for (std::size_t i = 1; i < c_grid.size(); ++i)
    if (!(c_grid[i] > c_grid[i - 1]) || !(c_grid[0] > 0.0))
      throw std::invalid_argument("threshold_scan: c_grid must be positive increasing");

  const double extent = kPi * std::ldexp(1.0, opt.extent_log2);
  const GroundStateResult gs = ground_state(d, alpha, opt.n_per_axis, extent);
  const MorreySpec spec{double(d) * alpha, 2.0, r, {0, 0, 0}};
  const SizeFunctionConfig scfg;

  SolverConfig solver;
  solver.alpha = alpha;
  solver.dt = opt.dt;
  solver.t_end = opt.t_end;
  solver.snapshot_stride = opt.snapshot_stride;
  solver.size_spec = spec;

  ThresholdScan out;
  out.lr_Q = size_function(gs.field, spec, scfg).value;
  for (double c : c_grid) {
    GridField u0 = gs.field;
    for (auto& v : u0.values) v *= c;
    ThresholdPoint pt;
    pt.c = c;
    pt.lr = size_function(u0, spec, scfg).value;
    pt.homogeneity_ratio = pt.lr / (c * out.lr_Q);
    pt.energy = energy(u0, alpha);
    const Trajectory traj = evolve(u0, solver);
    pt.status = classify(traj, solver);
    out.table.push_back(pt);
  }

  bool found = false;
  for (std::size_t i = 0; i + 1 < out.table.size(); ++i) {
    if (out.table[i].status == FlowStatus::scattered_like &&
        out.table[i + 1].status != FlowStatus::scattered_like) {
      out.c_lo = out.table[i].c;
      out.c_hi = out.table[i + 1].c;
      found = true;
      break;
    }
  }
  if (!found)
    throw std::runtime_error(
        "threshold_scan: bracket not found (all amplitudes share a class; widen c_grid)");
  // measured, not assumed from homogeneity
  for (const auto& pt : out.table)
    if (pt.c == out.c_lo) out.ordering_ok = pt.lr < out.lr_Q;
  return out;
}

// ---------------------------------------------------------------------------
// Independent radial quadrature for the energy-critical gradient norm.
// |grad W|^2 integrates to omega_{d-1}/d^2 int_0^inf rho^{d+1}(1+rho^2/c)^{-d} drho
// with c = d(d-2); the substitution rho = sqrt(c) tan(theta) turns this into
// c^{(d+2)/2}/d^2 omega_{d-1} int_0^{pi/2} sin^{d+1} cos^{d-3} dtheta, evaluated
// here with composite 32-point Gauss-Legendre panels (no shared code with the
// adaptive-Simpson route used by critical_thresholds).
inline double w_gradient_norm_quadrature(int d, int panels = 16) {
  if (d < 3) throw std::invalid_argument("w_gradient_norm_quadrature: need d >= 3");
  static const double gl_x[16] = {
      -0.9894009349916499, -0.9445750230732326, -0.8656312023878318, -0.7554044083550030,
      -0.6178762444026438, -0.4580167776572274, -0.2816035507792589, -0.0950125098376374,
      0.0950125098376374,  0.2816035507792589,  0.4580167776572274,  0.6178762444026438,
      0.7554044083550030,  0.8656312023878318,  0.9445750230732326,  0.9894009349916499};
  static const double gl_w[16] = {
      0.0271524594117541, 0.0622535239386479, 0.0951585116824928, 0.1246289712555339,
      0.1495959888165767, 0.1691565193950025, 0.1826034150449236, 0.1894506104550685,
      0.1894506104550685, 0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
      0.1246289712555339, 0.0951585116824928, 0.0622535239386479, 0.0271524594117541};

  const double c = double(d) * (d - 2);
  const double omega = 2.0 * std::pow(kPi, 0.5 * d) / std::tgamma(0.5 * d);
  double integral = 0.0;
  const double h = 0.5 * kPi / panels;
  for (int p = 0; p < panels; ++p) {
    const double mid = (p + 0.5) * h;
    double acc = 0.0;
    for (int k = 0; k < 16; ++k) {
      const double theta = mid + 0.5 * h * gl_x[k];
      acc += gl_w[k] * std::pow(std::sin(theta), d + 1) * std::pow(std::cos(theta), d - 3);
    }
    integral += 0.5 * h * acc;
  }
  const double norm_sq = omega * std::pow(c, 0.5 * (d + 2)) * integral / double(d * d);
  return std::sqrt(norm_sq);
}

// ---------------------------------------------------------------------------
// Per-kind runners

struct RunArtifacts {
  ordered_json report;
  std::vector<std::filesystem::path> files;
};

namespace detail {

inline MorreySpec state_spec(const ExperimentConfig& c) {
  return MorreySpec{double(c.d) * c.alpha, 2.0, c.r, {0, 0, 0}};
}

inline GridField initial_soliton(const ExperimentConfig& c) {
  const GroundStateResult gs = ground_state(c.d, c.alpha, c.n_per_axis, config_extent(c));
  if (c.boost.empty()) return gs.field;
  Deformation g;
  g.b = c.boost;
  g.a.assign(c.d, 0.0);
  return apply(g, gs.field, c.alpha);
}

inline SolverConfig solver_from(const ExperimentConfig& c) {
  SolverConfig s;
  s.alpha = c.alpha;
  s.dt = c.dt;
  s.t_end = c.t_end;
  s.snapshot_stride = c.snapshot_stride;
  s.defocusing = c.defocusing;
  if (c.hat_diagnostics) s.size_spec = state_spec(c);
  return s;
}

inline ordered_json run_norm_suite(const ExperimentConfig& cfg,
                                   const std::filesystem::path& dir,
                                   std::vector<std::filesystem::path>& files) {
  Rng rng(cfg.seed);
  const double extent = config_extent(cfg);
  const MorreySpec hat{double(cfg.d) * cfg.alpha, 2.0, cfg.r, {0, 0, 0}};
  const MorreySpec classical{2.0, 1.5, std::max(4.0, cfg.r + 1.0), {0, 0, 0}};

  ordered_json fields = ordered_json::array();
  std::vector<std::vector<std::string>> rows;
  for (int k = 0; k < 5; ++k) {
    const GridField f = random_bump(rng, cfg.d, cfg.n_per_axis, extent);
    const NormReport hr = hat_morrey_norm_report(f, hat);
    const NormReport mr = morrey_norm_report(f, classical);
    const double l2 = l2_norm(f);
    ordered_json jf;
    jf["index"] = k;
    jf["hat_morrey"] = num_with_tol(hr.value, hr.tail_bound + 1e-12);
    jf["hat_tail_bound"] = hr.tail_bound;
    jf["morrey"] = num_with_tol(mr.value, mr.tail_bound + 1e-12);
    jf["l2"] = l2;
    fields.push_back(jf);
    rows.push_back({std::to_string(k), csv_cell(hr.value), csv_cell(hr.tail_bound),
                    csv_cell(mr.value), csv_cell(l2)});
  }
  write_csv(dir / "norms.csv", "index,hat_morrey,hat_tail_bound,morrey,l2", rows);
  files.push_back(dir / "norms.csv");

  ordered_json res;
  res["fields"] = fields;

  // closed-form cross-check: the unit-cube indicator spectrum in d = 1
  if (cfg.d == 1) {
    GridField F = make_field(1, cfg.n_per_axis, fourier_partner_extent(make_field(
                                 1, cfg.n_per_axis, extent, Space::Physical)),
                             Space::Fourier);
    const double dxi = F.step();
    for (std::size_t i = 0; i < F.total(); ++i) {
      const double xi = -F.extent + double(i) * dxi;
      F.values[i] = (xi >= 0.0 && xi < 1.0) ? 1.0 : 0.0;
    }
    const MorreySpec ind_spec{1.5, 2.0, 4.0, {0, 0, 0}};
    const NormReport rep = hat_morrey_norm_report(F, ind_spec);
    const double a = std::pow(2.0, -2.0 / 3.0);
    const double b = std::pow(2.0, -1.0 / 3.0);
    const double reference = std::pow(a / (1.0 - a) + 1.0 / (1.0 - b), 0.25);
    ordered_json jc;
    jc["measured"] = num_with_tol(rep.value, 1e-10);
    jc["reference"] = reference;
    jc["abs_error"] = std::abs(rep.value - reference);
    jc["tail_bound"] = num_with_tol(rep.tail_bound, 1e-12);
    res["indicator_closed_form"] = jc;
  }
  return res;
}

inline ordered_json run_soliton_orbit(const ExperimentConfig& cfg,
                                      const std::filesystem::path& dir,
                                      std::vector<std::filesystem::path>& files) {
  const double extent = config_extent(cfg);
  const GroundStateResult gs = ground_state(cfg.d, cfg.alpha, cfg.n_per_axis, extent);
  const SolverConfig solver = solver_from(cfg);
  const Trajectory traj = evolve(gs.field, solver);

  const MorreySpec spec = state_spec(cfg);
  const SizeFunctionConfig scfg;
  const double lr_Q = cfg.hat_diagnostics ? size_function(gs.field, spec, scfg).value : 0.0;

  double max_orbit = 0.0, max_mass_drift = 0.0;
  double lr_min = kInf, lr_max = 0.0;
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    const double t = traj.times[k];
    double err = 0.0;
    const cplx rot = std::polar(1.0, t);
    for (std::size_t i = 0; i < traj.fields[k].total(); ++i)
      err = std::max(err, std::abs(traj.fields[k].values[i] - rot * gs.field.values[i]));
    const double drift = std::abs(traj.mass[k] / traj.mass[0] - 1.0);
    double ratio = 0.0;
    if (cfg.hat_diagnostics) {
      ratio = size_function(traj.fields[k], spec, scfg).value / lr_Q;
      lr_min = std::min(lr_min, ratio);
      lr_max = std::max(lr_max, ratio);
    }
    max_orbit = std::max(max_orbit, err);
    max_mass_drift = std::max(max_mass_drift, drift);
    rows.push_back({csv_cell(t), csv_cell(err), csv_cell(drift), csv_cell(ratio)});
  }
  write_csv(dir / "orbit.csv", "t,orbit_error,mass_rel_drift,lr_ratio", rows);
  files.push_back(dir / "orbit.csv");
  write_trajectory_archive(dir / "trajectory", traj);
  files.push_back(dir / "trajectory" / "manifest.json");

  ordered_json res;
  res["ground_state_residual"] = num_with_tol(gs.residual_linf, 1e-8);
  res["max_orbit_error"] = num_with_tol(max_orbit, 1e-4);
  res["max_mass_rel_drift"] = num_with_tol(max_mass_drift, 1e-10);
  if (cfg.hat_diagnostics) {
    res["lr_ratio_min"] = num_with_tol(lr_min, 1e-3);
    res["lr_ratio_max"] = num_with_tol(lr_max, 1e-3);
  }
  res["status"] = flow_status_name(classify(traj, solver));
  return res;
}

inline ordered_json run_threshold_scan(const ExperimentConfig& cfg,
                                       const std::filesystem::path& dir,
                                       std::vector<std::filesystem::path>& files) {
  ThresholdScanOptions opt;
  opt.n_per_axis = cfg.n_per_axis;
  opt.extent_log2 = cfg.extent_log2;
  opt.dt = cfg.dt;
  opt.t_end = cfg.t_end;
  opt.snapshot_stride = cfg.snapshot_stride;
  const ThresholdScan scan = threshold_scan(cfg.d, cfg.alpha, cfg.r, cfg.c_grid, opt);

  std::vector<std::vector<std::string>> rows;
  ordered_json table = ordered_json::array();
  double worst_homog = 0.0;
  for (const auto& pt : scan.table) {
    worst_homog = std::max(worst_homog, std::abs(pt.homogeneity_ratio - 1.0));
    ordered_json jp;
    jp["c"] = pt.c;
    jp["status"] = flow_status_name(pt.status);
    jp["lr"] = pt.lr;
    jp["homogeneity_ratio"] = pt.homogeneity_ratio;
    jp["energy"] = pt.energy;
    table.push_back(jp);
    rows.push_back({csv_cell(pt.c), flow_status_name(pt.status), csv_cell(pt.lr),
                    csv_cell(pt.homogeneity_ratio), csv_cell(pt.energy)});
  }
  write_csv(dir / "threshold.csv", "c,status,lr,homogeneity_ratio,energy", rows);
  files.push_back(dir / "threshold.csv");

  ordered_json res;
  res["table"] = table;
  res["bracket"] = ordered_json{{"c_lo", scan.c_lo}, {"c_hi", scan.c_hi}};
  res["lr_Q"] = scan.lr_Q;
  res["ordering_lr_clo_below_lr_Q"] = scan.ordering_ok;
  res["max_homogeneity_error"] = num_with_tol(worst_homog, 1e-6);
  return res;
}

inline ordered_json run_critical_numbers(const ExperimentConfig& cfg,
                                         const std::filesystem::path& dir,
                                         std::vector<std::filesystem::path>& files) {
  const CriticalThresholds th = critical_thresholds(cfg.d);
  const double indep = w_gradient_norm_quadrature(cfg.d);
  const double ratio = th.E1 / th.E2;
  const double ratio_ref = std::sqrt(2.0 / cfg.d);

  ordered_json res;
  res["E1"] = th.E1;
  res["E2"] = num_with_tol(th.E2, 1e-6 * th.E2);
  res["E2_independent_quadrature"] = indep;
  res["E2_rel_gap"] = num_with_tol(std::abs(th.E2 - indep) / th.E2, 1e-6);
  res["E1_over_E2"] = num_with_tol(ratio, 1e-14);
  res["E1_over_E2_reference"] = ratio_ref;

  std::vector<std::vector<std::string>> rows{{std::to_string(cfg.d), csv_cell(th.E1),
                                              csv_cell(th.E2), csv_cell(indep),
                                              csv_cell(ratio)}};
  write_csv(dir / "critical.csv", "d,E1,E2,E2_quadrature,E1_over_E2", rows);
  files.push_back(dir / "critical.csv");
  return res;
}

inline ordered_json run_almost_periodicity(const ExperimentConfig& cfg,
                                           const std::filesystem::path& dir,
                                           std::vector<std::filesystem::path>& files) {
  const GridField u0 = initial_soliton(cfg);
  const SolverConfig solver = solver_from(cfg);
  const Trajectory traj = evolve(u0, solver);
  const MorreySpec spec = state_spec(cfg);

  // shape lower bound from the trajectory itself: m = min free-flow size,
  // M = max dyadic norm over the snapshots
  double m = kInf, M = 0.0;
  for (const auto& u : traj.fields) {
    M = std::max(M, hat_morrey_norm(u, spec));
    m = std::min(m, detail::free_flow_size(u, spec, 8.0, 65));
  }
  const double eta = beta_shape(m, M, spec, cfg.d);

  const APTrack track = track_almost_periodicity(traj, cfg.delta, eta, cfg.C_eta, spec);

  double N_span = 0.0, y_span = 0.0, z_span = 0.0, res_max = 0.0;
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < track.times.size(); ++k) {
    N_span = std::max(N_span, std::abs(track.N[k] - track.N[0]));
    for (int a = 0; a < cfg.d; ++a) {
      y_span = std::max(y_span, std::abs(track.y[k][a] - track.y[0][a]));
      z_span = std::max(z_span, std::abs(track.z[k][a] - track.z[0][a]));
    }
    res_max = std::max(res_max, track.residual[k]);
    std::vector<std::string> row{csv_cell(track.times[k]), csv_cell(track.N[k])};
    for (int a = 0; a < cfg.d; ++a) row.push_back(csv_cell(track.y[k][a]));
    for (int a = 0; a < cfg.d; ++a) row.push_back(csv_cell(track.z[k][a]));
    row.push_back(csv_cell(track.residual[k]));
    rows.push_back(row);
  }
  std::string header = "t,N";
  for (int a = 0; a < cfg.d; ++a) header += ",y" + std::to_string(a);
  for (int a = 0; a < cfg.d; ++a) header += ",z" + std::to_string(a);
  header += ",residual";
  write_csv(dir / "ap_track.csv", header, rows);
  files.push_back(dir / "ap_track.csv");

  const double cell = 2.0 * config_extent(cfg) / double(cfg.n_per_axis);
  ordered_json res;
  res["eta_shape_bound"] = eta;
  res["C_eta"] = cfg.C_eta;
  res["N_span"] = num_with_tol(N_span, cell);
  res["y_span"] = num_with_tol(y_span, cell);
  res["z_span"] = num_with_tol(z_span, cell);
  res["max_residual"] = res_max;
  res["snapshots"] = track.times.size();
  return res;
}

// Two-profile synthetic family: member i carries profile A at dyadic scale
// 2^{g_i} against profile B at scale 1 shifted by shift_i grid cells; the
// planted gaps are returned next to the recovered ones by the caller.
struct SyntheticMember {
  GridField field{};
  int scale_log2 = 0;
  double shift = 0.0;
};

inline SyntheticMember synthetic_two_profile_member(int d, std::size_t n, double extent,
                                                    int rate_index, int scale_cap) {
  SyntheticMember out;
  const GridField proto = make_field(d, n, extent, Space::Physical);
  const double band = fourier_partner_extent(proto);
  int g = std::min(rate_index, scale_cap);
  while (std::ldexp(1.0, g + 1) > band && g > 0) --g;
  out.scale_log2 = g;
  const double cell = 2.0 * extent / double(n);
  out.shift = std::min(double(rate_index) * double(rate_index) * cell, 0.4 * extent);

  GridField F = make_field(d, n, band, Space::Fourier);
  const double dxi = F.step();
  const double lamA = std::ldexp(1.0, g);
  std::vector<std::size_t> idx(d, 0);
  auto flat_top = [](double t, double w) {
    const double u = t / w;
    const double q = 1.0 - u * u;
    return q > 1e-12 ? std::exp(1.0 - 1.0 / q) : 0.0;
  };
  for (std::size_t flat = 0; flat < F.total(); ++flat) {
    double a_val = 1.0, b_val = 1.0;
    double phase = 0.0;
    for (int ax = 0; ax < d; ++ax) {
      const double xi = -F.extent + double(idx[ax]) * dxi;
      // A: cube [0, lamA)^d, renormalized bump; B: cube [-2, -1)^d
      a_val *= (xi >= 0.0 && xi < lamA) ? flat_top(xi / lamA - 0.5, 0.3) : 0.0;
      b_val *= (xi >= -2.0 && xi < -1.0) ? flat_top(xi + 1.5, 0.3) : 0.0;
      phase += xi * out.shift;
    }
    const double ampA = 0.9 * std::pow(lamA, -double(d) / 3.0);  // p' = 3 cap shape
    F.values[flat] = ampA * a_val + 0.7 * b_val * std::polar(1.0, -phase);
    for (int ax = d - 1; ax >= 0; --ax) {
      if (++idx[ax] < n) break;
      idx[ax] = 0;
    }
  }
  out.field = to_physical(F);
  return out;
}

inline ordered_json run_profile_synthetic(const ExperimentConfig& cfg,
                                          const std::filesystem::path& dir,
                                          std::vector<std::filesystem::path>& files) {
  const double extent = config_extent(cfg);
  const std::vector<int> rates{4, 8, 16, 32};
  std::vector<GridField> members;
  std::vector<SyntheticMember> plants;
  for (int nn : rates) {
    plants.push_back(synthetic_two_profile_member(cfg.d, cfg.n_per_axis, extent, nn, 8));
    members.push_back(plants.back().field);
  }

  const MorreySpec spec = state_spec(cfg);
  DecomposeOptions opt;
  const ProfileDecomposition dec = profile_decompose(members, cfg.eps, spec, opt);
  files.push_back(write_decomposition_report(dir / "decomposition", dec, spec));

  ordered_json res;
  res["profile_count"] = dec.profiles.size();
  res["decoupling_residual"] = num_with_tol(dec.decoupling_residual, 1e-6);
  res["piece_counts"] = dec.piece_counts;
  ordered_json planted = ordered_json::array();
  for (std::size_t i = 0; i < plants.size(); ++i)
    planted.push_back(ordered_json{{"rate", rates[i]},
                                   {"scale_log2", plants[i].scale_log2},
                                   {"shift", plants[i].shift}});
  res["planted"] = planted;
  if (!dec.pairwise_divergence.empty() && dec.pairwise_divergence.size() >= 2)
    res["divergence_01"] = divergence_json(dec.pairwise_divergence[0][1]);
  return res;
}

inline ordered_json run_strichartz_sweep(const ExperimentConfig& cfg,
                                         const std::filesystem::path& dir,
                                         std::vector<std::filesystem::path>& files) {
  Rng rng(cfg.seed);
  const double extent = config_extent(cfg);
  const MorreySpec spec = state_spec(cfg);

  ordered_json table = ordered_json::array();
  std::vector<std::vector<std::string>> rows;
  double ratio_max = 0.0;
  bool all_tail = true;
  for (int j = -2; j <= 2; ++j) {
    GridField f = random_bump(rng, cfg.d, cfg.n_per_axis, extent);
    // rescale the bump width dyadically without leaving the box
    Deformation g;
    g.m = j;
    g.b.assign(cfg.d, 0.0);
    g.a.assign(cfg.d, 0.0);
    f = apply(g, f, cfg.alpha);
    const StrichartzRatio sr = strichartz_ratio(f, spec, 8.0);
    if (!sr.defined) continue;
    ratio_max = std::max(ratio_max, sr.ratio);
    all_tail = all_tail && sr.tail_converged;
    ordered_json jr;
    jr["scale_log2"] = j;
    jr["ratio"] = sr.ratio;
    jr["tail_converged"] = sr.tail_converged;
    table.push_back(jr);
    rows.push_back({std::to_string(j), csv_cell(sr.ratio), sr.tail_converged ? "1" : "0"});
  }
  write_csv(dir / "strichartz.csv", "scale_log2,ratio,tail_converged", rows);
  files.push_back(dir / "strichartz.csv");

  ordered_json res;
  res["table"] = table;
  res["ratio_max"] = ratio_max;
  res["all_tails_converged"] = all_tail;
  return res;
}

}  // namespace detail

// Validates, runs the requested kind, and writes report.json plus the
// kind-specific CSV/archive files into output_dir.  Config-class problems
// throw invalid_argument; numerical failures propagate as runtime_error.
inline RunArtifacts run_experiment(const ExperimentConfig& cfg) {
  {
    const std::vector<std::string> bad = validate_config(cfg);
    if (!bad.empty()) {
      std::string msg = "invalid config:";
      for (const auto& b : bad) msg += "\n  - " + b;
      throw std::invalid_argument(msg);
    }
  }
  const std::filesystem::path dir(cfg.output_dir);
  std::filesystem::create_directories(dir);

  RunArtifacts out;
  const ordered_json jc = config_json(cfg);
  out.report["format"] = "morrey-nls-report";
  out.report["versions"] =
      ordered_json{{"library", kLibraryVersion}, {"report_format", kReportFormatVersion}};
  out.report["config_hash"] = detail::hex64(detail::fnv1a64(jc.dump()));
  out.report["kind"] = experiment_kind_name(cfg.kind);
  out.report["config"] = jc;

  switch (cfg.kind) {
    case ExperimentKind::norm_suite:
      out.report["results"] = detail::run_norm_suite(cfg, dir, out.files);
      break;
    case ExperimentKind::soliton_orbit:
      out.report["results"] = detail::run_soliton_orbit(cfg, dir, out.files);
      break;
    case ExperimentKind::threshold_scan:
      out.report["results"] = detail::run_threshold_scan(cfg, dir, out.files);
      break;
    case ExperimentKind::critical_numbers:
      out.report["results"] = detail::run_critical_numbers(cfg, dir, out.files);
      break;
    case ExperimentKind::profile_synthetic:
      out.report["results"] = detail::run_profile_synthetic(cfg, dir, out.files);
      break;
    case ExperimentKind::almost_periodicity:
      out.report["results"] = detail::run_almost_periodicity(cfg, dir, out.files);
      break;
    case ExperimentKind::strichartz_sweep:
      out.report["results"] = detail::run_strichartz_sweep(cfg, dir, out.files);
      break;
  }

  const std::filesystem::path report_path = dir / "report.json";
  std::ofstream os(report_path, std::ios::trunc);
  if (!os) throw std::runtime_error("run_experiment: cannot write " + report_path.string());
  os << out.report.dump(2) << '\n';
  out.files.push_back(report_path);
  return out;
}

}  // namespace morrey_nls
