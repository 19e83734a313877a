#pragma once

// Serialization: single-field GFLD1 files, trajectory archives (a directory
// of snapshot files plus a JSON manifest), and decomposition reports.  The
// binary payload is little-endian IEEE-754 regardless of host order, so
// files are portable and byte-identical across machines.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "morrey_nls/evolution.hpp"
#include "morrey_nls/field_grid.hpp"
#include "morrey_nls/profile_machine.hpp"

namespace morrey_nls {

using ordered_json = nlohmann::ordered_json;

namespace detail {

// Byte-level little-endian store/load; endian-agnostic and alias-safe.
inline void store_le(double x, unsigned char* out) {
  std::uint64_t u = 0;
  std::memcpy(&u, &x, sizeof u);
  for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>(u >> (8 * i));
}

inline double load_le(const unsigned char* in) {
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= std::uint64_t(in[i]) << (8 * i);
  double x = 0.0;
  std::memcpy(&x, &u, sizeof x);
  return x;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// GFLD1: one JSON header line {dim, n_per_axis, extent, space}, a newline,
// then raw (re, im) double pairs in row-major order (last axis fastest).

inline void write_gfld(const std::filesystem::path& path, const GridField& f) {
  check_field(f);
  ordered_json h;
  h["dim"] = f.dim;
  h["n_per_axis"] = f.n_per_axis;
  h["extent"] = f.extent;
  h["space"] = (f.space == Space::Physical) ? "physical" : "fourier";

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_gfld: cannot open " + path.string());
  os << h.dump() << '\n';

  std::vector<unsigned char> buf(16 * f.total());
  for (std::size_t i = 0; i < f.total(); ++i) {
    detail::store_le(f.values[i].real(), buf.data() + 16 * i);
    detail::store_le(f.values[i].imag(), buf.data() + 16 * i + 8);
  }
  os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!os) throw std::runtime_error("write_gfld: short write to " + path.string());
}

inline GridField read_gfld(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_gfld: cannot open " + path.string());
  std::string header;
  if (!std::getline(is, header))
    throw std::runtime_error("read_gfld: missing header line in " + path.string());

  ordered_json h;
  try {
    h = ordered_json::parse(header);
  } catch (const std::exception& e) {
    throw std::runtime_error("read_gfld: bad header in " + path.string() + ": " + e.what());
  }
  for (const char* key : {"dim", "n_per_axis", "extent", "space"})
    if (!h.contains(key))
      throw std::runtime_error("read_gfld: header misses \"" + std::string(key) + "\"");

  const int dim = h["dim"].get<int>();
  const std::size_t n = h["n_per_axis"].get<std::size_t>();
  const double extent = h["extent"].get<double>();
  const std::string space_name = h["space"].get<std::string>();
  Space space;
  if (space_name == "physical")
    space = Space::Physical;
  else if (space_name == "fourier")
    space = Space::Fourier;
  else
    throw std::runtime_error("read_gfld: unknown space \"" + space_name + "\"");
  if (dim < 1 || dim > 8) throw std::runtime_error("read_gfld: dim out of range");
  if (n == 0 || extent <= 0.0) throw std::runtime_error("read_gfld: bad grid header");

  GridField f = make_field(dim, n, extent, space);
  std::vector<unsigned char> buf(16 * f.total());
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (std::size_t(is.gcount()) != buf.size())
    throw std::runtime_error("read_gfld: truncated payload in " + path.string());
  char probe = 0;
  if (is.read(&probe, 1).gcount() != 0)
    throw std::runtime_error("read_gfld: trailing bytes in " + path.string());
  for (std::size_t i = 0; i < f.total(); ++i)
    f.values[i] = cplx(detail::load_le(buf.data() + 16 * i),
                       detail::load_le(buf.data() + 16 * i + 8));
  check_field(f);
  return f;
}

// ---------------------------------------------------------------------------
// Solver / deformation JSON blocks shared by the archive formats.

inline ordered_json frequency_window_json(const FrequencyWindow& w) {
  return ordered_json{{"j_min", w.j_min}, {"j_max", w.j_max}, {"k_bound", w.k_bound}};
}

inline FrequencyWindow frequency_window_from_json(const ordered_json& j) {
  return FrequencyWindow{j.at("j_min").get<int>(), j.at("j_max").get<int>(),
                         j.at("k_bound").get<long long>()};
}

inline ordered_json morrey_spec_json(const MorreySpec& s) {
  ordered_json j;
  j["p"] = s.p;
  j["q"] = s.q;
  // infinity is not a JSON number; r = null encodes the sup-norm mode
  if (s.r < kInf)
    j["r"] = s.r;
  else
    j["r"] = nullptr;
  j["window"] = frequency_window_json(s.window);
  return j;
}

inline MorreySpec morrey_spec_from_json(const ordered_json& j) {
  MorreySpec s;
  s.p = j.at("p").get<double>();
  s.q = j.at("q").get<double>();
  s.r = j.at("r").is_null() ? kInf : j.at("r").get<double>();
  s.window = frequency_window_from_json(j.at("window"));
  return s;
}

inline ordered_json solver_config_json(const SolverConfig& cfg) {
  ordered_json j;
  j["alpha"] = cfg.alpha;
  j["dt"] = cfg.dt;
  j["t_end"] = cfg.t_end;
  j["splitting_order"] = cfg.splitting_order;
  j["snapshot_stride"] = cfg.snapshot_stride;
  j["blowup_amp_cap"] = cfg.blowup_amp_cap;
  j["scatter_S_plateau_tol"] = cfg.scatter_S_plateau_tol;
  j["defocusing"] = cfg.defocusing;
  j["disable_nonlinearity"] = cfg.disable_nonlinearity;
  j["size_spec"] = morrey_spec_json(cfg.size_spec);
  return j;
}

inline SolverConfig solver_config_from_json(const ordered_json& j) {
  SolverConfig cfg;
  cfg.alpha = j.at("alpha").get<double>();
  cfg.dt = j.at("dt").get<double>();
  cfg.t_end = j.at("t_end").get<double>();
  cfg.splitting_order = j.at("splitting_order").get<int>();
  cfg.snapshot_stride = j.at("snapshot_stride").get<std::size_t>();
  cfg.blowup_amp_cap = j.at("blowup_amp_cap").get<double>();
  cfg.scatter_S_plateau_tol = j.at("scatter_S_plateau_tol").get<double>();
  cfg.defocusing = j.at("defocusing").get<bool>();
  cfg.disable_nonlinearity = j.at("disable_nonlinearity").get<bool>();
  cfg.size_spec = morrey_spec_from_json(j.at("size_spec"));
  return cfg;
}

inline FlowStatus flow_status_from_name(const std::string& s) {
  for (FlowStatus v : {FlowStatus::running, FlowStatus::scattered_like, FlowStatus::soliton_like,
                       FlowStatus::blowup_like, FlowStatus::inconclusive})
    if (s == flow_status_name(v)) return v;
  throw std::runtime_error("flow_status_from_name: unknown status \"" + s + "\"");
}

inline ordered_json deformation_json(const Deformation& g) {
  ordered_json j;
  j["theta"] = g.theta;
  j["m"] = g.m;
  j["b"] = g.b;
  j["s"] = g.s;
  j["a"] = g.a;
  return j;
}

inline Deformation deformation_from_json(const ordered_json& j) {
  Deformation g;
  g.theta = j.at("theta").get<double>();
  g.m = j.at("m").get<int>();
  g.b = j.at("b").get<std::vector<double>>();
  g.s = j.at("s").get<double>();
  g.a = j.at("a").get<std::vector<double>>();
  return g;
}

inline ordered_json divergence_json(const FamilyDivergence& v) {
  ordered_json j;
  j["scale_gap"] = v.scale_gap;
  j["boost_gap"] = v.boost_gap;
  j["time_gap"] = v.time_gap;
  j["shift_gap"] = v.shift_gap;
  j["total"] = v.total;
  return j;
}

// ---------------------------------------------------------------------------
// Trajectory archive: snap_NNNNNN.gfld per snapshot + manifest.json holding
// {times, mass, energy, S_cumulative, status, cfg} and the snapshot list.

namespace detail {

inline std::string snapshot_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "snap_%06zu.gfld", k);
  return buf;
}

}  // namespace detail

inline void write_trajectory_archive(const std::filesystem::path& dir, const Trajectory& traj) {
  if (traj.times.size() != traj.fields.size())
    throw std::invalid_argument("write_trajectory_archive: times/fields size mismatch");
  std::filesystem::create_directories(dir);

  std::vector<std::string> names;
  names.reserve(traj.fields.size());
  for (std::size_t k = 0; k < traj.fields.size(); ++k) {
    names.push_back(detail::snapshot_name(k));
    write_gfld(dir / names.back(), traj.fields[k]);
  }

  ordered_json m;
  m["format"] = "GFLD1-trajectory";
  m["times"] = traj.times;
  m["mass"] = traj.mass;
  m["energy"] = traj.energy;
  m["S_cumulative"] = traj.S_cumulative;
  m["status"] = flow_status_name(traj.status);
  m["cfg"] = solver_config_json(traj.cfg);
  m["snapshots"] = names;

  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw std::runtime_error("write_trajectory_archive: cannot write manifest");
  os << m.dump(2) << '\n';
}

inline Trajectory read_trajectory_archive(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is)
    throw std::runtime_error("read_trajectory_archive: no manifest.json in " + dir.string());
  ordered_json m;
  try {
    m = ordered_json::parse(is);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("read_trajectory_archive: bad manifest: ") + e.what());
  }

  Trajectory traj;
  traj.times = m.at("times").get<std::vector<double>>();
  traj.mass = m.at("mass").get<std::vector<double>>();
  traj.energy = m.at("energy").get<std::vector<double>>();
  traj.S_cumulative = m.at("S_cumulative").get<std::vector<double>>();
  traj.status = flow_status_from_name(m.at("status").get<std::string>());
  traj.cfg = solver_config_from_json(m.at("cfg"));

  const auto names = m.at("snapshots").get<std::vector<std::string>>();
  if (names.size() != traj.times.size())
    throw std::runtime_error("read_trajectory_archive: snapshot/time count mismatch");
  traj.fields.reserve(names.size());
  for (const auto& name : names) traj.fields.push_back(read_gfld(dir / name));
  return traj;
}

// ---------------------------------------------------------------------------
// Decomposition report: report.json plus one GFLD1 file per profile shape.
// Remainders enter as norms only; the fields stay with the caller.

inline ordered_json decomposition_report_json(const ProfileDecomposition& dec,
                                              const MorreySpec& spec,
                                              const std::vector<std::string>& profile_refs) {
  if (profile_refs.size() != dec.profiles.size())
    throw std::invalid_argument("decomposition_report_json: one ref per profile required");
  ordered_json rep;
  rep["format"] = "GFLD1-decomposition";
  ordered_json profs = ordered_json::array();
  for (std::size_t p = 0; p < dec.profiles.size(); ++p) {
    const ProfileEntry& e = dec.profiles[p];
    ordered_json jp;
    jp["field"] = profile_refs[p];
    jp["size"] = e.size;
    ordered_json defs = ordered_json::array();
    for (const auto& g : e.deformations) defs.push_back(deformation_json(g));
    jp["deformations"] = defs;
    profs.push_back(jp);
  }
  rep["profiles"] = profs;
  rep["decoupling_residual"] = dec.decoupling_residual;

  ordered_json div = ordered_json::array();
  for (const auto& row : dec.pairwise_divergence) {
    ordered_json jrow = ordered_json::array();
    for (const auto& v : row) jrow.push_back(divergence_json(v));
    div.push_back(jrow);
  }
  rep["divergence_matrix"] = div;

  std::vector<double> rem_norms;
  rem_norms.reserve(dec.remainder.size());
  for (const auto& R : dec.remainder) rem_norms.push_back(hat_morrey_norm(R, spec));
  rep["remainder_norms"] = rem_norms;
  rep["remainder_S_max"] = dec.remainder_S_max;
  rep["remainder_S_slope"] = dec.remainder_S_slope;
  rep["piece_counts"] = dec.piece_counts;
  rep["max_input_norm"] = dec.max_input_norm;
  return rep;
}

inline std::filesystem::path write_decomposition_report(const std::filesystem::path& dir,
                                                        const ProfileDecomposition& dec,
                                                        const MorreySpec& spec) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> refs;
  for (std::size_t p = 0; p < dec.profiles.size(); ++p) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "profile_%02zu.gfld", p);
    refs.emplace_back(buf);
    write_gfld(dir / refs.back(), dec.profiles[p].phi);
  }
  const ordered_json rep = decomposition_report_json(dec, spec, refs);
  const std::filesystem::path out = dir / "report.json";
  std::ofstream os(out, std::ios::trunc);
  if (!os) throw std::runtime_error("write_decomposition_report: cannot write report.json");
  os << rep.dump(2) << '\n';
  return out;
}

}  // namespace morrey_nls
