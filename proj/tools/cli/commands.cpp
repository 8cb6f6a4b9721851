#include "cli/commands.hpp"

#include <fmt/format.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <json.hpp>
#include <map>
#include <set>

#include "cli/io.hpp"
#include "opent/analysis/fits.hpp"
#include "opent/edoracle/edoracle.hpp"
#include "opent/errors.hpp"
#include "opent/impdo/impdo.hpp"

#ifdef OPENT_HAVE_OPENBLAS
extern "C" void openblas_set_num_threads(int);
#endif

namespace opent::cli {

namespace fs = std::filesystem;
namespace ed = opent::edoracle;
namespace obs = opent::observables;
using Json = nlohmann::ordered_json;

namespace {

int exit_code_of(std::exception_ptr e, std::string& message) {
  try {
    std::rethrow_exception(e);
  } catch (const ConfigError& x) {
    message = x.what();
    return kExitConfig;
  } catch (const NumericalError& x) {
    message = x.what();
    return kExitNumerical;
  } catch (const IoError& x) {
    message = x.what();
    return kExitIo;
  } catch (const impdo::CheckpointError& x) {
    message = x.what();
    return kExitIo;
  } catch (const fs::filesystem_error& x) {
    message = x.what();
    return kExitIo;
  } catch (const std::exception& x) {
    message = x.what();
    return kExitFailure;
  }
}

struct RunRecord {
  std::string command;
  RunConfig config;
  std::string status = "ok";
  int exit_code = kExitOk;
  std::string error;
  std::optional<std::string> resumed_from;
  std::int64_t steps = 0;
  double final_time = 0.0;
  std::size_t snapshots = 0;
  std::optional<impdo::UnitCellMPDO> counters_from;
};

void write_run_json(const fs::path& dir, const RunRecord& r) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = r.command;
  j["config"] = Json::parse(serialize_config(r.config));
  j["status"] = r.status;
  j["exit_code"] = r.exit_code;
  j["error"] = r.error.empty() ? Json() : Json(r.error);
  j["resumed_from"] = r.resumed_from ? Json(*r.resumed_from) : Json();
  j["steps"] = r.steps;
  j["final_time"] = r.final_time;
  j["snapshots"] = r.snapshots;
  if (r.counters_from) {
    const auto& s = *r.counters_from;
    j["counters"] = {{"trunc_weight", s.trunc_weight},
                     {"split_groups_dropped", s.split_groups_dropped},
                     {"chi_saturated", s.chi_saturated},
                     {"canon_warnings", s.canon_warnings},
                     {"chi_max_used", s.chi_max_used()}};
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  write_atomic(dir / kRunFile, j.dump(2) + "\n");
}

// Record the failure in run.json (best effort) and rethrow.
[[noreturn]] void fail_run(const fs::path& dir, RunRecord& rec, std::exception_ptr e) {
  rec.status = "failed";
  rec.exit_code = exit_code_of(e, rec.error);
  try {
    write_run_json(dir, rec);
  } catch (...) {
  }
  std::rethrow_exception(e);
}

}  // namespace

int cmd_evolve(const EvolveArgs& a, std::ostream& log) {
  const RunConfig& cfg = a.config;
  cfg.validate();
  const fs::path dir = cfg.output_dir;
  RunRecord rec;
  rec.command = "evolve";
  rec.config = cfg;

  impdo::UnitCellMPDO st;
  if (a.resume) {
    st = impdo::checkpoint_load(*a.resume);
    if (!(st.params == cfg.model)) throw ConfigError("checkpoint model parameters differ from the config");
    if (st.grading != impdo::natural_grading(cfg.state))
      throw ConfigError(fmt::format("checkpoint grading does not fit state {}", impdo::to_string(cfg.state)));
    if (st.steps % cfg.observe_every != 0)
      throw ConfigError(fmt::format("checkpoint step {} is not a multiple of observe_every", st.steps));
    rec.resumed_from = a.resume->string();
  } else {
    st = impdo::init_state(cfg.state, cfg.model);
  }
  const lindblad::LiouvillianGate gates(cfg.model, st.grading);
  RunWriter writer(dir, a.resume ? std::optional<double>(st.time) : std::nullopt);

  try {
    impdo::EvolveOptions opts;
    opts.observe_every = cfg.observe_every;
    opts.observe_start = !a.resume;
    opts.trunc.chi_max = cfg.chi_max;
    opts.trunc.eps_trunc = cfg.eps_trunc;
    const auto sink = [&](const impdo::Observation& o) {
      std::vector<obs::SpectrumSnapshot> snaps;
      for (int b : cfg.bonds) snaps.push_back(o.bonds[b]);
      if (!a.quiet) {
        const auto& s = o.bonds[cfg.bonds.back()];
        log << fmt::format("t={:<8} S_op[{}]={:.6f} chi={} trunc={:.2e} trace_dev={:.2e}\n", o.time, s.bond,
                           obs::operator_entanglement(s), s.diag.chi_used, s.diag.trunc_weight, s.diag.trace_dev);
      }
      rec.snapshots += snaps.size();
      writer.push(std::move(snaps));
    };
    const double dt = cfg.model.dt;
    while (st.time < cfg.t_max - 1e-9 * dt) {
      opts.t_max = cfg.t_max;
      if (cfg.checkpoint_every > 0)
        opts.t_max = std::min(cfg.t_max, static_cast<double>(st.steps + cfg.checkpoint_every) * dt);
      impdo::evolve(st, gates, opts, sink);
      opts.observe_start = false;
      if (cfg.checkpoint_every > 0) {
        writer.sync();
        impdo::checkpoint_save(st, dir / kCheckpointFile);
      }
    }
    writer.commit();
  } catch (...) {
    writer.abort();
    rec.steps = st.steps;
    rec.final_time = st.time;
    rec.counters_from = st;
    fail_run(dir, rec, std::current_exception());
  }
  rec.steps = st.steps;
  rec.final_time = st.time;
  rec.counters_from = st;
  write_run_json(dir, rec);
  return kExitOk;
}

int cmd_oracle(const RunConfig& cfg, bool quiet, std::ostream& log) {
  cfg.validate();
  if (!cfg.oracle) throw ConfigError("oracle settings are missing");
  const int n = cfg.oracle->n_sites;
  const fs::path dir = cfg.output_dir;
  RunRecord rec;
  rec.command = "oracle";
  rec.config = cfg;

  // Bond 0 of the infinite chain sits inside a pair, i.e. at an odd cut.
  std::vector<std::pair<int, int>> cuts;  // (bond, cut)
  for (int b : cfg.bonds) {
    const int want = b == 0 ? 1 : 0;
    int c = n / 2;
    if (c % 2 != want) c -= 1;
    if (c < 1) {
      if (!quiet) log << fmt::format("no cut of parity {} on {} sites; bond {} skipped\n", want, n, b);
      continue;
    }
    cuts.emplace_back(b, c);
  }
  if (cuts.empty()) throw ConfigError(fmt::format("no requested bond has a cut on {} sites", n));

  const ed::Liouvillian liou(n, cfg.model);
  ed::ExactOptions eo;
  eo.tol = cfg.oracle->tol;
  const double dt = cfg.model.dt;
  const auto total = static_cast<std::int64_t>(std::ceil(cfg.t_max / dt - 1e-9));

  RunWriter writer(dir);
  try {
    ed::DenseSuperket v = ed::initial_state(cfg.state, n);
    double t_prev = 0.0;
    for (std::int64_t step = 0; step <= total; step += cfg.observe_every) {
      const double t = static_cast<double>(step) * dt;
      if (t > t_prev) v = ed::evolve_exact(v, liou, t - t_prev, eo);
      t_prev = t;
      std::vector<obs::SpectrumSnapshot> snaps;
      for (const auto& [b, c] : cuts) {
        auto s = ed::exact_operator_schmidt(v, c, t);
        s.bond = b;
        snaps.push_back(std::move(s));
      }
      if (!quiet) {
        const auto& s = snaps.back();
        log << fmt::format("t={:<8} S_op[{}]={:.6f} trace_dev={:.2e}\n", t, s.bond, obs::operator_entanglement(s),
                           s.diag.trace_dev);
      }
      rec.snapshots += snaps.size();
      rec.steps = step;
      rec.final_time = t;
      writer.push(std::move(snaps));
    }
    writer.commit();
  } catch (...) {
    writer.abort();
    fail_run(dir, rec, std::current_exception());
  }
  write_run_json(dir, rec);
  return kExitOk;
}

namespace {

double to_double(const std::string& s, const fs::path& file) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(fmt::format("{}: '{}' is not a number", file.string(), s));
  }
}

int to_int(const std::string& s, const fs::path& file) {
  const double v = to_double(s, file);
  if (v != std::round(v)) throw IoError(fmt::format("{}: '{}' is not an integer", file.string(), s));
  return static_cast<int>(v);
}

bool same_time(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)); }

// Per bond, observation time -> column value, in time order.
using Series = std::map<int, std::vector<std::pair<double, double>>>;

Series read_series(const fs::path& file, const std::string& column) {
  const auto t = read_csv(file);
  const auto it = t.column("time"), ib = t.column("bond"), iv = t.column(column);
  Series out;
  for (const auto& r : t.rows) out[to_int(r[ib], file)].emplace_back(to_double(r[it], file), to_double(r[iv], file));
  for (auto& [b, s] : out) std::sort(s.begin(), s.end());
  return out;
}

struct SectorData {
  std::map<int, double> p;
  std::map<int, double> s_resolved;
};

// (bond, time) -> sector type -> data.
using SectorTable = std::map<std::pair<int, double>, std::map<std::string, SectorData>>;

SectorTable read_sectors(const fs::path& file) {
  const auto t = read_csv(file);
  const auto it = t.column("time"), ib = t.column("bond"), ity = t.column("sector_type"),
             iv = t.column("sector_value"), ip = t.column("p"), is = t.column("S_resolved");
  SectorTable out;
  for (const auto& r : t.rows) {
    auto& d = out[{to_int(r[ib], file), to_double(r[it], file)}][r[ity]];
    const int q = to_int(r[iv], file);
    d.p[q] = to_double(r[ip], file);
    if (!r[is].empty()) d.s_resolved[q] = to_double(r[is], file);
  }
  return out;
}

const std::map<int, double>* find_p(const SectorTable& t, int bond, double time) {
  auto it = t.lower_bound({bond, time - 1e-9 * std::max(1.0, std::abs(time))});
  if (it == t.end() || it->first.first != bond || !same_time(it->first.second, time)) return nullptr;
  const auto sz = it->second.find("Sz");
  return sz == it->second.end() ? nullptr : &sz->second.p;
}

}  // namespace

int cmd_compare(const CompareArgs& a, std::ostream& out) {
  if (!(a.tol > 0.0) || !(a.p_tol > 0.0)) throw ConfigError("tolerances must be positive");
  if (!(a.t_lo <= a.t_hi)) throw ConfigError("window lower end exceeds upper end");
  const auto sa = read_series(a.run_a / kObservablesFile, "S_op");
  const auto sb = read_series(a.run_b / kObservablesFile, "S_op");
  std::optional<SectorTable> pa, pb;
  if (fs::exists(a.run_a / kSectorsFile) && fs::exists(a.run_b / kSectorsFile)) {
    pa = read_sectors(a.run_a / kSectorsFile);
    pb = read_sectors(a.run_b / kSectorsFile);
  }

  Json report;
  report["run_a"] = a.run_a.string();
  report["run_b"] = a.run_b.string();
  report["window"] = {a.t_lo, std::min(a.t_hi, 1e300)};
  report["tol"] = a.tol;
  report["p_tol"] = a.p_tol;
  report["sectors_compared"] = pa.has_value();
  Json bonds = Json::array();
  bool pass = true;
  std::size_t shared_total = 0;
  for (const auto& [bond, series_a] : sa) {
    const auto it = sb.find(bond);
    if (it == sb.end()) continue;
    const auto& series_b = it->second;
    double max_ds = 0.0, t_ds = 0.0, max_dp = 0.0, t_dp = 0.0;
    int q_dp = 0;
    std::size_t shared = 0;
    std::size_t j = 0;
    for (const auto& [t, s_a] : series_a) {
      if (t < a.t_lo - 1e-12 || t > a.t_hi + 1e-12) continue;
      while (j < series_b.size() && series_b[j].first < t && !same_time(series_b[j].first, t)) ++j;
      if (j == series_b.size() || !same_time(series_b[j].first, t)) continue;
      ++shared;
      const double ds = std::abs(s_a - series_b[j].second);
      if (ds > max_ds) max_ds = ds, t_ds = t;
      if (pa) {
        const auto* ma = find_p(*pa, bond, t);
        const auto* mb = find_p(*pb, bond, series_b[j].first);
        if (ma && mb) {
          std::set<int> keys;
          for (const auto& [q, p] : *ma) keys.insert(q);
          for (const auto& [q, p] : *mb) keys.insert(q);
          for (int q : keys) {
            const double p1 = ma->contains(q) ? ma->at(q) : 0.0, p2 = mb->contains(q) ? mb->at(q) : 0.0;
            if (std::abs(p1 - p2) > max_dp) max_dp = std::abs(p1 - p2), t_dp = t, q_dp = q;
          }
        }
      }
    }
    if (shared == 0) continue;
    shared_total += shared;
    const bool ok = max_ds < a.tol && max_dp < a.p_tol;
    pass = pass && ok;
    bonds.push_back({{"bond", bond},
                     {"shared_times", shared},
                     {"max_dS_op", max_ds},
                     {"t_max_dS_op", t_ds},
                     {"max_dp_Sz", max_dp},
                     {"t_max_dp_Sz", t_dp},
                     {"sector_max_dp_Sz", q_dp},
                     {"pass", ok}});
  }
  if (shared_total == 0) throw ConfigError("the runs share no observation time inside the window");
  report["bonds"] = bonds;
  report["pass"] = pass;
  const std::string text = report.dump(2) + "\n";
  if (a.report)
    write_atomic(*a.report, text);
  else
    out << text;
  return pass ? kExitOk : kExitFailure;
}

namespace {

std::string clean_note(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::string opt_num(std::optional<double> v) { return v ? num(*v) : std::string(); }

std::string fit_row(const analysis::FitResult& r, int bond, std::optional<double> time) {
  std::string params;
  for (const auto& [name, value] : r.params) params += fmt::format("{}{}={}", params.empty() ? "" : ";", name, num(value));
  return fmt::format("{},{},{},{},{},{},{},{},{}\n", analysis::to_string(r.kind), bond, opt_num(time), num(r.lo),
                     num(r.hi), params, num(r.residual), r.ok ? "ok" : "flagged", clean_note(r.note));
}

std::string flagged_row(analysis::FitKind kind, int bond, std::optional<double> time, const std::string& note) {
  return fmt::format("{},{},{},,,,,flagged,{}\n", analysis::to_string(kind), bond, opt_num(time), clean_note(note));
}

}  // namespace

int cmd_analyze(const AnalyzeArgs& a, std::ostream& log) {
  using analysis::FitKind;
  if (a.bond != 0 && a.bond != 1) throw ConfigError(fmt::format("bond must be 0 or 1, got {}", a.bond));
  if (a.decay_sz <= 0) throw ConfigError("decay-sz must be a positive doubled magnetization");
  const fs::path out_dir = a.out_dir.value_or(a.run_dir);
  const auto all = read_series(a.run_dir / kObservablesFile, "S_op");
  std::vector<analysis::Point> s_op;
  if (auto it = all.find(a.bond); it != all.end())
    for (const auto& [t, v] : it->second) s_op.push_back({t, v});

  std::string rows;
  // Local tangent eta(t0), S0(t0).
  std::optional<double> dt = a.tangent_dt;
  if (!dt && s_op.size() >= 2) dt = s_op[1].t - s_op[0].t;
  std::vector<analysis::FitResult> tangent;
  if (dt && *dt > 0.0) tangent = analysis::log_tangent_curve(s_op, *dt);
  for (const auto& r : tangent) rows += fit_row(r, a.bond, r.lo + (r.hi - r.lo) / 2);
  if (tangent.empty()) rows += flagged_row(FitKind::LogTangent, a.bond, std::nullopt, "not enough samples for a three-point tangent");

  const fs::path sectors_file = a.run_dir / kSectorsFile;
  if (!fs::exists(sectors_file)) {
    for (auto k : {FitKind::Gaussian, FitKind::TrialPS, FitKind::PowerLaw, FitKind::Decay})
      rows += flagged_row(k, a.bond, std::nullopt, "sectors.csv missing");
  } else {
    const auto sectors = read_sectors(sectors_file);
    std::vector<analysis::Point> delta, decay;
    std::size_t decay_dropped = 0;
    const double sz = a.decay_sz / 2.0;
    for (const auto& [key, types] : sectors) {
      const auto [bond, t] = key;
      if (bond != a.bond) continue;
      const auto z = types.find("Sz");
      if (z == types.end()) {
        rows += flagged_row(FitKind::Gaussian, bond, t, "no Sz sectors");
      } else {
        try {
          const auto r = analysis::fit_gaussian(z->second.p);
          rows += fit_row(r, bond, t);
          if (r.ok) delta.push_back({t, r.param("delta")});
        } catch (const analysis::FitError& e) {
          rows += flagged_row(FitKind::Gaussian, bond, t, e.what());
        }
        const auto& sr = z->second.s_resolved;
        if (t >= a.decay_from - 1e-12 && sr.contains(0) && sr.contains(a.decay_sz)) {
          const double y = std::abs(sr.at(a.decay_sz) - sr.at(0)) / (sz * sz);
          if (y > 0.0)
            decay.push_back({t, y});
          else
            ++decay_dropped;
        }
      }
      const auto s = types.find("S");
      if (s == types.end()) {
        rows += flagged_row(FitKind::TrialPS, bond, t, "no multiplet data");
      } else {
        try {
          rows += fit_row(analysis::fit_trial_ps(s->second.p), bond, t);
        } catch (const analysis::FitError& e) {
          rows += flagged_row(FitKind::TrialPS, bond, t, e.what());
        }
      }
    }
    try {
      rows += fit_row(analysis::fit_power_law(delta, a.alpha_lo, a.alpha_hi), a.bond, std::nullopt);
    } catch (const analysis::FitError& e) {
      rows += flagged_row(FitKind::PowerLaw, a.bond, std::nullopt, e.what());
    }
    try {
      auto r = analysis::fit_decay(decay);
      if (decay_dropped > 0)
        r.note += fmt::format("{}{} zero points dropped", r.note.empty() ? "" : "; ", decay_dropped);
      rows += fit_row(r, a.bond, std::nullopt);
    } catch (const analysis::FitError& e) {
      rows += flagged_row(FitKind::Decay, a.bond, std::nullopt, e.what());
    }
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  write_atomic(out_dir / kFitsFile, std::string(kFitsHeader) + "\n" + rows);
  log << fmt::format("wrote {}\n", (out_dir / kFitsFile).string());
  return kExitOk;
}

int run_main(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
#ifdef OPENT_HAVE_OPENBLAS
  if (const char* env = std::getenv("OPENT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) openblas_set_num_threads(n);
  }
#endif
  CLI::App app{"Operator entanglement of a dissipative spin chain: iTEBD runs, exact oracle, comparison, fits"};
  app.require_subcommand(1);

  std::string config_path, out_dir, resume;
  bool quiet = false;
  auto* evolve = app.add_subcommand("evolve", "Run the iTEBD evolution described by a config");
  auto* oracle = app.add_subcommand("oracle", "Run exact evolution of a finite open chain");
  for (auto* sub : {evolve, oracle}) {
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--out", out_dir, "Output directory (overrides the config)");
    sub->add_flag("--quiet", quiet, "No progress on stderr");
  }
  evolve->add_option("--resume", resume, "Checkpoint to continue from");

  CompareArgs cmp;
  std::string cmp_report;
  auto* compare = app.add_subcommand("compare", "Compare two runs at shared observation times");
  compare->add_option("run_a", cmp.run_a)->required();
  compare->add_option("run_b", cmp.run_b)->required();
  compare->add_option("--t-min", cmp.t_lo, "Window start");
  compare->add_option("--t-max", cmp.t_hi, "Window end");
  compare->add_option("--tol", cmp.tol, "Tolerance on |dS_op|")->capture_default_str();
  compare->add_option("--p-tol", cmp.p_tol, "Tolerance on |dp_Sz|")->capture_default_str();
  compare->add_option("--report", cmp_report, "Write the JSON report here instead of stdout");

  AnalyzeArgs an;
  std::string an_out;
  double tangent_dt = 0.0;
  auto* analyze = app.add_subcommand("analyze", "Fit a completed run and write fits.csv");
  analyze->add_option("run_dir", an.run_dir)->required();
  analyze->add_option("--out", an_out, "Directory for fits.csv (default: run_dir)");
  analyze->add_option("--bond", an.bond, "Bond to analyze")->capture_default_str();
  analyze->add_option("--tangent-dt", tangent_dt, "Spacing of the three-point tangent (default: observation spacing)");
  analyze->add_option("--alpha-lo", an.alpha_lo, "Power-law window start")->capture_default_str();
  analyze->add_option("--alpha-hi", an.alpha_hi, "Power-law window end")->capture_default_str();
  analyze->add_option("--decay-from", an.decay_from, "Earliest time in the decay fit")->capture_default_str();
  analyze->add_option("--decay-sz", an.decay_sz, "Doubled magnetization of the decay sector")->capture_default_str();

  try {
    std::vector<std::string> args(argv.rbegin(), argv.rend());
    if (!args.empty()) args.pop_back();  // program name
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (evolve->parsed() || oracle->parsed()) {
      RunConfig cfg = load_config(config_path);
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      if (oracle->parsed()) return cmd_oracle(cfg, quiet, err);
      EvolveArgs ea;
      ea.config = cfg;
      ea.quiet = quiet;
      if (!resume.empty()) ea.resume = resume;
      return cmd_evolve(ea, err);
    }
    if (compare->parsed()) {
      if (!cmp_report.empty()) cmp.report = cmp_report;
      return cmd_compare(cmp, out);
    }
    if (!an_out.empty()) an.out_dir = an_out;
    if (tangent_dt > 0.0) an.tangent_dt = tangent_dt;
    return cmd_analyze(an, err);
  } catch (...) {
    std::string message;
    const int code = exit_code_of(std::current_exception(), message);
    err << "error: " << message << "\n";
    return code;
  }
}

}  // namespace opent::cli
