#pragma once

// Command-line harness: generate, train, eval, control, report, sweep.
//
// Exit codes: 0 ok, 2 usage, 3 numeric fault, 4 singular actuation. Every
// failure prints one line on stderr starting with E_USAGE:, E_NUMERIC: or
// E_ACTUATION:.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "symoden/energyctl.hpp"
#include "symoden/envsim.hpp"
#include "symoden/errors.hpp"
#include "symoden/hamdyn.hpp"
#include "symoden/odeflow.hpp"
#include "symoden/report.hpp"

namespace symoden::cli {

namespace fs = std::filesystem;
using envsim::Task;
using diffkit::Vector;
using hamdyn::ModelBundle;

enum ExitCode { kOk = 0, kUsage = 2, kNumeric = 3, kActuation = 4 };

inline const char* kOutEnv = "SYMODEN_OUT";

/// A loaded checkpoint: the model plus the task it was trained on, when known.
struct Checkpoint {
  ModelBundle model;
  std::optional<Task> task;
  std::string label;
};

inline Checkpoint load_checkpoint(const std::string& ref) {
  if (ref.rfind("truth:", 0) == 0) {
    const Task t = envsim::parse_task(ref.substr(6));
    return {envsim::truth_bundle(t), t, "truth"};
  }
  std::ifstream in(ref);
  if (!in) throw ContractError("cannot read checkpoint " + ref);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("checkpoint " + ref + " is not valid JSON: " + e.what());
  }
  Checkpoint c;
  if (j.contains("model")) {
    c.model = hamdyn::bundle_from_json(j.at("model"));
    if (j.contains("task")) c.task = envsim::parse_task(j.at("task").get<std::string>());
  } else {
    c.model = hamdyn::bundle_from_json(j);
  }
  c.label = hamdyn::to_string(c.model.variant);
  return c;
}

inline void save_checkpoint(const std::string& path, const ModelBundle& m, Task t, const nlohmann::json& extra) {
  nlohmann::json j = {{"task", envsim::to_string(t)}, {"model", hamdyn::to_json(m)}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream(path) << j.dump() << "\n";
}

/// Model and task must agree on layout: state width, control width and,
/// when recorded, the task itself.
inline void require_compatible(const Checkpoint& c, Task t, const std::string& what) {
  const auto info = envsim::task_info(t);
  if (c.task && *c.task != t) {
    throw ContractError(what + " was trained on " + envsim::to_string(*c.task) + ", not " + envsim::to_string(t));
  }
  if (c.model.dims.state() != info.state_dim || c.model.dims.control != info.control_dim) {
    throw ContractError(what + " has state/control width " + std::to_string(c.model.dims.state()) + "/" +
                        std::to_string(c.model.dims.control) + " but " + envsim::to_string(t) + " needs " +
                        std::to_string(info.state_dim) + "/" + std::to_string(info.control_dim));
  }
}

inline envsim::Scale parse_scale(const std::string& s, std::ostream& err) {
  if (s == "desk") return envsim::Scale::kDesk;
  if (s == "full") {
    err << "warning: full scale trains networks with up to ~1.5M parameters; expect hours per run\n";
    return envsim::Scale::kFull;
  }
  throw ContractError("scale must be desk or full, got '" + s + "'");
}

inline odeflow::LossKind parse_loss(const std::string& s) {
  if (s == "integrated") return odeflow::LossKind::kIntegrated;
  if (s == "gradient-matching") return odeflow::LossKind::kGradientMatching;
  throw ContractError("loss must be integrated or gradient-matching, got '" + s + "'");
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------
// Options shared between subcommands

struct Options {
  std::string out_dir;
  std::string task = "task1";
  std::string variant = "symoden";
  std::string scale = "desk";
  std::uint64_t seed = 0;
  // generate
  int n_init = 64;
  int steps = 20;
  double dt = 0.0;
  std::vector<double> controls{-2, -1, 0, 1, 2};
  bool annulus = false;
  std::string output;
  // train
  std::string data;
  int epochs = 300;
  int tau = 3;
  double lr = 1e-3;
  std::string loss = "integrated";
  bool verbose = false;
  // eval / control
  std::vector<std::string> checkpoints;
  std::string series;
  int horizon = 40;
  std::vector<double> x0;
  int control_steps = 0;
  double control_dt = 0.0;
  std::optional<double> kp;
  std::optional<double> kd;
  // report / sweep
  std::vector<std::string> metrics;
  std::vector<std::string> variants{"symoden", "naive"};
  std::vector<int> sizes{16, 32, 64, 128, 256, 512, 1024};
  std::vector<int> taus{3};
  int repeat = 1;
};

inline fs::path out_root(const Options& o) {
  if (!o.out_dir.empty()) return o.out_dir;
  if (const char* env = std::getenv(kOutEnv); env && *env) return env;
  return "symoden_out";
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_generate(const Options& o, std::ostream& out, std::ostream&) {
  envsim::DatasetSpec spec;
  spec.task = envsim::parse_task(o.task);
  spec.n_init = o.n_init;
  spec.steps = o.steps;
  spec.dt = o.dt;
  spec.controls = o.controls;
  spec.seed = o.seed;
  spec.annulus = o.annulus;
  const auto ds = envsim::generate_dataset(spec);
  const fs::path path = o.output.empty() ? out_root(o) / (std::string(envsim::to_string(spec.task)) + "_n" +
                                                          std::to_string(o.n_init) + "_seed" +
                                                          std::to_string(o.seed) + ".jsonl")
                                         : fs::path(o.output);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  envsim::write_dataset(ds, path.string());
  out << "generated " << envsim::to_string(spec.task) << ": " << ds.train.size() << " train, " << ds.test.size()
      << " test trajectories of " << spec.steps + 1 << " states -> " << path.string() << "\n";
  return kOk;
}

struct TrainOutcome {
  ModelBundle model;
  odeflow::LossReport report;
};

inline TrainOutcome train_model(const envsim::Dataset& ds, hamdyn::Variant v, envsim::Scale scale,
                                const Options& o, std::uint64_t seed, int tau, std::ostream& out) {
  auto model = envsim::make_model(ds.task, v, scale, seed);
  odeflow::TrainConfig cfg;
  cfg.tau = tau;
  cfg.epochs = o.epochs;
  cfg.adam.learning_rate = o.lr;
  cfg.seed = seed;
  cfg.loss = parse_loss(o.loss);
  odeflow::EpochCallback cb;
  if (o.verbose) {
    cb = [&out](const odeflow::EpochRecord& r) {
      out << "epoch " << r.epoch << " train_error " << fmt(r.train_error) << " t=" << fmt(r.wall_time_s) << "s\n";
    };
  }
  auto [trained, rep] = odeflow::train(std::move(model), ds.train, cfg, cb);
  return {std::move(trained), std::move(rep)};
}

inline int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.data.empty()) throw ContractError("train needs --data");
  const auto ds = envsim::read_dataset(o.data);
  const Task t = ds.task;
  const auto v = envsim::resolve_variant(t, o.variant);
  const auto scale = parse_scale(o.scale, err);
  auto res = train_model(ds, v, scale, o, o.seed, o.tau, out);
  const fs::path root = out_root(o);
  fs::create_directories(root);
  const std::string stem = o.output.empty() ? std::string(envsim::to_string(t)) + "_" + hamdyn::to_string(v) +
                                                  "_seed" + std::to_string(o.seed)
                                            : o.output;
  const fs::path ckpt = o.output.empty() ? root / (stem + ".json") : fs::path(stem + ".json");
  const fs::path hist = o.output.empty() ? root / (stem + "_history.csv") : fs::path(stem + "_history.csv");
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt.string(), res.model, t,
                  {{"scale", envsim::to_string(scale)},
                   {"train", {{"epochs", o.epochs}, {"tau", o.tau}, {"lr", o.lr}, {"seed", o.seed}, {"loss", o.loss}}}});
  write_text(hist, res.report.history_csv());
  const double final_error = res.report.epochs.empty() ? res.report.initial_error : res.report.epochs.back().train_error;
  out << "trained " << hamdyn::to_string(v) << " on " << envsim::to_string(t) << " (" << res.model.parameter_count()
      << " parameters, " << o.epochs << " epochs): train loss " << fmt(res.report.initial_error) << " -> "
      << fmt(final_error) << "\n"
      << "checkpoint " << ckpt.string() << "\nhistory " << hist.string() << "\n";
  return kOk;
}

inline bool supports_energy(const ModelBundle& m) {
  try {
    hamdyn::energy_of(m, Vector::Zero(m.dims.state()).eval());
    return true;
  } catch (const UnsupportedQuery&) {
    return false;
  } catch (const std::exception&) {
    return true;  // the query exists; this state is just awkward for it
  }
}

inline void require_finite(const std::string& who, std::initializer_list<double> errors) {
  for (double e : errors) {
    if (!std::isfinite(e)) throw NumericFault(who + ": rollout error overflowed to " + fmt(e));
  }
}

inline const char* kEvalHeader =
    "variant,train_error,train_std,test_error,test_std,prediction_error,prediction_std,parameters";

inline int cmd_eval(const Options& o, std::ostream& out, std::ostream&) {
  if (o.data.empty()) throw ContractError("eval needs --data");
  if (o.checkpoints.empty()) throw ContractError("eval needs at least one --checkpoint");
  const auto ds = envsim::read_dataset(o.data);
  std::vector<Checkpoint> cks;
  for (const auto& ref : o.checkpoints) {
    cks.push_back(load_checkpoint(ref));
    require_compatible(cks.back(), ds.task, ref);
  }
  std::ostringstream csv, series;
  csv << kEvalHeader << "\n";
  series << "variant,t,mse,energy,truth_energy,has_energy\n";
  const double dt = ds.train.empty() ? envsim::task_info(ds.task).dt : ds.train.front().dt;
  const auto targets = envsim::prediction_targets(ds.task, envsim::unique_train_inits(ds), o.horizon, dt);
  for (const auto& c : cks) {
    const auto tr = envsim::train_error(c.model, ds);
    const auto te = envsim::test_error(c.model, ds);
    const auto pr = envsim::trajectory_errors(c.model, targets);
    require_finite(c.label, {tr.mean, te.mean, pr.mean});
    csv << c.label << "," << fmt(tr.mean) << "," << fmt(tr.std) << "," << fmt(te.mean) << "," << fmt(te.std) << ","
        << fmt(pr.mean) << "," << fmt(pr.std) << "," << c.model.parameter_count() << "\n";
    if (!o.series.empty()) {
      const auto s = envsim::prediction_series(c.model, ds.task, targets);
      const int has = supports_energy(c.model) ? 1 : 0;
      for (std::size_t i = 0; i < s.time.size(); ++i) {
        series << c.label << "," << fmt(s.time[i]) << "," << fmt(s.mse[i]) << "," << fmt(s.energy[i]) << ","
               << fmt(s.truth_energy[i]) << "," << has << "\n";
      }
    }
  }
  out << csv.str();
  if (!o.output.empty()) write_text(o.output, csv.str());
  if (!o.series.empty()) write_text(o.series, series.str());
  return kOk;
}

struct ControlSummary {
  bool success = false;
  int reached_step = -1;
  double max_abs_u = 0.0;
  Vector final_state;
};

/// Target tolerances: task2 passes through cos q < -0.95 with |q'| < 0.1;
/// the fully-actuated tasks are judged on their final state.
inline ControlSummary judge(Task t, const energyctl::ClosedLoop& cl) {
  ControlSummary s;
  s.max_abs_u = cl.max_abs_control();
  s.final_state = cl.states.bottomRows(1).transpose();
  if (t == Task::kTask2) {
    for (Eigen::Index r = 0; r < cl.states.rows(); ++r) {
      if (cl.states(r, 0) < -0.95 && std::abs(cl.states(r, 2)) < 0.1) {
        s.reached_step = static_cast<int>(r);
        break;
      }
    }
    s.success = s.reached_step >= 0;
  } else if (envsim::is_cartpole(t)) {
    s.success = std::abs(s.final_state(0)) < 0.1 && s.final_state(1) > 0.95;
  } else {
    s.success = s.final_state(0) < -0.9;
  }
  return s;
}

inline int cmd_control(const Options& o, std::ostream& out, std::ostream&) {
  const Task t = envsim::parse_task(o.task);
  auto setup = energyctl::control_setup(t);  // refuses task1, task3, task4
  if (o.control_steps > 0) setup.steps = o.control_steps;
  if (o.control_dt > 0.0) setup.dt = o.control_dt;
  if (o.kp) setup.kp = *o.kp;
  if (o.kd) setup.kd = *o.kd;
  const std::string ref = o.checkpoints.empty() ? "truth:" + std::string(envsim::to_string(t)) : o.checkpoints.front();
  auto ck = load_checkpoint(ref);
  require_compatible(ck, t, ref);
  auto model = std::make_shared<const ModelBundle>(std::move(ck.model));

  Vector x0;
  if (o.x0.empty()) {
    x0 = energyctl::hanging_rest(t);
  } else {
    const auto info = envsim::task_info(t);
    if (static_cast<int>(o.x0.size()) != info.chart_dim) {
      throw ContractError("--x0 takes " + std::to_string(info.chart_dim) + " angle-chart values for " + o.task);
    }
    x0 = envsim::from_chart(t, Eigen::Map<const Vector>(o.x0.data(), static_cast<Eigen::Index>(o.x0.size())));
  }
  const auto law = t == Task::kTask2 ? energyctl::swingup_law(model, setup.kd)
                                     : energyctl::pd_law(model, energyctl::upright_target(t), setup.kp, setup.kd);
  const auto cl = energyctl::closed_loop_rollout(t, law, x0, setup.steps, setup.dt);
  const auto s = judge(t, cl);
  const fs::path path = o.output.empty() ? out_root(o) / ("control_" + std::string(envsim::to_string(t)) + ".csv")
                                         : fs::path(o.output);
  write_text(path, cl.csv());
  out << "control " << envsim::to_string(t) << " with " << ref << ": success=" << (s.success ? "true" : "false");
  if (t == Task::kTask2) out << " reached_step=" << s.reached_step;
  out << " max_abs_u=" << fmt(s.max_abs_u) << " final_state=[";
  for (Eigen::Index i = 0; i < s.final_state.size(); ++i) out << (i ? "," : "") << fmt(s.final_state(i));
  out << "]\ntrajectory " << path.string() << "\n";
  return kOk;
}

inline std::vector<report::Series> group_series(const report::Table& tab, const std::string& key,
                                                const std::string& x, const std::string& y) {
  std::vector<report::Series> out;
  std::map<std::string, std::size_t> idx;
  for (std::size_t r = 0; r < tab.rows.size(); ++r) {
    const std::string& k = tab.cell(r, key);
    auto [it, fresh] = idx.emplace(k, out.size());
    if (fresh) out.push_back({k, {}, {}});
    out[it->second].x.push_back(tab.number(r, x));
    out[it->second].y.push_back(tab.number(r, y));
  }
  return out;
}

/// Average repeated rows that share a series key and x value.
inline std::vector<report::Series> average_repeats(std::vector<report::Series> in) {
  for (auto& s : in) {
    std::map<double, std::pair<double, int>> acc;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      auto& a = acc[s.x[i]];
      a.first += s.y[i];
      a.second += 1;
    }
    s.x.clear();
    s.y.clear();
    for (const auto& [x, a] : acc) {
      s.x.push_back(x);
      s.y.push_back(a.first / a.second);
    }
  }
  return in;
}

inline int cmd_report(const Options& o, std::ostream& out, std::ostream&) {
  if (o.metrics.empty()) throw ContractError("report needs at least one --metrics file");
  const fs::path root = out_root(o);
  fs::create_directories(root);
  std::ostringstream md;
  md << "# Experiment report\n\n";
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const report::PlotSpec& spec, const std::vector<report::Series>& ss) {
    const fs::path p = root / name;
    write_text(p, report::line_plot_svg(spec, ss));
    written.push_back(p.string());
    md << "![" << spec.title << "](" << name << ")\n\n";
  };
  int k = 0;
  for (const auto& path : o.metrics) {
    const auto tab = report::read_csv(path);
    const std::string stem = fs::path(path).stem().string() + "_" + std::to_string(k++);
    md << "## " << fs::path(path).filename().string() << "\n\n";
    if (tab.has("n_init") && tab.has("tau") && tab.has("prediction_error")) {
      // sweep: error against dataset size, or against tau when size is fixed
      std::set<std::string> sizes;
      for (std::size_t r = 0; r < tab.rows.size(); ++r) sizes.insert(tab.cell(r, "n_init"));
      const bool by_tau = sizes.size() == 1;
      const std::string xcol = by_tau ? "tau" : "n_init";
      for (const std::string metric : {"train_error", "prediction_error"}) {
        report::PlotSpec spec{metric + " vs " + (by_tau ? "tau" : "number of initial states"),
                              by_tau ? "tau" : "initial states", metric, !by_tau, true};
        emit(stem + "_" + metric + ".svg", spec, average_repeats(group_series(tab, "variant", xcol, metric)));
      }
      md << report::markdown_table(tab) << "\n";
    } else if (tab.has("t") && tab.has("mse") && tab.has("has_energy")) {
      emit(stem + "_mse.svg", {"prediction MSE vs time", "t", "mse", false, true},
           group_series(tab, "variant", "t", "mse"));
      report::Table with_energy;
      with_energy.header = tab.header;
      for (std::size_t r = 0; r < tab.rows.size(); ++r) {
        if (tab.number(r, "has_energy") != 0.0) with_energy.rows.push_back(tab.rows[r]);
      }
      auto es = group_series(with_energy, "variant", "t", "energy");
      if (!tab.rows.empty()) {
        auto truth = group_series(tab, "variant", "t", "truth_energy");
        truth.front().name = "ground truth";
        es.push_back(truth.front());
      }
      emit(stem + "_energy.svg", {"total energy vs time", "t", "energy", false, false}, es);
    } else if (tab.has("variant") && tab.has("train_error") && tab.has("prediction_error")) {
      for (std::size_t r = 0; r < tab.rows.size(); ++r) {
        for (const char* c : {"train_error", "test_error", "prediction_error"}) tab.number(r, c);
      }
      md << report::markdown_table(tab) << "\n";
    } else {
      throw ContractError(path + ": unrecognised metrics header '" + tab.header.front() + ",...'");
    }
  }
  const fs::path mdp = root / "report.md";
  write_text(mdp, md.str());
  out << "report " << mdp.string() << "\n";
  for (const auto& w : written) out << "figure " << w << "\n";
  return kOk;
}

inline const char* kSweepHeader =
    "task,variant,n_init,tau,repeat,train_error,test_error,prediction_error,prediction_std,parameters";

inline int cmd_sweep(const Options& o, std::ostream& out, std::ostream& err) {
  const Task t = envsim::parse_task(o.task);
  const auto scale = parse_scale(o.scale, err);
  if (o.repeat < 1) throw ContractError("--repeat must be >= 1");
  if (o.sizes.empty() || o.taus.empty() || o.variants.empty()) throw ContractError("sweep needs sizes, taus and variants");
  std::vector<hamdyn::Variant> vs;
  for (const auto& name : o.variants) vs.push_back(envsim::resolve_variant(t, name));
  std::ostringstream csv;
  csv << kSweepHeader << "\n";
  out << kSweepHeader << "\n";
  for (int r = 0; r < o.repeat; ++r) {
    const std::uint64_t seed = o.seed + static_cast<std::uint64_t>(r);
    for (int n : o.sizes) {
      envsim::DatasetSpec spec;
      spec.task = t;
      spec.n_init = n;
      spec.steps = o.steps;
      spec.dt = o.dt;
      spec.controls = o.controls;
      spec.seed = seed;
      const auto ds = envsim::generate_dataset(spec);
      for (int tau : o.taus) {
        for (auto v : vs) {
          const auto res = train_model(ds, v, scale, o, seed, tau, out);
          const auto tr = envsim::train_error(res.model, ds);
          const auto te = envsim::test_error(res.model, ds);
          const auto pr = envsim::prediction_error(res.model, ds, o.horizon);
          require_finite(hamdyn::to_string(v), {tr.mean, te.mean, pr.mean});
          std::ostringstream row;
          row << envsim::to_string(t) << "," << hamdyn::to_string(v) << "," << n << "," << tau << "," << r << ","
              << fmt(tr.mean) << "," << fmt(te.mean) << "," << fmt(pr.mean) << "," << fmt(pr.std) << ","
              << res.model.parameter_count() << "\n";
          csv << row.str();
          out << row.str() << std::flush;
        }
      }
    }
  }
  const fs::path path =
      o.output.empty() ? out_root(o) / ("sweep_" + std::string(envsim::to_string(t)) + ".csv") : fs::path(o.output);
  write_text(path, csv.str());
  out << "sweep " << path.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Argument handling

/// JSON config entries become flags placed before the user's own flags, and
/// only for options the user did not pass: flags win.
inline std::vector<std::string> merge_config(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw ContractError("cannot read config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("config " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ContractError("config " + path + " must be a JSON object");
  auto given = [&](const std::string& flag) {
    for (const auto& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };
  std::vector<std::string> extra;
  for (const auto& [key, val] : j.items()) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (given(flag)) continue;
    auto scalar = [](const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
    if (val.is_boolean()) {
      if (val.get<bool>()) extra.push_back(flag);
    } else if (val.is_array()) {
      std::string joined;
      for (const auto& e : val) joined += (joined.empty() ? "" : ",") + scalar(e);
      extra.push_back(flag);
      extra.push_back(joined);
    } else {
      extra.push_back(flag);
      extra.push_back(scalar(val));
    }
  }
  // args[0] is the subcommand
  std::vector<std::string> merged;
  if (!args.empty()) merged.push_back(args[0]);
  merged.insert(merged.end(), extra.begin(), extra.end());
  if (args.size() > 1) merged.insert(merged.end(), args.begin() + 1, args.end());
  return merged;
}

inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Options o;
  CLI::App app{"Learn controlled Hamiltonian dynamics and run energy-shaping controllers", "symoden"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  auto common = [&](CLI::App* sc) {
    sc->add_option("--config", "JSON file with option values; command-line flags override it");
    sc->add_option("--out", o.out_dir, std::string("Output directory (default $") + kOutEnv + " or ./symoden_out)");
    sc->add_option("--seed", o.seed, "Random seed");
  };
  auto task_opt = [&](CLI::App* sc) {
    sc->add_option("--task", o.task, "task1|task2|task3|task4|task3-fa|task4-fa");
  };
  auto data_opts = [&](CLI::App* sc) {
    sc->add_option("--steps", o.steps, "Integration steps per trajectory");
    sc->add_option("--dt", o.dt, "Time step (default: task default)");
    sc->add_option("--controls", o.controls, "Constant control levels")->delimiter(',');
  };
  auto train_opts = [&](CLI::App* sc) {
    sc->add_option("--epochs", o.epochs, "Training epochs");
    sc->add_option("--lr", o.lr, "Adam learning rate");
    sc->add_option("--loss", o.loss, "integrated|gradient-matching");
    sc->add_option("--scale", o.scale, "desk|full");
    sc->add_flag("--verbose", o.verbose, "Print every epoch");
  };

  auto* gen = app.add_subcommand("generate", "Simulate a train/test dataset");
  common(gen);
  task_opt(gen);
  data_opts(gen);
  gen->add_option("--n-init", o.n_init, "Initial conditions per split");
  gen->add_flag("--annulus", o.annulus, "task1: sample (q, p) radius in [1.3, 2.3]");
  gen->add_option("--output", o.output, "Dataset path");

  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  common(tr);
  train_opts(tr);
  tr->add_option("--data", o.data, "Dataset file")->required();
  tr->add_option("--variant", o.variant, "symoden|unstructured|naive|geometric|symoden-rn|...");
  tr->add_option("--tau", o.tau, "Integration window");
  tr->add_option("--output", o.output, "Checkpoint path stem");

  auto* ev = app.add_subcommand("eval", "Train/test/prediction errors of checkpoints");
  common(ev);
  ev->add_option("--data", o.data, "Dataset file")->required();
  ev->add_option("--checkpoint", o.checkpoints, "Checkpoint file or truth:<task>; repeatable")->required();
  ev->add_option("--horizon", o.horizon, "Prediction steps");
  ev->add_option("--output", o.output, "Also write the table here");
  ev->add_option("--series", o.series, "Write per-step prediction MSE and energy here");

  auto* ct = app.add_subcommand("control", "Closed-loop energy-shaping control on the truth system");
  common(ct);
  task_opt(ct);
  ct->add_option("--checkpoint", o.checkpoints, "Checkpoint file or truth:<task> (default: truth)");
  ct->add_option("--x0", o.x0, "Initial state in angle coordinates (default: hanging rest)")->delimiter(',');
  ct->add_option("--steps", o.control_steps, "Closed-loop steps");
  ct->add_option("--dt", o.control_dt, "Closed-loop time step");
  ct->add_option("--kp", o.kp, "K_p scale");
  ct->add_option("--kd", o.kd, "K_d scale");
  ct->add_option("--output", o.output, "Trajectory CSV path");

  auto* rp = app.add_subcommand("report", "SVG plots and a markdown summary from metrics CSVs");
  common(rp);
  rp->add_option("--metrics", o.metrics, "Metrics CSV from eval, eval --series or sweep; repeatable");

  auto* sw = app.add_subcommand("sweep", "Train and evaluate over dataset sizes and windows");
  common(sw);
  task_opt(sw);
  data_opts(sw);
  train_opts(sw);
  sw->add_option("--variants", o.variants, "Variants to train")->delimiter(',');
  sw->add_option("--sizes", o.sizes, "Initial-condition counts")->delimiter(',');
  sw->add_option("--taus", o.taus, "Integration windows")->delimiter(',');
  sw->add_option("--repeat", o.repeat, "Repeated runs with seeds seed, seed+1, ...");
  sw->add_option("--horizon", o.horizon, "Prediction steps");
  sw->add_option("--output", o.output, "Sweep CSV path");

  try {
    args = merge_config(args);
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "E_USAGE: " << msg << " (try --help)\n";
    return kUsage;
  } catch (const ContractError& e) {
    err << "E_USAGE: " << e.what() << "\n";
    return kUsage;
  }

  auto one_line = [](std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
  };
  try {
    if (*gen) return cmd_generate(o, out, err);
    if (*tr) return cmd_train(o, out, err);
    if (*ev) return cmd_eval(o, out, err);
    if (*ct) return cmd_control(o, out, err);
    if (*rp) return cmd_report(o, out, err);
    if (*sw) return cmd_sweep(o, out, err);
  } catch (const ContractError& e) {
    err << "E_USAGE: " << one_line(e.what()) << "\n";
    return kUsage;
  } catch (const UnsupportedQuery& e) {
    err << "E_USAGE: " << one_line(e.what()) << "\n";
    return kUsage;
  } catch (const NumericFault& e) {
    err << "E_NUMERIC: " << one_line(e.what()) << "\n";
    return kNumeric;
  } catch (const SingularActuation& e) {
    err << "E_ACTUATION: " << one_line(e.what()) << "\n";
    return kActuation;
  } catch (const fs::filesystem_error& e) {
    err << "E_USAGE: " << one_line(e.what()) << "\n";
    return kUsage;
  }
  return kUsage;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run_cli(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace symoden::cli
