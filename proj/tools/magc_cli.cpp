// magc: scenario-driven front end for the microgrid frequency-control library.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "magc/config.hpp"
#include "magc/errors.hpp"
#include "magc/io.hpp"
#include "magc/simcore.hpp"

namespace fs = std::filesystem;
using namespace magc;

namespace {

constexpr const char* kVersion = "1.0.0";

enum Exit { kOk = 0, kUsage = 1, kNumerical = 2, kIo = 3 };

struct Common {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c, bool config_required = true) {
  auto* opt = app->add_option("--config", c.config, "scenario file (JSON)");
  if (config_required) opt->required();
  opt->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "output directory")->capture_default_str();
  app->add_option("--seed", c.seed, "override the scenario seed");
  app->add_flag("--quiet", c.quiet, "suppress progress output");
}

Scenario load(const Common& c) {
  Scenario s = load_scenario(c.config);
  if (c.seed) s.seed = *c.seed;
  return s;
}

fs::path out_dir(const Common& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw IoError("cannot create output directory " + c.out + ": " + ec.message());
  return c.out;
}

Index microgrid_index(const Scenario& s, const std::string& name) {
  if (name.empty()) return 0;
  for (std::size_t i = 0; i < s.microgrids.size(); ++i)
    if (s.microgrids[i].name == name) return static_cast<Index>(i);
  throw ConfigError("no microgrid named '" + name + "'");
}

std::vector<Index> parse_orders(const std::string& spec) {
  std::vector<Index> out;
  if (spec.empty()) {
    for (Index d = defaults::kOrderMin; d <= defaults::kOrderMax; ++d) out.push_back(d);
    return out;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-');
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stol(item));
      } else {
        const long a = std::stol(item.substr(0, dash)), b = std::stol(item.substr(dash + 1));
        for (long d = a; d <= b; ++d) out.push_back(d);
      }
    } catch (const std::exception&) {
      throw ConfigError("bad order list '" + spec + "'");
    }
  }
  for (Index d : out)
    if (d < 1) throw ConfigError("model orders must be >= 1");
  return out;
}

int cmd_simulate(const Common& c) {
  const Scenario s = load(c);
  const SimulationResult r = run_scenario(s);
  const fs::path dir = out_dir(c);
  write_timeseries_csv(dir / "timeseries.csv", r.series);
  write_detector_csv(dir / "detector.csv", r.series);
  const SummaryMetrics m = summarize(s, r);
  write_text(dir / "summary.txt", summary_text(s, r, m));
  for (const auto& tr : r.traces) write_trace_csv(dir / ("trace_" + tr.microgrid + ".csv"), tr);
  if (!c.quiet) {
    std::cout << "simulated " << r.series.samples() << " samples; artifacts in " << dir.string() << "\n";
    for (const auto& l : r.log) std::cout << "  " << l << "\n";
  }
  return kOk;
}

int cmd_identify(const Common& c, const std::string& mg_name, const std::string& data,
                 const std::string& orders) {
  const Scenario s = load(c);
  const Index gi = microgrid_index(s, mg_name);
  const MicrogridSpec& spec = s.microgrids[static_cast<std::size_t>(gi)];
  const fs::path dir = out_dir(c);

  IoRecord rec;
  if (!data.empty()) {
    rec = read_io_csv(data);
  } else {
    const Microgrid grid = build_microgrid(spec);
    auto [u, y] = excitation_experiment(grid.plant, spec.identification, s.control_period,
                                        derive_seed(s.seed, 3 + static_cast<std::uint64_t>(gi)));
    rec.u = std::move(u);
    rec.y = std::move(y);
    for (Index k = 0; k < rec.u.rows(); ++k) rec.time.push_back(static_cast<double>(k) * s.control_period);
    write_io_csv(dir / "excitation.csv", rec);
  }
  std::vector<Index> cands = orders.empty() ? spec.identification.candidates : parse_orders(orders);
  if (cands.empty()) cands = parse_orders("");
  IdentifyOptions opts;
  opts.block_rows = spec.identification.block_rows;
  const OrderSelection sel = select_order(rec.u, rec.y, cands, s.control_period, opts);
  write_json(dir / "model.json", model_to_json(sel.model));
  write_order_report_csv(dir / "order_report.csv", sel.report);
  if (!c.quiet) {
    std::cout << "selected order " << sel.report.d_star << " for " << spec.name << "\n";
    for (std::size_t i = 0; i < cands.size(); ++i)
      std::cout << "  d=" << cands[i] << " eta=" << sel.report.eta[i] << "\n";
  }
  return kOk;
}

int cmd_calibrate(const Common& c, const std::string& mg_name, const std::string& model_path,
                  std::optional<double> length) {
  Scenario s = load(c);
  const Index gi = microgrid_index(s, mg_name);
  MicrogridSpec& spec = s.microgrids[static_cast<std::size_t>(gi)];
  spec.detector.enabled = true;
  if (length) spec.detector.calibration_length = *length;
  if (!(spec.detector.calibration_length > 0.0)) throw ConfigError("calibration run length must be positive");
  DiscreteModel model;
  if (!model_path.empty()) {
    model = model_from_json(read_json(model_path));
  } else if (spec.model) {
    model = *spec.model;
  } else {
    const Microgrid grid = build_microgrid(spec);
    const auto [u, y] = excitation_experiment(grid.plant, spec.identification, s.control_period,
                                              derive_seed(s.seed, 3 + static_cast<std::uint64_t>(gi)));
    std::vector<Index> cands = spec.identification.candidates;
    if (cands.empty()) cands = parse_orders("");
    IdentifyOptions opts;
    opts.block_rows = spec.identification.block_rows;
    model = select_order(u, y, cands, s.control_period, opts).model;
  }
  const DetectorCalibration cal = calibrate_detector(s, gi, model);
  const fs::path dir = out_dir(c);
  write_json(dir / "calibration.json", calibration_to_json(cal));
  if (model_path.empty()) write_json(dir / "model.json", model_to_json(model));
  if (!c.quiet)
    std::cout << "eps1=" << cal.thresholds.eps1 << " eps2=" << cal.thresholds.eps2 << "\n";
  return kOk;
}

int cmd_detect(const Common& c, const std::string& trace_path, const std::string& model_path,
               const std::string& cal_path, std::optional<double> attack_start) {
  const DetectorTrace tr = read_trace_csv(trace_path);
  const DiscreteModel model = model_from_json(read_json(model_path));
  const DetectorCalibration cal = calibration_from_json(read_json(cal_path));
  require_dims(tr.command.cols() == model.n_inputs(), "trace channels match the model");

  DetectorState det = make_detector(model, cal.baseline.w, cal.thresholds.eps1, cal.thresholds.eps2);
  std::optional<BaselineStats> baseline = cal.baseline;
  CsvTable out;
  out.header = {"time", "xi1", "xi2", "eps1", "eps2", "flag"};
  long flags = 0;
  std::optional<double> first_flag;
  const Index n = model.n_inputs();
  for (Index k = 0; k < static_cast<Index>(tr.time.size()); ++k) {
    const VectorXd u_prev = k > 0 ? VectorXd(tr.command.row(k - 1).transpose()) : VectorXd::Zero(n);
    const VectorXd e_prev = k > 0 ? VectorXd(tr.watermark.row(k - 1).transpose()) : VectorXd::Zero(n);
    const bool flag = dw_step(det, baseline, model, tr.received.row(k).transpose(), u_prev, e_prev);
    const double t = tr.time[static_cast<std::size_t>(k)];
    if (flag) {
      ++flags;
      if (!first_flag && (!attack_start || t + 1e-9 >= *attack_start)) first_flag = t;
    }
    out.rows.push_back({t, det.xi1, det.xi2, det.eps1, det.eps2, flag ? 1.0 : 0.0});
  }
  const fs::path dir = out_dir(c);
  write_csv(dir / "detector.csv", out);

  std::ostringstream sum;
  sum << "samples: " << tr.time.size() << "\n";
  sum << "window: " << cal.baseline.w << "\n";
  sum << "flagged_samples: " << flags << "\n";
  if (static_cast<long>(tr.time.size()) < cal.baseline.w)
    sum << "note: trace shorter than the detector window; warm-up only, no decisions made\n";
  sum << "first_flag_s: " << (first_flag ? format_number(*first_flag) : "none") << "\n";
  if (attack_start)
    sum << "latency_s: " << (first_flag ? format_number(*first_flag - *attack_start) : "none") << "\n";
  write_text(dir / "summary.txt", sum.str());
  if (!c.quiet) std::cout << sum.str();
  return kOk;
}

int cmd_plot(const Common& c) {
  const fs::path dir = out_dir(c);
  std::ostringstream gp;
  gp << "# gnuplot script for the simulate artifacts in this directory\n"
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        "set terminal pngcairo size 1000,600\n"
        "set output 'omega.png'\n"
        "set xlabel 'time (s)'\nset ylabel 'frequency deviation (rad/s)'\n"
        "plot for [c in system(\"head -1 timeseries.csv | tr ',' '\\n' | grep -n '^omega_[^m]' | cut -d: -f1\")] "
        "'timeseries.csv' using 1:int(c) with lines\n"
        "set output 'detector.png'\n"
        "set ylabel 'xi2'\n"
        "plot for [c in system(\"head -1 detector.csv | tr ',' '\\n' | grep -n '^xi2_' | cut -d: -f1\")] "
        "'detector.csv' using 1:int(c) with lines\n";
  write_text(dir / "plot.gp", gp.str());
  if (!c.quiet) std::cout << "wrote " << (dir / "plot.gp").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Microgrid frequency control: simulation, identification and attack detection"};
  app.require_subcommand(1);

  Common sim, ident, calib, detect, plot;
  auto* s_sim = app.add_subcommand("simulate", "run a scenario and write timeseries/detector/summary");
  add_common(s_sim, sim);

  std::string id_mg, id_data, id_orders;
  auto* s_id = app.add_subcommand("identify", "fit the prediction model by subspace identification");
  add_common(s_id, ident);
  s_id->add_option("--microgrid", id_mg, "microgrid name (default: first)");
  s_id->add_option("--data", id_data, "input/output record CSV instead of a simulated experiment")
      ->check(CLI::ExistingFile);
  s_id->add_option("--orders", id_orders, "candidate orders, e.g. 1-10 or 4,6");

  std::string cal_mg, cal_model;
  std::optional<double> cal_length;
  auto* s_cal = app.add_subcommand("calibrate", "nominal watermarked run: baseline and thresholds");
  add_common(s_cal, calib);
  s_cal->add_option("--microgrid", cal_mg, "microgrid name (default: first)");
  s_cal->add_option("--model", cal_model, "model JSON (default: identify)")->check(CLI::ExistingFile);
  s_cal->add_option("--length", cal_length, "calibration run length (s)");

  std::string det_trace, det_model, det_cal;
  std::optional<double> det_start;
  auto* s_det = app.add_subcommand("detect", "replay a recorded trace through the detector");
  add_common(s_det, detect, false);
  s_det->add_option("--trace", det_trace, "trace CSV (time, u*, e*, y*)")->required()->check(CLI::ExistingFile);
  s_det->add_option("--model", det_model, "model JSON")->required()->check(CLI::ExistingFile);
  s_det->add_option("--calibration", det_cal, "calibration JSON")->required()->check(CLI::ExistingFile);
  s_det->add_option("--attack-start", det_start, "attack onset for latency reporting (s)");

  auto* s_plot = app.add_subcommand("plot", "write a gnuplot script for simulate artifacts");
  s_plot->add_option("--out", plot.out, "artifact directory")->capture_default_str();
  s_plot->add_flag("--quiet", plot.quiet);

  app.add_subcommand("version", "print the version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*s_sim) return cmd_simulate(sim);
    if (*s_id) return cmd_identify(ident, id_mg, id_data, id_orders);
    if (*s_cal) return cmd_calibrate(calib, cal_mg, cal_model, cal_length);
    if (*s_det) return cmd_detect(detect, det_trace, det_model, det_cal, det_start);
    if (*s_plot) return cmd_plot(plot);
    std::cout << "magc " << kVersion << " (schema " << defaults::kSchemaVersion << ")\n";
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  }
}
