#include "magc/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "magc/errors.hpp"

namespace magc {

namespace fs = std::filesystem;

namespace {

void allow_keys(const Json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> ok(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& ex) {
    throw ConfigError(std::string("bad value for '") + key + "': " + ex.what());
  }
}

Json vec_to_json(const VectorXd& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

VectorXd vec_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + " must be an array of numbers");
  VectorXd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(what + " must be an array of numbers");
    v(static_cast<Index>(i)) = j[i].get<double>();
  }
  return v;
}

// Row-major nested arrays.
Json mat_to_json(const MatrixXd& m) {
  Json a = Json::array();
  for (Index r = 0; r < m.rows(); ++r) a.push_back(vec_to_json(m.row(r).transpose()));
  return a;
}

MatrixXd mat_from_json(const Json& j, const std::string& what, Index cols_if_empty = 0) {
  if (!j.is_array()) throw ConfigError(what + " must be an array of rows");
  if (j.empty()) return MatrixXd::Zero(0, cols_if_empty);
  const Index rows = static_cast<Index>(j.size());
  const Index cols = static_cast<Index>(j[0].size());
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const VectorXd row = vec_from_json(j[static_cast<std::size_t>(r)], what);
    if (row.size() != cols) throw ConfigError(what + " has ragged rows");
    m.row(r) = row.transpose();
  }
  return m;
}

VectorXd weights_from_json(const Json& j, Index n, const std::string& what) {
  if (j.is_number()) return VectorXd::Constant(n, j.get<double>());
  VectorXd v = vec_from_json(j, what);
  if (v.size() != n) throw ConfigError(what + " needs one entry per IBR");
  return v;
}

const char* placement_name(WatermarkPlacement p) {
  return p == WatermarkPlacement::kInput ? "input" : "state";
}

WatermarkPlacement placement_from(const std::string& s) {
  if (s == "input") return WatermarkPlacement::kInput;
  if (s == "state") return WatermarkPlacement::kState;
  throw ConfigError("watermark placement must be 'input' or 'state'");
}

const char* load_kind_name(LoadKind k) {
  switch (k) {
    case LoadKind::kConstant: return "constant";
    case LoadKind::kStep: return "step";
    case LoadKind::kPeriodicPulse: return "periodic";
  }
  return "?";
}

LoadKind load_kind_from(const std::string& s) {
  for (auto k : {LoadKind::kConstant, LoadKind::kStep, LoadKind::kPeriodicPulse})
    if (s == load_kind_name(k)) return k;
  throw ConfigError("unknown load kind '" + s + "'");
}

std::pair<double, double> admittance_from(const Json& j, const std::string& where) {
  if (j.contains("x")) {
    if (j.contains("y")) throw ConfigError(where + ": give either x or y, not both");
    const double x = get_or(j, "x", 0.0);
    if (!(x > 0.0)) throw ConfigError(where + ": reactance must be positive");
    return {1.0 / x, defaults::kBranchTheta};
  }
  return {get_or(j, "y", 0.0), get_or(j, "theta", defaults::kBranchTheta)};
}

MicrogridSpec microgrid_from_json(const Json& j, const fs::path& base) {
  allow_keys(j, "microgrid",
             {"name", "ibrs", "loads", "lines", "voltage", "omega_c", "m_p", "nominal_hz", "controller",
              "q", "r", "pi", "slow_hold", "detector", "identification"});
  MicrogridSpec s;
  s.name = get_or<std::string>(j, "name", "");
  if (s.name.empty()) throw ConfigError("microgrid needs a name");
  const std::string where = "microgrid " + s.name;
  s.ibr_names = get_or<std::vector<std::string>>(j, "ibrs", {});
  const Json loads = j.value("loads", Json::array());
  s.load_power.resize(static_cast<Index>(loads.size()));
  for (std::size_t i = 0; i < loads.size(); ++i) {
    allow_keys(loads[i], where + " load", {"name", "power"});
    s.load_names.push_back(get_or<std::string>(loads[i], "name", ""));
    s.load_power(static_cast<Index>(i)) = get_or(loads[i], "power", 0.0);
  }
  for (const auto& l : j.value("lines", Json::array())) {
    allow_keys(l, where + " line", {"from", "to", "x", "y", "theta"});
    MicrogridSpec::Line line;
    line.from = get_or<std::string>(l, "from", "");
    line.to = get_or<std::string>(l, "to", "");
    std::tie(line.y, line.theta) = admittance_from(l, where + " line");
    s.lines.push_back(line);
  }
  s.voltage = get_or(j, "voltage", s.voltage);
  s.omega_c = get_or(j, "omega_c", s.omega_c);
  s.m_p = get_or(j, "m_p", s.m_p);
  s.nominal_hz = get_or(j, "nominal_hz", s.nominal_hz);
  s.controller = controller_from_string(get_or<std::string>(j, "controller", to_string(s.controller)));
  const Index n = static_cast<Index>(s.ibr_names.size());
  if (j.contains("q")) s.q = weights_from_json(j.at("q"), n, where + " q");
  if (j.contains("r")) s.r = weights_from_json(j.at("r"), n, where + " r");
  if (j.contains("pi")) {
    const Json& p = j.at("pi");
    allow_keys(p, where + " pi", {"kp", "ki", "clamp"});
    s.pi_kp = get_or(p, "kp", s.pi_kp);
    s.pi_ki = get_or(p, "ki", s.pi_ki);
    s.pi_clamp = get_or(p, "clamp", s.pi_clamp);
  }
  s.slow_hold = get_or(j, "slow_hold", s.slow_hold);
  if (j.contains("detector")) {
    const Json& d = j.at("detector");
    allow_keys(d, where + " detector",
               {"enabled", "window", "sigma", "threshold_factor", "calibration_length", "placement",
                "model", "calibration"});
    s.detector.enabled = get_or(d, "enabled", s.detector.enabled);
    s.detector.window = get_or(d, "window", s.detector.window);
    s.detector.sigma = get_or(d, "sigma", s.detector.sigma);
    s.detector.threshold_factor = get_or(d, "threshold_factor", s.detector.threshold_factor);
    s.detector.calibration_length = get_or(d, "calibration_length", s.detector.calibration_length);
    s.detector.placement = placement_from(get_or<std::string>(d, "placement", "input"));
    if (d.contains("model") && !d.at("model").is_null()) {
      const Json& m = d.at("model");
      s.model = model_from_json(m.is_string() ? read_json(base / m.get<std::string>()) : m);
    }
    if (d.contains("calibration") && !d.at("calibration").is_null()) {
      const Json& c = d.at("calibration");
      s.calibration = calibration_from_json(c.is_string() ? read_json(base / c.get<std::string>()) : c);
    }
  }
  if (j.contains("identification")) {
    const Json& d = j.at("identification");
    allow_keys(d, where + " identification", {"beta", "pulse_width", "samples", "candidates", "block_rows"});
    auto& id = s.identification;
    id.beta = get_or(d, "beta", id.beta);
    id.pulse_width = get_or(d, "pulse_width", id.pulse_width);
    id.samples = get_or(d, "samples", id.samples);
    id.candidates = get_or<std::vector<Index>>(d, "candidates", {});
    id.block_rows = get_or(d, "block_rows", id.block_rows);
  }
  return s;
}

Json microgrid_to_json(const MicrogridSpec& s) {
  Json j;
  j["name"] = s.name;
  j["ibrs"] = s.ibr_names;
  Json loads = Json::array();
  for (std::size_t i = 0; i < s.load_names.size(); ++i)
    loads.push_back({{"name", s.load_names[i]}, {"power", s.load_power(static_cast<Index>(i))}});
  j["loads"] = loads;
  Json lines = Json::array();
  for (const auto& l : s.lines) lines.push_back({{"from", l.from}, {"to", l.to}, {"y", l.y}, {"theta", l.theta}});
  j["lines"] = lines;
  j["voltage"] = s.voltage;
  j["omega_c"] = s.omega_c;
  j["m_p"] = s.m_p;
  j["nominal_hz"] = s.nominal_hz;
  j["controller"] = to_string(s.controller);
  const CostWeights w = weights_of(s);
  j["q"] = vec_to_json(w.q);
  j["r"] = vec_to_json(w.r);
  j["pi"] = {{"kp", s.pi_kp}, {"ki", s.pi_ki}, {"clamp", s.pi_clamp}};
  j["slow_hold"] = s.slow_hold;
  Json d;
  d["enabled"] = s.detector.enabled;
  d["window"] = s.detector.window;
  d["sigma"] = s.detector.sigma;
  d["threshold_factor"] = s.detector.threshold_factor;
  d["calibration_length"] = s.detector.calibration_length;
  d["placement"] = placement_name(s.detector.placement);
  d["model"] = s.model ? model_to_json(*s.model) : Json();
  d["calibration"] = s.calibration ? calibration_to_json(*s.calibration) : Json();
  j["detector"] = d;
  j["identification"] = {{"beta", s.identification.beta},
                         {"pulse_width", s.identification.pulse_width},
                         {"samples", s.identification.samples},
                         {"candidates", s.identification.candidates},
                         {"block_rows", s.identification.block_rows}};
  return j;
}

}  // namespace

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& ex) {
    throw ConfigError(path.string() + ": " + ex.what());
  }
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Json model_to_json(const DiscreteModel& m) {
  return {{"order", m.order}, {"dt", m.dt}, {"a", mat_to_json(m.a_d)}, {"b", mat_to_json(m.b_d)},
          {"c", mat_to_json(m.c_d)}};
}

DiscreteModel model_from_json(const Json& j) {
  allow_keys(j, "model", {"order", "dt", "a", "b", "c"});
  DiscreteModel m;
  m.order = get_or<Index>(j, "order", 0);
  m.dt = get_or(j, "dt", m.dt);
  if (!j.contains("a") || !j.contains("b") || !j.contains("c")) throw ConfigError("model needs a, b and c");
  m.a_d = mat_from_json(j.at("a"), "model a");
  m.b_d = mat_from_json(j.at("b"), "model b");
  m.c_d = mat_from_json(j.at("c"), "model c");
  if (m.a_d.rows() != m.order || m.a_d.cols() != m.order || m.b_d.rows() != m.order ||
      m.c_d.cols() != m.order)
    throw ConfigError("model matrices do not match the stated order");
  if (!(m.dt > 0.0)) throw ConfigError("model dt must be positive");
  return m;
}

Json calibration_to_json(const DetectorCalibration& c) {
  return {{"window", c.baseline.w},
          {"mu_star", vec_to_json(c.baseline.mu_star)},
          {"sigma_star", mat_to_json(c.baseline.sigma_star)},
          {"eps1", c.thresholds.eps1},
          {"eps2", c.thresholds.eps2},
          {"xi1_peak", c.xi1_peak},
          {"xi2_peak", c.xi2_peak}};
}

DetectorCalibration calibration_from_json(const Json& j) {
  allow_keys(j, "calibration", {"window", "mu_star", "sigma_star", "eps1", "eps2", "xi1_peak", "xi2_peak"});
  DetectorCalibration c;
  c.baseline.w = get_or(j, "window", c.baseline.w);
  if (!j.contains("mu_star") || !j.contains("sigma_star") || !j.contains("eps1") || !j.contains("eps2"))
    throw ConfigError("calibration needs mu_star, sigma_star, eps1 and eps2");
  c.baseline.mu_star = vec_from_json(j.at("mu_star"), "mu_star");
  c.baseline.sigma_star = mat_from_json(j.at("sigma_star"), "sigma_star");
  const Index n = c.baseline.mu_star.size();
  if (c.baseline.sigma_star.rows() != n || c.baseline.sigma_star.cols() != n)
    throw ConfigError("sigma_star must be square and match mu_star");
  c.thresholds.eps1 = get_or(j, "eps1", 0.0);
  c.thresholds.eps2 = get_or(j, "eps2", 0.0);
  c.xi1_peak = get_or(j, "xi1_peak", 0.0);
  c.xi2_peak = get_or(j, "xi2_peak", 0.0);
  return c;
}

Scenario scenario_from_json(const Json& j, const fs::path& base) {
  allow_keys(j, "scenario",
             {"schema_version", "seed", "simulation", "microgrids", "tie", "loads", "attacks", "events"});
  if (!j.contains("schema_version")) throw ConfigError("scenario is missing schema_version");
  Scenario s;
  s.schema_version = get_or(j, "schema_version", 0);
  if (s.schema_version != defaults::kSchemaVersion)
    throw ConfigError("unsupported schema_version " + std::to_string(s.schema_version));
  s.seed = get_or<std::uint64_t>(j, "seed", s.seed);
  if (j.contains("simulation")) {
    const Json& sim = j.at("simulation");
    allow_keys(sim, "simulation",
               {"horizon", "integrator_step", "control_period", "quadrature", "sensor_tau",
                "sensor_noise_std", "response"});
    s.horizon = get_or(sim, "horizon", s.horizon);
    s.integrator_step = get_or(sim, "integrator_step", s.integrator_step);
    s.control_period = get_or(sim, "control_period", s.control_period);
    const std::string quad = get_or<std::string>(sim, "quadrature", "euler");
    if (quad == "euler") s.quadrature = Quadrature::kForwardEuler;
    else if (quad == "trapezoid") s.quadrature = Quadrature::kTrapezoid;
    else throw ConfigError("quadrature must be 'euler' or 'trapezoid'");
    s.sensor_tau = get_or(sim, "sensor_tau", s.sensor_tau);
    s.sensor_noise_std = get_or(sim, "sensor_noise_std", s.sensor_noise_std);
    const std::string resp = get_or<std::string>(sim, "response", "none");
    if (resp == "none") s.response = Response::kNone;
    else if (resp == "auto") s.response = Response::kAuto;
    else throw ConfigError("response must be 'none' or 'auto'");
  }
  if (j.contains("microgrids")) {
    for (const auto& mg : j.at("microgrids")) s.microgrids.push_back(microgrid_from_json(mg, base));
  } else {
    s.microgrids = default_scenario().microgrids;
  }
  if (j.contains("tie") && !j.at("tie").is_null()) {
    const Json& t = j.at("tie");
    allow_keys(t, "tie", {"from", "to", "x", "y", "theta", "closed"});
    TieSpec tie;
    tie.from = get_or<std::string>(t, "from", "");
    tie.to = get_or<std::string>(t, "to", "");
    std::tie(tie.y, tie.theta) = admittance_from(t, "tie");
    tie.closed = get_or(t, "closed", false);
    s.tie = tie;
  }
  for (const auto& l : j.value("loads", Json::array())) {
    allow_keys(l, "load signal", {"kind", "node", "amplitude", "period", "width", "start"});
    LoadSignalSpec ls;
    ls.kind = load_kind_from(get_or<std::string>(l, "kind", "periodic"));
    ls.node = get_or<std::string>(l, "node", "");
    ls.amplitude = get_or(l, "amplitude", 0.0);
    ls.period = get_or(l, "period", ls.period);
    ls.width = get_or(l, "width", ls.width);
    ls.start = get_or(l, "start", ls.start);
    s.loads.push_back(ls);
  }
  for (const auto& a : j.value("attacks", Json::array())) {
    allow_keys(a, "attack", {"kind", "targets", "start", "end", "noise_std", "source"});
    AttackSpec as;
    const std::string kind = get_or<std::string>(a, "kind", "noise");
    if (kind == "noise") as.kind = AttackKind::kNoise;
    else if (kind == "replay") as.kind = AttackKind::kReplay;
    else throw ConfigError("attack kind must be 'noise' or 'replay'");
    as.targets = get_or<std::vector<std::string>>(a, "targets", {});
    as.start = get_or(a, "start", 0.0);
    as.end = get_or(a, "end", 0.0);
    as.noise_std = get_or(a, "noise_std", 0.0);
    if (a.contains("source")) {
      const auto src = get_or<std::vector<double>>(a, "source", {});
      if (src.size() != 2) throw ConfigError("replay source must be [start, end]");
      as.source_start = src[0];
      as.source_end = src[1];
    }
    s.attacks.push_back(as);
  }
  for (const auto& e : j.value("events", Json::array())) {
    allow_keys(e, "event", {"time", "action", "microgrid", "controller"});
    Event ev;
    ev.time = get_or(e, "time", 0.0);
    ev.action = event_from_string(get_or<std::string>(e, "action", ""));
    ev.microgrid = get_or<std::string>(e, "microgrid", "");
    ev.controller = controller_from_string(get_or<std::string>(e, "controller", "optimal"));
    s.events.push_back(ev);
  }
  validate(s);
  return s;
}

Json scenario_to_json(const Scenario& s) {
  Json j;
  j["schema_version"] = s.schema_version;
  j["seed"] = s.seed;
  j["simulation"] = {{"horizon", s.horizon},
                     {"integrator_step", s.integrator_step},
                     {"control_period", s.control_period},
                     {"quadrature", s.quadrature == Quadrature::kTrapezoid ? "trapezoid" : "euler"},
                     {"sensor_tau", s.sensor_tau},
                     {"sensor_noise_std", s.sensor_noise_std},
                     {"response", s.response == Response::kAuto ? "auto" : "none"}};
  Json mgs = Json::array();
  for (const auto& mg : s.microgrids) mgs.push_back(microgrid_to_json(mg));
  j["microgrids"] = mgs;
  if (s.tie) {
    j["tie"] = {{"from", s.tie->from}, {"to", s.tie->to}, {"y", s.tie->y}, {"theta", s.tie->theta},
                {"closed", s.tie->closed}};
  } else {
    j["tie"] = nullptr;
  }
  Json loads = Json::array();
  for (const auto& l : s.loads)
    loads.push_back({{"kind", load_kind_name(l.kind)}, {"node", l.node}, {"amplitude", l.amplitude},
                     {"period", l.period}, {"width", l.width}, {"start", l.start}});
  j["loads"] = loads;
  Json attacks = Json::array();
  for (const auto& a : s.attacks)
    attacks.push_back({{"kind", a.kind == AttackKind::kNoise ? "noise" : "replay"},
                       {"targets", a.targets},
                       {"start", a.start},
                       {"end", a.end},
                       {"noise_std", a.noise_std},
                       {"source", {a.source_start, a.source_end}}});
  j["attacks"] = attacks;
  Json events = Json::array();
  for (const auto& e : s.events)
    events.push_back({{"time", e.time}, {"action", to_string(e.action)}, {"microgrid", e.microgrid},
                      {"controller", to_string(e.controller)}});
  j["events"] = events;
  return j;
}

Scenario load_scenario(const fs::path& path) {
  return scenario_from_json(read_json(path), path.parent_path());
}

void save_scenario(const fs::path& path, const Scenario& s) { write_json(path, scenario_to_json(s)); }

}  // namespace magc
