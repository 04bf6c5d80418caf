#include "magc/simcore.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "magc/errors.hpp"

namespace magc {

namespace {

constexpr double kTimeSlack = 1e-9;

long step_index(double t, double period) {
  return static_cast<long>(std::llround(t / period));
}

Index find_name(const std::vector<std::string>& names, const std::string& n) {
  const auto it = std::find(names.begin(), names.end(), n);
  return it == names.end() ? -1 : static_cast<Index>(it - names.begin());
}

}  // namespace

// ---------------------------------------------------------------------------

ZohStepper make_zoh(const MatrixXd& a, const MatrixXd& b, double h) {
  if (!(h > 0.0)) throw ConfigError("integration step must be positive");
  require_dims(a.rows() == a.cols() && b.rows() == a.rows(), "ZOH system dimensions");
  const Index n = a.rows(), m = b.cols();
  MatrixXd aug = MatrixXd::Zero(n + m, n + m);
  aug.topLeftCorner(n, n) = a * h;
  aug.topRightCorner(n, m) = b * h;
  const MatrixXd e = aug.exp();
  return {e.topLeftCorner(n, n), e.topRightCorner(n, m), h};
}

VectorXd integrate_step(const LinearPlant& plant, const VectorXd& x, const VectorXd& d_omega_s,
                        const VectorXd& d_p_l, double h) {
  MatrixXd b(plant.n_state(), plant.n_ibr() + plant.n_load());
  b << plant.b1, plant.f;
  VectorXd u(b.cols());
  u << d_omega_s, d_p_l;
  return make_zoh(plant.a, b, h).step(x, u);
}

// ---------------------------------------------------------------------------

void validate(const LoadSignalSpec& spec) {
  if (!std::isfinite(spec.amplitude)) throw ConfigError("load amplitude must be finite");
  if (spec.kind == LoadKind::kPeriodicPulse) {
    if (!(spec.period > 0.0) || !(spec.width > 0.0) || !(spec.period > spec.width))
      throw ConfigError("periodic load needs period > width > 0");
  }
}

double load_consumption(const LoadSignalSpec& spec, double t) {
  switch (spec.kind) {
    case LoadKind::kConstant:
      return spec.amplitude;
    case LoadKind::kStep:
      return t + kTimeSlack >= spec.start ? spec.amplitude : 0.0;
    case LoadKind::kPeriodicPulse: {
      if (t + kTimeSlack < spec.start) return 0.0;
      double phase = std::fmod(t - spec.start + kTimeSlack, spec.period);
      return phase < spec.width ? spec.amplitude : 0.0;
    }
  }
  return 0.0;
}

VectorXd load_signal(const std::vector<LoadSignalSpec>& specs, const std::vector<Index>& node_index,
                     Index n_load, double t) {
  require_dims(specs.size() == node_index.size(), "one node index per load signal");
  VectorXd d = VectorXd::Zero(n_load);
  for (std::size_t i = 0; i < specs.size(); ++i) d(node_index[i]) -= load_consumption(specs[i], t);
  return d;
}

void validate(const AttackSpec& spec) {
  if (!(spec.start < spec.end)) throw ConfigError("attack needs start < end");
  if (spec.targets.empty()) throw ConfigError("attack needs at least one target");
  if (spec.kind == AttackKind::kNoise && !(spec.noise_std >= 0.0))
    throw ConfigError("attack noise std must be >= 0");
  if (spec.kind == AttackKind::kReplay) {
    if (!(spec.source_start >= 0.0 && spec.source_start < spec.source_end))
      throw ConfigError("replay source window must be non-empty");
    if (spec.source_end > spec.start + kTimeSlack)
      throw ConfigError("replay source window must precede the attack");
  }
}

bool attack_active(const AttackSpec& spec, double t) {
  return t + kTimeSlack >= spec.start && t + kTimeSlack < spec.end;
}

void apply_attack(VectorXd& received, const AttackSpec& spec, const std::vector<Index>& channels,
                  long k, double control_period, const std::vector<VectorXd>& history,
                  std::mt19937_64& rng) {
  const double t = static_cast<double>(k) * control_period;
  if (!attack_active(spec, t)) return;
  if (spec.kind == AttackKind::kNoise) {
    if (spec.noise_std == 0.0) return;
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    for (Index c : channels) received(c) += noise(rng);
    return;
  }
  const long src0 = step_index(spec.source_start, control_period);
  const long len = std::max(1L, step_index(spec.source_end, control_period) - src0);
  const long start = static_cast<long>(std::ceil(spec.start / control_period - kTimeSlack));
  const long src = src0 + (k - start) % len;
  if (src < 0 || src >= static_cast<long>(history.size()))
    throw NumericalError("replay source window is not recorded yet");
  for (Index c : channels) received(c) = history[static_cast<std::size_t>(src)](c);
}

// ---------------------------------------------------------------------------

MergedNetwork close_tie_line(const NetworkSpec& mg1, const NetworkSpec& mg2,
                             const std::optional<Branch>& tie_local) {
  validate(mg1);
  validate(mg2);
  MergedNetwork out;
  NetworkSpec& net = out.network;
  net.n_ibr = mg1.n_ibr + mg2.n_ibr;
  net.n_load = mg1.n_load + mg2.n_load;
  const Index n = net.n_nodes();
  net.g_self = VectorXd::Zero(n);
  net.v_star = VectorXd::Zero(n);

  auto place = [&](const NetworkSpec& g, Index ibr_base, Index load_base, std::vector<Index>& map) {
    map.resize(static_cast<std::size_t>(g.n_nodes()));
    for (Index i = 0; i < g.n_nodes(); ++i) {
      const Index m = i < g.n_ibr ? ibr_base + i : load_base + (i - g.n_ibr);
      map[static_cast<std::size_t>(i)] = m;
      net.g_self(m) = g.g_self(i);
      net.v_star(m) = g.v_star(i);
    }
    for (Branch b : g.branches) {
      b.from = map[static_cast<std::size_t>(b.from)];
      b.to = map[static_cast<std::size_t>(b.to)];
      net.branches.push_back(b);
    }
  };
  place(mg1, 0, net.n_ibr, out.map1);
  place(mg2, mg1.n_ibr, net.n_ibr + mg1.n_load, out.map2);

  if (tie_local) {
    if (tie_local->from < 0 || tie_local->from >= mg1.n_nodes() || tie_local->to < 0 ||
        tie_local->to >= mg2.n_nodes())
      throw ConfigError("tie-line endpoints out of range");
    Branch b = *tie_local;
    b.from = out.map1[static_cast<std::size_t>(tie_local->from)];
    b.to = out.map2[static_cast<std::size_t>(tie_local->to)];
    out.tie_branch = static_cast<Index>(net.branches.size());
    net.branches.push_back(b);
  }
  return out;
}

OperatingPoint merge_operating_points(const MergedNetwork& merged, const OperatingPoint& op1,
                                      const OperatingPoint& op2, Index tie_from_local,
                                      Index tie_to_local) {
  const Index n = merged.network.n_nodes();
  OperatingPoint op;
  op.delta_star = VectorXd::Zero(n);
  op.p_i_star = VectorXd::Zero(n);
  op.q_i_star = VectorXd::Zero(n);
  const double shift = op1.delta_star(tie_from_local) - op2.delta_star(tie_to_local);
  for (std::size_t i = 0; i < merged.map1.size(); ++i) {
    op.delta_star(merged.map1[i]) = op1.delta_star(static_cast<Index>(i));
    op.p_i_star(merged.map1[i]) = op1.p_i_star(static_cast<Index>(i));
  }
  for (std::size_t i = 0; i < merged.map2.size(); ++i) {
    op.delta_star(merged.map2[i]) = op2.delta_star(static_cast<Index>(i)) + shift;
    op.p_i_star(merged.map2[i]) = op2.p_i_star(static_cast<Index>(i));
  }
  return op;
}

// ---------------------------------------------------------------------------

const char* to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::kOptimal: return "optimal";
    case ControllerKind::kDecentralized: return "decentralized";
    case ControllerKind::kObserver: return "observer";
    case ControllerKind::kPi: return "pi";
    case ControllerKind::kSlowLqr: return "slow-lqr";
    case ControllerKind::kNone: return "none";
  }
  return "?";
}

ControllerKind controller_from_string(const std::string& s) {
  for (auto k : {ControllerKind::kOptimal, ControllerKind::kDecentralized, ControllerKind::kObserver,
                 ControllerKind::kPi, ControllerKind::kSlowLqr, ControllerKind::kNone})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown controller '" + s + "'");
}

const char* to_string(EventAction a) {
  switch (a) {
    case EventAction::kDisableController: return "disable-controller";
    case EventAction::kSetController: return "set-controller";
    case EventAction::kCloseTie: return "close-tie";
    case EventAction::kOpenTie: return "open-tie";
  }
  return "?";
}

EventAction event_from_string(const std::string& s) {
  for (auto a : {EventAction::kDisableController, EventAction::kSetController, EventAction::kCloseTie,
                 EventAction::kOpenTie})
    if (s == to_string(a)) return a;
  throw ConfigError("unknown event action '" + s + "'");
}

MicrogridSpec default_microgrid_1() {
  MicrogridSpec s;
  s.name = "MG1";
  s.ibr_names = {"g1", "g2", "g3"};
  s.load_names = {"L1", "L2"};
  const double v2 = defaults::kVoltage * defaults::kVoltage;
  s.load_power = Eigen::Vector2d(v2 / 25.0, v2 / 20.0);
  s.lines = {{"g1", "L1", 2.0}, {"g2", "L1", 2.0}, {"g3", "L2", 2.0}, {"L1", "L2", 2.0}};
  return s;
}

MicrogridSpec default_microgrid_2() {
  MicrogridSpec s;
  s.name = "MG2";
  s.ibr_names = {"g4", "g5"};
  s.load_names = {"L3"};
  s.load_power = VectorXd::Constant(1, defaults::kVoltage * defaults::kVoltage / 33.0);
  s.lines = {{"g4", "L3", 2.0}, {"g5", "L3", 2.0}};
  return s;
}

Scenario default_scenario() {
  Scenario s;
  s.microgrids = {default_microgrid_1(), default_microgrid_2()};
  s.tie = TieSpec{"L2", "L3", 1.0 / 6.0, defaults::kBranchTheta, false};
  return s;
}

CostWeights weights_of(const MicrogridSpec& spec) {
  const Index n = static_cast<Index>(spec.ibr_names.size());
  CostWeights w = CostWeights::uniform(n);
  if (spec.q.size() > 0) w.q = spec.q;
  if (spec.r.size() > 0) w.r = spec.r;
  return w;
}

Microgrid build_microgrid(const MicrogridSpec& spec) {
  std::vector<std::string> names = spec.ibr_names;
  names.insert(names.end(), spec.load_names.begin(), spec.load_names.end());
  NetworkSpec net;
  net.n_ibr = static_cast<Index>(spec.ibr_names.size());
  net.n_load = static_cast<Index>(spec.load_names.size());
  net.g_self = VectorXd::Zero(net.n_nodes());
  net.v_star = VectorXd::Constant(net.n_nodes(), spec.voltage);
  for (const auto& l : spec.lines) {
    const Index a = find_name(names, l.from), b = find_name(names, l.to);
    if (a < 0 || b < 0)
      throw ConfigError("line " + l.from + "-" + l.to + " references an unknown node in " + spec.name);
    net.branches.push_back({a, b, l.y, l.theta});
  }
  IbrParams ibr;
  ibr.omega_c = spec.omega_c;
  ibr.m_p = spec.m_p;
  ibr.omega_nom = 2.0 * std::numbers::pi * spec.nominal_hz;
  std::vector<IbrParams> ibrs(static_cast<std::size_t>(net.n_ibr), ibr);
  return build_microgrid(spec.name, std::move(net), std::move(ibrs), std::move(names), spec.load_power);
}

void validate(const Scenario& s) {
  if (s.schema_version != defaults::kSchemaVersion)
    throw ConfigError("unsupported schema_version " + std::to_string(s.schema_version));
  if (!(s.horizon >= 0.0)) throw ConfigError("horizon must be >= 0");
  if (!(s.integrator_step > 0.0) || !(s.control_period > 0.0))
    throw ConfigError("integrator step and control period must be positive");
  const double ratio = s.control_period / s.integrator_step;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio || std::round(ratio) < 1.0)
    throw ConfigError("control period must be an integer multiple of the integrator step");
  if (!(s.sensor_tau >= 0.0) || !(s.sensor_noise_std >= 0.0))
    throw ConfigError("sensor parameters must be >= 0");
  if (s.microgrids.empty() || s.microgrids.size() > 2)
    throw ConfigError("a scenario has one or two microgrids");
  if (s.tie && s.microgrids.size() != 2) throw ConfigError("a tie line needs two microgrids");

  std::vector<std::string> all;
  for (const auto& mg : s.microgrids) {
    if (mg.ibr_names.empty()) throw ConfigError("microgrid " + mg.name + " has no IBRs");
    if (mg.load_power.size() != static_cast<Index>(mg.load_names.size()))
      throw ConfigError("microgrid " + mg.name + ": one power per load");
    const Index n = static_cast<Index>(mg.ibr_names.size());
    if ((mg.q.size() != 0 && mg.q.size() != n) || (mg.r.size() != 0 && mg.r.size() != n))
      throw ConfigError("microgrid " + mg.name + ": weights need one entry per IBR");
    if (mg.detector.enabled && mg.detector.window < 1) throw ConfigError("detector window must be >= 1");
    if (!(mg.slow_hold > 0.0)) throw ConfigError("slow-lqr hold must be positive");
    all.insert(all.end(), mg.ibr_names.begin(), mg.ibr_names.end());
    all.insert(all.end(), mg.load_names.begin(), mg.load_names.end());
  }
  auto sorted = all;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ConfigError("node names must be unique across microgrids");
  for (const auto& l : s.loads) {
    validate(l);
    bool found = false;
    for (const auto& mg : s.microgrids) found |= find_name(mg.load_names, l.node) >= 0;
    if (!found) throw ConfigError("load signal references unknown load node '" + l.node + "'");
  }
  for (const auto& a : s.attacks) {
    validate(a);
    for (const auto& t : a.targets) {
      bool found = false;
      for (const auto& mg : s.microgrids) found |= find_name(mg.ibr_names, t) >= 0;
      if (!found) throw ConfigError("attack targets unknown IBR '" + t + "'");
    }
  }
  for (const auto& e : s.events) {
    if (!(e.time >= 0.0)) throw ConfigError("event time must be >= 0");
    if (e.action == EventAction::kCloseTie || e.action == EventAction::kOpenTie) {
      if (!s.tie) throw ConfigError("tie event without a tie line");
    } else {
      bool found = false;
      for (const auto& mg : s.microgrids) found |= mg.name == e.microgrid;
      if (!found) throw ConfigError("event references unknown microgrid '" + e.microgrid + "'");
    }
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 of the combined value
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::pair<MatrixXd, MatrixXd> excitation_experiment(const LinearPlant& plant,
                                                    const IdentificationSpec& spec, double dt,
                                                    std::uint64_t seed) {
  ExcitationSpec ex;
  ex.dt = dt;
  ex.dt_prime = spec.pulse_width;
  ex.beta = spec.beta;
  ex.k0 = spec.samples;
  ex.seed = seed;
  const MatrixXd u = generate_excitation(ex, plant.n_ibr());
  const ZohStepper zoh = make_zoh(plant.a, plant.b1, dt);
  MatrixXd y(u.rows(), plant.n_ibr());
  VectorXd x = VectorXd::Zero(plant.n_state());
  const VectorXd no_load = VectorXd::Zero(plant.n_load());
  for (Index k = 0; k < u.rows(); ++k) {
    if (k > 0) x = zoh.step(x, u.row(k - 1).transpose());
    y.row(k) = generator_power(plant, x, no_load).transpose();
  }
  return {u, y};
}

// ---------------------------------------------------------------------------
// Closed-loop engine

namespace {

struct Agent {
  Index offset = 0;
  Index n = 0;
  std::string name;
  std::vector<IbrParams> ibrs;
  ControllerKind configured = ControllerKind::kOptimal;
  ControllerKind mode = ControllerKind::kOptimal;
  bool zeroed = false;
  bool auto_switched = false;

  ControllerGain gain;
  VectorXd z, command, watermark, applied, p_rx_prev;

  bool has_model = false;
  DiscreteModel model;
  ObserverState obs;

  bool detect = false;
  DetectorState det;
  std::optional<BaselineStats> baseline;
  std::optional<WatermarkGenerator> gen;
  double xi1_peak = 0.0, xi2_peak = 0.0;

  PiController pi;
  long hold_steps = 1;
  long hold_counter = 0;

  std::string tag() const { return zeroed ? "zeroed" : to_string(mode); }
};

struct Engine {
  const Scenario& sc;
  bool calibration = false;
  std::vector<Microgrid> grids;
  std::vector<Agent> agents;
  LinearPlant open_plant, closed_plant;
  ZohStepper zoh_open, zoh_closed;
  bool has_tie = false;
  bool tie_closed = false;
  std::vector<Index> load_index;  // per load signal, merged load column
  std::vector<std::vector<Index>> attack_channels;
  std::vector<std::mt19937_64> attack_rng;
  SimulationResult result;

  explicit Engine(const Scenario& s, bool calib) : sc(s), calibration(calib) {}

  void log(double t, const std::string& what) {
    std::ostringstream o;
    o.precision(6);
    o << "t=" << t << " " << what;
    result.log.push_back(o.str());
  }

  static ZohStepper zoh_for(const LinearPlant& p, double h) {
    MatrixXd b(p.n_state(), p.n_ibr() + p.n_load());
    b << p.b1, p.f;
    return make_zoh(p.a, b, h);
  }

  void build() {
    for (const auto& spec : sc.microgrids) grids.push_back(build_microgrid(spec));

    std::vector<IbrParams> all_ibrs;
    for (const auto& g : grids) all_ibrs.insert(all_ibrs.end(), g.ibrs.begin(), g.ibrs.end());

    if (grids.size() == 1) {
      open_plant = grids[0].plant;
    } else {
      std::optional<Branch> tie;
      Index from = 0, to = 0;
      if (sc.tie) {
        from = find_name(grids[0].node_names, sc.tie->from);
        to = find_name(grids[1].node_names, sc.tie->to);
        if (from < 0 || to < 0) throw ConfigError("tie-line endpoints are not nodes of the two microgrids");
        tie = Branch{from, to, sc.tie->y, sc.tie->theta};
        has_tie = true;
      }
      const MergedNetwork open = close_tie_line(grids[0].network, grids[1].network, std::nullopt);
      const OperatingPoint op = merge_operating_points(open, grids[0].op, grids[1].op, from, to);
      open_plant = assemble_plant(all_ibrs, build_h_matrix(open.network, op));
      if (has_tie) {
        const MergedNetwork closed = close_tie_line(grids[0].network, grids[1].network, tie);
        const OperatingPoint solved = solve_operating_point(closed.network, op.p_i_star, &op.delta_star);
        closed_plant = assemble_plant(all_ibrs, build_h_matrix(closed.network, solved));
        zoh_closed = zoh_for(closed_plant, sc.integrator_step);
        tie_closed = sc.tie->closed;
      }
    }
    zoh_open = zoh_for(open_plant, sc.integrator_step);

    // Load columns and attack channels in merged numbering.
    std::vector<std::string> load_names, ibr_names;
    for (const auto& g : sc.microgrids) {
      load_names.insert(load_names.end(), g.load_names.begin(), g.load_names.end());
      ibr_names.insert(ibr_names.end(), g.ibr_names.begin(), g.ibr_names.end());
    }
    for (const auto& l : sc.loads) load_index.push_back(find_name(load_names, l.node));
    for (std::size_t a = 0; a < sc.attacks.size(); ++a) {
      std::vector<Index> ch;
      for (const auto& t : sc.attacks[a].targets) ch.push_back(find_name(ibr_names, t));
      attack_channels.push_back(ch);
      attack_rng.emplace_back(derive_seed(sc.seed, 100 + a));
    }

    Index offset = 0;
    for (std::size_t i = 0; i < grids.size(); ++i) {
      const auto& spec = sc.microgrids[i];
      Agent ag;
      ag.name = spec.name;
      ag.offset = offset;
      ag.n = grids[i].plant.n_ibr();
      ag.ibrs = grids[i].ibrs;
      ag.configured = ag.mode = spec.controller;
      ag.gain = lqr_gain(grids[i].plant, weights_of(spec), make_transform(grids[i].ibrs));
      for (const auto& w : ag.gain.warnings) log(0.0, spec.name + " design warning: " + w);
      ag.z = VectorXd::Zero(ag.n);
      ag.command = ag.watermark = ag.applied = ag.p_rx_prev = VectorXd::Zero(ag.n);
      ag.pi.kp = spec.pi_kp;
      ag.pi.ki = spec.pi_ki;
      ag.pi.clamp = spec.pi_clamp;
      ag.pi.integrator = VectorXd::Zero(ag.n);
      ag.hold_steps = std::max(1L, step_index(spec.slow_hold, sc.control_period));
      if (spec.model) {
        ag.has_model = true;
        ag.model = *spec.model;
        require_dims(ag.model.n_inputs() == ag.n && ag.model.n_outputs() == ag.n,
                     "prediction model of " + spec.name + " matches its IBR count");
        ag.obs = make_observer(ag.model, ag.n);
      }
      ag.detect = spec.detector.enabled;
      if (ag.detect) {
        if (!ag.has_model) throw ConfigError("detector of " + spec.name + " needs a prediction model");
        double e1 = std::numeric_limits<double>::infinity(), e2 = e1;
        if (!calibration) {
          if (!spec.calibration) throw ConfigError("detector of " + spec.name + " is not calibrated");
          ag.baseline = spec.calibration->baseline;
          e1 = spec.calibration->thresholds.eps1;
          e2 = spec.calibration->thresholds.eps2;
        }
        ag.det = make_detector(ag.model, spec.detector.window, e1, e2, spec.detector.placement);
        WatermarkConfig wc = WatermarkConfig::isotropic(ag.n, spec.detector.sigma,
                                                        derive_seed(sc.seed, 10 + i));
        wc.placement = spec.detector.placement;
        ag.gen.emplace(wc);
      }
      agents.push_back(std::move(ag));
      offset += grids[i].plant.n_ibr();
    }
  }

  const LinearPlant& plant() const { return tie_closed ? closed_plant : open_plant; }
  const ZohStepper& zoh() const { return tie_closed ? zoh_closed : zoh_open; }

  Agent* agent_named(const std::string& n) {
    for (auto& a : agents)
      if (a.name == n) return &a;
    return nullptr;
  }

  void set_mode(Agent& a, ControllerKind k, double t) {
    if (a.mode == ControllerKind::kObserver && k != ControllerKind::kObserver && a.has_model)
      a.z = a.obs.z_hat;
    if (k == ControllerKind::kObserver && !a.has_model)
      throw ConfigError("observer controller of " + a.name + " needs a prediction model");
    if (k == ControllerKind::kSlowLqr) a.hold_counter = 0;
    a.mode = k;
    a.zeroed = false;
    log(t, a.name + " controller -> " + to_string(k));
  }

  void close_tie(double t) {
    if (!has_tie || tie_closed) return;
    tie_closed = true;
    log(t, "tie line closed");
  }

  bool neighbor_available(const Agent& self) const {
    if (!has_tie) return false;
    for (const auto& a : agents)
      if (&a != &self && !a.zeroed && a.mode != ControllerKind::kNone) return true;
    return false;
  }

  SimulationResult run() {
    build();
    const double T = sc.control_period;
    const long steps = step_index(sc.horizon, T);
    const long nsub = step_index(T, sc.integrator_step);
    const Index n_state = open_plant.n_state();
    const Index n_ibr = open_plant.n_ibr();
    const Index n_load = open_plant.n_load();
    const Index n_mg = static_cast<Index>(agents.size());

    TimeSeries& ts = result.series;
    for (const auto& g : sc.microgrids) {
      ts.microgrid_names.push_back(g.name);
      ts.ibr_names.insert(ts.ibr_names.end(), g.ibr_names.begin(), g.ibr_names.end());
    }
    const Index rows = steps + 1;
    for (MatrixXd* m : {&ts.delta, &ts.omega, &ts.omega_measured, &ts.p_true, &ts.p_received,
                        &ts.command, &ts.watermark, &ts.z, &ts.z_hat})
      m->setZero(rows, n_ibr);
    for (MatrixXd* m : {&ts.xi1, &ts.xi2, &ts.eps1, &ts.eps2, &ts.flag}) m->setZero(rows, n_mg);
    ts.time.reserve(static_cast<std::size_t>(rows));

    for (const auto& a : agents) {
      if (!a.detect) continue;
      DetectorTrace tr;
      tr.microgrid = a.name;
      tr.command.setZero(rows, a.n);
      tr.watermark.setZero(rows, a.n);
      tr.received.setZero(rows, a.n);
      result.traces.push_back(std::move(tr));
    }

    std::vector<Event> events = sc.events;
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.time < b.time; });
    std::size_t next_event = 0;

    VectorXd x = VectorXd::Zero(n_state);
    VectorXd sensor = VectorXd::Zero(n_ibr);
    std::mt19937_64 sensor_rng(derive_seed(sc.seed, 1));
    std::normal_distribution<double> sensor_noise(0.0, sc.sensor_noise_std > 0 ? sc.sensor_noise_std : 1.0);
    std::vector<VectorXd> history;
    history.reserve(static_cast<std::size_t>(rows));

    for (long k = 0; k <= steps; ++k) {
      const double t = static_cast<double>(k) * T;

      while (next_event < events.size() && events[next_event].time <= t + kTimeSlack * T) {
        const Event& ev = events[next_event++];
        switch (ev.action) {
          case EventAction::kCloseTie: close_tie(t); break;
          case EventAction::kOpenTie:
            if (tie_closed) {
              tie_closed = false;
              log(t, "tie line opened");
            }
            break;
          case EventAction::kDisableController: {
            Agent* a = agent_named(ev.microgrid);
            set_mode(*a, ControllerKind::kNone, t);
            a->auto_switched = false;
            break;
          }
          case EventAction::kSetController: {
            Agent* a = agent_named(ev.microgrid);
            set_mode(*a, ev.controller, t);
            a->configured = ev.controller;
            a->auto_switched = false;
            break;
          }
        }
      }

      const VectorXd d_p_l = load_signal(sc.loads, load_index, n_load, t);
      const VectorXd p_true = generator_power(plant(), x, d_p_l);
      VectorXd reading = p_true;
      if (sc.sensor_noise_std > 0.0)
        for (Index i = 0; i < n_ibr; ++i) reading(i) += sensor_noise(sensor_rng);
      history.push_back(reading);
      VectorXd received = reading;
      for (std::size_t a = 0; a < sc.attacks.size(); ++a)
        apply_attack(received, sc.attacks[a], attack_channels[a], k, T, history, attack_rng[a]);

      std::size_t trace_i = 0;
      for (std::size_t ai = 0; ai < agents.size(); ++ai) {
        Agent& a = agents[ai];
        const VectorXd rx = received.segment(a.offset, a.n);
        if (k > 0) {
          const VectorXd p_quad = sc.quadrature == Quadrature::kTrapezoid ? VectorXd(0.5 * (a.p_rx_prev + rx))
                                                                          : a.p_rx_prev;
          a.z += z_rate(a.ibrs, a.applied, p_quad) * T;
          if (a.has_model) observer_step(a.obs, a.model, a.ibrs, a.applied, T);
        }
        a.p_rx_prev = rx;

        if (a.detect) {
          dw_step(a.det, a.baseline, a.model, rx, a.command, a.watermark);
          if (a.det.m_window.full()) {
            a.xi1_peak = std::max(a.xi1_peak, a.det.xi1);
            a.xi2_peak = std::max(a.xi2_peak, a.det.xi2);
          }
          if (sc.response == Response::kAuto) respond(a, t);
        }

        VectorXd u = VectorXd::Zero(a.n);
        if (!a.zeroed) {
          switch (a.mode) {
            case ControllerKind::kOptimal: u = control_optimal(a.gain, a.z); break;
            case ControllerKind::kDecentralized: u = control_decentralized(a.ibrs, rx); break;
            case ControllerKind::kObserver: u = control_observer(a.gain, a.obs); break;
            case ControllerKind::kPi:
              u = control_pi_baseline(a.pi, VectorXd(-sensor.segment(a.offset, a.n)), T);
              break;
            case ControllerKind::kSlowLqr:
              u = a.hold_counter % a.hold_steps == 0 ? control_optimal(a.gain, a.z) : a.command;
              ++a.hold_counter;
              break;
            case ControllerKind::kNone: break;
          }
        }
        const bool marking = a.detect && !a.zeroed && a.mode != ControllerKind::kObserver &&
                             a.mode != ControllerKind::kNone;
        VectorXd e = VectorXd::Zero(a.n);
        if (a.detect) {
          const VectorXd draw = a.gen->draw();  // keep the stream aligned with time
          if (marking) e = draw;
        }
        a.command = u;
        a.watermark = e;
        a.applied = u + e;

        ts.command.row(k).segment(a.offset, a.n) = u.transpose();
        ts.watermark.row(k).segment(a.offset, a.n) = e.transpose();
        ts.z.row(k).segment(a.offset, a.n) = a.z.transpose();
        if (a.has_model) ts.z_hat.row(k).segment(a.offset, a.n) = a.obs.z_hat.transpose();
        const Index ci = static_cast<Index>(ai);
        if (a.detect) {
          ts.xi1(k, ci) = a.det.xi1;
          ts.xi2(k, ci) = a.det.xi2;
          ts.eps1(k, ci) = a.det.eps1;
          ts.eps2(k, ci) = a.det.eps2;
          ts.flag(k, ci) = a.det.flag ? 1.0 : 0.0;
          DetectorTrace& tr = result.traces[trace_i++];
          tr.time.push_back(t);
          tr.command.row(k) = u.transpose();
          tr.watermark.row(k) = e.transpose();
          tr.received.row(k) = rx.transpose();
        }
      }

      ts.time.push_back(t);
      for (Index i = 0; i < n_ibr; ++i) {
        ts.delta(k, i) = x(2 * i);
        ts.omega(k, i) = x(2 * i + 1);
      }
      ts.omega_measured.row(k) = sensor.transpose();
      ts.p_true.row(k) = p_true.transpose();
      ts.p_received.row(k) = received.transpose();
      std::vector<std::string> tags;
      for (const auto& a : agents) tags.push_back(a.tag());
      ts.mode.push_back(std::move(tags));
      ts.tie_closed.push_back(tie_closed ? 1 : 0);

      if (k == steps) break;

      VectorXd u_all(n_ibr);
      for (const auto& a : agents) u_all.segment(a.offset, a.n) = a.applied;
      VectorXd input(n_ibr + n_load);
      for (long s = 0; s < nsub; ++s) {
        const double ts_sub = t + static_cast<double>(s) * sc.integrator_step;
        input << u_all, load_signal(sc.loads, load_index, n_load, ts_sub);
        x = zoh().step(x, input);
        VectorXd omega(n_ibr);
        for (Index i = 0; i < n_ibr; ++i) omega(i) = x(2 * i + 1);
        sensor = measure_frequency_lagged(omega, sensor, sc.sensor_tau, sc.integrator_step);
      }
      if (!x.allFinite()) {
        std::ostringstream msg;
        msg << "simulation diverged at t=" << t << " s (step " << k << " of " << steps << ")";
        throw NumericalError(msg.str());
      }
    }

    for (std::size_t i = 0; i < agents.size(); ++i) {
      MicrogridReport r;
      r.name = agents[i].name;
      r.gain = agents[i].gain;
      if (agents[i].has_model) r.model = agents[i].model;
      if (agents[i].detect && agents[i].baseline) {
        DetectorCalibration c;
        c.baseline = *agents[i].baseline;
        c.xi1_peak = agents[i].xi1_peak;
        c.xi2_peak = agents[i].xi2_peak;
        c.thresholds = {agents[i].det.eps1, agents[i].det.eps2};
        r.calibration = c;
      }
      result.reports.push_back(std::move(r));
    }
    return std::move(result);
  }

  // Automatic reaction to the detector flag.
  void respond(Agent& a, double t) {
    const bool controlling = !a.zeroed && a.mode != ControllerKind::kNone &&
                             a.mode != ControllerKind::kObserver;
    if (a.det.flag && controlling) {
      a.auto_switched = true;
      if (neighbor_available(a)) {
        a.zeroed = true;
        log(t, a.name + " attack flagged: commands and watermark zeroed, networking with neighbour");
        close_tie(t);
      } else if (a.has_model) {
        a.mode = ControllerKind::kObserver;
        log(t, a.name + " attack flagged: switched to observer-based control");
      }
    } else if (!a.det.flag && a.auto_switched) {
      a.auto_switched = false;
      if (a.mode == ControllerKind::kObserver) a.z = a.obs.z_hat;
      a.mode = a.configured;
      a.zeroed = false;
      log(t, a.name + " flag cleared: controller -> " + std::string(to_string(a.mode)));
    }
  }
};

bool needs_model(const Scenario& s, const MicrogridSpec& mg) {
  if (mg.detector.enabled || mg.controller == ControllerKind::kObserver) return true;
  for (const auto& e : s.events)
    if (e.action == EventAction::kSetController && e.microgrid == mg.name &&
        e.controller == ControllerKind::kObserver)
      return true;
  return false;
}

}  // namespace

DetectorCalibration calibrate_detector(const Scenario& scenario, Index microgrid,
                                       const DiscreteModel& model) {
  Scenario cal = scenario;
  cal.attacks.clear();
  cal.events.clear();
  cal.response = Response::kNone;
  cal.seed = derive_seed(scenario.seed, 7);
  for (std::size_t i = 0; i < cal.microgrids.size(); ++i) {
    auto& mg = cal.microgrids[i];
    if (static_cast<Index>(i) == microgrid) {
      mg.model = model;
      mg.calibration.reset();
      if (mg.controller == ControllerKind::kObserver || mg.controller == ControllerKind::kNone)
        mg.controller = ControllerKind::kOptimal;
    } else {
      mg.detector.enabled = false;
    }
  }
  const auto& det = cal.microgrids[static_cast<std::size_t>(microgrid)].detector;
  if (!(det.calibration_length > 0.0)) throw ConfigError("calibration run length must be positive");
  cal.horizon = det.calibration_length;
  if (step_index(cal.horizon, cal.control_period) < det.window)
    throw ConfigError("calibration run is shorter than the detector window");

  Engine engine(cal, true);
  const SimulationResult r = engine.run();
  const auto& rep = r.reports[static_cast<std::size_t>(microgrid)];
  if (!rep.calibration) throw NumericalError("calibration run produced no baseline");
  DetectorCalibration c = *rep.calibration;
  c.thresholds = thresholds_from_peaks(c.xi1_peak, c.xi2_peak, det.threshold_factor);
  return c;
}

SimulationResult run_scenario(const Scenario& scenario) {
  validate(scenario);
  Scenario s = scenario;
  std::vector<std::optional<OrderReport>> reports(s.microgrids.size());
  for (std::size_t i = 0; i < s.microgrids.size(); ++i) {
    auto& mg = s.microgrids[i];
    if (mg.model || !needs_model(s, mg)) continue;
    const Microgrid grid = build_microgrid(mg);
    const auto [u, y] = excitation_experiment(grid.plant, mg.identification, s.control_period,
                                              derive_seed(s.seed, 3 + i));
    std::vector<Index> cands = mg.identification.candidates;
    if (cands.empty())
      for (Index d = defaults::kOrderMin; d <= defaults::kOrderMax; ++d) cands.push_back(d);
    IdentifyOptions opts;
    opts.block_rows = mg.identification.block_rows;
    OrderSelection sel = select_order(u, y, cands, s.control_period, opts);
    mg.model = sel.model;
    reports[i] = sel.report;
  }
  for (std::size_t i = 0; i < s.microgrids.size(); ++i) {
    auto& mg = s.microgrids[i];
    if (mg.detector.enabled && !mg.calibration)
      mg.calibration = calibrate_detector(s, static_cast<Index>(i), *mg.model);
  }

  Engine engine(s, false);
  SimulationResult r = engine.run();
  for (std::size_t i = 0; i < r.reports.size(); ++i) {
    r.reports[i].order_report = reports[i];
    if (s.microgrids[i].calibration) r.reports[i].calibration = s.microgrids[i].calibration;
  }
  return r;
}

SummaryMetrics summarize(const Scenario& scenario, const SimulationResult& result) {
  const TimeSeries& ts = result.series;
  SummaryMetrics m;
  const Index rows = ts.samples();
  const Index n = ts.omega.cols();
  m.rms_omega = VectorXd::Zero(n);
  m.steady_omega = VectorXd::Zero(n);
  m.steady_power = VectorXd::Zero(n);
  if (rows > 0) {
    m.rms_omega = (ts.omega.colwise().squaredNorm() / static_cast<double>(rows)).cwiseSqrt().transpose();
    const Index tail = std::max<Index>(1, rows / 10);
    m.steady_omega = ts.omega.bottomRows(tail).cwiseAbs().colwise().mean().transpose();
    m.steady_power = ts.p_true.bottomRows(tail).cwiseAbs().colwise().mean().transpose();
  }
  for (Index g = 0; g < ts.flag.cols(); ++g) m.flag_count.push_back(static_cast<int>(ts.flag.col(g).sum()));

  for (const auto& a : scenario.attacks) {
    // The attacked grid is the one owning the first target.
    Index grid = -1;
    for (std::size_t g = 0; g < scenario.microgrids.size(); ++g)
      if (find_name(scenario.microgrids[g].ibr_names, a.targets.front()) >= 0) grid = static_cast<Index>(g);
    double lat = std::numeric_limits<double>::quiet_NaN();
    if (grid >= 0 && grid < ts.flag.cols()) {
      for (Index k = 0; k < rows; ++k) {
        if (ts.time[static_cast<std::size_t>(k)] + kTimeSlack < a.start) continue;
        if (ts.flag(k, grid) > 0.5) {
          lat = ts.time[static_cast<std::size_t>(k)] - a.start;
          break;
        }
      }
    }
    m.latency.push_back(lat);
  }
  return m;
}

}  // namespace magc
