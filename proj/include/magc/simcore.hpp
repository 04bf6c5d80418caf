#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "magc/defaults.hpp"
#include "magc/lqr.hpp"
#include "magc/netmodel.hpp"
#include "magc/sysid.hpp"
#include "magc/transform.hpp"
#include "magc/watermark.hpp"

namespace magc {

// ---------------------------------------------------------------------------
// Plant stepping and sensors

/// Exact zero-order-hold discretisation of dx = A x + B u over a step h.
struct ZohStepper {
  MatrixXd phi;    // e^{Ah}
  MatrixXd gamma;  // ∫ e^{As} ds B
  double h = 0.0;

  template <typename DX, typename DU>
  VectorXd step(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DU>& u) const {
    return phi * x + gamma * u;
  }
};

ZohStepper make_zoh(const MatrixXd& a, const MatrixXd& b, double h);

/// Single ZOH step of the plant with [B1 F] inputs.
VectorXd integrate_step(const LinearPlant& plant, const VectorXd& x, const VectorXd& d_omega_s,
                        const VectorXd& d_p_l, double h);

inline VectorXd measure_power(const LinearPlant& plant, const VectorXd& x, const VectorXd& d_p_l) {
  return generator_power(plant, x, d_p_l);
}

/// First-order lag y' = (ω - y)/τ, exact for ω held over h.
template <typename DW, typename DY>
VectorXd measure_frequency_lagged(const Eigen::MatrixBase<DW>& true_omega,
                                  const Eigen::MatrixBase<DY>& sensor_state, double tau, double h) {
  if (!(tau > 0.0)) return true_omega;
  const double a = std::exp(-h / tau);
  return true_omega + (sensor_state - true_omega) * a;
}

// ---------------------------------------------------------------------------
// Disturbances and attacks

enum class LoadKind { kConstant, kStep, kPeriodicPulse };

/// Consumption change at one load node; the injection is its negative.
struct LoadSignalSpec {
  LoadKind kind = LoadKind::kPeriodicPulse;
  std::string node;
  double amplitude = 0.0;  // W of extra consumption
  double period = defaults::kLoadPeriod;
  double width = defaults::kLoadWidth;
  double start = 0.0;  // step time / first pulse
};

void validate(const LoadSignalSpec& spec);

/// Consumption change of a single spec at time t (W).
double load_consumption(const LoadSignalSpec& spec, double t);

/// ΔP_L injection vector for the given load-node indices.
VectorXd load_signal(const std::vector<LoadSignalSpec>& specs, const std::vector<Index>& node_index,
                     Index n_load, double t);

enum class AttackKind { kNoise, kReplay };

struct AttackSpec {
  AttackKind kind = AttackKind::kNoise;
  std::vector<std::string> targets;  // IBR names whose power reading is corrupted
  double start = 0.0;
  double end = 0.0;
  double noise_std = 0.0;     // W
  double source_start = 0.0;  // replay source window
  double source_end = 0.0;
};

void validate(const AttackSpec& spec);

/// Corrupts `received` in place on the given channels for control step k.
/// `history` holds the attack-free readings of all channels, one row per
/// previous step.
void apply_attack(VectorXd& received, const AttackSpec& spec, const std::vector<Index>& channels,
                  long k, double control_period, const std::vector<VectorXd>& history,
                  std::mt19937_64& rng);

bool attack_active(const AttackSpec& spec, double t);

// ---------------------------------------------------------------------------
// Networks

struct TieSpec {
  std::string from;  // load or IBR node name in the first microgrid
  std::string to;    // node name in the second microgrid
  double y = 1.0 / 6.0;
  double theta = defaults::kBranchTheta;
  bool closed = false;  // initially closed
};

/// Node map of a merged two-grid network: IBRs of grid 1, IBRs of grid 2,
/// loads of grid 1, loads of grid 2.
struct MergedNetwork {
  NetworkSpec network;
  std::vector<Index> map1;  // local node -> merged node
  std::vector<Index> map2;
  Index tie_branch = -1;    // index in network.branches, or -1
};

MergedNetwork close_tie_line(const NetworkSpec& mg1, const NetworkSpec& mg2,
                             const std::optional<Branch>& tie_local);

/// Union of two operating points with the second grid's angles shifted so the
/// tie endpoints agree (no tie flow).
OperatingPoint merge_operating_points(const MergedNetwork& merged, const OperatingPoint& op1,
                                      const OperatingPoint& op2, Index tie_from_local,
                                      Index tie_to_local);

// ---------------------------------------------------------------------------
// Scenario

enum class ControllerKind { kOptimal, kDecentralized, kObserver, kPi, kSlowLqr, kNone };

const char* to_string(ControllerKind k);
ControllerKind controller_from_string(const std::string& s);

struct DetectorSpec {
  bool enabled = false;
  int window = defaults::kWindow;
  double sigma = defaults::kWatermarkSigma;
  double threshold_factor = defaults::kThresholdFactor;
  double calibration_length = defaults::kCalibrationLength;
  WatermarkPlacement placement = WatermarkPlacement::kInput;
};

struct IdentificationSpec {
  double beta = defaults::kExcitationBeta;
  double pulse_width = defaults::kExcitationPulseWidth;
  int samples = defaults::kExcitationSamples;
  std::vector<Index> candidates;  // empty: kOrderMin..kOrderMax
  int block_rows = defaults::kBlockRows;
};

/// Calibrated detector reference: baseline statistics and thresholds.
struct DetectorCalibration {
  BaselineStats baseline;
  Thresholds thresholds;
  double xi1_peak = 0.0;
  double xi2_peak = 0.0;
};

struct MicrogridSpec {
  std::string name;
  std::vector<std::string> ibr_names;
  std::vector<std::string> load_names;
  VectorXd load_power;  // nominal consumption per load (W)
  struct Line {
    std::string from;
    std::string to;
    double y = 2.0;
    double theta = defaults::kBranchTheta;
  };
  std::vector<Line> lines;
  double voltage = defaults::kVoltage;
  double omega_c = defaults::kOmegaC;
  double m_p = defaults::kDroopMp;
  double nominal_hz = defaults::kNominalHz;

  ControllerKind controller = ControllerKind::kOptimal;
  VectorXd q;  // per-IBR weights (empty: uniform default)
  VectorXd r;
  double pi_kp = defaults::kPiKp;
  double pi_ki = defaults::kPiKi;
  double pi_clamp = 0.0;
  double slow_hold = defaults::kSlowLqrHold;

  DetectorSpec detector;
  IdentificationSpec identification;
  std::optional<DiscreteModel> model;              // else identified on the fly
  std::optional<DetectorCalibration> calibration;  // else calibrated on the fly
};

enum class EventAction { kDisableController, kSetController, kCloseTie, kOpenTie };

const char* to_string(EventAction a);
EventAction event_from_string(const std::string& s);

struct Event {
  double time = 0.0;
  EventAction action = EventAction::kDisableController;
  std::string microgrid;
  ControllerKind controller = ControllerKind::kOptimal;
};

enum class Response { kNone, kAuto };

struct Scenario {
  int schema_version = defaults::kSchemaVersion;
  std::uint64_t seed = defaults::kSeed;
  double horizon = defaults::kHorizon;
  double integrator_step = defaults::kIntegratorStep;
  double control_period = defaults::kControlPeriod;
  Quadrature quadrature = Quadrature::kForwardEuler;
  double sensor_tau = defaults::kSensorTau;
  double sensor_noise_std = 0.0;  // W, on power readings
  Response response = Response::kNone;

  std::vector<MicrogridSpec> microgrids;
  std::optional<TieSpec> tie;
  std::vector<LoadSignalSpec> loads;
  std::vector<AttackSpec> attacks;
  std::vector<Event> events;
};

/// The two-microgrid test system (3 + 2 IBRs) with the tie open.
Scenario default_scenario();
MicrogridSpec default_microgrid_1();
MicrogridSpec default_microgrid_2();

void validate(const Scenario& s);

Microgrid build_microgrid(const MicrogridSpec& spec);
CostWeights weights_of(const MicrogridSpec& spec);

/// Noise-free excitation experiment on the island plant: returns (u, y)
/// sampled at `dt`.
std::pair<MatrixXd, MatrixXd> excitation_experiment(const LinearPlant& plant,
                                                    const IdentificationSpec& spec, double dt,
                                                    std::uint64_t seed);

// ---------------------------------------------------------------------------
// Results

struct TimeSeries {
  std::vector<std::string> ibr_names;
  std::vector<std::string> microgrid_names;
  std::vector<double> time;
  // rows = samples, cols = IBRs
  MatrixXd delta, omega, omega_measured, p_true, p_received, command, watermark, z, z_hat;
  // rows = samples, cols = microgrids
  MatrixXd xi1, xi2, eps1, eps2, flag;
  std::vector<std::vector<std::string>> mode;  // [sample][microgrid]
  std::vector<int> tie_closed;

  Index samples() const { return static_cast<Index>(time.size()); }
};

/// Per-microgrid record of what the detector saw: row k holds the received
/// reading at step k and the command / watermark computed at step k.
struct DetectorTrace {
  std::string microgrid;
  std::vector<double> time;
  MatrixXd command, watermark, received;
};

struct MicrogridReport {
  std::string name;
  ControllerGain gain;
  std::optional<DiscreteModel> model;
  std::optional<OrderReport> order_report;
  std::optional<DetectorCalibration> calibration;
  std::vector<double> first_flag_after_attack;  // per attack on this grid, NaN if never
};

struct SimulationResult {
  TimeSeries series;
  std::vector<DetectorTrace> traces;
  std::vector<MicrogridReport> reports;
  std::vector<std::string> log;  // timeline of events and mode switches
};

/// Designs every controller, identifies / calibrates detectors as needed and
/// runs the closed loop (with the automatic attack response when enabled).
SimulationResult run_scenario(const Scenario& scenario);

/// Nominal watermarked run used to fix the detector baseline and thresholds.
DetectorCalibration calibrate_detector(const Scenario& scenario, Index microgrid,
                                       const DiscreteModel& model);

/// Derived seed for an independent random stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct SummaryMetrics {
  VectorXd rms_omega;            // per IBR
  VectorXd steady_omega;         // mean |Δω| over the final 10 % of the run
  VectorXd steady_power;         // mean |ΔP_G| over the final 10 %
  std::vector<double> latency;   // per attack: first flag minus start (NaN if none)
  std::vector<int> flag_count;   // per microgrid
};

SummaryMetrics summarize(const Scenario& scenario, const SimulationResult& result);

}  // namespace magc
