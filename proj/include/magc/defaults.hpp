#pragma once

#include <cstdint>
#include <numbers>

// Single source of truth for every numeric default used by the library,
// the scenario parser and the CLI.
namespace magc::defaults {

// IBR / network
inline constexpr double kOmegaC = 31.41;           // rad/s
inline constexpr double kDroopMp = 9.4e-5;         // rad/s per W
inline constexpr double kNominalHz = 50.0;
inline constexpr double kOmegaNom = 2.0 * std::numbers::pi * kNominalHz;
inline constexpr double kVoltage = 400.0;          // V (line-to-line)
inline constexpr double kBranchTheta = std::numbers::pi / 2.0;
inline constexpr double kNewtonTolerance = 1e-10;  // relative to power scale
inline constexpr int kNewtonMaxIterations = 50;
inline constexpr double kKronSingularRatio = 1e-12;

// Controller design
inline constexpr double kWeightQ = 1.0;
inline constexpr double kWeightR = 1.0;
inline constexpr double kRiccatiRelTolerance = 1e-8;
inline constexpr double kSlowLqrHold = 0.1;  // s
inline constexpr double kPiKp = 0.5;
inline constexpr double kPiKi = 5.0;

// Simulation
inline constexpr double kIntegratorStep = 5e-4;  // s
inline constexpr double kControlPeriod = 5e-3;   // s
inline constexpr double kHorizon = 10.0;         // s
inline constexpr double kSensorTau = 0.1;        // s, lagged frequency sensor
inline constexpr double kLoadPeriod = 0.4;       // s
inline constexpr double kLoadWidth = 0.2;        // s
inline constexpr double kLoadPulseFraction = 0.3;

// Identification
inline constexpr double kExcitationBeta = 0.1;        // rad/s
inline constexpr double kExcitationPulseWidth = 0.05;  // s
inline constexpr int kExcitationSamples = 4000;
inline constexpr int kOrderMin = 1;
inline constexpr int kOrderMax = 10;
inline constexpr int kBlockRows = 15;
inline constexpr int kInitialStateSamplesMin = 20;

// Watermark / detector
inline constexpr int kWindow = 100;
inline constexpr double kWatermarkSigma = 0.02;  // rad/s
inline constexpr double kThresholdFactor = 2.0;
inline constexpr double kThresholdFloor = 1e-12;
inline constexpr double kCalibrationLength = 10.0;  // s

inline constexpr std::uint64_t kSeed = 1;
inline constexpr int kSchemaVersion = 1;

}  // namespace magc::defaults
