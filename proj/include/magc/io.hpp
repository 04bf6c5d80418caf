#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "magc/simcore.hpp"

namespace magc {

/// Fixed 9-significant-digit formatting used by every CSV writer.
std::string format_number(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

/// Numeric CSV with a header row. Parse errors name the file and line.
CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

void write_timeseries_csv(const std::filesystem::path& path, const TimeSeries& ts);
void write_detector_csv(const std::filesystem::path& path, const TimeSeries& ts);

void write_trace_csv(const std::filesystem::path& path, const DetectorTrace& tr);
DetectorTrace read_trace_csv(const std::filesystem::path& path);

/// Input/output record: time, u_1..u_N, y_1..y_N.
struct IoRecord {
  std::vector<double> time;
  MatrixXd u, y;
};

IoRecord read_io_csv(const std::filesystem::path& path);
void write_io_csv(const std::filesystem::path& path, const IoRecord& rec);

void write_order_report_csv(const std::filesystem::path& path, const OrderReport& r);

std::string summary_text(const Scenario& scenario, const SimulationResult& result,
                         const SummaryMetrics& m);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace magc
