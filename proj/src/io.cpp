#include "magc/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "magc/errors.hpp"

namespace magc {

namespace fs = std::filesystem;

std::string format_number(double v) {
  if (v == 0.0) return "0";  // folds -0
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (t.header.empty()) {
      t.header = cells;
      continue;
    }
    if (cells.size() != t.header.size()) {
      std::ostringstream msg;
      msg << path.string() << ":" << line_no << ": expected " << t.header.size() << " fields, got "
          << cells.size();
      throw ConfigError(msg.str());
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(c, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != c.size()) {
        std::ostringstream msg;
        msg << path.string() << ":" << line_no << ": not a number: '" << c << "'";
        throw ConfigError(msg.str());
      }
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw ConfigError(path.string() + ": empty file");
  return t;
}

void write_csv(const fs::path& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < table.header.size(); ++i) out << (i ? "," : "") << table.header[i];
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_number(row[i]);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_timeseries_csv(const fs::path& path, const TimeSeries& ts) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "time";
  const char* fields[] = {"delta", "omega", "omega_meas", "pg", "pg_rx", "ws", "e", "z", "zhat"};
  for (const auto& n : ts.ibr_names)
    for (const char* f : fields) out << ',' << f << '_' << n;
  for (const auto& g : ts.microgrid_names) out << ",mode_" << g;
  out << ",tie\n";
  const MatrixXd* cols[] = {&ts.delta, &ts.omega, &ts.omega_measured, &ts.p_true, &ts.p_received,
                            &ts.command, &ts.watermark, &ts.z, &ts.z_hat};
  for (Index k = 0; k < ts.samples(); ++k) {
    out << format_number(ts.time[static_cast<std::size_t>(k)]);
    for (Index i = 0; i < static_cast<Index>(ts.ibr_names.size()); ++i)
      for (const MatrixXd* m : cols) out << ',' << format_number((*m)(k, i));
    for (const auto& tag : ts.mode[static_cast<std::size_t>(k)]) out << ',' << tag;
    out << ',' << ts.tie_closed[static_cast<std::size_t>(k)] << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_detector_csv(const fs::path& path, const TimeSeries& ts) {
  CsvTable t;
  t.header.push_back("time");
  for (const auto& g : ts.microgrid_names)
    for (const char* f : {"xi1", "xi2", "eps1", "eps2", "flag"}) t.header.push_back(std::string(f) + "_" + g);
  for (Index k = 0; k < ts.samples(); ++k) {
    std::vector<double> row{ts.time[static_cast<std::size_t>(k)]};
    for (Index g = 0; g < static_cast<Index>(ts.microgrid_names.size()); ++g) {
      for (const MatrixXd* m : {&ts.xi1, &ts.xi2, &ts.eps1, &ts.eps2, &ts.flag}) {
        const double v = (*m)(k, g);
        row.push_back(std::isfinite(v) ? v : 0.0);
      }
    }
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

void write_trace_csv(const fs::path& path, const DetectorTrace& tr) {
  CsvTable t;
  const Index n = tr.command.cols();
  t.header.push_back("time");
  for (const char* f : {"u", "e", "y"})
    for (Index i = 0; i < n; ++i) t.header.push_back(std::string(f) + std::to_string(i + 1));
  for (std::size_t k = 0; k < tr.time.size(); ++k) {
    std::vector<double> row{tr.time[k]};
    const Index r = static_cast<Index>(k);
    for (const MatrixXd* m : {&tr.command, &tr.watermark, &tr.received})
      for (Index i = 0; i < n; ++i) row.push_back((*m)(r, i));
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

DetectorTrace read_trace_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t cols = t.header.size();
  if (cols < 4 || (cols - 1) % 3 != 0) throw ConfigError(path.string() + ": trace needs time, u*, e*, y* columns");
  const Index n = static_cast<Index>((cols - 1) / 3);
  DetectorTrace tr;
  const Index rows = static_cast<Index>(t.rows.size());
  tr.command.resize(rows, n);
  tr.watermark.resize(rows, n);
  tr.received.resize(rows, n);
  for (Index k = 0; k < rows; ++k) {
    const auto& r = t.rows[static_cast<std::size_t>(k)];
    tr.time.push_back(r[0]);
    for (Index i = 0; i < n; ++i) {
      tr.command(k, i) = r[static_cast<std::size_t>(1 + i)];
      tr.watermark(k, i) = r[static_cast<std::size_t>(1 + n + i)];
      tr.received(k, i) = r[static_cast<std::size_t>(1 + 2 * n + i)];
    }
  }
  return tr;
}

IoRecord read_io_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t cols = t.header.size();
  if (cols < 3 || (cols - 1) % 2 != 0) throw ConfigError(path.string() + ": record needs time, u*, y* columns");
  const Index n = static_cast<Index>((cols - 1) / 2);
  IoRecord rec;
  const Index rows = static_cast<Index>(t.rows.size());
  rec.u.resize(rows, n);
  rec.y.resize(rows, n);
  for (Index k = 0; k < rows; ++k) {
    const auto& r = t.rows[static_cast<std::size_t>(k)];
    rec.time.push_back(r[0]);
    for (Index i = 0; i < n; ++i) {
      rec.u(k, i) = r[static_cast<std::size_t>(1 + i)];
      rec.y(k, i) = r[static_cast<std::size_t>(1 + n + i)];
    }
  }
  return rec;
}

void write_io_csv(const fs::path& path, const IoRecord& rec) {
  CsvTable t;
  t.header.push_back("time");
  for (Index i = 0; i < rec.u.cols(); ++i) t.header.push_back("u" + std::to_string(i + 1));
  for (Index i = 0; i < rec.y.cols(); ++i) t.header.push_back("y" + std::to_string(i + 1));
  for (std::size_t k = 0; k < rec.time.size(); ++k) {
    std::vector<double> row{rec.time[k]};
    for (Index i = 0; i < rec.u.cols(); ++i) row.push_back(rec.u(static_cast<Index>(k), i));
    for (Index i = 0; i < rec.y.cols(); ++i) row.push_back(rec.y(static_cast<Index>(k), i));
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

void write_order_report_csv(const fs::path& path, const OrderReport& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "order,eta,selected,note\n";
  for (std::size_t i = 0; i < r.candidates.size(); ++i) {
    std::string note = r.failures[i];
    for (char& c : note)
      if (c == ',' || c == '\n') c = ';';
    out << r.candidates[i] << ',' << (std::isfinite(r.eta[i]) ? format_number(r.eta[i]) : "nan") << ','
        << (r.candidates[i] == r.d_star ? 1 : 0) << ',' << note << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::string summary_text(const Scenario& scenario, const SimulationResult& result, const SummaryMetrics& m) {
  std::ostringstream o;
  const TimeSeries& ts = result.series;
  o << "samples: " << ts.samples() << "\n";
  o << "horizon_s: " << format_number(scenario.horizon) << "\n";
  o << "seed: " << scenario.seed << "\n";
  o << "\n[rms_omega_rad_s]\n";
  for (std::size_t i = 0; i < ts.ibr_names.size(); ++i)
    o << ts.ibr_names[i] << ": " << format_number(m.rms_omega(static_cast<Index>(i))) << "\n";
  o << "\n[steady_state]\n";
  for (std::size_t i = 0; i < ts.ibr_names.size(); ++i)
    o << ts.ibr_names[i] << ": |domega| " << format_number(m.steady_omega(static_cast<Index>(i))) << " |dPG| "
      << format_number(m.steady_power(static_cast<Index>(i))) << "\n";
  o << "\n[detection]\n";
  for (std::size_t g = 0; g < ts.microgrid_names.size(); ++g)
    o << ts.microgrid_names[g] << " flagged_samples: " << m.flag_count[g] << "\n";
  for (std::size_t a = 0; a < m.latency.size(); ++a)
    o << "attack " << a << " latency_s: " << (std::isfinite(m.latency[a]) ? format_number(m.latency[a]) : "none")
      << "\n";
  o << "\n[design]\n";
  for (const auto& r : result.reports) {
    o << r.name << " riccati_residual: " << format_number(r.gain.residual)
      << " abscissa_state: " << format_number(r.gain.abscissa_state)
      << " abscissa_z: " << format_number(r.gain.abscissa_z) << "\n";
    for (const auto& w : r.gain.warnings) o << r.name << " warning: " << w << "\n";
    if (r.order_report) o << r.name << " identified_order: " << r.order_report->d_star << "\n";
    if (r.calibration)
      o << r.name << " eps1: " << format_number(r.calibration->thresholds.eps1)
        << " eps2: " << format_number(r.calibration->thresholds.eps2) << "\n";
  }
  o << "\n[timeline]\n";
  for (const auto& l : result.log) o << l << "\n";
  return o.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace magc
