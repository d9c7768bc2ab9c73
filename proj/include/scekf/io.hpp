#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "scekf/displacement.hpp"
#include "scekf/filter.hpp"
#include "scekf/imu.hpp"
#include "scekf/trajectory.hpp"

namespace scekf {

namespace detail {

// All numeric output goes through one formatter: 17 significant digits round
// trip doubles exactly, which is what the determinism contract rests on.
inline void append_number(std::string& line, double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  line.append(buf, static_cast<size_t>(n));
}

inline double parse_field(std::string_view field, const std::string& path, size_t lineno,
                          size_t col) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw std::runtime_error(path + ":" + std::to_string(lineno) + ": column " +
                             std::to_string(col + 1) + " is not a number: '" +
                             std::string(field) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> fields;
  size_t start = 0;
  while (true) {
    const size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

struct CsvReader {
  std::string path;
  std::vector<std::string> lines;  // data lines only, after the header

  CsvReader(const std::string& file, const std::string& expected_header) : path(file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error(path + ": cannot open for reading");
    std::string line;
    size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      if (!have_header) {
        if (line != expected_header) {
          throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                   ": unexpected header, want '" + expected_header + "'");
        }
        have_header = true;
        continue;
      }
      lines.push_back(line);
      linenos.push_back(lineno);
    }
    if (!have_header) throw std::runtime_error(path + ": missing header line");
  }

  std::vector<size_t> linenos;

  std::vector<double> row(size_t k, size_t expected_fields) const {
    const auto fields = split_line(lines[k]);
    if (fields.size() != expected_fields) {
      throw std::runtime_error(path + ":" + std::to_string(linenos[k]) + ": expected " +
                               std::to_string(expected_fields) + " fields, got " +
                               std::to_string(fields.size()));
    }
    std::vector<double> out(fields.size());
    for (size_t c = 0; c < fields.size(); ++c) out[c] = parse_field(fields[c], path, linenos[k], c);
    return out;
  }
};

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << content;
  if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace detail

inline constexpr const char* kImuHeader = "t,wx,wy,wz,ax,ay,az";
inline constexpr const char* kGtHeader = "t,r00,r01,r02,r10,r11,r12,r20,r21,r22,px,py,pz,vx,vy,vz";
inline constexpr const char* kEstHeader =
    "t,r00,r01,r02,r10,r11,r12,r20,r21,r22,vx,vy,vz,px,py,pz,"
    "bgx,bgy,bgz,bax,bay,baz,"
    "sax,say,saz,svx,svy,svz,spx,spy,spz,sbgx,sbgy,sbgz,sbax,sbay,sbaz";
inline constexpr const char* kMeasHeader = "t_i,t_j,dx,dy,dz,sx,sy,sz";
inline constexpr const char* kBufferHeader = "wx,wy,wz,ax,ay,az";

inline void write_imu_csv(const std::string& path, std::span<const ImuSample> samples) {
  std::string out(kImuHeader);
  out.push_back('\n');
  for (const auto& s : samples) {
    detail::append_number(out, s.t);
    for (int i = 0; i < 3; ++i) {
      out.push_back(',');
      detail::append_number(out, s.gyro[i]);
    }
    for (int i = 0; i < 3; ++i) {
      out.push_back(',');
      detail::append_number(out, s.accel[i]);
    }
    out.push_back('\n');
  }
  detail::write_text_file(path, out);
}

inline std::vector<ImuSample> read_imu_csv(const std::string& path) {
  const detail::CsvReader reader(path, kImuHeader);
  std::vector<ImuSample> samples(reader.lines.size());
  for (size_t k = 0; k < samples.size(); ++k) {
    const auto r = reader.row(k, 7);
    samples[k].t = r[0];
    samples[k].gyro = Vec3(r[1], r[2], r[3]);
    samples[k].accel = Vec3(r[4], r[5], r[6]);
    if (k > 0 && samples[k].t <= samples[k - 1].t) {
      throw std::runtime_error(path + ":" + std::to_string(reader.linenos[k]) +
                               ": timestamps must be strictly increasing");
    }
  }
  return samples;
}

namespace detail {

inline void append_rotation(std::string& line, const Mat3& R) {
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      line.push_back(',');
      append_number(line, R(r, c));
    }
  }
}

inline Mat3 rotation_from_row(const std::vector<double>& r, size_t offset,
                              const std::string& path, size_t lineno) {
  Mat3 R;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) R(i, j) = r[offset + static_cast<size_t>(3 * i + j)];
  }
  if (!is_rotation(R, 1e-6)) {
    throw std::runtime_error(path + ":" + std::to_string(lineno) +
                             ": rotation block is not orthonormal");
  }
  return R;
}

}  // namespace detail

inline void write_gt_csv(const std::string& path, std::span<const TrajectorySample> traj) {
  std::string out(kGtHeader);
  out.push_back('\n');
  for (const auto& s : traj) {
    detail::append_number(out, s.t);
    detail::append_rotation(out, s.R);
    for (int i = 0; i < 3; ++i) {
      out.push_back(',');
      detail::append_number(out, s.p[i]);
    }
    for (int i = 0; i < 3; ++i) {
      out.push_back(',');
      detail::append_number(out, s.v[i]);
    }
    out.push_back('\n');
  }
  detail::write_text_file(path, out);
}

inline std::vector<TrajectorySample> read_gt_csv(const std::string& path) {
  const detail::CsvReader reader(path, kGtHeader);
  std::vector<TrajectorySample> traj(reader.lines.size());
  for (size_t k = 0; k < traj.size(); ++k) {
    const auto r = reader.row(k, 16);
    traj[k].t = r[0];
    traj[k].R = detail::rotation_from_row(r, 1, path, reader.linenos[k]);
    traj[k].p = Vec3(r[10], r[11], r[12]);
    traj[k].v = Vec3(r[13], r[14], r[15]);
  }
  return traj;
}

inline void write_est_csv(const std::string& path, std::span<const EstimateSample> est) {
  std::string out(kEstHeader);
  out.push_back('\n');
  for (const auto& s : est) {
    detail::append_number(out, s.nav.t);
    detail::append_rotation(out, s.nav.R);
    const Vec3* vecs[] = {&s.nav.v, &s.nav.p, &s.nav.b_g, &s.nav.b_a};
    for (const Vec3* v : vecs) {
      for (int i = 0; i < 3; ++i) {
        out.push_back(',');
        detail::append_number(out, (*v)[i]);
      }
    }
    for (int i = 0; i < 15; ++i) {
      out.push_back(',');
      detail::append_number(out, s.marginal_std[i]);
    }
    out.push_back('\n');
  }
  detail::write_text_file(path, out);
}

inline std::vector<EstimateSample> read_est_csv(const std::string& path) {
  const detail::CsvReader reader(path, kEstHeader);
  std::vector<EstimateSample> est(reader.lines.size());
  for (size_t k = 0; k < est.size(); ++k) {
    const auto r = reader.row(k, 37);
    est[k].nav.t = r[0];
    est[k].nav.R = detail::rotation_from_row(r, 1, path, reader.linenos[k]);
    est[k].nav.v = Vec3(r[10], r[11], r[12]);
    est[k].nav.p = Vec3(r[13], r[14], r[15]);
    est[k].nav.b_g = Vec3(r[16], r[17], r[18]);
    est[k].nav.b_a = Vec3(r[19], r[20], r[21]);
    for (int i = 0; i < 15; ++i) est[k].marginal_std[i] = r[22 + static_cast<size_t>(i)];
  }
  return est;
}

inline void write_meas_csv(const std::string& path,
                           std::span<const DisplacementMeasurement> meas) {
  std::string out(kMeasHeader);
  out.push_back('\n');
  for (const auto& m : meas) {
    detail::append_number(out, m.t_i);
    out.push_back(',');
    detail::append_number(out, m.t_j);
    for (int i = 0; i < 3; ++i) {
      out.push_back(',');
      detail::append_number(out, m.d[i]);
    }
    for (int i = 0; i < 3; ++i) {
      out.push_back(',');
      detail::append_number(out, m.sigma[i]);
    }
    out.push_back('\n');
  }
  detail::write_text_file(path, out);
}

inline std::vector<DisplacementMeasurement> read_meas_csv(const std::string& path) {
  const detail::CsvReader reader(path, kMeasHeader);
  std::vector<DisplacementMeasurement> meas(reader.lines.size());
  for (size_t k = 0; k < meas.size(); ++k) {
    const auto r = reader.row(k, 8);
    meas[k].t_i = r[0];
    meas[k].t_j = r[1];
    meas[k].d = Vec3(r[2], r[3], r[4]);
    meas[k].sigma = Vec3(r[5], r[6], r[7]);
    try {
      meas[k].validate();
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(reader.linenos[k]) + ": " + e.what());
    }
    if (k > 0 && meas[k].t_j <= meas[k - 1].t_j) {
      throw std::runtime_error(path + ":" + std::to_string(reader.linenos[k]) +
                               ": measurement times must be strictly increasing");
    }
  }
  return meas;
}

inline void write_diag_jsonl(const std::string& path, std::span<const UpdateOutcome> updates) {
  std::string out;
  for (const auto& u : updates) {
    nlohmann::ordered_json j;
    j["t_i"] = u.t_i;
    j["t_j"] = u.t_j;
    j["innovation"] = {u.innovation.x(), u.innovation.y(), u.innovation.z()};
    j["nis"] = u.nis;
    j["accepted"] = u.accepted();
    j["status"] = to_string(u.status);
    j["clone_count"] = u.clone_count;
    out += j.dump();
    out.push_back('\n');
  }
  detail::write_text_file(path, out);
}

struct DiagRecord {
  double t_i = 0.0;
  double t_j = 0.0;
  Vec3 innovation = Vec3::Zero();
  double nis = -1.0;
  bool accepted = false;
  std::string status;
  int clone_count = 0;
};

inline std::vector<DiagRecord> read_diag_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::vector<DiagRecord> records;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    DiagRecord r;
    r.t_i = j.at("t_i").get<double>();
    r.t_j = j.at("t_j").get<double>();
    const auto innov = j.at("innovation");
    r.innovation = Vec3(innov.at(0).get<double>(), innov.at(1).get<double>(),
                        innov.at(2).get<double>());
    r.nis = j.at("nis").get<double>();
    r.accepted = j.at("accepted").get<bool>();
    r.status = j.value("status", "");
    r.clone_count = j.at("clone_count").get<int>();
    records.push_back(r);
  }
  return records;
}

// Gravity-aligned IMU window for network consumption: a comment header with
// the row count, sample rate, and anchor time, then one gyro/accel row per
// sample.
inline void write_buffer_csv(const std::string& path,
                             const Eigen::Matrix<double, Eigen::Dynamic, 6>& buffer,
                             double rate, double anchor_t) {
  std::string out = "# rows=" + std::to_string(buffer.rows()) + " rate=";
  detail::append_number(out, rate);
  out += " anchor_t=";
  detail::append_number(out, anchor_t);
  out.push_back('\n');
  out += kBufferHeader;
  out.push_back('\n');
  for (Eigen::Index r = 0; r < buffer.rows(); ++r) {
    for (int c = 0; c < 6; ++c) {
      if (c > 0) out.push_back(',');
      detail::append_number(out, buffer(r, c));
    }
    out.push_back('\n');
  }
  detail::write_text_file(path, out);
}

}  // namespace scekf
