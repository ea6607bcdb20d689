#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spinlab/analysis.hpp"
#include "spinlab/config.hpp"
#include "spinlab/engine.hpp"
#include "spinlab/errors.hpp"

namespace spinlab {

// Tags every artifact with the producing config and tool version.
struct Stamp {
  std::string config_hash;
  std::string version = tool_version;

  [[nodiscard]] std::string csv_comment() const {
    return "# spinlab " + version + " config_hash=" + config_hash + "\n";
  }
  [[nodiscard]] nlohmann::json json() const { return {{"config_hash", config_hash}, {"tool_version", version}}; }
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // write-then-rename so an interrupted run never leaves a truncated file
  const std::filesystem::path tmp = path.string() + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline void write_json(const std::filesystem::path& path, nlohmann::json j, const Stamp& stamp) {
  j["stamp"] = stamp.json();
  write_text(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return nlohmann::json::parse(in);
}

inline std::string echo_train_csv(const EchoTrain& t, const Stamp& stamp) {
  std::string s = stamp.csv_comment();
  s += "time_s,re,im,segment_index\n";
  for (std::size_t i = 0; i < t.size(); ++i)
    s += format_double(t.times[i]) + "," + format_double(t.values[i].real()) + "," +
         format_double(t.values[i].imag()) + "," + std::to_string(t.segment[i]) + "\n";
  return s;
}

inline EchoTrain read_echo_train_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  EchoTrain t;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "time_s,re,im,segment_index") throw Error(path.string() + ": unexpected header '" + line + "'");
      header = true;
      continue;
    }
    std::stringstream ss(line);
    std::string a, b, c, d;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c, ',') || !std::getline(ss, d))
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    try {
      t.times.push_back(std::stod(a));
      t.values.emplace_back(std::stod(b), std::stod(c));
      t.segment.push_back(std::stoi(d));
    } catch (const std::exception&) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  if (!header) throw Error(path.string() + ": missing header");
  return t;
}

inline std::string echoes_csv(const DecayAnalysis& a, const Stamp& stamp) {
  std::string s = stamp.csv_comment();
  s += "segment_index,time_s,amplitude,peak_hz,used_in_fit\n";
  for (const auto& e : a.extraction.echoes) {
    const bool used = e.amplitude > 3.0 * a.floor && e.amplitude > 0.0;
    s += std::to_string(e.segment) + "," + format_double(e.time) + "," + format_double(e.amplitude) + "," +
         format_double(e.peak_hz) + "," + (used ? "1" : "0") + "\n";
  }
  return s;
}

inline nlohmann::json to_json(const DecayAnalysis& a) {
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& [seg, why] : a.extraction.failures) failures.push_back({{"segment_index", seg}, {"reason", why}});
  nlohmann::json j = {{"n_echoes", a.extraction.echoes.size()},
                      {"n_fitted", a.t.size()},
                      {"noise_floor", a.floor},
                      {"echo_failures", failures}};
  if (a.fit) j["fit"] = to_json(*a.fit);
  if (!a.error.empty()) j["error"] = a.error;
  return j;
}

inline nlohmann::json to_json(const ScanRow& r) {
  return {{"axis_value", r.axis_value}, {"t2_s", std::isfinite(r.t2) ? nlohmann::json(r.t2) : nlohmann::json()},
          {"t2_sigma_s", std::isfinite(r.t2_sigma) ? nlohmann::json(r.t2_sigma) : nlohmann::json()},
          {"n_echoes", r.n_echoes}, {"n_ok", r.n_ok}, {"n_failed", r.n_failed}, {"converged", r.converged},
          {"error", r.error}, {"metadata", r.metadata}};
}

inline ScanRow scan_row_from_json(const nlohmann::json& j) {
  ScanRow r;
  r.axis_value = j.at("axis_value").get<double>();
  r.t2 = j.at("t2_s").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("t2_s").get<double>();
  r.t2_sigma = j.at("t2_sigma_s").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("t2_sigma_s").get<double>();
  r.n_echoes = j.at("n_echoes").get<std::size_t>();
  r.n_ok = j.at("n_ok").get<std::size_t>();
  r.n_failed = j.at("n_failed").get<std::size_t>();
  r.converged = j.at("converged").get<bool>();
  r.error = j.at("error").get<std::string>();
  r.metadata = j.at("metadata");
  return r;
}

inline std::string scan_csv(const ScanTable& t, const Stamp& stamp) {
  std::string s = stamp.csv_comment();
  s += (t.axis == ScanAxis::cycle_time ? "cycle_time_s" : std::string("abundance")) +
       ",t2_s,t2_sigma_s,n_echoes,n_ok,n_failed,converged,error\n";
  for (const auto& r : t.rows) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    s += format_double(r.axis_value) + "," + (std::isfinite(r.t2) ? format_double(r.t2) : "") + "," +
         (std::isfinite(r.t2_sigma) ? format_double(r.t2_sigma) : "") + "," + std::to_string(r.n_echoes) + "," +
         std::to_string(r.n_ok) + "," + std::to_string(r.n_failed) + "," + (r.converged ? "1" : "0") + "," + err +
         "\n";
  }
  return s;
}

} // namespace spinlab
