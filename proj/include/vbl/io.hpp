#pragma once

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vbl/alloc.hpp"
#include "vbl/bits.hpp"
#include "vbl/error.hpp"
#include "vbl/scene.hpp"

namespace vbl {

using Json = nlohmann::ordered_json;

namespace detail {

inline Json vec3(const Eigen::Vector3d& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Eigen::Vector3d read_vec3(const Json& j, std::string_view what) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::invalid_input, std::string(what) + " must be a 3-array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

template <class F>
auto with_json_errors(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::invalid_input, std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace detail

inline Json scenario_to_json(const Scenario& s) {
  Json j;
  Json vehicles = Json::array();
  for (const auto& v : s.vehicles) {
    Json rot = Json::array();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) rot.push_back(v.rotation(r, c));
    }
    vehicles.push_back({{"position", detail::vec3(v.position)}, {"rotation", rot}});
  }
  j["vehicles"] = vehicles;
  Json features = Json::array();
  for (const auto& f : s.features) features.push_back(detail::vec3(f.position));
  j["features"] = features;
  const auto& k = s.intrinsics;
  j["intrinsics"] = {{"focal_length_mm", k.focal_length_mm},
                     {"sensor_width_mm", k.sensor_width_mm},
                     {"sensor_height_mm", k.sensor_height_mm},
                     {"resolution", {k.resolution_x, k.resolution_y}},
                     {"skew", k.skew},
                     {"principal_point", {k.principal_point.x(), k.principal_point.y()}}};
  j["noise"] = {{"sigma_pixel", s.sigma_pixel}, {"sigma_range", s.sigma_range}};
  j["ranges"] = {{"w1", s.limits.w1}, {"w2", s.limits.w2}, {"w3", s.limits.w3}};
  j["seed"] = s.seed;
  j["preset"] = s.preset;
  return j;
}

inline Scenario scenario_from_json(const Json& j) {
  return detail::with_json_errors([&] {
    Scenario s;
    for (const auto& v : j.at("vehicles")) {
      VehiclePose pose;
      pose.position = detail::read_vec3(v.at("position"), "vehicle position");
      const auto& rot = v.at("rotation");
      if (!rot.is_array() || rot.size() != 9) throw Error(ErrorCode::invalid_input, "rotation must be a 9-array");
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) pose.rotation(r, c) = rot[static_cast<std::size_t>(3 * r + c)].get<double>();
      }
      s.vehicles.push_back(pose);
    }
    for (const auto& f : j.at("features")) s.features.push_back({detail::read_vec3(f, "feature position")});
    const auto& k = j.at("intrinsics");
    s.intrinsics.focal_length_mm = k.at("focal_length_mm").get<double>();
    s.intrinsics.sensor_width_mm = k.at("sensor_width_mm").get<double>();
    s.intrinsics.sensor_height_mm = k.at("sensor_height_mm").get<double>();
    s.intrinsics.resolution_x = k.at("resolution").at(0).get<int>();
    s.intrinsics.resolution_y = k.at("resolution").at(1).get<int>();
    s.intrinsics.skew = k.value("skew", 0.0);
    s.intrinsics.principal_point = {k.at("principal_point").at(0).get<double>(),
                                    k.at("principal_point").at(1).get<double>()};
    s.sigma_pixel = j.at("noise").at("sigma_pixel").get<std::vector<double>>();
    s.sigma_range = j.at("noise").at("sigma_range").get<std::vector<double>>();
    s.limits = {j.at("ranges").at("w1").get<double>(), j.at("ranges").at("w2").get<double>(),
                j.at("ranges").at("w3").get<double>()};
    s.seed = j.value("seed", std::uint64_t{0});
    s.preset = j.value("preset", std::string("custom"));
    s.validate();
    return s;
  });
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path);
  out << content;
  out.flush();
  if (!out) throw Error(ErrorCode::io, "write failed for " + path);
}

inline Json parse_json(const std::string& text) {
  return detail::with_json_errors([&] { return Json::parse(text); });
}

inline void save_scenario(const std::string& path, const Scenario& s) {
  write_file(path, scenario_to_json(s).dump(2) + "\n");
}

inline Scenario load_scenario(const std::string& path) { return scenario_from_json(parse_json(read_file(path))); }

inline Json allocation_to_json(const AllocationResult& r, long budget, std::uint64_t seed) {
  Json bits = Json::array();
  for (double b : r.allocation.values()) bits.push_back(static_cast<long>(b));
  Json j;
  j["algorithm"] = r.algorithm;
  j["budget"] = budget;
  j["seed"] = seed;
  j["dimension"] = r.allocation.size();
  j["m_star"] = r.m_star;
  j["speb"] = r.speb;
  j["rel_speb_root_m"] = std::sqrt(r.speb);
  j["iterations"] = r.iterations;
  j["wall_ms"] = r.wall_ms;
  j["bits"] = bits;
  return j;
}

inline BitAllocation allocation_from_json(const Json& j) {
  return detail::with_json_errors([&] { return BitAllocation(j.at("bits").get<std::vector<double>>()); });
}

inline BitAllocation load_allocation(const std::string& path) {
  return allocation_from_json(parse_json(read_file(path)));
}

/// Shortest round-trip decimal form, independent of the C locale.
inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

inline std::string format_number(long long v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

/// RFC 4180 writer: CRLF line breaks, fields quoted only when needed.
class CsvWriter {
 public:
  void row(const std::vector<std::string>& fields) {
    for (std::size_t k = 0; k < fields.size(); ++k) {
      if (k) text_ += ',';
      text_ += quote(fields[k]);
    }
    text_ += "\r\n";
  }

  const std::string& str() const { return text_; }

  static std::string quote(const std::string& f) {
    if (f.find_first_of(",\"\r\n") == std::string::npos) return f;
    std::string q = "\"";
    for (char c : f) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  }

 private:
  std::string text_;
};

/// Minimal RFC 4180 reader used for round-trip checks and tooling.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t k = 0; k < text.size(); ++k) {
    const char c = text[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < text.size() && text[k + 1] == '"') {
          field += '"';
          ++k;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && k + 1 < text.size() && text[k + 1] == '\n') ++k;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw Error(ErrorCode::invalid_input, "unterminated quoted CSV field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace vbl
