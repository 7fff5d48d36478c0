#include "fusiontrack/kitti_io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <sstream>

namespace fusiontrack {

namespace {

std::string with_line(const std::string& what, std::size_t line) {
  if (line == 0) return what;
  return "line " + std::to_string(line) + ": " + what;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

double to_double(std::string_view token, std::size_t line, const char* field) {
  double value = 0.0;
  const auto* first = token.data();
  const auto* last = token.data() + token.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last || !std::isfinite(value)) {
    throw FormatError(with_line(std::string("bad number for ") + field + ": '" +
                                    std::string(token) + "'",
                                line),
                      line);
  }
  return value;
}

int to_int(std::string_view token, std::size_t line, const char* field) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || ptr != token.data() + token.size()) {
    throw FormatError(with_line(std::string("bad integer for ") + field + ": '" +
                                    std::string(token) + "'",
                                line),
                      line);
  }
  return value;
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

float read_f32_le(const std::byte* p) {
  std::uint32_t bits = 0;
  for (int b = 3; b >= 0; --b) bits = (bits << 8) | std::to_integer<std::uint32_t>(p[b]);
  return std::bit_cast<float>(bits);
}

void write_f32_le(float v, std::byte* p) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) {
    p[b] = static_cast<std::byte>(bits & 0xffu);
    bits >>= 8;
  }
}

}  // namespace

FormatError::FormatError(const std::string& what, std::size_t line)
    : std::runtime_error(what), line_(line) {}

bool CalibrationSet::valid() const {
  if (P(0, 0) == 0.0 || P(1, 1) == 0.0) return false;
  const Eigen::RowVector4d bottom(0.0, 0.0, 0.0, 1.0);
  return velo_to_cam.row(3) == bottom;
}

LabeledBox parse_label_line(std::string_view line, std::size_t line_number) {
  const auto f = split_ws(line);
  if (f.size() != 17 && f.size() != 18) {
    throw FormatError(with_line("expected 17 or 18 fields, got " + std::to_string(f.size()),
                                line_number),
                      line_number);
  }
  LabeledBox box;
  box.frame = to_int(f[0], line_number, "frame");
  box.track_id = to_int(f[1], line_number, "track_id");
  box.class_name = std::string(f[2]);
  box.truncated = to_double(f[3], line_number, "truncated");
  box.occluded = to_int(f[4], line_number, "occluded");
  box.alpha = to_double(f[5], line_number, "alpha");
  box.bbox = {to_double(f[6], line_number, "x1"), to_double(f[7], line_number, "y1"),
              to_double(f[8], line_number, "x2"), to_double(f[9], line_number, "y2")};
  box.dims = {to_double(f[10], line_number, "h"), to_double(f[11], line_number, "w"),
              to_double(f[12], line_number, "l")};
  box.location = {to_double(f[13], line_number, "x"), to_double(f[14], line_number, "y"),
                  to_double(f[15], line_number, "z")};
  box.rotation_y = to_double(f[16], line_number, "rotation_y");
  if (f.size() == 18) box.score = to_double(f[17], line_number, "score");

  if (box.frame < 0) throw FormatError(with_line("negative frame index", line_number), line_number);
  if (!box.bbox.valid()) {
    throw FormatError(with_line("degenerate bbox (need x1 < x2 and y1 < y2)", line_number),
                      line_number);
  }
  return box;
}

FrameBoxes parse_sequence_labels(std::istream& source) {
  FrameBoxes out;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(source, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    LabeledBox box = parse_label_line(line, line_number);
    out[box.frame].push_back(std::move(box));
  }
  return out;
}

CalibrationSet parse_calib(std::istream& source) {
  CalibrationSet calib;
  bool have_p2 = false;
  bool have_tr = false;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(source, line)) {
    ++line_number;
    const auto f = split_ws(line);
    if (f.empty()) continue;
    std::string key(f[0]);
    if (!key.empty() && key.back() == ':') key.pop_back();
    std::vector<double> v;
    for (std::size_t i = 1; i < f.size(); ++i) v.push_back(to_double(f[i], line_number, key.c_str()));

    auto need = [&](std::size_t n) {
      if (v.size() != n) {
        throw FormatError(with_line(key + " expects " + std::to_string(n) + " values, got " +
                                        std::to_string(v.size()),
                                    line_number),
                          line_number);
      }
    };
    if (key == "P2") {
      need(12);
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) calib.P(r, c) = v[static_cast<std::size_t>(r * 4 + c)];
      have_p2 = true;
    } else if (key == "Tr_velo_cam" || key == "Tr_velo_to_cam") {
      need(12);
      calib.velo_to_cam.setIdentity();
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) calib.velo_to_cam(r, c) = v[static_cast<std::size_t>(r * 4 + c)];
      have_tr = true;
    } else if (key == "R_rect" || key == "R0_rect") {
      need(9);
      calib.rect.setIdentity();
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) calib.rect(r, c) = v[static_cast<std::size_t>(r * 3 + c)];
    }
  }
  if (!have_p2) throw FormatError("calibration is missing the P2 entry");
  if (!have_tr) throw FormatError("calibration is missing the Tr_velo_cam entry");
  if (!calib.valid()) throw FormatError("P2 has a zero focal length");
  return calib;
}

RawPointCloud load_point_cloud(std::span<const std::byte> data, CloudFormat format) {
  RawPointCloud cloud;
  if (format == CloudFormat::binary_f32) {
    if (data.size() % 16 != 0) {
      throw FormatError("binary point cloud of " + std::to_string(data.size()) +
                        " bytes is not a multiple of 16");
    }
    const auto n = static_cast<Eigen::Index>(data.size() / 16);
    cloud.points.resize(n, 4);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < 4; ++c)
        cloud.points(i, c) = read_f32_le(data.data() + (i * 4 + c) * 4);
  } else {
    std::string text(reinterpret_cast<const char*>(data.data()), data.size());
    std::istringstream in(text);
    std::vector<double> values;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
      ++line_number;
      const auto f = split_ws(line);
      if (f.empty()) continue;
      if (f.size() != 4) {
        throw FormatError(with_line("point rows need 4 values", line_number), line_number);
      }
      for (auto tok : f) values.push_back(to_double(tok, line_number, "point"));
    }
    const auto n = static_cast<Eigen::Index>(values.size() / 4);
    cloud.points.resize(n, 4);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < 4; ++c) cloud.points(i, c) = values[static_cast<std::size_t>(i * 4 + c)];
  }
  if (!cloud.points.allFinite()) throw FormatError("point cloud has non-finite coordinates");
  return cloud;
}

RawPointCloud load_point_cloud_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open point cloud " + path);
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto format = path.ends_with(".bin") ? CloudFormat::binary_f32 : CloudFormat::text;
  return load_point_cloud(std::as_bytes(std::span(raw)), format);
}

std::vector<std::byte> encode_point_cloud(const RawPointCloud& cloud) {
  std::vector<std::byte> out(static_cast<std::size_t>(cloud.size()) * 16);
  for (Eigen::Index i = 0; i < cloud.size(); ++i)
    for (int c = 0; c < 4; ++c)
      write_f32_le(static_cast<float>(cloud.points(i, c)), out.data() + (i * 4 + c) * 4);
  return out;
}

std::string format_label_line(const LabeledBox& b) {
  std::string s = std::to_string(b.frame) + ' ' + std::to_string(b.track_id) + ' ' + b.class_name +
                  ' ' + fmt6(b.truncated) + ' ' + std::to_string(b.occluded) + ' ' + fmt6(b.alpha);
  for (double v : {b.bbox.x1, b.bbox.y1, b.bbox.x2, b.bbox.y2, b.dims.x(), b.dims.y(), b.dims.z(),
                   b.location.x(), b.location.y(), b.location.z(), b.rotation_y}) {
    s += ' ';
    s += fmt6(v);
  }
  if (b.score) {
    s += ' ';
    s += fmt6(*b.score);
  }
  return s;
}

void write_labels(const FrameBoxes& boxes, std::ostream& sink) {
  for (const auto& [frame, list] : boxes)
    for (const auto& box : list) sink << format_label_line(box) << '\n';
}

void write_results(const FrameBoxes& tracks, std::ostream& sink) {
  for (const auto& [frame, list] : tracks) {
    for (const auto& box : list) {
      if (!box.score) {
        throw FormatError("result box in frame " + std::to_string(frame) + " has no score");
      }
      if (box.track_id < 0) {
        throw FormatError("result box in frame " + std::to_string(frame) + " has no track id");
      }
    }
  }
  write_labels(tracks, sink);
}

}  // namespace fusiontrack
