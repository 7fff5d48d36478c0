#include "fusiontrack/kitti_io.hpp"

#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <random>
#include <sstream>

using namespace fusiontrack;

namespace {

const char* kLine = "0 2 Car 0 0 -1.57 100.0 150.0 300.0 280.0 1.5 1.6 3.9 2.0 1.5 20.0 0.1";

}  // namespace

TEST_CASE("label line fields") {
  const LabeledBox b = parse_label_line(kLine);
  CHECK(b.frame == 0);
  CHECK(b.track_id == 2);
  CHECK(b.class_name == "Car");
  CHECK(b.bbox.x1 == 100.0);
  CHECK(b.bbox.y1 == 150.0);
  CHECK(b.bbox.x2 == 300.0);
  CHECK(b.bbox.y2 == 280.0);
  CHECK(b.dims(2) == 3.9);
  CHECK(b.location(2) == 20.0);
  CHECK(b.rotation_y == 0.1);
  CHECK_FALSE(b.score.has_value());

  const LabeledBox s = parse_label_line(std::string(kLine) + " 0.95");
  REQUIRE(s.score.has_value());
  CHECK(*s.score == 0.95);
}

TEST_CASE("label line errors carry the line number") {
  CHECK_THROWS_AS(parse_label_line(""), FormatError);
  CHECK_THROWS_AS(parse_label_line("0 1 Car 0 0"), FormatError);
  std::istringstream in(std::string(kLine) + "\n0 1 Car\n");
  try {
    parse_sequence_labels(in);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("sequence labels group by frame in input order") {
  std::istringstream in(
      "0 1 Car 0 0 0 1 1 5 5 1 1 1 0 0 10 0\n"
      "0 2 Car 0 0 0 2 2 6 6 1 1 1 0 0 10 0\n"
      "1 1 Car 0 0 0 3 3 7 7 1 1 1 0 0 10 0\n");
  const FrameBoxes m = parse_sequence_labels(in);
  REQUIRE(m.size() == 2);
  REQUIRE(m.at(0).size() == 2);
  CHECK(m.at(0)[0].track_id == 1);
  CHECK(m.at(0)[1].track_id == 2);
  CHECK(m.at(1)[0].bbox.x1 == 3.0);

  std::istringstream empty("");
  CHECK(parse_sequence_labels(empty).empty());
}

TEST_CASE("shuffled lines group the same as sorted lines") {
  std::vector<std::string> lines;
  for (int f = 0; f < 5; ++f)
    for (int id = 0; id < 3; ++id)
      lines.push_back(std::to_string(f) + " " + std::to_string(id) + " Car 0 0 0 " + std::to_string(10 * id) +
                      " 0 " + std::to_string(10 * id + 5) + " 5 1 1 1 0 0 10 0");
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& l : v) s += l + "\n";
    return s;
  };
  std::istringstream sorted(join(lines));
  const FrameBoxes ref = parse_sequence_labels(sorted);
  // shuffle only across frames so the within-frame order is unchanged
  std::vector<std::string> shuffled;
  for (int f = 4; f >= 0; --f)
    for (int id = 0; id < 3; ++id) shuffled.push_back(lines[static_cast<std::size_t>(f * 3 + id)]);
  std::istringstream in(join(shuffled));
  const FrameBoxes got = parse_sequence_labels(in);
  REQUIRE(got.size() == ref.size());
  for (const auto& [f, boxes] : ref) {
    REQUIRE(got.at(f).size() == boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i) CHECK(got.at(f)[i].track_id == boxes[i].track_id);
  }
}

TEST_CASE("calibration parsing") {
  std::istringstream in(
      "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n"
      "P2: 7.2e2 0 6.0e2 0 0 7.2e2 1.8e2 0 0 0 1 0\n"
      "Tr_velo_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n");
  const CalibrationSet c = parse_calib(in);
  CHECK(c.P(0, 0) == 720.0);
  CHECK(c.P(0, 2) == 600.0);
  CHECK(c.P(1, 2) == 180.0);
  CHECK(c.velo_to_cam.isApprox(Eigen::Matrix4d::Identity()));
  CHECK(c.rect.isApprox(Eigen::Matrix4d::Identity()));

  std::istringstream no_p2("Tr_velo_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n");
  CHECK_THROWS_AS(parse_calib(no_p2), FormatError);
  std::istringstream no_tr("P2: 7.2e2 0 6.0e2 0 0 7.2e2 1.8e2 0 0 0 1 0\n");
  CHECK_THROWS_AS(parse_calib(no_tr), FormatError);
}

TEST_CASE("point cloud formats") {
  std::vector<std::byte> bytes(32);
  const float vals[8] = {1, 2, 3, 0.5f, -4, 5, 6, 0.25f};
  std::memcpy(bytes.data(), vals, sizeof vals);
  const RawPointCloud two = load_point_cloud(bytes, CloudFormat::binary_f32);
  REQUIRE(two.size() == 2);
  CHECK(two.points(1, 0) == -4.0);
  CHECK(two.points(1, 3) == 0.25);

  const std::string text = "1 2 3 0.5";
  const RawPointCloud one = load_point_cloud(std::as_bytes(std::span(text.data(), text.size())), CloudFormat::text);
  REQUIRE(one.size() == 1);
  CHECK(one.points(0, 2) == 3.0);
  CHECK(one.points(0, 3) == 0.5);

  std::vector<std::byte> bad(17);
  CHECK_THROWS_AS(load_point_cloud(bad, CloudFormat::binary_f32), FormatError);

  const std::vector<std::byte> again = encode_point_cloud(two);
  CHECK(again == bytes);
}

namespace {

// KITTI files carry two decimals on pixel values; fixtures follow suit
double q2(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

TEST_CASE("results round trip") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> raw(0.0, 500.0);
  auto u = [&](std::mt19937_64& g) { return q2(raw(g)); };
  FrameBoxes tracks;
  for (int f = 0; f < 4; ++f) {
    for (int k = 0; k < 3; ++k) {
      LabeledBox b;
      b.frame = f;
      b.track_id = k;
      b.class_name = k == 2 ? "Pedestrian" : "Car";
      const double x = u(rng), y = u(rng);
      b.bbox = {x, y, x + 1.0 + u(rng), y + 1.0 + u(rng)};
      b.dims = {1.5, 1.6, 3.9};
      b.location = {u(rng) - 250, 1.5, u(rng) / 10};
      b.rotation_y = -0.3;
      b.alpha = 1.2;
      b.score = std::round(raw(rng) * 20.0) / 10000.0;
      tracks[f].push_back(b);
    }
  }
  std::ostringstream out;
  write_results(tracks, out);
  std::istringstream in(out.str());
  const FrameBoxes back = parse_sequence_labels(in);
  REQUIRE(back.size() == tracks.size());
  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-6 * std::max(1.0, std::abs(b)); };
  for (const auto& [f, boxes] : tracks) {
    REQUIRE(back.at(f).size() == boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      const auto& a = back.at(f)[i];
      const auto& b = boxes[i];
      CHECK(a.frame == b.frame);
      CHECK(a.track_id == b.track_id);
      CHECK(a.class_name == b.class_name);
      CHECK(close(a.bbox.x1, b.bbox.x1));
      CHECK(close(a.bbox.y2, b.bbox.y2));
      CHECK(close(a.location(0), b.location(0)));
      CHECK(close(*a.score, *b.score));
    }
  }
}

TEST_CASE("arbitrary values keep six significant digits") {
  LabeledBox b = parse_label_line(kLine);
  b.bbox = {123.456789, 0.00123456789, 98765.4321, 1.0};
  b.location = {-3.14159265, 2.718281828, 1e-7};
  b.score = 0.123456789;
  b.track_id = 1;
  const LabeledBox back = parse_label_line(format_label_line(b));
  auto rel = [](double a, double e) { return std::abs(a - e) / std::abs(e); };
  CHECK(rel(back.bbox.x1, b.bbox.x1) <= 5e-6);
  CHECK(rel(back.bbox.y1, b.bbox.y1) <= 5e-6);
  CHECK(rel(back.bbox.x2, b.bbox.x2) <= 5e-6);
  CHECK(rel(back.location(0), b.location(0)) <= 5e-6);
  CHECK(rel(back.location(2), b.location(2)) <= 5e-6);
  CHECK(rel(*back.score, *b.score) <= 5e-6);
}

TEST_CASE("results writer ordering and requirements") {
  std::ostringstream empty;
  write_results({}, empty);
  CHECK(empty.str().empty());

  FrameBoxes tracks;
  LabeledBox b = parse_label_line(std::string(kLine) + " 0.5");
  b.frame = 3;
  b.track_id = 9;
  tracks[3].push_back(b);
  b.frame = 1;
  b.track_id = 4;
  tracks[1].push_back(b);
  b.track_id = 2;
  tracks[1].push_back(b);
  std::ostringstream out;
  write_results(tracks, out);
  std::istringstream lines(out.str());
  std::vector<std::pair<int, int>> order;
  for (std::string l; std::getline(lines, l);) {
    const LabeledBox p = parse_label_line(l);
    order.emplace_back(p.frame, p.track_id);
  }
  CHECK(order == std::vector<std::pair<int, int>>{{1, 4}, {1, 2}, {3, 9}});

  tracks[3][0].score.reset();
  std::ostringstream sink;
  CHECK_THROWS(write_results(tracks, sink));
}
