#include "fusiontrack/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>

namespace fusiontrack {

namespace {

constexpr std::array<std::array<double, 3>, 3> kColors{{{0.85, 0.15, 0.1}, {0.1, 0.75, 0.2}, {0.15, 0.25, 0.9}}};
constexpr std::array<double, 3> kReflectance{0.15, 0.5, 0.9};
constexpr double kWidth = 1.6;   // x extent, meters
constexpr double kHeight = 1.5;  // y extent
constexpr double kDepth = 1.2;   // z extent
constexpr double kGroundY = 1.6;

struct Object {
  int id = 0;
  std::array<double, 3> color{};
  double reflectance = 0.0;
  double x = 0.0, z = 0.0, vx = 0.0, vz = 0.0;
};

double round2(double v) { return std::round(v * 100.0) / 100.0; }
double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

BBox project_box(const CalibrationSet& cal, double x, double z) {
  BBox b{1e9, 1e9, -1e9, -1e9};
  for (double dx : {-kWidth / 2, kWidth / 2})
    for (double dy : {-kHeight, 0.0})
      for (double dz : {-kDepth / 2, kDepth / 2}) {
        const Eigen::Vector4d p(x + dx, kGroundY + dy, z + dz, 1.0);
        const Eigen::Vector3d q = cal.P * p;
        b.x1 = std::min(b.x1, q.x() / q.z());
        b.x2 = std::max(b.x2, q.x() / q.z());
        b.y1 = std::min(b.y1, q.y() / q.z());
        b.y2 = std::max(b.y2, q.y() / q.z());
      }
  return b;
}

BBox clip(BBox b, int w, int h) {
  b.x1 = std::clamp(b.x1, 0.0, w - 1.0);
  b.x2 = std::clamp(b.x2, 0.0, w - 1.0);
  b.y1 = std::clamp(b.y1, 0.0, h - 1.0);
  b.y2 = std::clamp(b.y2, 0.0, h - 1.0);
  return BBox{round2(b.x1), round2(b.y1), round2(b.x2), round2(b.y2)};
}

// camera (x right, y down, z forward) -> velodyne (x forward, y left, z up)
Eigen::Vector3d cam_to_velo(const Eigen::Vector3d& c) { return {c.z(), -c.x(), -c.y()}; }

LabeledBox make_box(int frame, int id, const BBox& b) {
  LabeledBox box;
  box.frame = frame;
  box.track_id = id;
  box.class_name = "Car";
  box.bbox = b;
  box.alpha = -10;
  box.dims = Eigen::Vector3d(kHeight, kWidth, kDepth);
  box.location = Eigen::Vector3d(-1000, -1000, -1000);
  box.rotation_y = -10;
  return box;
}

}  // namespace

CalibrationSet synthetic_calibration(const SynthConfig& config) {
  CalibrationSet cal;
  cal.P << config.focal, 0, config.image_width / 2.0, 0, 0, config.focal, config.image_height / 2.0, 0, 0, 0, 1, 0;
  cal.velo_to_cam.setZero();
  cal.velo_to_cam(0, 1) = -1;
  cal.velo_to_cam(1, 2) = -1;
  cal.velo_to_cam(2, 0) = 1;
  cal.velo_to_cam(3, 3) = 1;
  cal.rect.setIdentity();
  return cal;
}

std::vector<SequenceData> generate_synthetic(const SynthConfig& config) {
  if (config.objects > 9) throw std::invalid_argument("at most 9 distinct objects per sequence");
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double a, double b) { return a + (b - a) * unit(rng); };
  const CalibrationSet cal = synthetic_calibration(config);
  const int W = config.image_width;
  const int H = config.image_height;

  std::vector<SequenceData> out;
  for (int s = 0; s < config.sequences; ++s) {
    SequenceData seq;
    char name[16];
    std::snprintf(name, sizeof name, "%04d", s);
    seq.name = name;
    seq.calib = cal;

    std::vector<int> combos(9);
    for (int i = 0; i < 9; ++i) combos[static_cast<std::size_t>(i)] = i;
    std::shuffle(combos.begin(), combos.end(), rng);
    std::vector<Object> objs;
    for (int k = 0; k < config.objects; ++k) {
      Object o;
      o.id = k;
      o.color = kColors[static_cast<std::size_t>(combos[static_cast<std::size_t>(k)] / 3)];
      o.reflectance = kReflectance[static_cast<std::size_t>(combos[static_cast<std::size_t>(k)] % 3)];
      // spread objects over depth lanes so they rarely overlap for long
      o.z = 9.0 + 3.0 * k + uniform(-0.5, 0.5);
      const double half_fov = o.z * (W / 2.0 - 20.0) / config.focal;
      o.x = uniform(-half_fov, half_fov);
      o.vx = uniform(-0.25, 0.25);
      o.vz = uniform(-0.05, 0.05);
      objs.push_back(o);
    }

    for (int f = 0; f < config.frames; ++f) {
      Image img(W, H, 3);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double shade = y > H / 2 ? 0.35 : 0.55;
          for (int c = 0; c < 3; ++c) img.at(x, y, c) = quantize8(shade + 0.04 * unit(rng));
        }
      std::vector<Eigen::Vector4d> pts;
      for (int i = 0; i < config.background_points; ++i) {
        const Eigen::Vector3d c(uniform(-12, 12), kGroundY, uniform(5, 35));
        const Eigen::Vector3d v = cam_to_velo(c);
        pts.emplace_back(v.x(), v.y(), v.z(), uniform(0.0, 0.08));
      }

      // far to near so nearer objects paint over farther ones
      std::vector<std::size_t> order(objs.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return objs[a].z > objs[b].z; });
      std::vector<LabeledBox> dets;
      for (std::size_t idx : order) {
        const Object& o = objs[idx];
        const BBox full = project_box(cal, o.x, o.z);
        const BBox b = clip(full, W, H);
        for (int y = static_cast<int>(std::ceil(b.y1)); y < static_cast<int>(b.y2); ++y)
          for (int x = static_cast<int>(std::ceil(b.x1)); x < static_cast<int>(b.x2); ++x)
            for (int c = 0; c < 3; ++c)
              img.at(x, y, c) = quantize8(o.color[static_cast<std::size_t>(c)] + 0.05 * (unit(rng) - 0.5));
        // LiDAR returns on the front face and top
        for (int i = 0; i < config.points_per_object; ++i) {
          Eigen::Vector3d c;
          if (i % 4 == 3) {
            c = {o.x + uniform(-kWidth / 2, kWidth / 2), kGroundY - kHeight, o.z + uniform(-kDepth / 2, kDepth / 2)};
          } else {
            c = {o.x + uniform(-kWidth / 2, kWidth / 2), kGroundY - uniform(0.0, kHeight), o.z - kDepth / 2};
          }
          const Eigen::Vector3d v = cam_to_velo(c);
          pts.emplace_back(v.x(), v.y(), v.z(), std::clamp(o.reflectance + uniform(-0.04, 0.04), 0.0, 1.0));
        }
        seq.gt[f].push_back(make_box(f, o.id, b));
        if (unit(rng) < config.miss_rate) continue;
        BBox d{b.x1 + uniform(-config.jitter, config.jitter), b.y1 + uniform(-config.jitter, config.jitter),
               b.x2 + uniform(-config.jitter, config.jitter), b.y2 + uniform(-config.jitter, config.jitter)};
        LabeledBox det = make_box(f, -1, clip(d, W, H));
        det.score = round2(uniform(0.6, 1.0));
        if (det.bbox.valid()) dets.push_back(det);
      }
      for (int k = 0; k < config.objects; ++k) {
        if (unit(rng) >= config.false_positive_rate) continue;
        const double w = uniform(15, 40);
        const double h = uniform(12, 30);
        const double x1 = uniform(0, W - w - 1);
        const double y1 = uniform(0, H - h - 1);
        LabeledBox det = make_box(f, -1, clip(BBox{x1, y1, x1 + w, y1 + h}, W, H));
        det.score = round2(uniform(0.3, 0.8));
        if (det.bbox.valid()) dets.push_back(det);
      }
      std::shuffle(dets.begin(), dets.end(), rng);
      if (!dets.empty()) seq.detections[f] = std::move(dets);
      std::sort(seq.gt[f].begin(), seq.gt[f].end(),
                [](const LabeledBox& a, const LabeledBox& b) { return a.track_id < b.track_id; });

      RawPointCloud cloud;
      cloud.points.resize(static_cast<Eigen::Index>(pts.size()), 4);
      for (std::size_t i = 0; i < pts.size(); ++i)
        for (int c = 0; c < 4; ++c)
          cloud.points(static_cast<Eigen::Index>(i), c) = static_cast<double>(static_cast<float>(pts[i](c)));
      seq.images.push_back(std::move(img));
      seq.clouds.push_back(std::move(cloud));

      for (auto& o : objs) {
        o.x += o.vx;
        o.z += o.vz;
        const double half_fov = o.z * (W / 2.0 - 20.0) / config.focal;
        if (std::abs(o.x) > half_fov) {
          o.vx = -o.vx;
          o.x = std::clamp(o.x, -half_fov, half_fov);
        }
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace fusiontrack
