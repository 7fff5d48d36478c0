#include "fusiontrack/model.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fusiontrack {

Modality parse_modality(const std::string& text) {
  if (text == "image") return Modality::image;
  if (text == "lidar") return Modality::lidar;
  if (text == "fused") return Modality::fused;
  throw std::invalid_argument("unknown modality '" + text + "' (expected image, lidar or fused)");
}

std::string to_string(Modality m) {
  switch (m) {
    case Modality::image: return "image";
    case Modality::lidar: return "lidar";
    case Modality::fused: return "fused";
  }
  return "fused";
}

void ModelConfig::validate() const {
  for (Index c : channels)
    if (c <= 0) throw std::invalid_argument("channel widths must be positive");
  if (width() % kLevels != 0) {
    throw std::invalid_argument("last channel width must be divisible by " + std::to_string(kLevels));
  }
  if (in_channels <= 0) throw std::invalid_argument("in_channels must be positive");
  if (patch_size <= 0.0) throw std::invalid_argument("patch_size must be positive");
  if (grid < 1 << (kLevels - 1)) {
    throw std::invalid_argument("grid must be at least " + std::to_string(1 << (kLevels - 1)));
  }
  if (max_points < 1) throw std::invalid_argument("max_points must be positive");
  if (k_points < 1 || k_pixels < 1) throw std::invalid_argument("neighbor counts must be positive");
  if (r_points <= 0.0 || r_pixels <= 0.0) throw std::invalid_argument("radii must be positive");
}

Model make_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  using nn::Activation;
  Model m;
  m.config = config;
  auto& s = m.store;
  const Index quarter = config.width() / kLevels;
  const Index patch_in = 9 * config.in_channels;
  for (int l = 0; l < kLevels; ++l) {
    const std::string lv = std::to_string(l);
    const Index c = config.channels[static_cast<std::size_t>(l)];
    const Index prev = l == 0 ? patch_in : config.channels[static_cast<std::size_t>(l - 1)];
    const std::vector<Index> img_dims{prev, c, c};
    m.image.level[static_cast<std::size_t>(l)] =
        nn::add_mlp(s, "img.level" + lv, img_dims, Activation::relu, Activation::relu, seed);
    m.image.skip[static_cast<std::size_t>(l)] =
        nn::add_dense(s, "img.skip" + lv, c, quarter, Activation::identity, seed);
    const Index prev_pts = l == 0 ? 4 : config.channels[static_cast<std::size_t>(l - 1)];
    const std::vector<Index> pc_dims{prev_pts, c, c};
    m.points.level[static_cast<std::size_t>(l)] =
        nn::add_mlp(s, "pc.level" + lv, pc_dims, Activation::relu, Activation::relu, seed);
  }
  for (int l = 0; l < kLevels; ++l) {
    const std::string lv = std::to_string(l);
    const Index c = config.channels[static_cast<std::size_t>(l)];
    m.fuse[static_cast<std::size_t>(l)].pixels_centered =
        fusion::add_direction_params(s, "fuse.level" + lv + ".pixels", c, seed);
    m.fuse[static_cast<std::size_t>(l)].points_centered =
        fusion::add_direction_params(s, "fuse.level" + lv + ".points", c, seed);
  }
  m.gate = fusion::add_gate_params(s, "gate", config.width(), seed);
  m.heads = association::add_estimator_heads(s, "head", config.width(), seed);
  return m;
}

std::vector<Index> farthest_point_sample(const Matrix& xyz, Index count) {
  const Index n = xyz.rows();
  std::vector<Index> picked;
  if (count >= n) {
    picked.resize(static_cast<std::size_t>(n));
    std::iota(picked.begin(), picked.end(), Index{0});
    return picked;
  }
  if (count <= 0) return picked;
  Vector best = Vector::Constant(n, std::numeric_limits<double>::infinity());
  Index current = 0;
  for (Index p = 0; p < count; ++p) {
    picked.push_back(current);
    Index next = 0;
    double far = -1.0;
    for (Index i = 0; i < n; ++i) {
      best(i) = std::min(best(i), (xyz.row(i) - xyz.row(current)).squaredNorm());
      if (best(i) > far) {
        far = best(i);
        next = i;
      }
    }
    current = next;
  }
  return picked;
}

Matrix grid_positions(int side, double patch_size) {
  Matrix pos(static_cast<Index>(side) * side, 2);
  const double step = patch_size / side;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      pos(static_cast<Index>(y) * side + x, 0) = (x + 0.5) * step;
      pos(static_cast<Index>(y) * side + x, 1) = (y + 0.5) * step;
    }
  return pos;
}

DetectionInput prepare_detection(const ModelConfig& config, const Image& image,
                                 const RawPointCloud& cloud, const ProjectedPoints& projected,
                                 const BBox& box) {
  const MMatrix M = compute_m_matrix(box, config.patch_size, config.patch_size);
  DetectionInput in;

  const int g = config.grid;
  const int ch = config.in_channels;
  if (image.channels != ch) {
    throw nn::ShapeError("image has " + std::to_string(image.channels) + " channels, model expects " +
                         std::to_string(ch));
  }
  const Matrix cells = crop_resize(image, M, g, g);
  in.patch.resize(static_cast<Index>(g) * g, 9 * ch);
  for (int y = 0; y < g; ++y) {
    for (int x = 0; x < g; ++x) {
      Index col = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int sx = std::clamp(x + dx, 0, g - 1);
          const int sy = std::clamp(y + dy, 0, g - 1);
          in.patch.row(static_cast<Index>(y) * g + x).segment(col, ch) =
              cells.row(static_cast<Index>(sy) * g + sx);
          col += ch;
        }
      }
    }
  }

  const ProjectedPoints inside = calibrate(frustum_filter(projected, box), M);
  const Index n = inside.size();
  Matrix xyz(n, 3);
  Vector refl(n);
  for (Index i = 0; i < n; ++i) {
    const Index src = inside.source_index[static_cast<std::size_t>(i)];
    xyz.row(i) = cloud.points.row(src).head<3>();
    refl(i) = cloud.points(src, 3);
  }
  std::vector<Index> chosen = farthest_point_sample(xyz, config.points_at(0));
  const auto kept = static_cast<Index>(chosen.size());
  Matrix kept_xyz(kept, 3);
  in.point_raw.resize(kept, 4);
  in.point_uv.resize(kept, 2);
  for (Index r = 0; r < kept; ++r) {
    const Index i = chosen[static_cast<std::size_t>(r)];
    kept_xyz.row(r) = xyz.row(i);
    in.point_raw(r, 3) = refl(i);
    in.point_uv.row(r) = inside.uv.row(i);
  }
  if (kept > 0) {
    const Eigen::RowVector3d centroid = kept_xyz.colwise().mean();
    in.point_raw.leftCols<3>() = kept_xyz.rowwise() - centroid;
  }
  in.keep[0].resize(static_cast<std::size_t>(kept));
  std::iota(in.keep[0].begin(), in.keep[0].end(), Index{0});
  Matrix level_xyz = kept_xyz;
  for (int l = 1; l < kLevels; ++l) {
    in.keep[static_cast<std::size_t>(l)] = farthest_point_sample(level_xyz, config.points_at(l));
    Matrix next(static_cast<Index>(in.keep[static_cast<std::size_t>(l)].size()), 3);
    for (std::size_t r = 0; r < in.keep[static_cast<std::size_t>(l)].size(); ++r)
      next.row(static_cast<Index>(r)) = level_xyz.row(in.keep[static_cast<std::size_t>(l)][r]);
    level_xyz = std::move(next);
  }
  return in;
}

const Vector& descriptor(const DetectionFeatures& f, Modality m) {
  switch (m) {
    case Modality::image: return f.camera;
    case Modality::lidar: return f.lidar;
    case Modality::fused: return f.fused;
  }
  return f.fused;
}

namespace {

std::string join(const std::array<Index, kLevels>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string join(const std::array<bool, kLevels>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::string(v[i] ? "1" : "0");
  return out;
}

template <typename T>
std::array<T, kLevels> split4(const std::string& text, const char* key) {
  std::array<T, kLevels> out{};
  std::stringstream ss(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= out.size()) throw nn::ShapeError(std::string("checkpoint meta '") + key + "' has too many entries");
    out[i++] = static_cast<T>(std::stoll(item));
  }
  if (i != out.size()) throw nn::ShapeError(std::string("checkpoint meta '") + key + "' has too few entries");
  return out;
}

const std::string& meta_at(const nn::Checkpoint& ckpt, const std::string& key) {
  const auto it = ckpt.meta.find(key);
  if (it == ckpt.meta.end()) throw std::runtime_error("checkpoint lacks metadata '" + key + "'");
  return it->second;
}

}  // namespace

void write_config_meta(const ModelConfig& c, std::map<std::string, std::string>& meta) {
  meta["channels"] = join(c.channels);
  meta["in_channels"] = std::to_string(c.in_channels);
  std::ostringstream num;
  num.precision(17);
  num << c.patch_size;
  meta["patch_size"] = num.str();
  meta["grid"] = std::to_string(c.grid);
  meta["max_points"] = std::to_string(c.max_points);
  meta["k_points"] = std::to_string(c.k_points);
  meta["k_pixels"] = std::to_string(c.k_pixels);
  num.str("");
  num << c.r_points;
  meta["r_points"] = num.str();
  num.str("");
  num << c.r_pixels;
  meta["r_pixels"] = num.str();
  meta["interact"] = join(c.interact);
  meta["modality"] = to_string(c.modality);
}

ModelConfig config_from_checkpoint(const nn::Checkpoint& ckpt) {
  ModelConfig c;
  c.channels = split4<Index>(meta_at(ckpt, "channels"), "channels");
  c.in_channels = std::stoi(meta_at(ckpt, "in_channels"));
  c.patch_size = std::stod(meta_at(ckpt, "patch_size"));
  c.grid = std::stoi(meta_at(ckpt, "grid"));
  c.max_points = std::stoi(meta_at(ckpt, "max_points"));
  c.k_points = std::stoi(meta_at(ckpt, "k_points"));
  c.k_pixels = std::stoi(meta_at(ckpt, "k_pixels"));
  c.r_points = std::stod(meta_at(ckpt, "r_points"));
  c.r_pixels = std::stod(meta_at(ckpt, "r_pixels"));
  c.interact = split4<bool>(meta_at(ckpt, "interact"), "interact");
  c.modality = parse_modality(meta_at(ckpt, "modality"));
  return c;
}

nn::Checkpoint model_checkpoint(const Model& model) {
  std::map<std::string, std::string> meta;
  write_config_meta(model.config, meta);
  return nn::to_checkpoint(model.store, std::move(meta));
}

void load_model(Model& model, const nn::Checkpoint& ckpt) {
  if (ckpt.meta.contains("channels") && ckpt.meta.at("channels") != join(model.config.channels)) {
    throw nn::ShapeError("checkpoint channels " + ckpt.meta.at("channels") + " do not match model channels " +
                         join(model.config.channels));
  }
  nn::load_into(model.store, ckpt);
}

}  // namespace fusiontrack
