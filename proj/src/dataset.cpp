#include "fusiontrack/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fusiontrack {

namespace fs = std::filesystem;

namespace {

std::string frame_name(int frame, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d%s", frame, ext);
  return buf;
}

FrameBoxes read_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return parse_sequence_labels(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.line());
  }
}

}  // namespace

std::vector<std::string> list_sequences(const std::string& root) {
  const fs::path dir = fs::path(root) / "det_02";
  if (!fs::is_directory(dir)) throw FormatError("no det_02 directory under " + root);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".txt") names.push_back(entry.path().stem().string());
  std::sort(names.begin(), names.end());
  return names;
}

SequenceData load_sequence(const std::string& root, const std::string& name) {
  const fs::path base(root);
  SequenceData seq;
  seq.name = name;
  {
    const fs::path p = base / "calib" / (name + ".txt");
    std::ifstream in(p);
    if (!in) throw FormatError("cannot open " + p.string());
    seq.calib = parse_calib(in);
  }
  if (const fs::path p = base / "label_02" / (name + ".txt"); fs::exists(p)) seq.gt = read_labels(p);
  seq.detections = read_labels(base / "det_02" / (name + ".txt"));
  for (const auto& [frame, boxes] : seq.detections)
    for (const auto& b : boxes)
      if (!b.score) throw FormatError("detection in frame " + std::to_string(frame) + " of " + name + " has no score");

  const fs::path image_dir = base / "image_02" / name;
  for (int f = 0;; ++f) {
    const fs::path img = image_dir / frame_name(f, ".ppm");
    if (!fs::exists(img)) break;
    seq.images.push_back(read_ppm(img.string()));
    const fs::path cloud = base / "velodyne" / name / frame_name(f, ".bin");
    seq.clouds.push_back(fs::exists(cloud) ? load_point_cloud_file(cloud.string()) : RawPointCloud{Eigen::MatrixXd(0, 4)});
  }
  if (seq.images.empty()) throw FormatError("sequence " + name + " has no images under " + image_dir.string());
  const int last_det = seq.detections.empty() ? -1 : seq.detections.rbegin()->first;
  if (last_det >= seq.frames()) {
    throw FormatError("sequence " + name + " has detections in frame " + std::to_string(last_det) + " but only " +
                      std::to_string(seq.frames()) + " images");
  }
  return seq;
}

std::vector<SequenceData> load_dataset(const std::string& root, const std::vector<std::string>& names) {
  const std::vector<std::string> wanted = names.empty() ? list_sequences(root) : names;
  std::vector<SequenceData> out;
  for (const auto& n : wanted) out.push_back(load_sequence(root, n));
  return out;
}

void write_sequence(const std::string& root, const SequenceData& seq) {
  const fs::path base(root);
  for (const char* sub : {"calib", "label_02", "det_02"}) fs::create_directories(base / sub);
  fs::create_directories(base / "image_02" / seq.name);
  fs::create_directories(base / "velodyne" / seq.name);
  {
    std::ofstream out(base / "calib" / (seq.name + ".txt"));
    auto row = [&](const char* key, const auto& m, int rows, int cols) {
      out << key;
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          char buf[64];
          std::snprintf(buf, sizeof buf, " %.12g", m(r, c));
          out << buf;
        }
      out << '\n';
    };
    row("P2:", seq.calib.P, 3, 4);
    row("R_rect", seq.calib.rect, 3, 3);
    row("Tr_velo_cam", seq.calib.velo_to_cam, 3, 4);
  }
  if (!seq.gt.empty()) {
    std::ofstream out(base / "label_02" / (seq.name + ".txt"));
    write_labels(seq.gt, out);
  }
  {
    std::ofstream out(base / "det_02" / (seq.name + ".txt"));
    write_labels(seq.detections, out);
  }
  for (int f = 0; f < seq.frames(); ++f) {
    write_ppm(seq.images[static_cast<std::size_t>(f)], (base / "image_02" / seq.name / frame_name(f, ".ppm")).string());
    const auto bytes = encode_point_cloud(seq.clouds[static_cast<std::size_t>(f)]);
    std::ofstream out(base / "velodyne" / seq.name / frame_name(f, ".bin"), std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
}

std::map<std::string, FrameBoxes> load_label_tree(const std::string& path) {
  std::map<std::string, FrameBoxes> out;
  const fs::path p(path);
  if (fs::is_directory(p)) {
    for (const auto& entry : fs::directory_iterator(p))
      if (entry.path().extension() == ".txt") out[entry.path().stem().string()] = read_labels(entry.path());
  } else if (fs::exists(p)) {
    out[p.stem().string()] = read_labels(p);
  } else {
    throw FormatError("no such file or directory: " + path);
  }
  return out;
}

}  // namespace fusiontrack
