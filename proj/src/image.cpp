#include "fusiontrack/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fusiontrack {

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok.front() != '#') return tok;
    std::string rest;
    std::getline(in, rest);
  }
  throw FormatError("truncated PPM header");
}

int header_int(std::istream& in) {
  const std::string tok = next_token(in);
  try {
    return std::stoi(tok);
  } catch (const std::exception&) {
    throw FormatError("bad PPM header value '" + tok + "'");
  }
}

}  // namespace

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path);
  const std::string magic = next_token(in);
  if (magic != "P6" && magic != "P3") throw FormatError(path + ": not a PPM image");
  const int w = header_int(in);
  const int h = header_int(in);
  const int maxval = header_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw FormatError(path + ": unsupported PPM header");
  Image img(w, h, 3);
  if (magic == "P6") {
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> raw(img.data.size());
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw FormatError(path + ": truncated pixel data");
    for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / static_cast<double>(maxval);
  } else {
    for (auto& v : img.data) v = header_int(in) / static_cast<double>(maxval);
  }
  return img;
}

void write_ppm(const Image& image, const std::string& path) {
  if (image.channels != 3) throw std::invalid_argument("write_ppm needs 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> raw(image.data.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = static_cast<unsigned char>(std::lround(std::clamp(image.data[i], 0.0, 1.0) * 255.0));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

double sample_bilinear(const Image& image, double x, double y, int channel) {
  const double fx = std::clamp(x - 0.5, 0.0, static_cast<double>(image.width - 1));
  const double fy = std::clamp(y - 0.5, 0.0, static_cast<double>(image.height - 1));
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const int x1 = std::min(x0 + 1, image.width - 1);
  const int y1 = std::min(y0 + 1, image.height - 1);
  const double ax = fx - x0;
  const double ay = fy - y0;
  const double top = (1 - ax) * image.at(x0, y0, channel) + ax * image.at(x1, y0, channel);
  const double bottom = (1 - ax) * image.at(x0, y1, channel) + ax * image.at(x1, y1, channel);
  return (1 - ay) * top + ay * bottom;
}

Eigen::MatrixXd crop_resize(const Image& image, const MMatrix& M, int cols, int rows) {
  const MMatrix inv = invert_m(M);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(cols) * rows, image.channels);
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      const Eigen::Vector2d patch((x + 0.5) * M.width / cols, (y + 0.5) * M.height / rows);
      const Eigen::Vector2d src = apply_m(inv, patch);
      for (int c = 0; c < image.channels; ++c)
        out(static_cast<Eigen::Index>(y) * cols + x, c) = sample_bilinear(image, src.x(), src.y(), c);
    }
  }
  return out;
}

}  // namespace fusiontrack
