#include "fusiontrack/nn.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace fusiontrack::nn {

namespace {

constexpr const char* kMagic = "FUSIONTRACK-CHECKPOINT 1";

void put_f64(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (char& b : bytes) {
    b = static_cast<char>(bits & 0xffu);
    bits >>= 8;
  }
  out.write(bytes, 8);
}

double get_f64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw std::runtime_error("checkpoint payload truncated");
  std::uint64_t bits = 0;
  for (int b = 7; b >= 0; --b) bits = (bits << 8) | bytes[b];
  return std::bit_cast<double>(bits);
}

}  // namespace

const Matrix* Checkpoint::find(std::string_view name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return &m;
  return nullptr;
}

Checkpoint to_checkpoint(const ParamStore& store, std::map<std::string, std::string> meta) {
  Checkpoint ckpt;
  ckpt.meta = std::move(meta);
  for (std::size_t id = 0; id < store.size(); ++id) ckpt.tensors.emplace_back(store.name(id), store.value(id));
  return ckpt;
}

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out << kMagic << '\n';
  for (const auto& [k, v] : ckpt.meta) out << "meta " << k << ' ' << v << '\n';
  out << "tensors " << ckpt.tensors.size() << '\n';
  for (const auto& [name, m] : ckpt.tensors) out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  out << "payload\n";
  for (const auto& [name, m] : ckpt.tensors)
    for (Index i = 0; i < m.size(); ++i) put_f64(out, m(i));
}

Checkpoint load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw std::runtime_error("not a checkpoint file");
  Checkpoint ckpt;
  std::vector<std::pair<Index, Index>> shapes;
  std::size_t expected = 0;
  while (std::getline(in, line)) {
    if (line == "payload") break;
    std::istringstream row(line);
    std::string kind;
    row >> kind;
    if (kind == "meta") {
      std::string key, value;
      row >> key;
      std::getline(row >> std::ws, value);
      ckpt.meta[key] = value;
    } else if (kind == "tensors") {
      row >> expected;
    } else if (kind == "tensor") {
      std::string name;
      Index rows = 0, cols = 0;
      if (!(row >> name >> rows >> cols) || rows < 0 || cols < 0) {
        throw std::runtime_error("bad checkpoint tensor header: " + line);
      }
      ckpt.tensors.emplace_back(name, Matrix());
      shapes.emplace_back(rows, cols);
    } else {
      throw std::runtime_error("unknown checkpoint header line: " + line);
    }
  }
  if (line != "payload") throw std::runtime_error("checkpoint header not terminated");
  if (expected != ckpt.tensors.size()) throw std::runtime_error("checkpoint tensor count mismatch");
  for (std::size_t t = 0; t < ckpt.tensors.size(); ++t) {
    Matrix m(shapes[t].first, shapes[t].second);
    for (Index i = 0; i < m.size(); ++i) m(i) = get_f64(in);
    ckpt.tensors[t].second = std::move(m);
  }
  return ckpt;
}

void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  save_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  return load_checkpoint(in);
}

void load_into(ParamStore& store, const Checkpoint& ckpt, std::string_view prefix) {
  for (std::size_t id = 0; id < store.size(); ++id) {
    const std::string& name = store.name(id);
    if (!name.starts_with(prefix)) continue;
    const Matrix* m = ckpt.find(name);
    if (!m) throw std::runtime_error("checkpoint has no tensor " + name);
    if (m->rows() != store.value(id).rows() || m->cols() != store.value(id).cols()) {
      throw ShapeError("checkpoint tensor " + name + " is " + std::to_string(m->rows()) + "x" +
                       std::to_string(m->cols()) + ", model expects " +
                       std::to_string(store.value(id).rows()) + "x" +
                       std::to_string(store.value(id).cols()));
    }
    store.value(id) = *m;
  }
}

}  // namespace fusiontrack::nn
