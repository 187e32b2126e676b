#include "avio/tensor_archive.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace avio {

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, const MatX*>>& blocks) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("save_tensors: cannot open " + path);
  }
  out << "avio-tensors 1\n";
  char buf[64];
  for (const auto& [name, mat] : blocks) {
    out << "tensor " << name << " " << mat->rows() << " " << mat->cols() << "\n";
    for (Eigen::Index r = 0; r < mat->rows(); ++r) {
      for (Eigen::Index c = 0; c < mat->cols(); ++c) {
        std::snprintf(buf, sizeof(buf), "%a", (*mat)(r, c));
        out << buf << (c + 1 < mat->cols() ? " " : "\n");
      }
      if (mat->cols() == 0) out << "\n";
    }
  }
  if (!out) {
    throw std::runtime_error("save_tensors: write failed for " + path);
  }
}

std::map<std::string, MatX> load_tensors(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_tensors: cannot open " + path);
  }
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "avio-tensors" || version != 1) {
    throw std::runtime_error("load_tensors: bad header in " + path);
  }
  std::map<std::string, MatX> out;
  std::string tok;
  while (in >> tok) {
    if (tok != "tensor") {
      throw std::runtime_error("load_tensors: expected 'tensor', got '" + tok + "'");
    }
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> name >> rows >> cols) || rows < 0 || cols < 0) {
      throw std::runtime_error("load_tensors: malformed tensor header");
    }
    MatX mat(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        std::string v;
        if (!(in >> v)) {
          throw std::runtime_error("load_tensors: truncated tensor " + name);
        }
        mat(r, c) = std::strtod(v.c_str(), nullptr);
      }
    }
    out[name] = std::move(mat);
  }
  return out;
}

}  // namespace avio
