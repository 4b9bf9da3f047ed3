#include "rmnerf/param_io.h"

#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace rmnerf {

static_assert(std::endian::native == std::endian::little,
              "parameter files assume a little-endian host");

void SaveParams(const std::string& path, const std::vector<Eigen::MatrixXd>& tensors,
                const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("SaveParams: cannot open " + path);
  nlohmann::json shapes = nlohmann::json::array();
  for (const Eigen::MatrixXd& t : tensors) {
    shapes.push_back({t.rows(), t.cols()});
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        const double v = t(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
    }
  }
  if (!out) throw std::runtime_error("SaveParams: write failed for " + path);
  nlohmann::json side = meta;
  side["shapes"] = shapes;
  side["dtype"] = "float64le";
  std::ofstream sidecar(path + ".json");
  if (!sidecar) throw std::runtime_error("SaveParams: cannot open " + path + ".json");
  sidecar << side.dump(2) << "\n";
}

ParamBlob LoadParams(const std::string& path) {
  std::ifstream sidecar(path + ".json");
  if (!sidecar) throw std::runtime_error("LoadParams: missing sidecar " + path + ".json");
  ParamBlob blob;
  try {
    blob.meta = nlohmann::json::parse(sidecar);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("LoadParams: bad sidecar: " + std::string(e.what()));
  }
  if (!blob.meta.contains("shapes") || blob.meta.value("dtype", "") != "float64le") {
    throw std::runtime_error("LoadParams: sidecar lacks shapes or dtype");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("LoadParams: cannot open " + path);
  for (const auto& shape : blob.meta.at("shapes")) {
    const auto rows = shape.at(0).get<Eigen::Index>();
    const auto cols = shape.at(1).get<Eigen::Index>();
    if (rows < 0 || cols < 0) throw std::runtime_error("LoadParams: negative shape");
    Eigen::MatrixXd t(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        double v = 0.0;
        if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
          throw std::runtime_error("LoadParams: truncated payload " + path);
        }
        if (!std::isfinite(v)) throw std::runtime_error("LoadParams: non-finite value");
        t(r, c) = v;
      }
    }
    blob.tensors.push_back(std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("LoadParams: trailing bytes in " + path);
  }
  blob.meta.erase("shapes");
  blob.meta.erase("dtype");
  return blob;
}

}  // namespace rmnerf
