#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace rmnerf {

// Tensors stored back to back as little-endian float64 in row-major order at
// `path`; `path`.json holds {"shapes": [[rows, cols], ...]} merged with the
// caller's metadata (kind, config hash, hyperparameters).
void SaveParams(const std::string& path, const std::vector<Eigen::MatrixXd>& tensors,
                const nlohmann::json& meta);

struct ParamBlob {
  std::vector<Eigen::MatrixXd> tensors;
  nlohmann::json meta;
};

// Throws std::runtime_error on missing files, size mismatches, or non-finite
// values.
ParamBlob LoadParams(const std::string& path);

}  // namespace rmnerf
