#pragma once

// Two-stage projection of hidden vectors to soft-binary codes:
//   z = sigmoid(gamma * W2 * tanh(W1 h - theta))
// with evaluation-time binarisation at 0.5.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "aop/f2.hpp"

namespace aop {

inline constexpr double kDefaultGamma = 4.0;
inline constexpr int kDefaultProjectionDim = 2048;

struct ProjectorParams {
  Eigen::MatrixXd w1;     // n x d, attribute extraction
  Eigen::VectorXd theta;  // n, per-dimension threshold
  Eigen::MatrixXd w2;     // n x n, logical mapping
  double gamma = kDefaultGamma;

  Eigen::Index n() const { return w1.rows(); }
  Eigen::Index d() const { return w1.cols(); }
  bool all_finite() const { return w1.allFinite() && theta.allFinite() && w2.allFinite(); }
};

// W1, W2 ~ Normal(0, 1/fan_in), theta = 0.
ProjectorParams init_params(int d, int n, std::uint64_t seed);
inline constexpr const char* kInitScheme = "normal_fan_in";

// Single vector; throws DimensionError / NumericError.
Eigen::VectorXd forward(const ProjectorParams& p, const Eigen::VectorXd& h);
// Columns of `h` are concept vectors; returns an n x C matrix.
Eigen::MatrixXd forward_batch(const ProjectorParams& p, const Eigen::MatrixXd& h);

// Bit i set iff z_i > 0.5.
BitCode binarize(const Eigen::VectorXd& z);

// Checkpoint directory: manifest.json + W1.f64, theta.f64, W2.f64
// (row-major, little-endian float64).
void save_checkpoint(const ProjectorParams& p, const std::filesystem::path& dir,
                     const nlohmann::json& metadata = nlohmann::json::object());
ProjectorParams load_checkpoint(const std::filesystem::path& dir,
                                nlohmann::json* metadata = nullptr);

}  // namespace aop
