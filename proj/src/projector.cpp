#include "aop/projector.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "aop/error.hpp"
#include "aop/io_util.hpp"

namespace aop {
namespace {

namespace fs = std::filesystem;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void fill_normal(Eigen::MatrixXd& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  // Row-major fill order so the draw sequence does not depend on storage.
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
  }
}

std::string encode_matrix(const Eigen::MatrixXd& m) {
  const RowMajor rm = m;
  return io::encode_f64(std::span<const double>(rm.data(), static_cast<std::size_t>(rm.size())));
}

Eigen::MatrixXd decode_matrix(const fs::path& file, Eigen::Index rows, Eigen::Index cols) {
  const auto values = io::decode_f64(io::read_file(file));
  if (static_cast<Eigen::Index>(values.size()) != rows * cols) {
    throw FormatError(file.string() + ": expected " + std::to_string(rows * cols) +
                      " values, found " + std::to_string(values.size()));
  }
  RowMajor rm(rows, cols);
  std::copy(values.begin(), values.end(), rm.data());
  return rm;
}

}  // namespace

ProjectorParams init_params(int d, int n, std::uint64_t seed) {
  if (d < 1 || n < 1) throw ConfigError("init_params: d and n must be >= 1");
  std::mt19937_64 rng(seed);
  ProjectorParams p;
  p.w1.resize(n, d);
  p.w2.resize(n, n);
  fill_normal(p.w1, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  fill_normal(p.w2, 1.0 / std::sqrt(static_cast<double>(n)), rng);
  p.theta = Eigen::VectorXd::Zero(n);
  p.gamma = kDefaultGamma;
  return p;
}

Eigen::MatrixXd forward_batch(const ProjectorParams& p, const Eigen::MatrixXd& h) {
  if (h.rows() != p.d()) {
    throw DimensionError("forward: input dimension " + std::to_string(h.rows()) +
                         ", projector expects " + std::to_string(p.d()));
  }
  if (!h.allFinite()) throw NumericError("forward: non-finite input");
  const Eigen::MatrixXd a = ((p.w1 * h).colwise() - p.theta).array().tanh().matrix();
  const Eigen::MatrixXd logits = p.gamma * (p.w2 * a);
  return (1.0 / (1.0 + (-logits.array()).exp())).matrix();
}

Eigen::VectorXd forward(const ProjectorParams& p, const Eigen::VectorXd& h) {
  return forward_batch(p, h);
}

BitCode binarize(const Eigen::VectorXd& z) {
  BitCode code(static_cast<std::size_t>(z.size()));
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (z[i] > 0.5) code.set(static_cast<std::size_t>(i));
  }
  return code;
}

void save_checkpoint(const ProjectorParams& p, const fs::path& dir,
                     const nlohmann::json& metadata) {
  fs::create_directories(dir);
  io::write_file(dir / "W1.f64", encode_matrix(p.w1));
  io::write_file(dir / "theta.f64", encode_matrix(p.theta));
  io::write_file(dir / "W2.f64", encode_matrix(p.w2));
  nlohmann::json manifest = {{"d", p.d()},
                             {"n", p.n()},
                             {"gamma", p.gamma},
                             {"init", kInitScheme},
                             {"metadata", metadata}};
  io::write_json(dir / "manifest.json", manifest);
}

ProjectorParams load_checkpoint(const fs::path& dir, nlohmann::json* metadata) {
  const auto manifest = io::read_json(dir / "manifest.json");
  ProjectorParams p;
  Eigen::Index d = 0;
  Eigen::Index n = 0;
  try {
    d = manifest.at("d").get<Eigen::Index>();
    n = manifest.at("n").get<Eigen::Index>();
    p.gamma = manifest.at("gamma").get<double>();
    if (metadata) *metadata = manifest.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "manifest.json").string() + ": " + e.what());
  }
  if (d < 1 || n < 1 || !(p.gamma > 0)) throw FormatError(dir.string() + ": invalid d/n/gamma");
  p.w1 = decode_matrix(dir / "W1.f64", n, d);
  p.theta = decode_matrix(dir / "theta.f64", n, 1);
  p.w2 = decode_matrix(dir / "W2.f64", n, n);
  if (!p.all_finite()) throw FormatError(dir.string() + ": non-finite parameters");
  return p;
}

}  // namespace aop
