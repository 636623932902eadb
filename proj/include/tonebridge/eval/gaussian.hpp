/**
 * Copyright (C) The tonebridge authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef TONEBRIDGE_EVAL_GAUSSIAN_HPP
#define TONEBRIDGE_EVAL_GAUSSIAN_HPP

// glibc's <resolv.h> (reached through httplib) defines _res as a macro, which
// collides with parameter names inside Eigen.
#pragma push_macro("_res")
#undef _res
#include <Eigen/Dense>
#pragma pop_macro("_res")

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "tonebridge/error.hpp"
#include "tonebridge/eval/types.hpp"

namespace tonebridge {

/// Mean and unbiased covariance of an embedding set.
struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  std::size_t sample_count = 0;

  Eigen::Index dim() const { return mean.size(); }
};

inline constexpr double kSymmetryTolerance = 1e-9;
inline constexpr double kNegativeEigenTolerance = 1e-9;
inline constexpr double kRegularization = 1e-10;

inline GaussianStats fit_gaussian(std::span<const EmbeddingVector> embeddings) {
  if (embeddings.size() < 2)
    fail(ErrorCode::insufficient_samples,
         "need at least 2 embeddings, got " + std::to_string(embeddings.size()));
  const auto dim = embeddings.front().dim();
  if (dim == 0) fail(ErrorCode::dimension_mismatch, "embeddings have zero dimension");
  for (const auto& e : embeddings)
    if (e.dim() != dim)
      fail(ErrorCode::dimension_mismatch,
           "embedding dim " + std::to_string(e.dim()) + " != " + std::to_string(dim));

  const auto n = static_cast<Eigen::Index>(embeddings.size());
  const auto d = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    x.row(i) = Eigen::Map<const Eigen::RowVectorXd>(embeddings[static_cast<std::size_t>(i)].values.data(), d);

  GaussianStats stats;
  stats.sample_count = embeddings.size();
  stats.mean = x.colwise().mean().transpose();
  Eigen::MatrixXd centered = x.rowwise() - stats.mean.transpose();
  Eigen::MatrixXd c = (centered.transpose() * centered) / static_cast<double>(n - 1);
  stats.covariance = (c + c.transpose()) / 2.0;
  return stats;
}

inline GaussianStats fit_gaussian(const std::vector<EmbeddingVector>& embeddings) {
  return fit_gaussian(std::span<const EmbeddingVector>(embeddings));
}

inline double max_asymmetry(const Eigen::MatrixXd& m) {
  return m.rows() == 0 ? 0.0 : (m - m.transpose()).cwiseAbs().maxCoeff();
}

/// Symmetry is judged relative to the largest entry (floor of 1).
inline void require_symmetric(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) fail(ErrorCode::not_symmetric, "matrix is not square");
  double scale = std::max(1.0, m.rows() == 0 ? 0.0 : m.cwiseAbs().maxCoeff());
  if (max_asymmetry(m) > kSymmetryTolerance * scale)
    fail(ErrorCode::not_symmetric, "matrix asymmetry " + std::to_string(max_asymmetry(m)) + " exceeds tolerance");
}

/// Principal square root U·diag(√λ)·Uᵀ with negative eigenvalues clamped to 0.
inline Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& m) {
  require_symmetric(m);
  Eigen::MatrixXd sym = (m + m.transpose()) / 2.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) fail(ErrorCode::not_symmetric, "eigendecomposition did not converge");
  Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd r = eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
  return (r + r.transpose()) / 2.0;
}

/// ‖μa−μb‖² + tr Σa + tr Σb − 2·tr((Σa^½ Σb Σa^½)^½), clamped at 0.
inline double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim() != b.dim() || a.covariance.rows() != a.dim() || b.covariance.rows() != b.dim())
    fail(ErrorCode::dimension_mismatch,
         "gaussian dims differ: " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  Eigen::MatrixXd root_a = matrix_sqrt_psd(a.covariance);
  Eigen::MatrixXd product = root_a * b.covariance * root_a;
  product = (product + product.transpose()) / 2.0;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(product, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) fail(ErrorCode::not_symmetric, "eigendecomposition did not converge");
  Eigen::VectorXd lambda = eig.eigenvalues();
  if (lambda.size() > 0 && lambda.minCoeff() < -kNegativeEigenTolerance) {
    product += kRegularization * Eigen::MatrixXd::Identity(product.rows(), product.cols());
    lambda = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(product, Eigen::EigenvaluesOnly).eigenvalues();
  }
  double trace_root = lambda.cwiseMax(0.0).cwiseSqrt().sum();

  double mean_term = (a.mean - b.mean).squaredNorm();
  double d = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * trace_root;
  return std::max(0.0, d);
}

}  // namespace tonebridge

#endif  // TONEBRIDGE_EVAL_GAUSSIAN_HPP
