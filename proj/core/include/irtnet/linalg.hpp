#pragma once

// Dense real kernels shared by every module. All accumulation is in double;
// 32-bit values only appear at file boundaries.

#include <cstddef>
#include <span>
#include <vector>

namespace irtnet {

using Vec = std::vector<double>;

/// Row-major dense matrix.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);

Vec matvec(const Mat& w, std::span<const double> x);
Vec affine(const Mat& w, std::span<const double> bias, std::span<const double> x);

// In-place variants used on hot paths; `out` must already have w.rows() entries.
void affine_into(const Mat& w, std::span<const double> bias, std::span<const double> x,
                 std::span<double> out);
// out += w^T y
void matvec_transposed_add(const Mat& w, std::span<const double> y, std::span<double> out);
// g += scale * a b^T
void outer_add(Mat& g, double scale, std::span<const double> a, std::span<const double> b);
// y += scale * x
void axpy(double scale, std::span<const double> x, std::span<double> y);

// Batched forms of the three kernels above. Each reads every row of the matrix
// once for the whole batch, and every output element receives the same
// arithmetic, in the same operand order, as repeated single-vector calls.
using ConstVecs = std::span<const std::span<const double>>;
using MutVecs = std::span<const std::span<double>>;
void affine_batch(const Mat& w, std::span<const double> bias, ConstVecs xs, MutVecs outs);
void matvec_transposed_add_batch(const Mat& w, ConstVecs ys, MutVecs outs);
void outer_add_batch(Mat& g, std::span<const double> scales, ConstVecs as, ConstVecs bs);

double sigmoid(double z);
// log(1 + e^z) without overflow.
double softplus(double z);

Vec softmax(std::span<const double> logits);
Vec relu(std::span<const double> x);

double l2_distance(std::span<const double> a, std::span<const double> b);

// Both throw std::domain_error on fewer than two points or zero variance.
double pearson(std::span<const double> xs, std::span<const double> ys);
double spearman(std::span<const double> xs, std::span<const double> ys);

/// 1-based ranks with ties assigned their average rank.
Vec average_ranks(std::span<const double> xs);

}  // namespace irtnet
