#include "irtnet/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "irtnet/error.hpp"

namespace irtnet {
namespace {

void require_same_length(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": length mismatch (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
  }
}

// Four independent partial sums; fixed association order keeps results
// reproducible while letting the compiler pipeline the loop.
double dot_unchecked(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void require_points(std::size_t xs, std::size_t ys) {
  require_same_length(xs, ys, "correlation");
  if (xs < 2) throw std::domain_error("correlation needs at least two points");
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "dot");
  return dot_unchecked(a.data(), b.data(), a.size());
}

Vec matvec(const Mat& w, std::span<const double> x) {
  require_same_length(w.cols(), x.size(), "matvec");
  Vec out(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) out[r] = dot_unchecked(w.row(r).data(), x.data(), x.size());
  return out;
}

Vec affine(const Mat& w, std::span<const double> bias, std::span<const double> x) {
  Vec out(w.rows());
  affine_into(w, bias, x, out);
  return out;
}

void affine_into(const Mat& w, std::span<const double> bias, std::span<const double> x,
                 std::span<double> out) {
  require_same_length(w.cols(), x.size(), "affine");
  require_same_length(w.rows(), bias.size(), "affine bias");
  require_same_length(w.rows(), out.size(), "affine output");
  for (std::size_t r = 0; r < w.rows(); ++r) {
    out[r] = bias[r] + dot_unchecked(w.row(r).data(), x.data(), x.size());
  }
}

void matvec_transposed_add(const Mat& w, std::span<const double> y, std::span<double> out) {
  require_same_length(w.rows(), y.size(), "matvec_transposed");
  require_same_length(w.cols(), out.size(), "matvec_transposed output");
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    const double* row = w.row(r).data();
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += yr * row[c];
  }
}

void outer_add(Mat& g, double scale, std::span<const double> a, std::span<const double> b) {
  require_same_length(g.rows(), a.size(), "outer rows");
  require_same_length(g.cols(), b.size(), "outer cols");
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const double ar = scale * a[r];
    if (ar == 0.0) continue;
    double* row = g.row(r).data();
    for (std::size_t c = 0; c < b.size(); ++c) row[c] += ar * b[c];
  }
}

void axpy(double scale, std::span<const double> x, std::span<double> y) {
  require_same_length(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += scale * x[i];
}

void affine_batch(const Mat& w, std::span<const double> bias, ConstVecs xs, MutVecs outs) {
  require_same_length(xs.size(), outs.size(), "affine batch");
  require_same_length(w.rows(), bias.size(), "affine bias");
  for (std::size_t q = 0; q < xs.size(); ++q) {
    require_same_length(w.cols(), xs[q].size(), "affine");
    require_same_length(w.rows(), outs[q].size(), "affine output");
  }
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double* row = w.row(r).data();
    for (std::size_t q = 0; q < xs.size(); ++q) outs[q][r] = bias[r] + dot_unchecked(row, xs[q].data(), w.cols());
  }
}

void matvec_transposed_add_batch(const Mat& w, ConstVecs ys, MutVecs outs) {
  require_same_length(ys.size(), outs.size(), "matvec_transposed batch");
  for (std::size_t q = 0; q < ys.size(); ++q) {
    require_same_length(w.rows(), ys[q].size(), "matvec_transposed");
    require_same_length(w.cols(), outs[q].size(), "matvec_transposed output");
  }
  const std::size_t cols = w.cols();
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double* row = w.row(r).data();
    for (std::size_t q = 0; q < ys.size(); ++q) {
      const double yr = ys[q][r];
      if (yr == 0.0) continue;
      double* out = outs[q].data();
      for (std::size_t c = 0; c < cols; ++c) out[c] += yr * row[c];
    }
  }
}

void outer_add_batch(Mat& g, std::span<const double> scales, ConstVecs as, ConstVecs bs) {
  require_same_length(as.size(), bs.size(), "outer batch");
  require_same_length(as.size(), scales.size(), "outer batch scales");
  for (std::size_t q = 0; q < as.size(); ++q) {
    require_same_length(g.rows(), as[q].size(), "outer rows");
    require_same_length(g.cols(), bs[q].size(), "outer cols");
  }
  const std::size_t cols = g.cols();
  for (std::size_t r = 0; r < g.rows(); ++r) {
    double* row = g.row(r).data();
    for (std::size_t q = 0; q < as.size(); ++q) {
      const double ar = scales[q] * as[q][r];
      if (ar == 0.0) continue;
      const double* b = bs[q].data();
      for (std::size_t c = 0; c < cols; ++c) row[c] += ar * b[c];
    }
  }
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

Vec softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax: empty input");
  const double peak = *std::max_element(logits.begin(), logits.end());
  Vec out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

Vec relu(std::span<const double> x) {
  Vec out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [](double v) { return v > 0.0 ? v : 0.0; });
  return out;
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "l2_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  require_points(xs.size(), ys.size());
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw std::domain_error("correlation undefined for zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Vec average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  Vec ranks(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && xs[order[j]] == xs[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j + 1);  // mean of 1-based ranks i+1..j
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = rank;
    i = j;
  }
  return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  require_points(xs.size(), ys.size());
  const Vec rx = average_ranks(xs);
  const Vec ry = average_ranks(ys);
  return pearson(rx, ry);
}

}  // namespace irtnet
