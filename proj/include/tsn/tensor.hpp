#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <numeric>
#include <vector>

#include "tsn/common.hpp"

namespace tsn {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<MatrixRM>;
using ConstMapMat = Eigen::Map<const MatrixRM>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;

// Dense row-major tensor of doubles. Rank is implied by `shape`.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    return std::accumulate(s.begin(), s.end(), int64_t{1}, std::multiplies<>());
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(size_t i) const { return shape.at(i); }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  // 2-D view; 1-D tensors map as a single row.
  MapMat mat() {
    if (shape.size() == 1) return MapMat(ptr(), 1, shape[0]);
    require(shape.size() == 2, "mat() needs a rank-1 or rank-2 tensor");
    return MapMat(ptr(), shape[0], shape[1]);
  }
  ConstMapMat mat() const {
    if (shape.size() == 1) return ConstMapMat(ptr(), 1, shape[0]);
    require(shape.size() == 2, "mat() needs a rank-1 or rank-2 tensor");
    return ConstMapMat(ptr(), shape[0], shape[1]);
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

// Binary mask stored unpacked for fast elementwise use; bit-packed on disk.
using MaskVec = std::vector<uint8_t>;

inline int64_t mask_count(const MaskVec& m) {
  int64_t n = 0;
  for (uint8_t b : m) n += b;
  return n;
}

inline MaskVec mask_or(const MaskVec& a, const MaskVec& b) {
  require(a.size() == b.size(), "mask_or: size mismatch");
  MaskVec out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] | b[i];
  return out;
}

inline MaskVec mask_not(const MaskVec& a) {
  MaskVec out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] ? 0 : 1;
  return out;
}

}  // namespace tsn
