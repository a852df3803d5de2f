#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "labelprop/common.hpp"

namespace labelprop {

// Minimal dense row-major matrix. Dimensions here are tiny (d_hid is 5 in
// the reference configuration), so plain sequential loops beat a BLAS and,
// more importantly, keep accumulation order fixed: every contract in this
// library that promises bit-identical results relies on that.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
  double* row(int i) { return a.data() + static_cast<std::size_t>(i) * cols; }
  const double* row(int i) const { return a.data() + static_cast<std::size_t>(i) * cols; }

  void set_zero() { std::fill(a.begin(), a.end(), 0.0); }

  Mat transposed() const {
    Mat t(cols, rows);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  bool operator==(const Mat& o) const {
    return rows == o.rows && cols == o.cols && a == o.a;
  }
};

// Non-owning views over flat row-major storage (ParamStore tensors).
struct MatView {
  double* p = nullptr;
  int rows = 0;
  int cols = 0;
  double& operator()(int i, int j) const { return p[static_cast<std::size_t>(i) * cols + j]; }
  double* row(int i) const { return p + static_cast<std::size_t>(i) * cols; }
};

struct CMatView {
  const double* p = nullptr;
  int rows = 0;
  int cols = 0;
  CMatView() = default;
  CMatView(const double* q, int r, int c) : p(q), rows(r), cols(c) {}
  CMatView(const MatView& v) : p(v.p), rows(v.rows), cols(v.cols) {}
  CMatView(const Mat& m) : p(m.a.data()), rows(m.rows), cols(m.cols) {}
  double operator()(int i, int j) const { return p[static_cast<std::size_t>(i) * cols + j]; }
  const double* row(int i) const { return p + static_cast<std::size_t>(i) * cols; }
};

namespace la {

inline double dot(const double* x, const double* y, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

// y = M x
inline void matvec(CMatView m, const double* x, double* y) {
  for (int i = 0; i < m.rows; ++i) y[i] = dot(m.row(i), x, m.cols);
}

// y += M x
inline void matvec_acc(CMatView m, const double* x, double* y) {
  for (int i = 0; i < m.rows; ++i) y[i] += dot(m.row(i), x, m.cols);
}

// y += M^T x
inline void mattvec_acc(CMatView m, const double* x, double* y) {
  for (int i = 0; i < m.rows; ++i) {
    const double xi = x[i];
    const double* ri = m.row(i);
    for (int j = 0; j < m.cols; ++j) y[j] += ri[j] * xi;
  }
}

// M += s * u v^T
inline void add_outer(MatView m, const double* u, const double* v, double s = 1.0) {
  for (int i = 0; i < m.rows; ++i) {
    double* ri = m.row(i);
    const double su = s * u[i];
    for (int j = 0; j < m.cols; ++j) ri[j] += su * v[j];
  }
}

inline void axpy(double s, const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += s * x[i];
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Sigmoid clamped away from {0,1} so downstream log() stays finite even for
// saturated logits. The clamp engages around |x| > 27, far outside any
// region a gradient check probes.
inline double sigmoid_prob(double x) {
  constexpr double kEps = 1e-12;
  return std::clamp(sigmoid(x), kEps, 1.0 - kEps);
}

inline double max_abs_diff(const Mat& x, const Mat& y) {
  double m = 0.0;
  for (std::size_t i = 0; i < x.a.size(); ++i) m = std::max(m, std::fabs(x.a[i] - y.a[i]));
  return m;
}

}  // namespace la
}  // namespace labelprop
