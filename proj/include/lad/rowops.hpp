#pragma once

#include <cmath>
#include <vector>

#include "lad/errors.hpp"
#include "lad/types.hpp"

namespace lad {

/// y_i = x_i / |x_i| for every row. Zero rows cannot be normalized.
template <typename Derived>
MatrixX<typename Derived::Scalar> normalize_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar n = x.row(i).norm();
    if (!(n > Scalar(0))) throw NumericalError("normalize_rows: zero row cannot be normalized");
    y.row(i) = x.row(i) / n;
  }
  return y;
}

/// Backward pass of normalize_rows: dx_i = (dy_i - y_i <y_i, dy_i>) / |x_i|.
template <typename DerivedX, typename DerivedY, typename DerivedG>
MatrixX<typename DerivedX::Scalar> normalize_rows_backward(const Eigen::MatrixBase<DerivedX>& x,
                                                           const Eigen::MatrixBase<DerivedY>& y,
                                                           const Eigen::MatrixBase<DerivedG>& dy) {
  using Scalar = typename DerivedX::Scalar;
  MatrixX<Scalar> dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar n = x.row(i).norm();
    dx.row(i) = (dy.row(i) - y.row(i) * y.row(i).dot(dy.row(i))) / n;
  }
  return dx;
}

/// Row means over member lists: out_g = mean_{i in groups[g]} x_i.
template <typename Derived>
MatrixX<typename Derived::Scalar> mean_pool(const Eigen::MatrixBase<Derived>& x, const std::vector<IndexList>& groups) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(static_cast<Eigen::Index>(groups.size()), x.cols());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw InvalidArgument("mean_pool: empty group");
    for (int i : groups[g]) out.row(static_cast<Eigen::Index>(g)) += x.row(i);
    out.row(static_cast<Eigen::Index>(g)) /= Scalar(groups[g].size());
  }
  return out;
}

/// Scatters pooled gradients back to members (each member receives d/|group|).
template <typename Derived>
void mean_pool_backward(const Eigen::MatrixBase<Derived>& d_pooled, const std::vector<IndexList>& groups,
                        MatrixX<typename Derived::Scalar>& dx) {
  using Scalar = typename Derived::Scalar;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const Scalar share = Scalar(1) / Scalar(groups[g].size());
    for (int i : groups[g]) dx.row(i) += share * d_pooled.row(static_cast<Eigen::Index>(g));
  }
}

/// Elementwise max over member rows; argmax records the winning member per
/// (group, dimension), first index winning ties.
template <typename Derived>
MatrixX<typename Derived::Scalar> max_pool(const Eigen::MatrixBase<Derived>& x, const std::vector<IndexList>& groups,
                                           Eigen::MatrixXi& argmax) {
  using Scalar = typename Derived::Scalar;
  const auto rows = static_cast<Eigen::Index>(groups.size());
  MatrixX<Scalar> out(rows, x.cols());
  argmax.resize(rows, x.cols());
  for (Eigen::Index g = 0; g < rows; ++g) {
    const auto& members = groups[static_cast<std::size_t>(g)];
    if (members.empty()) throw InvalidArgument("max_pool: empty group");
    for (Eigen::Index d = 0; d < x.cols(); ++d) {
      int win = members.front();
      for (int i : members) {
        if (x(i, d) > x(win, d)) win = i;
      }
      argmax(g, d) = win;
      out(g, d) = x(win, d);
    }
  }
  return out;
}

template <typename Derived>
void max_pool_backward(const Eigen::MatrixBase<Derived>& d_pooled, const Eigen::MatrixXi& argmax,
                       MatrixX<typename Derived::Scalar>& dx) {
  for (Eigen::Index g = 0; g < argmax.rows(); ++g) {
    for (Eigen::Index d = 0; d < argmax.cols(); ++d) dx(argmax(g, d), d) += d_pooled(g, d);
  }
}

/// Member lists for segment ids 1..count, noise (0) excluded.
inline std::vector<IndexList> members_by_label(const std::vector<int>& labels, int count) {
  std::vector<IndexList> out(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 0 && labels[i] <= count) out[static_cast<std::size_t>(labels[i] - 1)].push_back(static_cast<int>(i));
  }
  return out;
}

}  // namespace lad
