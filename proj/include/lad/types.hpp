#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace lad {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Points3 = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;

using Mat = MatrixX<double>;
using Vec = VectorX<double>;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Pose = Eigen::Matrix4d;
using PointsXd = Points3<double>;

using IndexList = std::vector<int>;

/// Rigid-transform check on the rotation block of a homogeneous 4x4.
template <typename Derived>
bool is_rigid(const Eigen::MatrixBase<Derived>& pose, double tol) {
  const auto rot = pose.template topLeftCorner<3, 3>();
  const Eigen::Matrix3d gram = (rot.transpose() * rot).template cast<double>();
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  if (std::abs(static_cast<double>(rot.determinant()) - 1.0) > tol) return false;
  const auto last = pose.template bottomRows<1>();
  return std::abs(double(last(0))) <= tol && std::abs(double(last(1))) <= tol &&
         std::abs(double(last(2))) <= tol && std::abs(double(last(3)) - 1.0) <= tol;
}

/// Inverse of a rigid transform without a general 4x4 inversion.
template <typename Scalar>
Eigen::Matrix<Scalar, 4, 4> rigid_inverse(const Eigen::Matrix<Scalar, 4, 4>& pose) {
  Eigen::Matrix<Scalar, 4, 4> inv = Eigen::Matrix<Scalar, 4, 4>::Identity();
  inv.template topLeftCorner<3, 3>() = pose.template topLeftCorner<3, 3>().transpose();
  inv.template topRightCorner<3, 1>() =
      -inv.template topLeftCorner<3, 3>() * pose.template topRightCorner<3, 1>();
  return inv;
}

}  // namespace lad
