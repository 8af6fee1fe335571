#pragma once

// Rigid (SE(3)) and similarity (Sim(3)) transforms.
//
// Poses are camera-to-world throughout: applying a Pose to a point given in
// camera coordinates yields the point in world coordinates. World-to-camera
// only shows up at I/O boundaries, with an explicit conversion.
//
// Tangent vectors are ordered [omega (rad), u (translation part), sigma]
// where sigma = log(scale) exists only for Sim(3).

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace trackstitch {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Vector7d = Eigen::Matrix<double, 7, 1>;

Eigen::Matrix3d Hat(const Eigen::Vector3d& v);

// Left Jacobian of the Sim(3) exponential restricted to the translation
// block: t = W(omega, sigma) * u. With sigma == 0 this is the SE(3) V matrix.
Eigen::Matrix3d SimilarityTranslationJacobian(const Eigen::Vector3d& omega,
                                              double sigma);

// Unit quaternion rotation. The stored quaternion always has unit norm to
// within 1e-12; the double cover is canonicalized (w >= 0) only when asked.
class Rotation {
 public:
  Rotation() = default;

  // Normalizes `q` unless it is already unit to working precision, in which
  // case the coefficients are kept bit-for-bit.
  static Rotation FromQuaternion(const Eigen::Quaterniond& q);
  static Rotation FromAngleAxis(double angle, const Eigen::Vector3d& axis);
  static Rotation FromMatrix(const Eigen::Matrix3d& m);
  static Rotation Exp(const Eigen::Vector3d& omega);

  // Principal-branch logarithm. Throws kNumerical "non-principal rotation"
  // when the angle is pi.
  Eigen::Vector3d Log() const;

  const Eigen::Quaterniond& quaternion() const { return q_; }
  Eigen::Quaterniond Canonical() const;
  Eigen::Matrix3d matrix() const { return q_.toRotationMatrix(); }
  double angle() const;

  Rotation Inverse() const;
  Rotation operator*(const Rotation& other) const;
  Eigen::Vector3d operator*(const Eigen::Vector3d& v) const { return q_ * v; }

 private:
  explicit Rotation(const Eigen::Quaterniond& q) : q_(q) {}

  Eigen::Quaterniond q_ = Eigen::Quaterniond::Identity();
};

class Pose {
 public:
  Pose() = default;
  Pose(const Rotation& rotation, const Eigen::Vector3d& translation)
      : rotation(rotation), translation(translation) {}

  static Pose Identity() { return Pose(); }
  static Pose Exp(const Vector6d& twist);
  Vector6d Log() const;

  Pose Inverse() const;
  Pose operator*(const Pose& other) const;
  Eigen::Vector3d operator*(const Eigen::Vector3d& point) const {
    return rotation * point + translation;
  }
  Eigen::Matrix4d matrix() const;

  Rotation rotation;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

class Sim3 {
 public:
  Sim3() = default;
  Sim3(double scale, const Rotation& rotation,
       const Eigen::Vector3d& translation);
  explicit Sim3(const Pose& pose)
      : rotation(pose.rotation), translation(pose.translation) {}

  static Sim3 Identity() { return Sim3(); }
  static Sim3 FromScale(double scale);
  static Sim3 Exp(const Vector7d& twist);
  Vector7d Log() const;

  Sim3 Inverse() const;
  Sim3 operator*(const Sim3& other) const;
  Eigen::Vector3d operator*(const Eigen::Vector3d& point) const {
    return scale * (rotation * point) + translation;
  }
  Eigen::Matrix4d matrix() const;

  // Drops the scale.
  Pose ToPose() const { return Pose(rotation, translation); }

  double scale = 1.0;
  Rotation rotation;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

// Rotation angle of `a^-1 b`.
double AngularDistance(const Rotation& a, const Rotation& b);

}  // namespace trackstitch
