#include "trackstitch/geometry.h"

#include <cmath>
#include <limits>

#include "trackstitch/error.h"

namespace trackstitch {
namespace {

constexpr double kPi = 3.14159265358979323846;

// Unit quaternions whose squared norm is this close to 1 are left untouched.
constexpr double kUnitTolerance = 4 * std::numeric_limits<double>::epsilon();

}  // namespace

Eigen::Matrix3d Hat(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(),  //
      v.z(), 0, -v.x(),   //
      -v.y(), v.x(), 0;
  return m;
}

Eigen::Matrix3d SimilarityTranslationJacobian(const Eigen::Vector3d& omega,
                                              double sigma) {
  const double theta_sq = omega.squaredNorm();
  const Eigen::Matrix3d omega_hat = Hat(omega);
  const Eigen::Matrix3d identity = Eigen::Matrix3d::Identity();

  // W = sum_k X^k / (k+1)! with X = sigma*I + hat(omega). The spectral
  // radius of X is hypot(theta, sigma), so the series converges quickly
  // near the origin where the closed forms lose precision.
  if (theta_sq + sigma * sigma < 0.25) {
    const Eigen::Matrix3d x = sigma * identity + omega_hat;
    Eigen::Matrix3d term = identity;
    Eigen::Matrix3d w = identity;
    for (int k = 1; k < 30; ++k) {
      term = term * x / static_cast<double>(k + 1);
      w += term;
      if (term.lpNorm<Eigen::Infinity>() < 1e-20) break;
    }
    return w;
  }

  const double theta = std::sqrt(theta_sq);
  const Eigen::Matrix3d omega_hat_sq = omega_hat * omega_hat;
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  if (std::abs(sigma) < 1e-12) {
    c = 1.0;
    a = (1.0 - std::cos(theta)) / theta_sq;
    b = (theta - std::sin(theta)) / (theta_sq * theta);
  } else {
    const double scale = std::exp(sigma);
    c = std::expm1(sigma) / sigma;
    if (theta < 1e-8) {
      const double sigma_sq = sigma * sigma;
      a = ((sigma - 1.0) * scale + 1.0) / sigma_sq;
      b = (0.5 * scale * sigma_sq + scale - 1.0 - sigma * scale) /
          (sigma_sq * sigma);
    } else {
      const double sa = scale * std::sin(theta);
      const double sb = scale * std::cos(theta);
      const double denom = theta_sq + sigma * sigma;
      a = (sa * sigma + (1.0 - sb) * theta) / (theta * denom);
      b = (c - ((sb - 1.0) * sigma + sa * theta) / denom) / theta_sq;
    }
  }
  return a * omega_hat + b * omega_hat_sq + c * identity;
}

// ---------------------------------------------------------------------------
// Rotation

Rotation Rotation::FromQuaternion(const Eigen::Quaterniond& q) {
  const double norm_sq = q.squaredNorm();
  if (!(norm_sq > 0.0) || !std::isfinite(norm_sq)) {
    throw NumericalError("cannot build a rotation from a zero or non-finite "
                         "quaternion");
  }
  if (std::abs(norm_sq - 1.0) <= kUnitTolerance) return Rotation(q);
  return Rotation(q.normalized());
}

Rotation Rotation::FromAngleAxis(double angle, const Eigen::Vector3d& axis) {
  return Exp(angle * axis.normalized());
}

Rotation Rotation::FromMatrix(const Eigen::Matrix3d& m) {
  return FromQuaternion(Eigen::Quaterniond(m));
}

Rotation Rotation::Exp(const Eigen::Vector3d& omega) {
  const double theta_sq = omega.squaredNorm();
  double real = 0.0;
  double imag_factor = 0.0;  // sin(theta/2) / theta
  if (theta_sq < 1e-8) {
    real = 1.0 - theta_sq / 8.0 + theta_sq * theta_sq / 384.0;
    imag_factor = 0.5 - theta_sq / 48.0 + theta_sq * theta_sq / 3840.0;
  } else {
    const double theta = std::sqrt(theta_sq);
    real = std::cos(0.5 * theta);
    imag_factor = std::sin(0.5 * theta) / theta;
  }
  const Eigen::Vector3d imag = imag_factor * omega;
  return Rotation(
      Eigen::Quaterniond(real, imag.x(), imag.y(), imag.z()).normalized());
}

Eigen::Vector3d Rotation::Log() const {
  const Eigen::Quaterniond q = Canonical();
  const double w = q.w();
  const Eigen::Vector3d v = q.vec();
  if (w < 1e-12) {
    throw NumericalError("non-principal rotation: logarithm undefined at "
                         "angle pi");
  }
  const double n = v.norm();
  double factor = 0.0;  // angle / n
  if (n < 1e-6 * w) {
    const double r_sq = (n / w) * (n / w);
    factor = 2.0 / w * (1.0 - r_sq / 3.0 + r_sq * r_sq / 5.0);
  } else {
    factor = 2.0 * std::atan2(n, w) / n;
  }
  return factor * v;
}

Eigen::Quaterniond Rotation::Canonical() const {
  if (q_.w() >= 0.0) return q_;
  return Eigen::Quaterniond(-q_.w(), -q_.x(), -q_.y(), -q_.z());
}

double Rotation::angle() const {
  const Eigen::Quaterniond q = Canonical();
  return 2.0 * std::atan2(q.vec().norm(), q.w());
}

Rotation Rotation::Inverse() const { return Rotation(q_.conjugate()); }

Rotation Rotation::operator*(const Rotation& other) const {
  return Rotation((q_ * other.q_).normalized());
}

double AngularDistance(const Rotation& a, const Rotation& b) {
  return (a.Inverse() * b).angle();
}

// ---------------------------------------------------------------------------
// Pose

Pose Pose::Exp(const Vector6d& twist) {
  const Eigen::Vector3d omega = twist.head<3>();
  const Eigen::Vector3d u = twist.segment<3>(3);
  return Pose(Rotation::Exp(omega),
              SimilarityTranslationJacobian(omega, 0.0) * u);
}

Vector6d Pose::Log() const {
  const Eigen::Vector3d omega = rotation.Log();
  Vector6d out;
  out.head<3>() = omega;
  out.segment<3>(3) =
      SimilarityTranslationJacobian(omega, 0.0).partialPivLu().solve(
          translation);
  return out;
}

Pose Pose::Inverse() const {
  const Rotation inv = rotation.Inverse();
  return Pose(inv, -(inv * translation));
}

Pose Pose::operator*(const Pose& other) const {
  return Pose(rotation * other.rotation,
              rotation * other.translation + translation);
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation.matrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

// ---------------------------------------------------------------------------
// Sim3

Sim3::Sim3(double scale, const Rotation& rotation,
           const Eigen::Vector3d& translation)
    : scale(scale), rotation(rotation), translation(translation) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw InvalidArgument("Sim3 scale must be positive and finite");
  }
}

Sim3 Sim3::FromScale(double scale) {
  return Sim3(scale, Rotation(), Eigen::Vector3d::Zero());
}

Sim3 Sim3::Exp(const Vector7d& twist) {
  const Eigen::Vector3d omega = twist.head<3>();
  const Eigen::Vector3d u = twist.segment<3>(3);
  const double sigma = twist[6];
  return Sim3(std::exp(sigma), Rotation::Exp(omega),
              SimilarityTranslationJacobian(omega, sigma) * u);
}

Vector7d Sim3::Log() const {
  const Eigen::Vector3d omega = rotation.Log();
  const double sigma = std::log(scale);
  Vector7d out;
  out.head<3>() = omega;
  out.segment<3>(3) =
      SimilarityTranslationJacobian(omega, sigma).partialPivLu().solve(
          translation);
  out[6] = sigma;
  return out;
}

Sim3 Sim3::Inverse() const {
  const Rotation inv = rotation.Inverse();
  const double inv_scale = 1.0 / scale;
  return Sim3(inv_scale, inv, -inv_scale * (inv * translation));
}

Sim3 Sim3::operator*(const Sim3& other) const {
  return Sim3(scale * other.scale, rotation * other.rotation,
              scale * (rotation * other.translation) + translation);
}

Eigen::Matrix4d Sim3::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = scale * rotation.matrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

}  // namespace trackstitch
