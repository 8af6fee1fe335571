#include "trackstitch/geometry.h"

#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "test_util.h"
#include "trackstitch/error.h"

namespace trackstitch {
namespace {

using testing::RandomPose;
using testing::RandomSim3;
using testing::RandomVector;

constexpr double kPi = std::numbers::pi;

void ExpectSim3Near(const Sim3& a, const Sim3& b, double tol) {
  EXPECT_NEAR(a.scale, b.scale, tol);
  EXPECT_LT(AngularDistance(a.rotation, b.rotation), tol);
  EXPECT_LT((a.translation - b.translation).norm(), tol);
}

TEST(Rotation, ComposeQuarterTurns) {
  const Pose rz(Rotation::FromAngleAxis(kPi / 2, Eigen::Vector3d::UnitZ()), Eigen::Vector3d::Zero());
  const Eigen::Vector3d q = (rz * rz) * Eigen::Vector3d(1, 0, 0);
  EXPECT_LT((q - Eigen::Vector3d(-1, 0, 0)).norm(), 1e-12);
}

TEST(Rotation, ExpOfPureRotation) {
  const Rotation r = Rotation::Exp(Eigen::Vector3d(0, 0, kPi / 2));
  EXPECT_LT((r * Eigen::Vector3d(1, 0, 0) - Eigen::Vector3d(0, 1, 0)).norm(), 1e-12);
}

TEST(Rotation, LogAtPiIsRejected) {
  const Rotation r = Rotation::FromAngleAxis(kPi, Eigen::Vector3d::UnitX());
  try {
    r.Log();
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumerical);
    EXPECT_NE(std::string(e.what()).find("non-principal rotation"), std::string::npos);
  }
}

TEST(Rotation, NormSurvivesLongChains) {
  std::mt19937_64 rng(7);
  Rotation r;
  for (int i = 0; i < 5000; ++i) r = r * testing::RandomRotation(rng);
  EXPECT_LT(std::abs(r.quaternion().norm() - 1.0), 1e-9);
}

TEST(Rotation, CanonicalHasNonNegativeW) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    const Rotation r = testing::RandomRotation(rng, 6.2);
    EXPECT_GE(r.Canonical().w(), 0.0);
    EXPECT_LT(AngularDistance(r, Rotation::FromQuaternion(r.Canonical())), 1e-12);
  }
}

TEST(Pose, IdentityAndInverse) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const Pose p = RandomPose(rng);
    const Pose a = Pose::Identity() * p;
    EXPECT_LT(AngularDistance(a.rotation, p.rotation), 1e-12);
    EXPECT_LT((a.translation - p.translation).norm(), 1e-12);
    const Pose e = p * p.Inverse();
    EXPECT_LT(e.rotation.angle(), 1e-10);
    EXPECT_LT(e.translation.norm(), 1e-10);
  }
}

TEST(Pose, ApplyTranslation) {
  const Pose t(Rotation(), Eigen::Vector3d(1, 2, 3));
  EXPECT_EQ(t * Eigen::Vector3d::Zero(), Eigen::Vector3d(1, 2, 3));
  const Eigen::Vector3d q(0.3, -2, 5);
  EXPECT_EQ(Pose::Identity() * q, q);
}

TEST(Pose, ExpLogRoundTrip) {
  std::mt19937_64 rng(2);
  EXPECT_LT(Pose::Exp(Vector6d::Zero()).rotation.angle(), 1e-15);
  for (int i = 0; i < 100; ++i) {
    Vector6d v;
    v.head<3>() = RandomVector(rng, 0.5);
    v.tail<3>() = RandomVector(rng, 2.0);
    EXPECT_LT((Pose::Exp(v).Log() - v).norm(), 1e-9);
  }
}

TEST(Sim3, InverseByHand) {
  const Sim3 t(2.0, Rotation(), Eigen::Vector3d(1, 0, 0));
  EXPECT_LT((t.Inverse() * Eigen::Vector3d(3, 0, 0) - Eigen::Vector3d(1, 0, 0)).norm(), 1e-15);
}

TEST(Sim3, ApplyScaledRotation) {
  const Sim3 t(2.0, Rotation::FromAngleAxis(kPi / 2, Eigen::Vector3d::UnitZ()),
               Eigen::Vector3d::Zero());
  EXPECT_LT((t * Eigen::Vector3d(1, 0, 0) - Eigen::Vector3d(0, 2, 0)).norm(), 1e-12);
}

TEST(Sim3, RejectsNonPositiveScale) {
  EXPECT_THROW(Sim3(0.0, Rotation(), Eigen::Vector3d::Zero()), Error);
  EXPECT_THROW(Sim3(-1.0, Rotation(), Eigen::Vector3d::Zero()), Error);
  EXPECT_THROW(Sim3(NAN, Rotation(), Eigen::Vector3d::Zero()), Error);
}

TEST(Sim3, InverseIsInvolution) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const Sim3 t = RandomSim3(rng);
    ExpectSim3Near(t.Inverse().Inverse(), t, 1e-12);
  }
}

TEST(Sim3, GroupLaws) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 500; ++i) {
    const Sim3 a = RandomSim3(rng), b = RandomSim3(rng), c = RandomSim3(rng);
    ExpectSim3Near((a * b) * c, a * (b * c), 1e-10);
    ExpectSim3Near(a * Sim3::Identity(), a, 1e-12);
    ExpectSim3Near(Sim3::Identity() * a, a, 1e-12);
    ExpectSim3Near(a * a.Inverse(), Sim3::Identity(), 1e-10);
    const Eigen::Vector3d q = RandomVector(rng, 5.0);
    EXPECT_LT(((a * b) * q - a * (b * q)).norm(), 1e-9);
  }
}

TEST(Sim3, ApplyIsAffine) {
  std::mt19937_64 rng(5);
  const Sim3 t = RandomSim3(rng);
  const Eigen::Vector3d p = RandomVector(rng), q = RandomVector(rng);
  const Eigen::Vector3d mid = t * (0.25 * p + 0.75 * q);
  EXPECT_LT((mid - (0.25 * (t * p) + 0.75 * (t * q))).norm(), 1e-12);
}

TEST(Sim3, ExpLogRoundTrip) {
  std::mt19937_64 rng(6);
  EXPECT_NEAR(Sim3::Exp(Vector7d::Zero()).scale, 1.0, 0.0);
  for (int i = 0; i < 100; ++i) {
    Vector7d v;
    v.head<3>() = RandomVector(rng, 0.5);
    v.segment<3>(3) = RandomVector(rng, 2.0);
    v[6] = 0.3 * RandomVector(rng).x();
    EXPECT_LT((Sim3::Exp(v).Log() - v).norm(), 1e-9);
  }
}

TEST(Sim3, ExpOfLogForLargeAngles) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 200; ++i) {
    const Sim3 t = RandomSim3(rng, 3.1);
    ExpectSim3Near(Sim3::Exp(t.Log()), t, 1e-9);
  }
}

TEST(Sim3, SmallAngleLimitIsContinuous) {
  // Twists with tiny rotation must approach the sigma-only closed form.
  for (double eps : {1e-6, 1e-9, 1e-12, 0.0}) {
    Vector7d v;
    v << eps, 0, 0, 1.0, 2.0, 3.0, 0.5;
    const Sim3 t = Sim3::Exp(v);
    const double k = (std::exp(0.5) - 1.0) / 0.5;
    EXPECT_LT((t.translation - k * Eigen::Vector3d(1, 2, 3)).norm(), 5 * eps + 1e-14);
    EXPECT_LT((t.Log() - v).norm(), 1e-9);
  }
}

TEST(Pose, EmbedsInSim3) {
  std::mt19937_64 rng(10);
  const Pose a = RandomPose(rng), b = RandomPose(rng);
  const Sim3 ab = Sim3(a) * Sim3(b);
  const Pose expected = a * b;
  EXPECT_LT(AngularDistance(ab.rotation, expected.rotation), 1e-12);
  EXPECT_LT((ab.translation - expected.translation).norm(), 1e-12);
  EXPECT_EQ(ab.scale, 1.0);
}

}  // namespace
}  // namespace trackstitch
