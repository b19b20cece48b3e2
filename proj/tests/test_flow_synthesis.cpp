#include <catch2/catch_amalgamated.hpp>

#include "flowfactor/detail/rng.hpp"
#include "flowfactor/flow_synthesis.hpp"

using namespace flowfactor;

namespace {

CameraIntrinsics test_intrinsics(int w = 64, int h = 48) {
  return CameraIntrinsics(70.0, 65.0, 0.5 * w, 0.5 * h, w, h);
}

DepthMap constant_depth(double z, const CameraIntrinsics& intr) {
  return DepthMap(Grid<double>(intr.width, intr.height, z), intr);
}

DepthMap wavy_depth(const CameraIntrinsics& intr, double base = 5.0) {
  Grid<double> g(intr.width, intr.height, base);
  for (int y = 0; y < intr.height; ++y)
    for (int x = 0; x < intr.width; ++x)
      g(x, y) = base + 1.5 * std::sin(0.11 * x) * std::cos(0.07 * y) +
                0.8 * std::sin(0.05 * (x + y));
  return DepthMap(std::move(g), intr);
}

// Brute-force oracle: backproject, transform and reproject one pixel with
// plain scalar arithmetic. Kept free of library calls on purpose.
bool oracle_flow(const CameraIntrinsics& intr, double z, double u, double v,
                 const Eigen::Matrix3d& r, const Eigen::Vector3d& t,
                 Eigen::Vector2d& out) {
  const double xc = z * (u - intr.u0) / intr.fu;
  const double yc = z * (v - intr.v0) / intr.fv;
  const double zc = z;
  const double xs = r(0, 0) * xc + r(0, 1) * yc + r(0, 2) * zc + t.x();
  const double ys = r(1, 0) * xc + r(1, 1) * yc + r(1, 2) * zc + t.y();
  const double zs = r(2, 0) * xc + r(2, 1) * yc + r(2, 2) * zc + t.z();
  if (!(zs > 0.0)) return false;
  out = Eigen::Vector2d(intr.fu * xs / zs + intr.u0 - u,
                        intr.fv * ys / zs + intr.v0 - v);
  return true;
}

double max_flow_difference(const FlowField& a, const FlowField& b) {
  REQUIRE(a.vectors.same_size(b.vectors));
  double worst = 0.0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      REQUIRE(a.valid(x, y) == b.valid(x, y));
      if (!a.valid(x, y)) continue;
      worst = std::max(worst,
                       (a.vectors(x, y) - b.vectors(x, y)).lpNorm<Eigen::Infinity>());
    }
  return worst;
}

}  // namespace

TEST_CASE("rigid_flow: identity pose gives zero flow") {
  const auto depth = wavy_depth(test_intrinsics());
  const FlowField flow = rigid_flow(depth, SE3Pose::identity());
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) {
      CHECK(flow.valid(x, y));
      CHECK(flow.vectors(x, y).norm() < 1e-12);
    }
}

TEST_CASE("rigid_flow: constant depth, pure xy-translation closed form") {
  const auto intr = test_intrinsics();
  const double z = 4.0;
  const auto depth = constant_depth(z, intr);
  SE3Pose pose;
  pose.translation = {0.2, -0.3, 0.0};
  const FlowField flow = rigid_flow(depth, pose);
  const Eigen::Vector2d expected(intr.fu * 0.2 / z, intr.fv * -0.3 / z);
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x)
      CHECK((flow.vectors(x, y) - expected).norm() < 1e-12);
}

TEST_CASE("rigid_flow matches the per-pixel projection oracle") {
  Rng rng(7);
  const auto intr = test_intrinsics();
  const auto depth = wavy_depth(intr);
  for (int trial = 0; trial < 20; ++trial) {
    SE3Pose pose;
    pose.rotation = rotation_from_axis_angle(rng.unit_vector3(),
                                             rng.uniform(-0.3, 0.3));
    pose.translation = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                        rng.uniform(-0.5, 0.5)};
    const FlowField flow = rigid_flow(depth, pose);
    double worst = 0.0;
    for (int y = 0; y < flow.height(); ++y)
      for (int x = 0; x < flow.width(); ++x) {
        Eigen::Vector2d expected;
        const bool visible = oracle_flow(intr, depth.values(x, y), x, y,
                                         pose.rotation, pose.translation, expected);
        REQUIRE(visible == (flow.valid(x, y) != 0));
        if (visible)
          worst = std::max(worst, (flow.vectors(x, y) - expected).lpNorm<Eigen::Infinity>());
      }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("rigid_flow invalidates pixels behind the camera") {
  const auto intr = test_intrinsics();
  const auto depth = constant_depth(2.0, intr);
  SE3Pose pose;
  pose.translation = {0.0, 0.0, -2.5};  // moves every point behind the camera
  const FlowField flow = rigid_flow(depth, pose);
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) CHECK_FALSE(flow.valid(x, y));
}

TEST_CASE("rotation_homography basics") {
  const auto intr = test_intrinsics();
  CHECK(rotation_homography(Eigen::Matrix3d::Identity(), intr)
            .isApprox(Eigen::Matrix3d::Identity(), 1e-12));

  Rng rng(13);
  const Eigen::Matrix3d r = rotation_from_axis_angle(rng.unit_vector3(), 0.4);
  const Eigen::Matrix3d h = rotation_homography(r, intr);
  // H K = K R, up to rounding.
  CHECK((h * intr.matrix() - intr.matrix() * r).norm() < 1e-9);

  Eigen::Matrix3d bad = r;
  bad(0, 0) += 1e-3;
  CHECK_THROWS_AS(rotation_homography(bad, intr), std::invalid_argument);
}

TEST_CASE("homography application equals rotational flow plus pixel") {
  Rng rng(17);
  const auto intr = test_intrinsics();
  const Eigen::Matrix3d r = rotation_from_axis_angle(rng.unit_vector3(), 0.25);
  const Eigen::Matrix3d h = rotation_homography(r, intr);
  const FlowField flow = rotational_flow(r, intr);
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) {
      if (!flow.valid(x, y)) continue;
      const Eigen::Vector3d q = h * Eigen::Vector3d(x, y, 1.0);
      const Eigen::Vector2d via_h(q.x() / q.z() - x, q.y() / q.z() - y);
      CHECK((flow.vectors(x, y) - via_h).norm() < 1e-9);
    }
}

TEST_CASE("rotational_flow: identity rotation gives zero flow") {
  const FlowField flow = rotational_flow(Eigen::Matrix3d::Identity(), test_intrinsics());
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) CHECK(flow.vectors(x, y).norm() == 0.0);
}

TEST_CASE("rotational_flow is independent of depth and matches rigid_flow") {
  Rng rng(19);
  const auto intr = test_intrinsics();
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Matrix3d r =
        rotation_from_axis_angle(rng.unit_vector3(), rng.uniform(-0.3, 0.3));
    const FlowField rot_flow = rotational_flow(r, intr);

    // Same R against rigid_flow with arbitrary positive depth.
    SE3Pose pose;
    pose.rotation = r;
    const FlowField rigid_a = rigid_flow(constant_depth(3.0, intr), pose);
    const FlowField rigid_b = rigid_flow(wavy_depth(intr, 7.0), pose);
    CHECK(max_flow_difference(rot_flow, rigid_a) < 1e-9);
    CHECK(max_flow_difference(rot_flow, rigid_b) < 1e-9);

    // Bitwise identical across depth maps: the formula never touches depth.
    const FlowField again = rotational_flow(r, intr);
    for (int y = 0; y < intr.height; ++y)
      for (int x = 0; x < intr.width; ++x)
        CHECK(rot_flow.vectors(x, y) == again.vectors(x, y));
  }
}

TEST_CASE("tangential_flow basics and rigid oracle") {
  const auto intr = test_intrinsics();
  const auto depth = wavy_depth(intr);

  const FlowField zero = tangential_flow(depth, Eigen::Vector2d::Zero());
  for (int y = 0; y < zero.height(); ++y)
    for (int x = 0; x < zero.width(); ++x) CHECK(zero.vectors(x, y).norm() == 0.0);

  const Eigen::Vector2d t_xy(0.3, -0.2);
  const FlowField flow = tangential_flow(depth, t_xy);

  // Doubling depth halves the flow magnitude.
  Grid<double> doubled = depth.values;
  for (int y = 0; y < doubled.height(); ++y)
    for (int x = 0; x < doubled.width(); ++x) doubled(x, y) *= 2.0;
  const FlowField half = tangential_flow(DepthMap(doubled, intr), t_xy);
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x)
      CHECK((2.0 * half.vectors(x, y) - flow.vectors(x, y)).norm() < 1e-12);

  SE3Pose pose;
  pose.translation = {t_xy.x(), t_xy.y(), 0.0};
  CHECK(max_flow_difference(flow, rigid_flow(depth, pose)) < 1e-9);
}

TEST_CASE("radial_flow basics and rigid oracle") {
  const auto intr = CameraIntrinsics(70.0, 65.0, 32.0, 24.0, 64, 48);
  const auto depth = wavy_depth(intr);

  const FlowField zero = radial_flow(depth, 0.0);
  for (int y = 0; y < zero.height(); ++y)
    for (int x = 0; x < zero.width(); ++x) CHECK(zero.vectors(x, y).norm() == 0.0);

  for (const double t_z : {0.7, -0.9}) {
    const FlowField flow = radial_flow(depth, t_z);
    // Principal point sits on the integer grid; its flow is exactly zero.
    CHECK(flow.vectors(32, 24).norm() == 0.0);
    SE3Pose pose;
    pose.translation = {0.0, 0.0, t_z};
    CHECK(max_flow_difference(flow, rigid_flow(depth, pose)) < 1e-9);
  }
}

TEST_CASE("radial_flow invalidates pixels with nonpositive z + tz") {
  const auto intr = test_intrinsics();
  const auto depth = constant_depth(1.0, intr);
  const FlowField flow = radial_flow(depth, -1.0);
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) CHECK_FALSE(flow.valid(x, y));
}

TEST_CASE("translational_flow reduces to tangential and radial flows") {
  const auto intr = test_intrinsics();
  const auto depth = wavy_depth(intr);

  const Eigen::Vector2d t_xy(0.25, 0.1);
  CHECK(max_flow_difference(
            translational_flow(depth, {t_xy.x(), t_xy.y(), 0.0}),
            tangential_flow(depth, t_xy)) < 1e-12);
  CHECK(max_flow_difference(translational_flow(depth, {0.0, 0.0, 0.4}),
                            radial_flow(depth, 0.4)) < 1e-12);

  const Eigen::Vector3d t(0.2, -0.15, 0.5);
  SE3Pose pose;
  pose.translation = t;
  CHECK(max_flow_difference(translational_flow(depth, t),
                            rigid_flow(depth, pose)) < 1e-9);
}

TEST_CASE("translational_flow is invariant to joint depth/translation scaling") {
  Rng rng(23);
  const auto intr = test_intrinsics();
  const auto depth = wavy_depth(intr);
  const Eigen::Vector3d t(0.2, -0.1, 0.35);
  const FlowField base = translational_flow(depth, t);
  for (const double s : {0.25, 3.0, 17.5}) {
    Grid<double> scaled = depth.values;
    for (int y = 0; y < scaled.height(); ++y)
      for (int x = 0; x < scaled.width(); ++x) scaled(x, y) *= s;
    const FlowField flow = translational_flow(DepthMap(scaled, intr), s * t);
    CHECK(max_flow_difference(base, flow) < 1e-10);
  }
}

TEST_CASE("tangential flows are pairwise parallel") {
  const auto depth = wavy_depth(test_intrinsics());
  const FlowField flow = tangential_flow(depth, {0.3, -0.45});
  const Eigen::Vector2d ref = flow.vectors(0, 0).normalized();
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) {
      const Eigen::Vector2d f = flow.vectors(x, y).normalized();
      CHECK(std::abs(f.x() * ref.y() - f.y() * ref.x()) < 1e-10);
    }
}

TEST_CASE("radial flows are collinear with the principal-point direction") {
  const auto intr = test_intrinsics();
  const auto depth = wavy_depth(intr);
  const FlowField flow = radial_flow(depth, 0.6);
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) {
      const Eigen::Vector2d d(x - intr.u0, y - intr.v0);
      if (d.norm() < kFlowEpsilon) continue;
      const Eigen::Vector2d f = flow.vectors(x, y);
      if (f.norm() < kFlowEpsilon) continue;
      const Eigen::Vector2d fn = f.normalized();
      const Eigen::Vector2d dn = d.normalized();
      CHECK(std::abs(fn.x() * dn.y() - fn.y() * dn.x()) < 1e-10);
    }
}

TEST_CASE("flow superposition fails when tz is nonzero") {
  const auto intr = test_intrinsics();
  const auto depth = wavy_depth(intr);
  const Eigen::Vector3d t(0.3, -0.2, 0.5);
  const FlowField mixed = translational_flow(depth, t);
  const FlowField tan = tangential_flow(depth, {t.x(), t.y()});
  const FlowField rad = radial_flow(depth, t.z());
  double gap = 0.0;
  for (int y = 0; y < mixed.height(); ++y)
    for (int x = 0; x < mixed.width(); ++x)
      gap = std::max(gap, (tan.vectors(x, y) + rad.vectors(x, y) -
                           mixed.vectors(x, y))
                              .norm());
  CHECK(gap > 1e-3);  // additive split would need (z+tz) == z
}

TEST_CASE("flow_jacobian structural zeros") {
  const auto intr = CameraIntrinsics(70.0, 65.0, 32.0, 24.0, 64, 48);
  const auto depth = wavy_depth(intr);
  const FlowJacobian jac = flow_jacobian(depth, {0.0, 0.0, 0.6});
  // At the principal point with tx = ty = 0 the depth gradient vanishes.
  CHECK(jac.d_z(32, 24).norm() == 0.0);
  // d f / d tx never has a vertical component.
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      CHECK(jac.d_tx(x, y).y() == 0.0);
      CHECK(jac.d_ty(x, y).x() == 0.0);
    }
}

TEST_CASE("flow_jacobian matches central finite differences") {
  Rng rng(29);
  const auto intr = test_intrinsics();
  const auto depth = wavy_depth(intr);
  const Eigen::Vector3d t(0.21, -0.13, 0.37);
  const FlowJacobian jac = flow_jacobian(depth, t);
  const double h = 1e-5;

  const FlowField tx_p = translational_flow(depth, t + Eigen::Vector3d(h, 0, 0));
  const FlowField tx_m = translational_flow(depth, t - Eigen::Vector3d(h, 0, 0));
  const FlowField ty_p = translational_flow(depth, t + Eigen::Vector3d(0, h, 0));
  const FlowField ty_m = translational_flow(depth, t - Eigen::Vector3d(0, h, 0));
  const FlowField tz_p = translational_flow(depth, t + Eigen::Vector3d(0, 0, h));
  const FlowField tz_m = translational_flow(depth, t - Eigen::Vector3d(0, 0, h));

  auto relative_error = [](const Eigen::Vector2d& got, const Eigen::Vector2d& want) {
    return (got - want).norm() / std::max(1e-12, want.norm());
  };

  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      if (!jac.valid(x, y)) continue;
      CHECK(relative_error(jac.d_tx(x, y),
                           (tx_p.vectors(x, y) - tx_m.vectors(x, y)) / (2 * h)) < 1e-5);
      CHECK(relative_error(jac.d_ty(x, y),
                           (ty_p.vectors(x, y) - ty_m.vectors(x, y)) / (2 * h)) < 1e-5);
      CHECK(relative_error(jac.d_tz(x, y),
                           (tz_p.vectors(x, y) - tz_m.vectors(x, y)) / (2 * h)) < 1e-5);

      // Depth partial: perturb this pixel's depth alone.
      Grid<double> plus = depth.values;
      Grid<double> minus = depth.values;
      plus(x, y) += h;
      minus(x, y) -= h;
      const FlowField fp = translational_flow(DepthMap(plus, intr), t);
      const FlowField fm = translational_flow(DepthMap(minus, intr), t);
      CHECK(relative_error(jac.d_z(x, y),
                           (fp.vectors(x, y) - fm.vectors(x, y)) / (2 * h)) < 1e-5);
    }
}
