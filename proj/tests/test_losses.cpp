#include <catch2/catch_amalgamated.hpp>

#include "flowfactor/detail/rng.hpp"
#include "flowfactor/detail/stats.hpp"
#include "flowfactor/flow_synthesis.hpp"
#include "flowfactor/io/report_io.hpp"
#include "flowfactor/losses.hpp"
#include "flowfactor/scene_sim.hpp"

using namespace flowfactor;

namespace {

// Reference SSIM loss written as straight per-window loops, independent of
// the pooled implementation in the library.
double reference_photometric(const Grid<double>& a, const Grid<double>& b,
                             const Mask& mask, double alpha) {
  const int w = a.width();
  const int h = a.height();
  auto reflect = [](int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  double acc = 0.0;
  long n = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!mask(x, y)) continue;
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const double va = a(reflect(x + dx, w), reflect(y + dy, h));
          const double vb = b(reflect(x + dx, w), reflect(y + dy, h));
          sx += va;
          sy += vb;
          sxx += va * va;
          syy += vb * vb;
          sxy += va * vb;
        }
      const double mx = sx / 9.0, my = sy / 9.0;
      const double vx = sxx / 9.0 - mx * mx;
      const double vy = syy / 9.0 - my * my;
      const double cov = sxy / 9.0 - mx * my;
      const double c1 = 1e-4, c2 = 9e-4;
      const double ssim = (2 * mx * my + c1) * (2 * cov + c2) /
                          ((mx * mx + my * my + c1) * (vx + vy + c2));
      acc += alpha * 0.5 * (1 - ssim) + (1 - alpha) * std::abs(a(x, y) - b(x, y));
      ++n;
    }
  return acc / n;
}

struct PipelineFixture {
  DepthMap scene;
  SE3Pose motion;
  CorrespondenceSet corr;
  AlignedFlows aligned;
  RatioMaps ratios;

  PipelineFixture(double tx, double ty, double tz, std::uint64_t seed = 4)
      : scene(generate_scene(
            make_scene_spec(SceneKind::constant_plane, 5.0, 5.0, 64, 48, seed))) {
    motion.translation = {tx, ty, tz};
    corr = generate_pair(scene, motion);
    aligned = aligned_flows(corr, decompose_motion(motion));
    ratios = ratio_maps(aligned, scene.intrinsics);
  }
};

}  // namespace

TEST_CASE("RunningStats matches a two-pass reference") {
  Rng rng(71);
  std::vector<double> xs;
  RunningStats stats;
  for (int i = 0; i < 5000; ++i) {
    const double x = rng.uniform(-3.0, 7.0) * std::exp(rng.uniform(-2.0, 2.0));
    xs.push_back(x);
    stats.add(x);
  }
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= xs.size();
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= xs.size();
  CHECK(std::abs(stats.mean() - mean) <= 1e-12 * std::abs(mean));
  CHECK(std::abs(stats.variance() - var) <= 1e-12 * var);
}

TEST_CASE("photometric_loss basics") {
  Grid<double> img(32, 24, 0.0);
  Rng rng(5);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 32; ++x) img(x, y) = rng.uniform01();
  const Mask full(32, 24, 1);
  CHECK(photometric_loss(img, img, full, 0.85) < 1e-12);

  const Grid<double> zeros(32, 24, 0.0);
  const Grid<double> ones(32, 24, 1.0);
  CHECK(photometric_loss(zeros, ones, full, 0.0) == 1.0);

  CHECK_THROWS_AS(photometric_loss(img, img, Mask(32, 24, 0), 0.85),
                  std::runtime_error);
  Grid<double> bad = img;
  bad(3, 3) = 1.5;
  CHECK_THROWS_AS(photometric_loss(bad, img, full, 0.85), std::invalid_argument);
}

TEST_CASE("photometric_loss matches the reference SSIM oracle") {
  Rng rng(11);
  Grid<double> a(40, 30, 0.0), b(40, 30, 0.0);
  Mask mask(40, 30, 0);
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 40; ++x) {
      a(x, y) = rng.uniform01();
      b(x, y) = std::clamp(a(x, y) + 0.2 * (rng.uniform01() - 0.5), 0.0, 1.0);
      mask(x, y) = (rng.uniform01() < 0.9) ? 1 : 0;
    }
  const double got = photometric_loss(a, b, mask, 0.85);
  const double want = reference_photometric(a, b, mask, 0.85);
  CHECK(std::abs(got - want) < 1e-6);
}

TEST_CASE("loss_pla: exact parallel field scores zero") {
  FlowField flow(16, 12, FlowKind::coplanar);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 16; ++x)
      flow.vectors(x, y) = (1.0 + 0.1 * x) * Eigen::Vector2d(0.6, -0.8);
  CHECK(loss_pla(flow) < 1e-12);
}

TEST_CASE("loss_pla: two-point variance") {
  FlowField flow(2, 1, FlowKind::coplanar);
  flow.vectors(0, 0) = Eigen::Vector2d(1.0, 0.0);   // angle 0
  flow.vectors(1, 0) = Eigen::Vector2d(0.0, 2.0);   // angle pi/2
  const double expected = (M_PI / 4.0) * (M_PI / 4.0);
  CHECK(std::abs(loss_pla(flow) - expected) < 1e-12);
}

TEST_CASE("loss_pla needs two usable pixels") {
  FlowField flow(4, 4, FlowKind::coplanar);
  flow.vectors(1, 1) = Eigen::Vector2d(1.0, 0.0);  // all other pixels ~ zero flow
  CHECK_THROWS_AS(loss_pla(flow), std::runtime_error);
}

TEST_CASE("loss_pla is invariant under global positive rescaling") {
  Rng rng(13);
  FlowField flow(16, 12, FlowKind::coplanar);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 16; ++x)
      flow.vectors(x, y) =
          Eigen::Vector2d(1.0 + rng.uniform01(), rng.uniform(-0.5, 0.5));
  const double base = loss_pla(flow);
  FlowField scaled = flow;
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 16; ++x) scaled.vectors(x, y) *= 37.5;
  CHECK(std::abs(loss_pla(scaled) - base) < 1e-12);
  CHECK(base >= 0.0);
}

TEST_CASE("loss_axi: radial outward field scores zero, perpendicular pi/2") {
  const auto intr = CameraIntrinsics(40.0, 40.0, 24.0, 18.0, 48, 36);
  FlowField radial(48, 36, FlowKind::coaxial);
  FlowField perp(48, 36, FlowKind::coaxial);
  for (int y = 0; y < 36; ++y)
    for (int x = 0; x < 48; ++x) {
      const Eigen::Vector2d d(x - intr.u0, y - intr.v0);
      radial.vectors(x, y) = 0.3 * d;
      perp.vectors(x, y) = Eigen::Vector2d(-d.y(), d.x());
    }
  // arccos near 1 floors the reachable zero at ~sqrt(machine epsilon)
  CHECK(loss_axi(radial, intr) < 1e-7);
  CHECK(std::abs(loss_axi(perp, intr) - M_PI / 2.0) < 1e-12);
}

TEST_CASE("loss_axi is invariant under per-pixel positive rescaling") {
  const auto intr = CameraIntrinsics(40.0, 40.0, 24.0, 18.0, 48, 36);
  Rng rng(17);
  FlowField flow(48, 36, FlowKind::coaxial);
  for (int y = 0; y < 36; ++y)
    for (int x = 0; x < 48; ++x)
      flow.vectors(x, y) =
          Eigen::Vector2d(rng.uniform(-1, 1), rng.uniform(-1, 1)) +
          Eigen::Vector2d(2, 2);
  const double base = loss_axi(flow, intr);
  FlowField scaled = flow;
  for (int y = 0; y < 36; ++y)
    for (int x = 0; x < 48; ++x)
      scaled.vectors(x, y) *= rng.uniform(0.1, 10.0);
  CHECK(std::abs(loss_axi(scaled, intr) - base) < 1e-12);
  CHECK(base >= 0.0);
  CHECK(base <= M_PI);
}

TEST_CASE("noiseless pipeline: alignment losses vanish at ground truth") {
  // Radial component negative so the coaxial flow points outward.
  PipelineFixture fx(0.2, -0.12, -0.4);
  CHECK(loss_pla(fx.aligned.coplanar) < 1e-10);
  CHECK(loss_axi(fx.aligned.coaxial, fx.scene.intrinsics) < 1e-5);
}

TEST_CASE("ratio_maps reproduce depth and translation on a noiseless scene") {
  PipelineFixture fx(0.2, -0.12, -0.4);
  const double t[3] = {0.2, -0.12, -0.4};
  long checked = 0;
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 64; ++x) {
      const double z = fx.scene.values(x, y);
      if (fx.ratios.valid_x(x, y)) {
        CHECK(std::abs(fx.ratios.rho_x(x, y) * t[0] - z) < 1e-6 * z);
        ++checked;
      }
      if (fx.ratios.valid_y(x, y))
        CHECK(std::abs(fx.ratios.rho_y(x, y) * t[1] - z) < 1e-6 * z);
      if (fx.ratios.valid_z(x, y))
        CHECK(std::abs(fx.ratios.rho_z(x, y) * t[2] - z) < 1e-6 * z);
    }
  CHECK(checked > 1000);

  const TranslationRecovery rec = recover_translation(fx.ratios, fx.scene);
  REQUIRE(rec.available[0]);
  REQUIRE(rec.available[1]);
  REQUIRE(rec.available[2]);
  CHECK(std::abs(rec.t.x() - t[0]) < 1e-6 * std::abs(t[0]));
  CHECK(std::abs(rec.t.y() - t[1]) < 1e-6 * std::abs(t[1]));
  CHECK(std::abs(rec.t.z() - t[2]) < 1e-6 * std::abs(t[2]));
}

TEST_CASE("ratio_maps: constant depth and pure tangential motion give constant rho_x") {
  PipelineFixture fx(0.25, 0.0, 0.0);
  double first = 0.0;
  bool seen = false;
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 64; ++x) {
      if (!fx.ratios.valid_x(x, y)) continue;
      if (!seen) {
        first = fx.ratios.rho_x(x, y);
        seen = true;
      }
      CHECK(std::abs(fx.ratios.rho_x(x, y) - first) < 1e-9 * std::abs(first));
    }
  CHECK(seen);
}

TEST_CASE("ratio_maps: principal point is invalid for rho_z") {
  const auto intr = CameraIntrinsics(40.0, 40.0, 24.0, 18.0, 48, 36);
  AlignedFlows flows;
  flows.coplanar = FlowField(48, 36, FlowKind::coplanar);
  flows.coaxial = FlowField(48, 36, FlowKind::coaxial);
  for (int y = 0; y < 36; ++y)
    for (int x = 0; x < 48; ++x)
      flows.coaxial.vectors(x, y) =
          0.1 * Eigen::Vector2d(x - intr.u0, y - intr.v0);
  const RatioMaps maps = ratio_maps(flows, intr);
  CHECK_FALSE(maps.valid_z(24, 18));  // d = 0 exactly
  CHECK(maps.valid_z(30, 20));
}

TEST_CASE("loss_tan symbolic cases") {
  // Exact ratios for z=5, t=(0.2, -0.1): rho_x = 25, rho_y = -50.
  const auto intr = default_intrinsics(16, 12);
  RatioMaps ratios{Grid<double>(16, 12, 25.0), Grid<double>(16, 12, -50.0),
                   Grid<double>(16, 12, 0.0),  Mask(16, 12, 1),
                   Mask(16, 12, 1),            Mask(16, 12, 0)};
  const DepthMap exact(Grid<double>(16, 12, 5.0), intr);
  CHECK(loss_tan(ratios, exact, {0.2, -0.1}) < 1e-12);

  // Depth scaled by 2: per-pixel terms 0.5 each, aggregate terms 1.0 each.
  const DepthMap doubled(Grid<double>(16, 12, 10.0), intr);
  CHECK(std::abs(loss_tan(ratios, doubled, {0.2, -0.1}) - 3.0) < 1e-12);

  // Pipeline at ground truth.
  PipelineFixture fx(0.2, -0.12, -0.4);
  CHECK(loss_tan(fx.ratios, fx.scene, {0.2, -0.12}) < 1e-5);
}

TEST_CASE("loss_tan skips components below the translation epsilon") {
  const auto intr = default_intrinsics(16, 12);
  RatioMaps ratios{Grid<double>(16, 12, 25.0), Grid<double>(16, 12, -50.0),
                   Grid<double>(16, 12, 0.0),  Mask(16, 12, 1),
                   Mask(16, 12, 1),            Mask(16, 12, 0)};
  const DepthMap depth(Grid<double>(16, 12, 5.0), intr);
  CycleSkips skips;
  const double loss = loss_tan(ratios, depth, {0.2, 1e-7}, &skips);
  CHECK_FALSE(skips.tan_x);
  CHECK(skips.tan_y);
  CHECK(loss < 1e-12);  // x-cycle is exact, y-cycle skipped
}

TEST_CASE("loss_rad symbolic cases") {
  const auto intr = default_intrinsics(16, 12);
  RatioMaps ratios{Grid<double>(16, 12, 0.0), Grid<double>(16, 12, 0.0),
                   Grid<double>(16, 12, -12.5), Mask(16, 12, 0),
                   Mask(16, 12, 0),             Mask(16, 12, 1)};
  const DepthMap exact(Grid<double>(16, 12, 5.0), intr);
  CHECK(loss_rad(ratios, exact, -0.4) < 1e-12);

  // tz off by a factor 2: first term 1.0, second term 0.5.
  CHECK(std::abs(loss_rad(ratios, exact, -0.8) - 1.5) < 1e-12);

  PipelineFixture fx(0.2, -0.12, -0.4);
  CHECK(loss_rad(fx.ratios, fx.scene, -0.4) < 1e-5);
}

TEST_CASE("recover_translation scales linearly with depth") {
  PipelineFixture fx(0.2, -0.12, -0.4);
  Grid<double> scaled = fx.scene.values;
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 64; ++x) scaled(x, y) *= 3.0;
  const DepthMap scaled_depth(scaled, fx.scene.intrinsics);
  const TranslationRecovery base = recover_translation(fx.ratios, fx.scene);
  const TranslationRecovery big = recover_translation(fx.ratios, scaled_depth);
  CHECK((big.t - 3.0 * base.t).norm() < 1e-9);
}

TEST_CASE("recover_translation: pure tangential scene leaves z unavailable") {
  PipelineFixture fx(0.25, 0.1, 0.0);
  const TranslationRecovery rec = recover_translation(fx.ratios, fx.scene);
  CHECK(rec.available[0]);
  CHECK(rec.available[1]);
  CHECK_FALSE(rec.available[2]);  // coaxial flow vanishes, rho_z mask empty
  CHECK(rec.t.z() == 0.0);
}

TEST_CASE("total_loss arithmetic and presets") {
  const LossReport zero = total_loss(0, 0, 0, 0, 0, LossWeights::stage3(), 10);
  CHECK(zero.total == 0.0);

  CHECK(LossWeights::stage1().lambda1 == 0.0);
  CHECK(LossWeights::stage1().lambda2 == 0.0);
  CHECK(LossWeights::stage1().lambda3 == 0.01);
  CHECK(LossWeights::stage2().lambda1 == 0.05);
  CHECK(LossWeights::stage2().lambda2 == 0.0);
  CHECK(LossWeights::stage2().lambda3 == 0.01);
  CHECK(LossWeights::stage3().lambda1 == 0.05);
  CHECK(LossWeights::stage3().lambda2 == 0.1);
  CHECK(LossWeights::stage3().lambda3 == 0.01);
  CHECK(LossWeights::stage3().alpha == 0.85);

  const LossReport r =
      total_loss(0.2, 1.0, 1.0, 1.0, 1.0, LossWeights::stage3(), 100);
  CHECK(std::abs(r.total - 0.5) < 1e-15);
  CHECK(r.loc == 0.0);
}

TEST_CASE("minimizer witness: ground truth beats perturbed candidates") {
  Rng rng(201);
  int wins = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    const auto spec = make_scene_spec(
        trial % 2 == 0 ? SceneKind::constant_plane : SceneKind::smooth_random,
        4.0, 6.0, 48, 36, 300 + trial);
    const DepthMap scene = generate_scene(spec);
    SE3Pose truth;
    truth.translation = {rng.uniform(0.05, 0.2), rng.uniform(-0.2, -0.05),
                         rng.uniform(-0.45, -0.25)};
    const CorrespondenceSet corr = generate_pair(scene, truth);

    auto objective = [&](const SE3Pose& est) {
      const AlignedFlows aligned = aligned_flows(corr, decompose_motion(est));
      return loss_pla(aligned.coplanar) +
             loss_axi(aligned.coaxial, scene.intrinsics);
    };

    SE3Pose rot_bad = truth;
    rot_bad.rotation =
        rotation_from_axis_angle(rng.unit_vector3(), M_PI / 180.0);
    SE3Pose tan_bad = truth;
    tan_bad.translation.x() *= 1.1;
    tan_bad.translation.y() *= 1.1;
    SE3Pose rad_bad = truth;
    rad_bad.translation.z() *= 1.1;

    const double at_truth = objective(truth);
    if (at_truth < objective(rot_bad) && at_truth < objective(tan_bad) &&
        at_truth < objective(rad_bad))
      ++wins;
  }
  CHECK(wins == trials);
}

TEST_CASE("loss report serializes with the fixed key set") {
  const LossReport r =
      total_loss(0.2, 1.0, 1.0, 1.0, 1.0, LossWeights::stage3(), 100);
  const nlohmann::ordered_json j = loss_report_json(r);
  REQUIRE(j.size() == 7);
  CHECK(j.contains("pho"));
  CHECK(j.contains("pla"));
  CHECK(j.contains("axi"));
  CHECK(j.contains("tan"));
  CHECK(j.contains("rad"));
  CHECK(j.contains("total"));
  CHECK(j.contains("valid_pixel_count"));
  CHECK(j["total"] == 0.5);
}
