#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "scene_helpers.hpp"
#include "speede/deformation.hpp"
#include "speede/errors.hpp"
#include "speede/mathutil.hpp"

using namespace speede;
using speede::testing::cloud_from_specs;
using speede::testing::GaussianSpec;

namespace {

GaussianCloud grid_cloud(std::size_t n) {
    std::vector<GaussianSpec> specs(n);
    for (std::size_t i = 0; i < n; ++i)
        specs[i].mean = Eigen::Vector3d(0.3 * static_cast<double>(i), 0.1 * (i % 3),
                                        1.0 + 0.05 * static_cast<double>(i));
    return cloud_from_specs(specs);
}

}  // namespace

TEST_CASE("analytic: identity curve gives zero mean offsets at every t") {
    const GaussianCloud cloud = grid_cloud(5);
    const auto field = analytic_field({Se3Curve{}}, std::vector<std::uint32_t>(5, 0));
    for (double t : {0.0, 0.3, 1.0}) {
        const FieldDeltas d = field->evaluate(cloud, t);
        REQUIRE(d.d_means.size() == 15);
        for (double v : d.d_means) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
        REQUIRE(d.d_rotations.size() == 20);
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(d.d_rotations[4 * i] == doctest::Approx(1.0));
            CHECK(d.d_rotations[4 * i + 1] == doctest::Approx(0.0));
        }
    }
}

TEST_CASE("analytic: pure translation moves members by t * velocity") {
    const GaussianCloud cloud = grid_cloud(4);
    Se3Curve curve;
    curve.velocity = Eigen::Vector3d(1.0, -2.0, 0.5);
    const auto field = analytic_field({curve}, std::vector<std::uint32_t>(4, 0));
    const FieldDeltas d = field->evaluate(cloud, 0.4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(d.d_means[3 * i] == doctest::Approx(0.4).epsilon(1e-12));
        CHECK(d.d_means[3 * i + 1] == doctest::Approx(-0.8).epsilon(1e-12));
        CHECK(d.d_means[3 * i + 2] == doctest::Approx(0.2).epsilon(1e-12));
    }
}

TEST_CASE("analytic: quarter turn about z sends (1,0,0) to (0,1,0)") {
    std::vector<GaussianSpec> specs(1);
    specs[0].mean = Eigen::Vector3d(1.0, 0.0, 0.0);
    const GaussianCloud cloud = cloud_from_specs(specs);
    Se3Curve curve;
    curve.axis = Eigen::Vector3d::UnitZ();
    curve.rate = M_PI / 2.0;
    const auto field = analytic_field({curve}, {0});
    const FieldDeltas d = field->evaluate(cloud, 1.0);
    const Eigen::Vector3d moved =
        cloud.mean(0) + Eigen::Vector3d(d.d_means[0], d.d_means[1], d.d_means[2]);
    CHECK(moved.x() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(moved.y() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(moved.z() == doctest::Approx(0.0).epsilon(1e-12));

    // rotation offset equals the curve's rotation quaternion
    const Eigen::Vector4d q(d.d_rotations[0], d.d_rotations[1], d.d_rotations[2],
                            d.d_rotations[3]);
    const Eigen::Matrix3d r_expected =
        Eigen::AngleAxisd(M_PI / 2.0, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    CHECK((quat_to_matrix(q) - r_expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("analytic: bad membership or degenerate axis is a config error") {
    CHECK_THROWS_AS(analytic_field({Se3Curve{}}, {0, 1}), ConfigError);
    Se3Curve bad;
    bad.axis = Eigen::Vector3d::Zero();
    CHECK_THROWS_AS(analytic_field({bad}, {0}), ConfigError);
    CHECK_THROWS_AS(analytic_field({}, {}), ConfigError);

    const auto field = analytic_field({Se3Curve{}}, {0, 0});
    const GaussianCloud five = grid_cloud(5);
    CHECK_THROWS_AS(field->evaluate(five, 0.5), ConfigError);
}

TEST_CASE("analytic: rigid groups preserve intra-group pairwise distances") {
    const GaussianCloud cloud = grid_cloud(8);
    Se3Curve spin;
    spin.axis = Eigen::Vector3d(1, 2, 0.5).normalized();
    spin.rate = 2.1;
    spin.pivot = Eigen::Vector3d(0.5, 0, 1.2);
    spin.velocity = Eigen::Vector3d(0.2, 0.1, -0.3);
    Se3Curve drift;
    drift.velocity = Eigen::Vector3d(-1.0, 0.4, 0.0);
    const std::vector<std::uint32_t> membership = {0, 0, 0, 0, 1, 1, 1, 1};
    const auto field = analytic_field({spin, drift}, membership);

    const std::vector<double> timesteps = {0.0, 0.25, 0.5, 0.75, 1.0};
    const TrajectorySet traj = sample_trajectories(*field, cloud, timesteps);
    for (std::size_t a = 0; a < 8; ++a) {
        for (std::size_t b = a + 1; b < 8; ++b) {
            if (membership[a] != membership[b]) continue;
            const double d0 = (traj.position(a, 0) - traj.position(b, 0)).norm();
            for (std::size_t k = 1; k < timesteps.size(); ++k) {
                const double dk = (traj.position(a, k) - traj.position(b, k)).norm();
                CHECK(std::abs(dk - d0) < 1e-9);
            }
        }
    }
}

TEST_CASE("sampled: exact at stored timesteps, linear between, clamped outside") {
    const GaussianCloud cloud = grid_cloud(3);
    TrajectorySet traj;
    traj.count = 3;
    traj.timesteps = {0.0, 0.5, 1.0};
    traj.positions.resize(3 * 3 * 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 3; ++k)
            traj.set_position(i, k,
                              cloud.mean(i) + Eigen::Vector3d(static_cast<double>(k) * (i + 1.0),
                                                              -0.5 * static_cast<double>(k), 0.0));
    const auto field = sampled_field(traj);

    // stored timestep: exact
    const FieldDeltas d1 = field->evaluate(cloud, 0.5);
    CHECK(d1.d_means[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d1.d_means[3] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(d1.d_rotations.empty());
    CHECK(d1.d_log_scales.empty());

    // midway: arithmetic mean of adjacent frames
    const FieldDeltas dm = field->evaluate(cloud, 0.25);
    CHECK(dm.d_means[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(dm.d_means[1] == doctest::Approx(-0.25).epsilon(1e-12));

    // outside the range: clamped to the endpoints
    const FieldDeltas lo = field->evaluate(cloud, -0.3);
    const FieldDeltas hi = field->evaluate(cloud, 1.7);
    CHECK(lo.d_means[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(hi.d_means[0] == doctest::Approx(2.0).epsilon(1e-12));

    const GaussianCloud other = grid_cloud(5);
    CHECK_THROWS_AS(field->evaluate(other, 0.5), ConfigError);
}

TEST_CASE("sample_trajectories: identity field rows are constant") {
    const GaussianCloud cloud = grid_cloud(4);
    const auto field = analytic_field({Se3Curve{}}, std::vector<std::uint32_t>(4, 0));
    const TrajectorySet traj = sample_trajectories(*field, cloud, {0.0, 0.5, 1.0});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t k = 0; k < 3; ++k)
            CHECK((traj.position(i, k) - cloud.mean(i)).norm() < 1e-12);
}

TEST_CASE("sample_trajectories inverts sampled_field at its own timesteps") {
    const GaussianCloud cloud = grid_cloud(6);
    Se3Curve curve;
    curve.axis = Eigen::Vector3d::UnitY();
    curve.rate = 1.3;
    curve.velocity = Eigen::Vector3d(0.1, 0.0, 0.2);
    const auto truth = analytic_field({curve}, std::vector<std::uint32_t>(6, 0));
    const std::vector<double> ts = {0.0, 0.2, 0.55, 1.0};
    const TrajectorySet traj = sample_trajectories(*truth, cloud, ts);

    const auto replay = sampled_field(traj);
    const TrajectorySet back = sample_trajectories(*replay, cloud, ts);
    REQUIRE(back.positions.size() == traj.positions.size());
    for (std::size_t i = 0; i < traj.positions.size(); ++i)
        CHECK(back.positions[i] == traj.positions[i]);  // exact, not approximate
    CHECK(back.timesteps == traj.timesteps);
}

TEST_CASE("restrict_to keeps fields aligned with subset clouds") {
    const GaussianCloud cloud = grid_cloud(6);
    Se3Curve a, b;
    a.velocity = Eigen::Vector3d(1, 0, 0);
    b.velocity = Eigen::Vector3d(0, 1, 0);
    const auto field = analytic_field({a, b}, {0, 1, 0, 1, 0, 1});
    const std::vector<std::uint32_t> kept = {1, 4, 5};
    const GaussianCloud sub = subset(cloud, kept);
    const auto restricted = field->restrict_to(kept);
    const FieldDeltas d = restricted->evaluate(sub, 1.0);
    CHECK(d.d_means[0] == doctest::Approx(0.0));  // index 1 -> curve b
    CHECK(d.d_means[1] == doctest::Approx(1.0));
    CHECK(d.d_means[3] == doctest::Approx(1.0));  // index 4 -> curve a
    CHECK(d.d_means[7] == doctest::Approx(1.0));  // index 5 -> curve b

    // sampled fields restrict by copying trajectory rows
    const TrajectorySet traj = sample_trajectories(*field, cloud, {0.0, 1.0});
    const auto sampled = sampled_field(traj)->restrict_to(kept);
    const FieldDeltas ds = sampled->evaluate(sub, 1.0);
    CHECK(ds.d_means[1] == doctest::Approx(1.0).epsilon(1e-6));

    CHECK_THROWS_AS(field->restrict_to({99}), ConfigError);
}

TEST_CASE("trajectory set validation catches bad shapes and timesteps") {
    TrajectorySet traj;
    traj.count = 2;
    traj.timesteps = {0.0, 1.0};
    traj.positions.assign(12, 0.0);
    CHECK_NOTHROW(traj.check());

    TrajectorySet one_frame = traj;
    one_frame.timesteps = {0.0};
    one_frame.positions.assign(6, 0.0);
    CHECK_THROWS_AS(one_frame.check(), ValidationError);

    TrajectorySet bad_len = traj;
    bad_len.positions.pop_back();
    CHECK_THROWS_AS(bad_len.check(), ValidationError);

    TrajectorySet decreasing = traj;
    decreasing.timesteps = {0.5, 0.5};
    CHECK_THROWS_AS(decreasing.check(), ValidationError);

    TrajectorySet nan_pos = traj;
    nan_pos.positions[3] = std::nan("");
    CHECK_THROWS_AS(nan_pos.check(), ValidationError);
}

TEST_CASE("traj file: byte layout matches the documented format") {
    TrajectorySet traj;
    traj.count = 1;
    traj.timesteps = {0.0, 1.0};
    traj.positions = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};

    std::string expected = "TRAJ1";
    const auto put_u64 = [&](std::uint64_t v) { expected.append(reinterpret_cast<char*>(&v), 8); };
    const auto put_f64 = [&](double v) { expected.append(reinterpret_cast<char*>(&v), 8); };
    const auto put_f32 = [&](float v) { expected.append(reinterpret_cast<char*>(&v), 4); };
    put_u64(1);
    put_u64(2);
    put_f64(0.0);
    put_f64(1.0);
    for (float v : {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f}) put_f32(v);

    CHECK(serialize_trajectories(traj) == expected);
}

TEST_CASE("traj file: round trip through disk is exact for float32 data") {
    const GaussianCloud cloud = grid_cloud(7);
    Se3Curve curve;
    curve.rate = 0.9;
    curve.axis = Eigen::Vector3d::UnitX();
    const auto field = analytic_field({curve}, std::vector<std::uint32_t>(7, 0));
    TrajectorySet traj = sample_trajectories(*field, cloud, {0.0, 0.5, 1.0});
    // snap to float32 so save -> load is lossless
    for (double& v : traj.positions) v = static_cast<double>(static_cast<float>(v));

    const std::string path = "traj_roundtrip.traj";
    save_trajectories(traj, path);
    const TrajectorySet back = load_trajectories(path);
    std::remove(path.c_str());

    CHECK(back.count == traj.count);
    CHECK(back.timesteps == traj.timesteps);
    REQUIRE(back.positions.size() == traj.positions.size());
    for (std::size_t i = 0; i < traj.positions.size(); ++i)
        CHECK(back.positions[i] == traj.positions[i]);
}

TEST_CASE("traj file: malformed inputs raise io errors that name the source") {
    TrajectorySet traj;
    traj.count = 2;
    traj.timesteps = {0.0, 1.0};
    traj.positions.assign(12, 1.5);
    const std::string good = serialize_trajectories(traj);

    CHECK_THROWS_AS(parse_trajectories("XXXX" + good.substr(4), "bad.traj"), IoError);
    CHECK_THROWS_AS(parse_trajectories(good.substr(0, good.size() / 2), "cut.traj"), IoError);
    CHECK_THROWS_AS(parse_trajectories(good + "zz", "long.traj"), IoError);

    try {
        parse_trajectories(good.substr(0, 10), "named.traj");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("named.traj") != std::string::npos);
    }

    // non-ascending timesteps inside an otherwise well-formed file
    TrajectorySet swapped = traj;
    swapped.timesteps = {1.0, 0.0};
    std::string bytes = "TRAJ1";
    const auto put_u64 = [&](std::uint64_t v) { bytes.append(reinterpret_cast<char*>(&v), 8); };
    const auto put_f64 = [&](double v) { bytes.append(reinterpret_cast<char*>(&v), 8); };
    put_u64(2);
    put_u64(2);
    put_f64(1.0);
    put_f64(0.0);
    for (int i = 0; i < 12; ++i) bytes.append(4, '\0');
    CHECK_THROWS_AS(parse_trajectories(bytes, "swap.traj"), IoError);

    CHECK_THROWS_AS(load_trajectories("does_not_exist.traj"), IoError);
}
