#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "speede/deformation.hpp"
#include "speede/gaussian_cloud.hpp"
#include "speede/image.hpp"

namespace speede {

// Synthetic dynamic scene recipe. Clusters are isotropic Gaussian blobs on a
// ring (spaced at least six radii apart so grouping ground truth is
// unambiguous), each moving along its own rigid curve that is the identity
// at t = 0. Cameras sit on a ring looking at the origin; their timestamps
// cycle through the frame timesteps.
struct SceneSpec {
    int n_gaussians = 2000;
    int n_clusters = 5;
    int n_frames = 20;
    int n_views = 30;
    int n_test_views = 6;
    int image_size = 64;          // square images
    double cluster_radius = 0.25;
    double noise = 0.0;           // trajectory jitter stddev, world units
    double pose_jitter_rot = 0.0;    // radians
    double pose_jitter_trans = 0.0;  // world units
    double motion_speed = 0.5;    // max translation speed, world units per unit time
    double motion_rate = 1.5;     // max rotation rate, radians per unit time
    double scale_min = 0.02;      // splat scale range, world units
    double scale_max = 0.05;
    double opacity_min = 0.6;     // pre-logit opacity range
    double opacity_max = 0.95;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    std::uint64_t seed = 1;
    std::vector<Se3Curve> motion;  // per-cluster override; generated when empty

    void check() const;  // throws ConfigError
};

SceneSpec spec_from_toml_text(const std::string& text, const std::string& origin = "<memory>");
SceneSpec spec_from_toml(const std::string& path);
std::string spec_to_toml(const SceneSpec& spec);  // fully resolved, reparseable

struct Scene {
    GaussianCloud cloud;
    std::shared_ptr<DeformationField> field;  // what models train/render against
    std::vector<TrainingView> train_views;    // extrinsics jittered when configured
    std::vector<TrainingView> test_views;     // always nominal poses
    std::vector<std::uint32_t> labels;        // ground-truth cluster per Gaussian
    TrajectorySet trajectories;               // field sampled at the frame timesteps
    // Ground truth is rendered from these poses and, when trajectory noise is
    // on, from the clean analytic motion — the stored field/views then model
    // it imperfectly, which is the regime the robustness checks need.
    std::vector<TrainingView> nominal_train_views;
    std::shared_ptr<DeformationField> clean_field;
    SceneSpec spec;

    std::vector<double> frame_timesteps() const { return trajectories.timesteps; }
};

// Deterministic in spec.seed: identical specs give bit-identical scenes.
Scene make_scene(const SceneSpec& spec);

// Composes each rotation with a small random rotation (axis uniform, angle
// N(0, sigma_rot)) and perturbs translations by N(0, sigma_trans * I).
std::vector<TrainingView> jitter_poses(const std::vector<TrainingView>& views, double sigma_rot,
                                       double sigma_trans, std::uint64_t seed);

// Renders ground truth for the given nominal poses from the clean field.
std::vector<Image> render_ground_truth(const Scene& scene, const std::vector<TrainingView>& poses,
                                       int threads = 1);

// Bundle directory layout:
//   scene.toml, cloud.ply, cameras.json, test_cameras.json,
//   trajectories.traj, labels.json, frames/train_NNNN.png,
//   frames/test_NNNN.png
void save_bundle(const Scene& scene, const std::string& dir, int threads = 1);

struct Bundle {
    GaussianCloud cloud;
    std::shared_ptr<DeformationField> field;  // sampled from trajectories.traj
    TrajectorySet trajectories;
    std::vector<TrainingView> train_views;
    std::vector<TrainingView> test_views;
    std::vector<std::uint32_t> labels;
    std::string dir;

    // Ground-truth images resolved relative to the bundle directory.
    std::vector<Image> load_images(const std::vector<TrainingView>& views) const;
};

Bundle load_bundle(const std::string& dir);

}  // namespace speede
