#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "speede/deformation.hpp"
#include "speede/gaussian_cloud.hpp"
#include "speede/rng.hpp"

namespace speede {

// J control points with one rigid transform per (frame, group), plus the
// per-Gaussian group assignment. Frame 0 is the canonical frame (t = 0,
// identity transforms). Rotations are stored as row-major 3x3 matrices.
struct GroupFlowModel {
    std::vector<double> control_points;  // J x 3, positions at t = 0
    std::vector<double> rotations;       // F x J x 9
    std::vector<double> translations;    // F x J x 3
    std::vector<std::uint32_t> assignment;  // N, values < J
    std::vector<double> timesteps;       // F, starts at 0, strictly increasing
    double lambda_r = 0.5;

    std::size_t groups() const { return control_points.size() / 3; }
    std::size_t frames() const { return timesteps.size(); }
    std::size_t gaussians() const { return assignment.size(); }

    Eigen::Vector3d control(std::size_t j) const {
        return Eigen::Vector3d(control_points[3 * j], control_points[3 * j + 1],
                               control_points[3 * j + 2]);
    }
    Eigen::Matrix3d rotation(std::size_t frame, std::size_t j) const;
    void set_rotation(std::size_t frame, std::size_t j, const Eigen::Matrix3d& rot);
    Eigen::Vector3d translation(std::size_t frame, std::size_t j) const {
        const std::size_t base = (frame * groups() + j) * 3;
        return Eigen::Vector3d(translations[base], translations[base + 1], translations[base + 2]);
    }
    void set_translation(std::size_t frame, std::size_t j, const Eigen::Vector3d& t) {
        const std::size_t base = (frame * groups() + j) * 3;
        translations[base] = t[0];
        translations[base + 1] = t[1];
        translations[base + 2] = t[2];
    }

    // Throws ValidationError when shapes disagree, assignments are out of
    // range, rotations leave SO(3) by more than 1e-6, or the canonical frame
    // is not the identity.
    void check() const;
};

struct GroupingConfig {
    std::size_t groups = 200;   // J
    double lambda_r = 0.5;
    std::size_t n_max = 100;    // fit sample cap per group
    std::uint64_t seed = 0;
    int refine_iters = 0;
    double refine_step = 1e-3;
};

// Eq.-style rigid pair (R, T) applied as R (mu - h0) + h0 + T.
struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

inline Eigen::Vector3d flow_point(const Eigen::Matrix3d& rotation,
                                  const Eigen::Vector3d& translation, const Eigen::Vector3d& h0,
                                  const Eigen::Vector3d& mu) {
    // exact identity short-circuits so the canonical frame reproduces the
    // canonical means bit-for-bit ((mu - h0) + h0 is not exact in general)
    if (rotation.isIdentity(0.0) && translation.isZero(0.0)) return mu;
    return rotation * (mu - h0) + h0 + translation;
}

// Greedy max-min selection: first index uniform from the seed, then each pick
// maximizes the distance to the selected set, ties to the lowest index.
std::vector<std::uint32_t> farthest_point_sample(const std::vector<Eigen::Vector3d>& points,
                                                 std::size_t count, std::uint64_t seed);

// lambda_r * std_t(d_t) + (1 - lambda_r) * mean_t(d_t) with d_t the per-frame
// distance between the two trajectories; std is population (divide by F).
double trajectory_similarity(const std::vector<Eigen::Vector3d>& traj_i,
                             const std::vector<Eigen::Vector3d>& traj_h, double lambda_r);

// Per Gaussian, the control index minimizing the similarity score; ties go to
// the lowest control index.
std::vector<std::uint32_t> assign_groups(const TrajectorySet& trajectories,
                                         const std::vector<std::uint32_t>& control_indices,
                                         double lambda_r, int threads = 1);

// Least-squares rigid fit of frame `frame` against frame 0 for the listed
// members, pivoted at h0: minimizes |mu^t - (R (mu^0 - h0) + h0 + T)|^2 over
// SO(3) x R^3 via SVD of the cross-covariance with reflection correction.
// At most n_max members are used, sampled without replacement from `rng`
// (pass a copy to reuse one sample across frames). Degenerate groups
// (< 3 members or rank-deficient spread) fall back to R = identity with the
// centroid displacement as T.
RigidTransform fit_rigid(const TrajectorySet& trajectories,
                         const std::vector<std::uint32_t>& members, const Eigen::Vector3d& h0,
                         std::size_t frame, std::size_t n_max, Rng rng);

// Group transform at an arbitrary time: stored frames are returned exactly;
// in between, rotation is slerped and translation lerped; outside the stored
// range the nearest frame is used.
RigidTransform group_transform_at(const GroupFlowModel& model, std::size_t j, double t);

// mu_i(t) = R_j(t) (mu_i(0) - h_j) + h_j + T_j(t) with j = assignment[i].
std::vector<Eigen::Vector3d> apply_group_flow(const std::vector<Eigen::Vector3d>& canonical_means,
                                              const GroupFlowModel& model, double t);

// Gradient descent on the summed squared trajectory residual over per-frame
// axis-angle rotation increments and translation deltas; accepted steps never
// increase the loss (step halving on increase). Frame 0 stays identity.
GroupFlowModel refine_flows(const GroupFlowModel& model, const TrajectorySet& trajectories,
                            int iters, double step, int threads = 1);

// Total squared residual of the model against the trajectories.
double trajectory_loss(const GroupFlowModel& model, const TrajectorySet& trajectories);

// Analytic (grad_omega, grad_T) of trajectory_loss for one (group, frame),
// exposed for the finite-difference harness.
std::pair<Eigen::Vector3d, Eigen::Vector3d> refine_gradients(const GroupFlowModel& model,
                                                             const TrajectorySet& trajectories,
                                                             std::size_t j, std::size_t frame);

// Appendix variant: rotate each canonical quaternion by its group's rotation
// (quaternion of R_j(t), composed from the left). Off by default downstream.
std::vector<Eigen::Vector4d> rotation_offset(const std::vector<Eigen::Vector4d>& canonical_rots,
                                             const GroupFlowModel& model, double t);

// Indices of the k nearest control points, ordered by (distance, index).
std::vector<std::uint32_t> nearest_controls(const Eigen::Vector3d& point,
                                            const GroupFlowModel& model, std::size_t k);

// Appendix variant: linear blend skinning over the k nearest control points
// with normalized weights exp(-d^2 / (2 radii[j]^2)). k = 1 reduces exactly
// to apply_group_flow under nearest-control assignment.
std::vector<Eigen::Vector3d> lbs_apply(const std::vector<Eigen::Vector3d>& canonical_means,
                                       const GroupFlowModel& model,
                                       const std::vector<double>& radii, std::size_t k_neighbors,
                                       double t);

// Float-count of the motion parameters: J * (F*6 + 3); the uint32 assignment
// is accounted separately.
std::size_t flow_param_count(std::size_t groups, std::size_t frames);

struct GroupFlowReport {
    std::vector<std::size_t> group_sizes;
    std::vector<double> group_rmse;  // per-group fit residual over all frames
    double rmse = 0.0;               // overall trajectory reconstruction RMSE
    std::size_t param_floats = 0;
    std::size_t assignment_ints = 0;
    double seconds = 0.0;
};

// End to end: sample trajectories at the views' distinct timestamps (plus
// t = 0 when absent), select controls, assign, fit every (group, frame),
// optionally refine.
std::pair<GroupFlowModel, GroupFlowReport> groupflow_compress(const GaussianCloud& cloud,
                                                              const DeformationField& field,
                                                              const std::vector<TrainingView>& views,
                                                              const GroupingConfig& config,
                                                              int threads = 1);

// Adapter so a flow model can drive the renderer like any deformation field.
class GroupFlowField : public DeformationField {
public:
    explicit GroupFlowField(GroupFlowModel model, bool rotation_offsets = false)
        : model_(std::move(model)), rotation_offsets_(rotation_offsets) {}

    FieldDeltas evaluate(const GaussianCloud& cloud, double t) const override;
    std::unique_ptr<DeformationField> restrict_to(
        const std::vector<std::uint32_t>& kept) const override;
    const GroupFlowModel& model() const { return model_; }

private:
    GroupFlowModel model_;
    bool rotation_offsets_ = false;
};

// "GFLW1" binary: magic, J/F/N as uint64 LE, float64 timesteps and lambda_r,
// float32 controls, per-frame float32 rotations and translations, uint32
// assignment. In-memory doubles are rounded to float32 on save.
void save_flow(const GroupFlowModel& model, const std::string& path);
GroupFlowModel load_flow(const std::string& path);
std::string serialize_flow(const GroupFlowModel& model);
GroupFlowModel parse_flow(const std::string& bytes, const std::string& origin = "<memory>");

}  // namespace speede
