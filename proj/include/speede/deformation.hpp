#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "speede/gaussian_cloud.hpp"

namespace speede {

// Per-Gaussian offsets produced by a deformation field at one timestamp.
// Rotation offsets are w-first quaternions composed onto the canonical
// rotation from the left (identity = (1,0,0,0)); scale offsets add in
// log-space. Empty vectors mean "all zero / identity" for that component.
struct FieldDeltas {
    std::vector<double> d_means;       // N x 3
    std::vector<double> d_rotations;   // N x 4 or empty
    std::vector<double> d_log_scales;  // N x 3 or empty
};

// Time-varying deformation source: the stand-in for a trained deformation
// network. Fields are immutable after construction and evaluate is pure, so
// instances are safe to share across threads.
class DeformationField {
public:
    virtual ~DeformationField() = default;

    // Offsets for every Gaussian of `cloud` at time t in [0, 1].
    virtual FieldDeltas evaluate(const GaussianCloud& cloud, double t) const = 0;

    // Field for the subset of Gaussians listed in `kept` (ascending original
    // indices), used to keep fields aligned with pruned clouds.
    virtual std::unique_ptr<DeformationField> restrict_to(
        const std::vector<std::uint32_t>& kept) const = 0;
};

// Rigid motion about a pivot: p(t) = R(t) (p - pivot) + pivot + t * velocity,
// with R(t) the rotation by rate*t radians about `axis`. Identity at t = 0.
struct Se3Curve {
    Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
    Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
    double rate = 0.0;  // radians per unit time
    Eigen::Vector3d pivot = Eigen::Vector3d::Zero();
};

// Ground-truth rigid field: membership[i] selects the curve driving Gaussian
// i. Throws ConfigError when membership references a missing curve.
std::unique_ptr<DeformationField> analytic_field(std::vector<Se3Curve> curves,
                                                 std::vector<std::uint32_t> membership);

// Dense per-Gaussian mean trajectories across F frames.
struct TrajectorySet {
    std::size_t count = 0;           // N
    std::vector<double> timesteps;   // F, strictly increasing, within [0, 1]
    std::vector<double> positions;   // N x F x 3, row-major by Gaussian then frame

    std::size_t frames() const { return timesteps.size(); }
    Eigen::Vector3d position(std::size_t i, std::size_t k) const {
        const std::size_t base = (i * frames() + k) * 3;
        return Eigen::Vector3d(positions[base], positions[base + 1], positions[base + 2]);
    }
    void set_position(std::size_t i, std::size_t k, const Eigen::Vector3d& p) {
        const std::size_t base = (i * frames() + k) * 3;
        positions[base] = p[0];
        positions[base + 1] = p[1];
        positions[base + 2] = p[2];
    }
    // Throws ValidationError on shape mismatch or non-ascending timesteps.
    void check() const;
};

// Replays stored trajectories: exact at stored timesteps, linear in between,
// clamped outside the stored range. Rotation/scale offsets are zero.
std::unique_ptr<DeformationField> sampled_field(TrajectorySet trajectories);

// positions[i][k] = canonical mean + field offset at timesteps[k].
TrajectorySet sample_trajectories(const DeformationField& field, const GaussianCloud& cloud,
                                  const std::vector<double>& timesteps);

// "TRAJ1" binary: magic, N and F as uint64 LE, float64 timesteps, then
// N*F*3 float32 positions. In-memory doubles are rounded to float32 on save.
void save_trajectories(const TrajectorySet& trajectories, const std::string& path);
TrajectorySet load_trajectories(const std::string& path);
std::string serialize_trajectories(const TrajectorySet& trajectories);
TrajectorySet parse_trajectories(const std::string& bytes, const std::string& origin = "<memory>");

}  // namespace speede
