#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

namespace speede {

// Canonical 3D Gaussian scene model, structure-of-arrays, float32 storage
// matching the de-facto binary PLY checkpoint layout.
//
// Scales are kept in log-space and opacities in logit-space exactly as they
// appear on disk; activations (exp / sigmoid) are applied at render time.
// Quaternions are w-first. Instances are immutable after construction; all
// edits go through copy-and-replace.
struct GaussianCloud {
    std::vector<float> means;      // N x 3
    std::vector<float> scales;     // N x 3, log-space
    std::vector<float> rotations;  // N x 4, (w, x, y, z)
    std::vector<float> sh_colors;  // N x K x 3, K in {1, 4, 9, 16}; band 0 first
    std::vector<float> opacities;  // N, logit-space
    int sh_coeff_count = 1;        // K

    std::size_t size() const { return opacities.size(); }
    int sh_degree() const;

    Eigen::Vector3d mean(std::size_t i) const;
    Eigen::Vector4d rotation(std::size_t i) const;   // (w, x, y, z)
    Eigen::Vector3d log_scale(std::size_t i) const;
    Eigen::Vector3d dc_color(std::size_t i) const;   // raw band-0 coefficients

    // Throws std::invalid_argument if array lengths disagree.
    void check_shapes() const;
};

struct ValidationIssue {
    std::size_t index;
    std::string kind;    // "non-finite" | "zero-norm quaternion" | "non-positive scale" | ...
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const { return issues.empty(); }
    std::string summary(std::size_t max_items = 5) const;
};

// Report-only invariant check; never throws on any finite or non-finite input.
ValidationReport validate(const GaussianCloud& cloud);

// Binary little-endian PLY in the standard 3DGS layout:
//   x y z nx ny nz f_dc_0..2 [f_rest_*] opacity scale_0..2 rot_0..3
// Loading accepts any property order, skips unknown float properties, and
// renormalizes quaternions whose norm is off by more than 1e-6. The SH degree
// is autodetected from the f_rest_* count.
GaussianCloud load_ply(const std::string& path);
void save_ply(const GaussianCloud& cloud, const std::string& path);

// In-memory serialization used for size accounting and round-trip tests.
std::string serialize_ply(const GaussianCloud& cloud);
GaussianCloud parse_ply(const std::string& bytes, const std::string& origin = "<memory>");

// Subset copy; indices refer to the source cloud and must be in range.
GaussianCloud subset(const GaussianCloud& cloud, const std::vector<std::uint32_t>& indices);

// One training (or evaluation) camera: world-to-camera rotation/translation,
// pinhole intrinsics in pixels, a timestamp in [0, 1], and the path of its
// ground-truth image.
struct TrainingView {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world-to-camera
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    double timestamp = 0.0;
    std::string image_path;

    Eigen::Vector3d to_camera(const Eigen::Vector3d& p_world) const {
        return rotation * p_world + translation;
    }
};

// Throws ValidationError when the rotation is not orthonormal within 1e-6,
// dimensions are not positive, or the timestamp is not finite.
void check_view(const TrainingView& view, const std::string& context);

// JSON array of view records.
std::vector<TrainingView> load_views(const std::string& path);
void save_views(const std::vector<TrainingView>& views, const std::string& path);

}  // namespace speede
