#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "speede/deformation.hpp"
#include "speede/gaussian_cloud.hpp"
#include "speede/image.hpp"

namespace speede {

// DC spherical-harmonic basis constant: color = 0.5 + SH_C0 * f_dc.
inline constexpr double kShC0 = 0.28209479177387814;
// Camera-space near plane; splats at or behind it are culled.
inline constexpr double kNearPlane = 0.01;
// Regularizer added to both diagonal entries of the projected 2D covariance.
inline constexpr double kCovRegularizer = 0.3;
// Opacity ceiling after the sigmoid; keeps 1 - alpha*g away from zero.
inline constexpr double kAlphaCeiling = 0.999;
// Splats whose activated opacity falls below this are culled at projection
// (they sit below 8-bit quantization and only cost compute).
inline constexpr double kAlphaCullThreshold = 1.0 / 255.0;
// Front-to-back compositing stops before transmittance would drop below this.
inline constexpr double kTransmittanceFloor = 1e-4;

// One frame's Gaussians after deformation and activation: world-space means
// and covariances, DC-shaded colors in [0,1], opacities in (0, 0.999].
struct FrameGaussians {
    std::vector<Eigen::Vector3d> means;
    std::vector<Eigen::Matrix3d> covariances;
    std::vector<Eigen::Vector3d> colors;
    std::vector<double> alphas;

    std::size_t size() const { return alphas.size(); }
};

// Applies the field (nullptr = canonical pose) at time t and activates
// scales/opacities/colors.
FrameGaussians prepare_frame(const GaussianCloud& cloud, const DeformationField* field, double t);

// A projected Gaussian: 2D mean in pixels, inverse of the regularized 2D
// covariance, camera depth, and the integer pixel rectangle it can touch.
struct Splat2D {
    Eigen::Vector2d mean2d;
    Eigen::Matrix2d inv_cov2d;
    double depth = 0.0;
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    double alpha = 0.0;
    std::uint32_t source_index = 0;
    // contribution window: pixels [x0,x1) x [y0,y1), from the 3-sigma box
    int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
};

// EWA projection. Culls splats behind the near plane, splats whose 3-sigma
// box misses the image, and splats below the opacity cull threshold; the
// result is sorted front-to-back by (depth, source_index).
std::vector<Splat2D> project(const FrameGaussians& frame, const TrainingView& view);

// Footprint value g = exp(-0.5 d^T inv_cov d) at a pixel position.
double gaussian_value(const Splat2D& splat, const Eigen::Vector2d& pixel);

// Front-to-back alpha compositing over the projected splats, plus
// background * final transmittance. Deterministic for any thread count.
Image render(const FrameGaussians& frame, const TrainingView& view,
             const Eigen::Vector3d& background, int threads = 1);

// Per-Gaussian sum over pixels and channels of (dI/dg_i)^2: the temporal
// sensitivity contribution of one view. Culled splats score zero.
std::vector<double> footprint_gradients(const FrameGaussians& frame, const TrainingView& view,
                                        const Eigen::Vector3d& background, int threads = 1);

// Signed per-pixel gradient dI/dg of one Gaussian (3 channels), mainly for
// inspection dumps and the finite-difference harness.
Image footprint_gradient_image(const FrameGaussians& frame, const TrainingView& view,
                               const Eigen::Vector3d& background, std::uint32_t gaussian_index);

// (1 - w) * mean-L1 + w * (1 - SSIM)/2. Throws on dimension mismatch.
double loss(const Image& rendered, const Image& gt, double ssim_weight);

// Gradients of loss() with respect to the raw DC color coefficients and the
// pre-sigmoid opacities. `frame` must come from prepare_frame on `cloud`
// (same order); gradients flow through the compositing only — means, scales
// and rotations are out of scope.
struct ColorOpacityGrads {
    std::vector<double> d_dc_colors;  // N x 3, w.r.t. f_dc
    std::vector<double> d_opacities;  // N, w.r.t. pre-sigmoid opacity
    double loss_value = 0.0;
};
ColorOpacityGrads color_opacity_gradients(const GaussianCloud& cloud, const FrameGaussians& frame,
                                          const TrainingView& view, const Image& gt,
                                          double ssim_weight, const Eigen::Vector3d& background,
                                          int threads = 1);

}  // namespace speede
