#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "speede/gaussian_cloud.hpp"
#include "speede/image.hpp"

namespace speede {

class DeformationField;
struct GroupFlowModel;

// PSNR cap reported for (near-)identical images instead of +inf.
inline constexpr double kPsnrCap = 99.0;

// 10 * log10(1 / MSE) on the [0,1] range, capped at 99 dB.
double psnr(const Image& a, const Image& b);

// Mean local SSIM: 11x11 Gaussian window (sigma 1.5), C1=0.01^2, C2=0.03^2,
// valid windows only (border cropped), channels averaged. Images must be at
// least 11x11.
double ssim(const Image& a, const Image& b);

// SSIM value plus its gradient with respect to every pixel of `a`.
std::pair<double, std::vector<double>> ssim_gradient(const Image& a, const Image& b);

// Sum over predicted groups of their largest overlap with any true label,
// divided by N.
double grouping_purity(const std::vector<std::uint32_t>& assignment,
                       const std::vector<std::uint32_t>& labels);

struct BenchReport {
    double fps_mean = 0.0;  // median of per-repetition mean FPS
    double fps_std = 0.0;
    std::size_t n_gaussians = 0;
    std::size_t model_bytes = 0;
    double psnr_mean = 0.0;
    double ssim_mean = 0.0;
    int warmup = 0;
    int iters = 0;
    std::uint64_t seed = 0;
    int threads = 1;
};

// Times deform+render over the views (one frame = one view; I/O excluded).
// FPS includes the deformation evaluation so fewer Gaussians / per-group
// flows show up in the number. Quality fields compare against gt_images,
// which must align with views (or be empty to skip).
BenchReport bench_render(const GaussianCloud& cloud, const DeformationField& field,
                         const std::vector<TrainingView>& views,
                         const std::vector<Image>& gt_images, const Eigen::Vector3d& background,
                         std::size_t model_bytes, int warmup, int iters, std::uint64_t seed,
                         int threads = 1);

// Serialized size: .ply bytes plus the flow model's file bytes when present.
std::size_t model_size(const GaussianCloud& cloud, const GroupFlowModel* flow = nullptr);

}  // namespace speede
