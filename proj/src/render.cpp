#include "speede/render.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "speede/mathutil.hpp"
#include "speede/metrics.hpp"
#include "speede/parallel.hpp"

namespace speede {

namespace {

constexpr int kTile = 16;

inline Eigen::Vector3d clamp01(const Eigen::Vector3d& v) {
    return v.cwiseMax(0.0).cwiseMin(1.0);
}

// One composited splat at one pixel, recorded for the backward pass.
struct Hit {
    std::uint32_t list_index;  // into the sorted splat vector
    double g;
    double transmittance;  // T before this splat
};

// Front-to-back compositing shared by the forward image and backward passes.
// Appends the composited splats to `hits` when it is non-null. Returns the
// final transmittance.
double composite_pixel(const std::vector<Splat2D>& splats,
                       const std::vector<std::uint32_t>& list, int px, int py, double cx,
                       double cy, Eigen::Vector3d* rgb, std::vector<Hit>* hits) {
    double transmittance = 1.0;
    rgb->setZero();
    for (const std::uint32_t idx : list) {
        const Splat2D& s = splats[idx];
        if (px < s.x0 || px >= s.x1 || py < s.y0 || py >= s.y1) continue;
        const double g = gaussian_value(s, Eigen::Vector2d(cx, cy));
        const double ag = s.alpha * g;
        const double next = transmittance * (1.0 - ag);
        if (next < kTransmittanceFloor) break;  // stop before compositing this splat
        *rgb += s.color * (ag * transmittance);
        if (hits) hits->push_back({idx, g, transmittance});
        transmittance = next;
    }
    return transmittance;
}

struct TileGrid {
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<std::uint32_t>> lists;  // per tile, indices in depth order
};

TileGrid bin_splats(const std::vector<Splat2D>& splats, int width, int height) {
    TileGrid grid;
    grid.tiles_x = (width + kTile - 1) / kTile;
    grid.tiles_y = (height + kTile - 1) / kTile;
    grid.lists.resize(static_cast<std::size_t>(grid.tiles_x) * grid.tiles_y);
    for (std::uint32_t i = 0; i < splats.size(); ++i) {
        const Splat2D& s = splats[i];
        const int tx0 = s.x0 / kTile, tx1 = (s.x1 - 1) / kTile;
        const int ty0 = s.y0 / kTile, ty1 = (s.y1 - 1) / kTile;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                grid.lists[static_cast<std::size_t>(ty) * grid.tiles_x + tx].push_back(i);
    }
    return grid;
}

}  // namespace

FrameGaussians prepare_frame(const GaussianCloud& cloud, const DeformationField* field, double t) {
    cloud.check_shapes();
    const std::size_t n = cloud.size();
    FieldDeltas deltas;
    if (field) {
        deltas = field->evaluate(cloud, t);
        if (deltas.d_means.size() != 3 * n ||
            (!deltas.d_rotations.empty() && deltas.d_rotations.size() != 4 * n) ||
            (!deltas.d_log_scales.empty() && deltas.d_log_scales.size() != 3 * n))
            throw std::invalid_argument("prepare_frame: field delta shapes do not match cloud");
    }

    FrameGaussians frame;
    frame.means.resize(n);
    frame.covariances.resize(n);
    frame.colors.resize(n);
    frame.alphas.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::Vector3d mean = cloud.mean(i);
        if (!deltas.d_means.empty())
            mean += Eigen::Vector3d(deltas.d_means[3 * i], deltas.d_means[3 * i + 1],
                                    deltas.d_means[3 * i + 2]);
        Eigen::Vector4d q = cloud.rotation(i);
        if (!deltas.d_rotations.empty()) {
            const Eigen::Vector4d dq(deltas.d_rotations[4 * i], deltas.d_rotations[4 * i + 1],
                                     deltas.d_rotations[4 * i + 2], deltas.d_rotations[4 * i + 3]);
            q = quat_multiply(dq, q);
        }
        Eigen::Vector3d log_s = cloud.log_scale(i);
        if (!deltas.d_log_scales.empty())
            log_s += Eigen::Vector3d(deltas.d_log_scales[3 * i], deltas.d_log_scales[3 * i + 1],
                                     deltas.d_log_scales[3 * i + 2]);
        const Eigen::Vector3d s = log_s.array().exp();
        const Eigen::Matrix3d rot = quat_to_matrix(q);
        frame.means[i] = mean;
        frame.covariances[i] = rot * s.cwiseProduct(s).asDiagonal() * rot.transpose();
        frame.colors[i] = clamp01(Eigen::Vector3d::Constant(0.5) + kShC0 * cloud.dc_color(i));
        frame.alphas[i] = std::min(sigmoid(cloud.opacities[i]), kAlphaCeiling);
    }
    return frame;
}

std::vector<Splat2D> project(const FrameGaussians& frame, const TrainingView& view) {
    std::vector<Splat2D> splats;
    splats.reserve(frame.size());
    const Eigen::Matrix3d& rot = view.rotation;
    for (std::uint32_t i = 0; i < frame.size(); ++i) {
        if (frame.alphas[i] < kAlphaCullThreshold) continue;
        const Eigen::Vector3d p = view.to_camera(frame.means[i]);
        if (p.z() <= kNearPlane) continue;

        const double inv_z = 1.0 / p.z();
        Eigen::Matrix<double, 2, 3> jac;
        jac << view.fx * inv_z, 0.0, -view.fx * p.x() * inv_z * inv_z,
               0.0, view.fy * inv_z, -view.fy * p.y() * inv_z * inv_z;
        const Eigen::Matrix3d cov_cam = rot * frame.covariances[i] * rot.transpose();
        Eigen::Matrix2d cov2d = jac * cov_cam * jac.transpose();
        cov2d(0, 0) += kCovRegularizer;
        cov2d(1, 1) += kCovRegularizer;

        const double det = cov2d.determinant();
        if (det <= 0.0 || !std::isfinite(det)) continue;

        Splat2D s;
        s.mean2d = Eigen::Vector2d(view.fx * p.x() * inv_z + view.cx,
                                   view.fy * p.y() * inv_z + view.cy);
        s.inv_cov2d << cov2d(1, 1) / det, -cov2d(0, 1) / det,
                       -cov2d(0, 1) / det, cov2d(0, 0) / det;
        s.depth = p.z();
        s.color = frame.colors[i];
        s.alpha = frame.alphas[i];
        s.source_index = i;

        // 3-sigma axis-aligned box over pixel centers (ix + 0.5, iy + 0.5)
        const double mid = 0.5 * cov2d.trace();
        const double lmax = mid + std::sqrt(std::max(0.0, mid * mid - det));
        const double radius = 3.0 * std::sqrt(lmax);
        s.x0 = std::max(0, static_cast<int>(std::ceil(s.mean2d[0] - radius - 0.5)));
        s.x1 = std::min(view.width, static_cast<int>(std::floor(s.mean2d[0] + radius - 0.5)) + 1);
        s.y0 = std::max(0, static_cast<int>(std::ceil(s.mean2d[1] - radius - 0.5)));
        s.y1 = std::min(view.height, static_cast<int>(std::floor(s.mean2d[1] + radius - 0.5)) + 1);
        if (s.x0 >= s.x1 || s.y0 >= s.y1) continue;

        splats.push_back(s);
    }
    std::sort(splats.begin(), splats.end(), [](const Splat2D& a, const Splat2D& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.source_index < b.source_index;
    });
    return splats;
}

double gaussian_value(const Splat2D& splat, const Eigen::Vector2d& pixel) {
    const Eigen::Vector2d d = pixel - splat.mean2d;
    const double q = 0.5 * d.dot(splat.inv_cov2d * d);
    return std::exp(-q);
}

Image render(const FrameGaussians& frame, const TrainingView& view,
             const Eigen::Vector3d& background, int threads) {
    const std::vector<Splat2D> splats = project(frame, view);
    const TileGrid grid = bin_splats(splats, view.width, view.height);

    Image out(view.width, view.height);
    parallel_chunks(grid.tiles_y, threads, [&](std::size_t ty) {
        Eigen::Vector3d rgb;
        for (int tx = 0; tx < grid.tiles_x; ++tx) {
            const auto& list = grid.lists[ty * grid.tiles_x + tx];
            const int px1 = std::min(view.width, (tx + 1) * kTile);
            const int py1 = std::min(view.height, static_cast<int>(ty + 1) * kTile);
            for (int py = static_cast<int>(ty) * kTile; py < py1; ++py) {
                for (int px = tx * kTile; px < px1; ++px) {
                    const double t_final = composite_pixel(splats, list, px, py, px + 0.5,
                                                           py + 0.5, &rgb, nullptr);
                    const Eigen::Vector3d color = clamp01(rgb + background * t_final);
                    out.at(px, py, 0) = static_cast<float>(color[0]);
                    out.at(px, py, 1) = static_cast<float>(color[1]);
                    out.at(px, py, 2) = static_cast<float>(color[2]);
                }
            }
        }
    });
    return out;
}

std::vector<double> footprint_gradients(const FrameGaussians& frame, const TrainingView& view,
                                        const Eigen::Vector3d& background, int threads) {
    const std::vector<Splat2D> splats = project(frame, view);
    const TileGrid grid = bin_splats(splats, view.width, view.height);

    // one accumulator per tile row, merged in row order for determinism
    std::vector<std::vector<double>> partial(grid.tiles_y);
    parallel_chunks(grid.tiles_y, threads, [&](std::size_t ty) {
        std::vector<double>& acc = partial[ty];
        acc.assign(frame.size(), 0.0);
        Eigen::Vector3d rgb;
        std::vector<Hit> hits;
        for (int tx = 0; tx < grid.tiles_x; ++tx) {
            const auto& list = grid.lists[ty * grid.tiles_x + tx];
            if (list.empty()) continue;
            const int px1 = std::min(view.width, (tx + 1) * kTile);
            const int py1 = std::min(view.height, static_cast<int>(ty + 1) * kTile);
            for (int py = static_cast<int>(ty) * kTile; py < py1; ++py) {
                for (int px = tx * kTile; px < px1; ++px) {
                    hits.clear();
                    const double t_final = composite_pixel(splats, list, px, py, px + 0.5,
                                                           py + 0.5, &rgb, &hits);
                    Eigen::Vector3d suffix = background * t_final;
                    for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
                        const Splat2D& s = splats[it->list_index];
                        const double denom = 1.0 - s.alpha * it->g;
                        const Eigen::Vector3d grad =
                            s.alpha * (s.color * it->transmittance - suffix / denom);
                        acc[s.source_index] += grad.squaredNorm();
                        suffix += s.color * (s.alpha * it->g * it->transmittance);
                    }
                }
            }
        }
    });

    std::vector<double> scores(frame.size(), 0.0);
    for (const auto& acc : partial)
        for (std::size_t i = 0; i < scores.size(); ++i) scores[i] += acc[i];
    return scores;
}

Image footprint_gradient_image(const FrameGaussians& frame, const TrainingView& view,
                               const Eigen::Vector3d& background, std::uint32_t gaussian_index) {
    const std::vector<Splat2D> splats = project(frame, view);
    const TileGrid grid = bin_splats(splats, view.width, view.height);

    Image out(view.width, view.height, 0.0f);
    Eigen::Vector3d rgb;
    std::vector<Hit> hits;
    for (int ty = 0; ty < grid.tiles_y; ++ty) {
        for (int tx = 0; tx < grid.tiles_x; ++tx) {
            const auto& list = grid.lists[static_cast<std::size_t>(ty) * grid.tiles_x + tx];
            if (list.empty()) continue;
            const int px1 = std::min(view.width, (tx + 1) * kTile);
            const int py1 = std::min(view.height, (ty + 1) * kTile);
            for (int py = ty * kTile; py < py1; ++py) {
                for (int px = tx * kTile; px < px1; ++px) {
                    hits.clear();
                    const double t_final =
                        composite_pixel(splats, list, px, py, px + 0.5, py + 0.5, &rgb, &hits);
                    Eigen::Vector3d suffix = background * t_final;
                    for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
                        const Splat2D& s = splats[it->list_index];
                        const double denom = 1.0 - s.alpha * it->g;
                        if (s.source_index == gaussian_index) {
                            const Eigen::Vector3d grad =
                                s.alpha * (s.color * it->transmittance - suffix / denom);
                            out.at(px, py, 0) = static_cast<float>(grad[0]);
                            out.at(px, py, 1) = static_cast<float>(grad[1]);
                            out.at(px, py, 2) = static_cast<float>(grad[2]);
                        }
                        suffix += s.color * (s.alpha * it->g * it->transmittance);
                    }
                }
            }
        }
    }
    return out;
}

double loss(const Image& rendered, const Image& gt, double ssim_weight) {
    if (!rendered.same_shape(gt)) throw std::invalid_argument("loss: image dimensions differ");
    if (ssim_weight < 0.0 || ssim_weight > 1.0)
        throw std::invalid_argument("loss: ssim weight must be in [0, 1]");
    double l1 = 0.0;
    for (std::size_t i = 0; i < rendered.data.size(); ++i)
        l1 += std::abs(static_cast<double>(rendered.data[i]) - gt.data[i]);
    l1 /= static_cast<double>(rendered.data.size());
    if (ssim_weight == 0.0) return l1;
    return (1.0 - ssim_weight) * l1 + ssim_weight * 0.5 * (1.0 - ssim(rendered, gt));
}

ColorOpacityGrads color_opacity_gradients(const GaussianCloud& cloud, const FrameGaussians& frame,
                                          const TrainingView& view, const Image& gt,
                                          double ssim_weight, const Eigen::Vector3d& background,
                                          int threads) {
    if (gt.width != view.width || gt.height != view.height)
        throw std::invalid_argument("color_opacity_gradients: gt dimensions do not match view");
    if (frame.size() != cloud.size())
        throw std::invalid_argument("color_opacity_gradients: frame does not match cloud");

    const Image rendered = render(frame, view, background, threads);

    // dL/dI: L1 subgradient (0 at ties) plus the D-SSIM term
    const std::size_t count = rendered.data.size();
    std::vector<double> d_image(count, 0.0);
    const double l1_w = (1.0 - ssim_weight) / static_cast<double>(count);
    double l1 = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double diff = static_cast<double>(rendered.data[i]) - gt.data[i];
        l1 += std::abs(diff);
        if (diff > 0.0)
            d_image[i] = l1_w;
        else if (diff < 0.0)
            d_image[i] = -l1_w;
    }
    l1 /= static_cast<double>(count);
    double total = (1.0 - ssim_weight) * l1;
    if (ssim_weight > 0.0) {
        const auto [ssim_value, ssim_grad] = ssim_gradient(rendered, gt);
        total += ssim_weight * 0.5 * (1.0 - ssim_value);
        for (std::size_t i = 0; i < count; ++i)
            d_image[i] -= ssim_weight * 0.5 * ssim_grad[i];
    }

    const std::vector<Splat2D> splats = project(frame, view);
    const TileGrid grid = bin_splats(splats, view.width, view.height);
    const std::size_t n = frame.size();

    struct Acc {
        std::vector<double> d_color;    // N x 3, w.r.t. activated color
        std::vector<double> d_opacity;  // N, w.r.t. activated alpha
    };
    std::vector<Acc> partial(grid.tiles_y);
    parallel_chunks(grid.tiles_y, threads, [&](std::size_t ty) {
        Acc& acc = partial[ty];
        acc.d_color.assign(3 * n, 0.0);
        acc.d_opacity.assign(n, 0.0);
        Eigen::Vector3d rgb;
        std::vector<Hit> hits;
        for (int tx = 0; tx < grid.tiles_x; ++tx) {
            const auto& list = grid.lists[ty * grid.tiles_x + tx];
            if (list.empty()) continue;
            const int px1 = std::min(view.width, (tx + 1) * kTile);
            const int py1 = std::min(view.height, static_cast<int>(ty + 1) * kTile);
            for (int py = static_cast<int>(ty) * kTile; py < py1; ++py) {
                for (int px = tx * kTile; px < px1; ++px) {
                    hits.clear();
                    const double t_final =
                        composite_pixel(splats, list, px, py, px + 0.5, py + 0.5, &rgb, &hits);
                    const std::size_t pix = (static_cast<std::size_t>(py) * view.width + px) * 3;
                    const Eigen::Vector3d dldi(d_image[pix], d_image[pix + 1], d_image[pix + 2]);
                    Eigen::Vector3d suffix = background * t_final;
                    for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
                        const Splat2D& s = splats[it->list_index];
                        const double denom = 1.0 - s.alpha * it->g;
                        const double agt = s.alpha * it->g * it->transmittance;
                        // dI/dcolor = alpha*g*T per channel (direct term only)
                        for (int c = 0; c < 3; ++c)
                            acc.d_color[3 * s.source_index + c] += dldi[c] * agt;
                        // dI/dalpha = g * (color*T - suffix/(1 - alpha*g))
                        const Eigen::Vector3d da =
                            it->g * (s.color * it->transmittance - suffix / denom);
                        acc.d_opacity[s.source_index] += dldi.dot(da);
                        suffix += s.color * agt;
                    }
                }
            }
        }
    });

    ColorOpacityGrads grads;
    grads.loss_value = total;
    grads.d_dc_colors.assign(3 * n, 0.0);
    grads.d_opacities.assign(n, 0.0);
    std::vector<double> d_color(3 * n, 0.0), d_alpha(n, 0.0);
    for (const auto& acc : partial) {
        for (std::size_t i = 0; i < 3 * n; ++i) d_color[i] += acc.d_color[i];
        for (std::size_t i = 0; i < n; ++i) d_alpha[i] += acc.d_opacity[i];
    }

    // chain through the activations: color = clamp(0.5 + C0 * f_dc),
    // alpha = min(sigmoid(o), ceiling); saturated regions get zero gradient
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            const double col = frame.colors[i][c];
            if (col > 0.0 && col < 1.0)
                grads.d_dc_colors[3 * i + c] = d_color[3 * i + c] * kShC0;
        }
        const double a = sigmoid(cloud.opacities[i]);
        if (a < kAlphaCeiling) grads.d_opacities[i] = d_alpha[i] * a * (1.0 - a);
    }
    return grads;
}

}  // namespace speede
