#include "speede/metrics.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "speede/deformation.hpp"
#include "speede/render.hpp"

namespace speede {

namespace {

constexpr int kWin = 11;
constexpr int kHalf = kWin / 2;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void require_same_shape(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("image dimensions do not match");
}

const double* window_1d() {
    static const std::array<double, kWin> w = [] {
        std::array<double, kWin> v{};
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - kHalf;
            v[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += v[i];
        }
        for (auto& x : v) x /= sum;
        return v;
    }();
    return w.data();
}

// Correlation with the separable 11x11 window, evaluated only where the
// window fits; out has one value per valid center, row-major, width W-10.
std::vector<double> correlate_valid(const std::vector<double>& plane, int w, int h) {
    const double* win = window_1d();
    const int vw = w - 2 * kHalf, vh = h - 2 * kHalf;
    std::vector<double> horiz(static_cast<std::size_t>(vw) * h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < vw; ++x) {
            double s = 0.0;
            for (int k = 0; k < kWin; ++k) s += win[k] * plane[y * w + x + k];
            horiz[static_cast<std::size_t>(y) * vw + x] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(vw) * vh);
    for (int y = 0; y < vh; ++y) {
        for (int x = 0; x < vw; ++x) {
            double s = 0.0;
            for (int k = 0; k < kWin; ++k) s += win[k] * horiz[static_cast<std::size_t>(y + k) * vw + x];
            out[static_cast<std::size_t>(y) * vw + x] = s;
        }
    }
    return out;
}

// Adjoint of correlate_valid: scatters per-center values back to pixels.
// Because the window is symmetric this is again a correlation, applied to
// the center plane zero-padded to full size.
std::vector<double> scatter_full(const std::vector<double>& centers, int w, int h) {
    const double* win = window_1d();
    const int vw = w - 2 * kHalf, vh = h - 2 * kHalf;
    std::vector<double> padded(static_cast<std::size_t>(w) * h, 0.0);
    for (int y = 0; y < vh; ++y)
        for (int x = 0; x < vw; ++x)
            padded[static_cast<std::size_t>(y + kHalf) * w + (x + kHalf)] =
                centers[static_cast<std::size_t>(y) * vw + x];
    std::vector<double> horiz(static_cast<std::size_t>(w) * h, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = 0; k < kWin; ++k) {
                const int xx = x + k - kHalf;
                if (xx >= 0 && xx < w) s += win[k] * padded[static_cast<std::size_t>(y) * w + xx];
            }
            horiz[static_cast<std::size_t>(y) * w + x] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(w) * h, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = 0; k < kWin; ++k) {
                const int yy = y + k - kHalf;
                if (yy >= 0 && yy < h) s += win[k] * horiz[static_cast<std::size_t>(yy) * w + x];
            }
            out[static_cast<std::size_t>(y) * w + x] = s;
        }
    }
    return out;
}

std::vector<double> channel_plane(const Image& img, int c) {
    std::vector<double> plane(img.pixel_count());
    for (std::size_t p = 0; p < plane.size(); ++p) plane[p] = img.data[p * 3 + c];
    return plane;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    require_same_shape(a, b);
    if (a.data.empty()) throw std::invalid_argument("psnr: empty images");
    double se = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.data.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
    require_same_shape(a, b);
    if (a.width < kWin || a.height < kWin)
        throw std::invalid_argument("ssim: images must be at least 11x11");
    const int w = a.width, h = a.height;
    const std::size_t n_valid = static_cast<std::size_t>(w - 2 * kHalf) * (h - 2 * kHalf);
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        const auto pa = channel_plane(a, c);
        const auto pb = channel_plane(b, c);
        std::vector<double> paa(pa.size()), pbb(pa.size()), pab(pa.size());
        for (std::size_t i = 0; i < pa.size(); ++i) {
            paa[i] = pa[i] * pa[i];
            pbb[i] = pb[i] * pb[i];
            pab[i] = pa[i] * pb[i];
        }
        const auto mu_a = correlate_valid(pa, w, h);
        const auto mu_b = correlate_valid(pb, w, h);
        const auto m_aa = correlate_valid(paa, w, h);
        const auto m_bb = correlate_valid(pbb, w, h);
        const auto m_ab = correlate_valid(pab, w, h);
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double va = m_aa[i] - mu_a[i] * mu_a[i];
            const double vb = m_bb[i] - mu_b[i] * mu_b[i];
            const double cov = m_ab[i] - mu_a[i] * mu_b[i];
            const double num = (2.0 * mu_a[i] * mu_b[i] + kC1) * (2.0 * cov + kC2);
            const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (va + vb + kC2);
            total += num / den;
        }
    }
    return total / (3.0 * static_cast<double>(n_valid));
}

std::pair<double, std::vector<double>> ssim_gradient(const Image& a, const Image& b) {
    require_same_shape(a, b);
    if (a.width < kWin || a.height < kWin)
        throw std::invalid_argument("ssim: images must be at least 11x11");
    const int w = a.width, h = a.height;
    const std::size_t n_valid = static_cast<std::size_t>(w - 2 * kHalf) * (h - 2 * kHalf);
    const double norm = 1.0 / (3.0 * static_cast<double>(n_valid));

    double total = 0.0;
    std::vector<double> grad(a.data.size(), 0.0);
    for (int c = 0; c < 3; ++c) {
        const auto pa = channel_plane(a, c);
        const auto pb = channel_plane(b, c);
        std::vector<double> paa(pa.size()), pbb(pa.size()), pab(pa.size());
        for (std::size_t i = 0; i < pa.size(); ++i) {
            paa[i] = pa[i] * pa[i];
            pbb[i] = pb[i] * pb[i];
            pab[i] = pa[i] * pb[i];
        }
        const auto mu_a = correlate_valid(pa, w, h);
        const auto mu_b = correlate_valid(pb, w, h);
        const auto m_aa = correlate_valid(paa, w, h);
        const auto m_bb = correlate_valid(pbb, w, h);
        const auto m_ab = correlate_valid(pab, w, h);

        // per-window coefficients of dS/da_k = w_k (p0 + pa_c * a_k + pb_c * b_k)
        std::vector<double> p0(mu_a.size()), pac(mu_a.size()), pbc(mu_a.size());
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double va = m_aa[i] - mu_a[i] * mu_a[i];
            const double vb = m_bb[i] - mu_b[i] * mu_b[i];
            const double cov = m_ab[i] - mu_a[i] * mu_b[i];
            const double a1 = 2.0 * mu_a[i] * mu_b[i] + kC1;
            const double a2 = 2.0 * cov + kC2;
            const double b1 = mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1;
            const double b2 = va + vb + kC2;
            const double d = b1 * b2;
            const double s = a1 * a2 / d;
            total += s;
            p0[i] = 2.0 * (mu_b[i] * (a2 - a1) / d + s * mu_a[i] * (1.0 / b2 - 1.0 / b1));
            pac[i] = -2.0 * s / b2;
            pbc[i] = 2.0 * a1 / d;
        }
        const auto g0 = scatter_full(p0, w, h);
        const auto ga = scatter_full(pac, w, h);
        const auto gb = scatter_full(pbc, w, h);
        for (std::size_t p = 0; p < pa.size(); ++p)
            grad[p * 3 + c] = norm * (g0[p] + pa[p] * ga[p] + pb[p] * gb[p]);
    }
    return {total * norm, std::move(grad)};
}

double grouping_purity(const std::vector<std::uint32_t>& assignment,
                       const std::vector<std::uint32_t>& labels) {
    if (assignment.size() != labels.size())
        throw std::invalid_argument("grouping_purity: length mismatch");
    if (assignment.empty()) return 1.0;
    std::map<std::uint32_t, std::map<std::uint32_t, std::size_t>> overlap;
    for (std::size_t i = 0; i < assignment.size(); ++i) ++overlap[assignment[i]][labels[i]];
    std::size_t hits = 0;
    for (const auto& [group, counts] : overlap) {
        std::size_t best = 0;
        for (const auto& [label, n] : counts) best = std::max(best, n);
        hits += best;
    }
    return static_cast<double>(hits) / static_cast<double>(assignment.size());
}

BenchReport bench_render(const GaussianCloud& cloud, const DeformationField& field,
                         const std::vector<TrainingView>& views,
                         const std::vector<Image>& gt_images, const Eigen::Vector3d& background,
                         std::size_t model_bytes, int warmup, int iters, std::uint64_t seed,
                         int threads) {
    if (views.empty()) throw std::invalid_argument("bench_render: no views");
    if (iters < 1) throw std::invalid_argument("bench_render: iters must be >= 1");
    if (!gt_images.empty() && gt_images.size() != views.size())
        throw std::invalid_argument("bench_render: gt_images/views length mismatch");

    auto render_all = [&] {
        for (const auto& view : views) {
            const FrameGaussians frame = prepare_frame(cloud, &field, view.timestamp);
            volatile float sink = render(frame, view, background, threads).data[0];
            (void)sink;
        }
    };

    for (int i = 0; i < warmup; ++i) render_all();

    std::vector<double> fps(iters);
    for (int i = 0; i < iters; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        render_all();
        const auto t1 = std::chrono::steady_clock::now();
        const double sec = std::chrono::duration<double>(t1 - t0).count();
        fps[i] = static_cast<double>(views.size()) / std::max(sec, 1e-12);
    }

    // median of means: consecutive blocks, block means, middle value
    const int blocks = std::min(5, iters);
    std::vector<double> means(blocks, 0.0);
    for (int i = 0; i < iters; ++i) means[i * blocks / iters] += fps[i];
    std::vector<int> counts(blocks, 0);
    for (int i = 0; i < iters; ++i) ++counts[i * blocks / iters];
    for (int bidx = 0; bidx < blocks; ++bidx) means[bidx] /= std::max(counts[bidx], 1);
    std::sort(means.begin(), means.end());
    const double fps_median = means[blocks / 2];

    const double mean_fps = std::accumulate(fps.begin(), fps.end(), 0.0) / iters;
    double var = 0.0;
    for (double f : fps) var += (f - mean_fps) * (f - mean_fps);
    var /= iters;

    BenchReport report;
    report.fps_mean = fps_median;
    report.fps_std = std::sqrt(var);
    report.n_gaussians = cloud.size();
    report.model_bytes = model_bytes;
    report.warmup = warmup;
    report.iters = iters;
    report.seed = seed;
    report.threads = threads;
    if (!gt_images.empty()) {
        double psum = 0.0, ssum = 0.0;
        for (std::size_t v = 0; v < views.size(); ++v) {
            const FrameGaussians frame = prepare_frame(cloud, &field, views[v].timestamp);
            const Image img = render(frame, views[v], background, threads);
            psum += psnr(img, gt_images[v]);
            ssum += ssim(img, gt_images[v]);
        }
        report.psnr_mean = psum / static_cast<double>(views.size());
        report.ssim_mean = ssum / static_cast<double>(views.size());
    }
    return report;
}

}  // namespace speede
