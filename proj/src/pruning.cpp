#include "speede/pruning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "speede/binio.hpp"
#include "speede/errors.hpp"
#include "speede/metrics.hpp"
#include "speede/parallel.hpp"
#include "speede/render.hpp"

namespace speede {

namespace {

constexpr char kScoreMagic[] = "SCOR1";

std::vector<std::uint32_t> identity_map(std::size_t n) {
    std::vector<std::uint32_t> map(n);
    std::iota(map.begin(), map.end(), 0u);
    return map;
}

double mean_psnr(const GaussianCloud& cloud, const DeformationField& field,
                 const std::vector<TrainingView>& views, const std::vector<Image>& gt_images,
                 const Eigen::Vector3d& background, int threads) {
    double total = 0.0;
    for (std::size_t v = 0; v < views.size(); ++v) {
        const FrameGaussians frame = prepare_frame(cloud, &field, views[v].timestamp);
        total += psnr(render(frame, views[v], background, threads), gt_images[v]);
    }
    return total / static_cast<double>(views.size());
}

}  // namespace

double asp_noise(long iteration, const NoiseSchedule& schedule, Rng& rng) {
    if (!schedule.enabled || iteration >= schedule.tau || schedule.beta == 0.0) return 0.0;
    const double factor = 1.0 - static_cast<double>(iteration) / static_cast<double>(schedule.tau);
    return rng.normal() * schedule.beta * schedule.delta_t * factor;
}

ScoreVector accumulate_scores(const GaussianCloud& cloud, const DeformationField& field,
                              const std::vector<TrainingView>& views,
                              const Eigen::Vector3d& background, const NoiseSchedule& schedule,
                              long iteration, const Rng& rng, int threads) {
    if (views.empty()) throw ConfigError("accumulate_scores: no training views");
    if (schedule.tau < 0) throw ConfigError("accumulate_scores: noise tau must be >= 0");
    if (schedule.beta < 0.0) throw ConfigError("accumulate_scores: noise beta must be >= 0");

    // one chunk per view: per-view partial vectors merged in view order keeps
    // the result independent of the thread count
    std::vector<std::vector<double>> partial(views.size());
    parallel_chunks(views.size(), threads, [&](std::size_t v) {
        Rng view_rng = rng.fork(v);
        const double noise = asp_noise(iteration, schedule, view_rng);
        const double t = std::clamp(views[v].timestamp + noise, 0.0, 1.0);
        const FrameGaussians frame = prepare_frame(cloud, &field, t);
        partial[v] = footprint_gradients(frame, views[v], background, 1);
    });

    ScoreVector result;
    result.scores.assign(cloud.size(), 0.0);
    for (const auto& p : partial)
        for (std::size_t i = 0; i < result.scores.size(); ++i) result.scores[i] += p[i];
    result.views_accumulated = static_cast<int>(views.size());
    return result;
}

PruneResult prune(const GaussianCloud& cloud, const ScoreVector& scores, double fraction) {
    if (scores.scores.size() != cloud.size())
        throw std::invalid_argument("prune: score vector length " +
                                    std::to_string(scores.scores.size()) +
                                    " does not match cloud size " + std::to_string(cloud.size()));
    if (fraction < 0.0 || fraction >= 1.0)
        throw ConfigError("prune: fraction must lie in [0, 1)");

    const std::size_t n = cloud.size();
    const auto n_remove = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    // stable sort by score: equal scores stay index-ascending, so the lowest
    // index is pruned first among ties
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        return scores.scores[a] < scores.scores[b];
    });

    std::vector<char> removed(n, 0);
    for (std::size_t k = 0; k < n_remove; ++k) removed[order[k]] = 1;

    PruneResult result;
    result.kept.reserve(n - n_remove);
    for (std::uint32_t i = 0; i < n; ++i)
        if (!removed[i]) result.kept.push_back(i);
    result.cloud = subset(cloud, result.kept);
    return result;
}

void PruneSchedule::check() const {
    for (std::size_t k = 0; k < events.size(); ++k) {
        if (events[k].fraction <= 0.0 || events[k].fraction >= 1.0)
            throw ConfigError("prune schedule: event " + std::to_string(k) +
                              " fraction must lie in (0, 1)");
        if (k > 0 && events[k].iteration <= events[k - 1].iteration)
            throw ConfigError("prune schedule: event iterations must be strictly ascending");
    }
}

PrunePipelineResult run_prune_pipeline(const GaussianCloud& cloud, const DeformationField& field,
                                       const std::vector<TrainingView>& views,
                                       const std::vector<Image>& gt_images,
                                       const Eigen::Vector3d& background,
                                       const PruneSchedule& prune_schedule,
                                       const NoiseSchedule& noise_schedule,
                                       const FinetuneConfig& finetune, std::uint64_t seed,
                                       int threads) {
    prune_schedule.check();
    if (views.empty()) throw ConfigError("prune pipeline: no training views");
    if (gt_images.size() != views.size())
        throw std::invalid_argument("prune pipeline: gt image count does not match views");

    PrunePipelineResult result;
    result.cloud = cloud;
    result.field = field.restrict_to(identity_map(cloud.size()));
    result.report.seed = seed;
    result.report.kept = identity_map(cloud.size());

    const Rng root(seed);
    for (std::size_t e = 0; e < prune_schedule.events.size(); ++e) {
        const PruneEvent& event = prune_schedule.events[e];
        const auto start = std::chrono::steady_clock::now();

        PruneEventReport er;
        er.iteration = event.iteration;
        er.fraction = event.fraction;
        er.n_before = result.cloud.size();
        er.psnr_before =
            mean_psnr(result.cloud, *result.field, views, gt_images, background, threads);

        const ScoreVector scores =
            accumulate_scores(result.cloud, *result.field, views, background, noise_schedule,
                              event.iteration, root.fork(e), threads);
        PruneResult pruned = prune(result.cloud, scores, event.fraction);
        result.cloud = std::move(pruned.cloud);
        result.field = result.field->restrict_to(pruned.kept);

        // compose this event's survivors onto the global original-index map
        std::vector<std::uint32_t> composed(pruned.kept.size());
        for (std::size_t i = 0; i < pruned.kept.size(); ++i)
            composed[i] = result.report.kept[pruned.kept[i]];
        result.report.kept = std::move(composed);

        for (int it = 0; it < finetune.iters; ++it) {
            const std::size_t v = it % views.size();
            const FrameGaussians frame =
                prepare_frame(result.cloud, result.field.get(), views[v].timestamp);
            const ColorOpacityGrads grads =
                color_opacity_gradients(result.cloud, frame, views[v], gt_images[v],
                                        finetune.ssim_weight, background, threads);
            const int k3 = result.cloud.sh_coeff_count * 3;
            for (std::size_t i = 0; i < result.cloud.size(); ++i) {
                for (int c = 0; c < 3; ++c)
                    result.cloud.sh_colors[i * k3 + c] -= static_cast<float>(
                        finetune.learning_rate * grads.d_dc_colors[3 * i + c]);
                result.cloud.opacities[i] -=
                    static_cast<float>(finetune.learning_rate * grads.d_opacities[i]);
            }
        }

        er.n_after = result.cloud.size();
        er.psnr_after =
            mean_psnr(result.cloud, *result.field, views, gt_images, background, threads);
        er.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.report.events.push_back(er);
    }
    return result;
}

std::string serialize_scores(const ScoreVector& scores) {
    std::string out;
    out.reserve(5 + 8 + scores.scores.size() * 4);
    out.append(kScoreMagic, 5);
    put_u64(out, scores.scores.size());
    for (const double s : scores.scores) put_f32(out, static_cast<float>(s));
    return out;
}

ScoreVector parse_scores(const std::string& bytes, const std::string& origin) {
    ByteReader reader(bytes, origin);
    if (reader.read_magic(5) != kScoreMagic)
        throw IoError(origin + ": not a SCOR1 file (bad magic)");
    ScoreVector result;
    const std::uint64_t n = reader.read_u64();
    result.scores.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        const float v = reader.read_f32();
        if (!std::isfinite(v) || v < 0.0f)
            throw IoError(origin + ": score " + std::to_string(i) +
                          " is negative or non-finite");
        result.scores[i] = static_cast<double>(v);
    }
    if (reader.remaining() != 0)
        throw IoError(origin + ": " + std::to_string(reader.remaining()) +
                      " trailing bytes after score data");
    return result;
}

void save_scores(const ScoreVector& scores, const std::string& path) {
    write_binary_file(path, serialize_scores(scores));
}

ScoreVector load_scores(const std::string& path) {
    return parse_scores(read_binary_file(path), path);
}

}  // namespace speede
