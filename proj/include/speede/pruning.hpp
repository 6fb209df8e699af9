#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "speede/deformation.hpp"
#include "speede/gaussian_cloud.hpp"
#include "speede/image.hpp"
#include "speede/rng.hpp"

namespace speede {

// Accumulated temporal sensitivity scores: per Gaussian, the sum of squared
// footprint gradients across pixels and views.
struct ScoreVector {
    std::vector<double> scores;  // N, non-negative
    int views_accumulated = 0;
};

// Annealing-smooth-pruning noise schedule: timestamp noise with stddev
// beta * delta_t decaying linearly to zero at iteration tau.
struct NoiseSchedule {
    double beta = 0.1;
    double delta_t = 0.0;  // mean inter-frame interval of the scene
    long tau = 20000;
    bool enabled = true;
};

// One draw of N(0,1) * beta * delta_t * max(0, 1 - iteration/tau);
// exactly zero once iteration >= tau or when the schedule is disabled.
double asp_noise(long iteration, const NoiseSchedule& schedule, Rng& rng);

// Sums footprint gradients over all views, rendering each at its timestamp
// plus an independent noise draw (clamped to [0,1]). Deterministic in the
// rng seed and thread count.
ScoreVector accumulate_scores(const GaussianCloud& cloud, const DeformationField& field,
                              const std::vector<TrainingView>& views,
                              const Eigen::Vector3d& background, const NoiseSchedule& schedule,
                              long iteration, const Rng& rng, int threads = 1);

// Removes floor(fraction * N) lowest-scored Gaussians; equal scores are
// pruned lowest-index-first. Survivors keep their parameters bit-exactly.
struct PruneResult {
    GaussianCloud cloud;
    std::vector<std::uint32_t> kept;  // ascending original indices of survivors
};
PruneResult prune(const GaussianCloud& cloud, const ScoreVector& scores, double fraction);

// Scheduled prune events, iterations ascending, fractions in (0,1).
struct PruneEvent {
    long iteration = 0;
    double fraction = 0.0;
};
struct PruneSchedule {
    std::vector<PruneEvent> events;
    long densify_end = 15000;
    void check() const;  // throws ConfigError on bad ordering/fractions
};
inline PruneSchedule default_prune_schedule() {
    return PruneSchedule{{{15000, 0.80}, {25000, 0.30}}, 15000};
}

// Post-prune recovery: gradient descent on DC colors and opacities against
// the views' ground-truth images (geometry is never touched).
struct FinetuneConfig {
    int iters = 0;  // 0 disables
    double learning_rate = 0.05;
    double ssim_weight = 0.2;
};

struct PruneEventReport {
    long iteration = 0;
    double fraction = 0.0;
    std::size_t n_before = 0;
    std::size_t n_after = 0;
    double psnr_before = 0.0;
    double psnr_after = 0.0;
    double seconds = 0.0;
};
struct PruneReport {
    std::vector<PruneEventReport> events;
    std::uint64_t seed = 0;
    std::vector<std::uint32_t> kept;  // composition of all events, original indices
};

// Runs the scheduled events in order: score, prune, restrict the field, then
// optionally fine-tune. gt_images must align with views.
struct PrunePipelineResult {
    GaussianCloud cloud;
    std::unique_ptr<DeformationField> field;
    PruneReport report;
};
PrunePipelineResult run_prune_pipeline(const GaussianCloud& cloud, const DeformationField& field,
                                       const std::vector<TrainingView>& views,
                                       const std::vector<Image>& gt_images,
                                       const Eigen::Vector3d& background,
                                       const PruneSchedule& prune_schedule,
                                       const NoiseSchedule& noise_schedule,
                                       const FinetuneConfig& finetune, std::uint64_t seed,
                                       int threads = 1);

// "SCOR1" binary: magic, N as uint64 LE, then N float32 scores.
void save_scores(const ScoreVector& scores, const std::string& path);
ScoreVector load_scores(const std::string& path);
std::string serialize_scores(const ScoreVector& scores);
ScoreVector parse_scores(const std::string& bytes, const std::string& origin = "<memory>");

}  // namespace speede
