#include "speede/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "speede/binio.hpp"
#include "speede/deformation.hpp"
#include "speede/errors.hpp"
#include "speede/gaussian_cloud.hpp"
#include "speede/groupflow.hpp"
#include "speede/image.hpp"
#include "speede/metrics.hpp"
#include "speede/pruning.hpp"
#include "speede/render.hpp"
#include "speede/scene_synth.hpp"

namespace speede {
namespace {

using nlohmann::json;

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --threads beats SPEEDE_THREADS beats 1.
int resolve_threads(int flag) {
    if (flag > 0) return flag;
    if (const char* env = std::getenv("SPEEDE_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1)
            throw ConfigError(std::string("SPEEDE_THREADS must be a positive integer, got \"") +
                              env + "\"");
        return static_cast<int>(v);
    }
    return 1;
}

// Desk-scale simplifications recorded in every report so downstream readers
// know what the numbers do and do not cover.
json deviations_block() {
    return json::array({
        "no densification: runs start from fixed-size synthetic clouds",
        "group refinement minimizes the trajectory residual, not the rendering loss",
        "quality metrics are PSNR and SSIM only",
    });
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

void write_report(const std::string& dir, const std::string& name, const json& report) {
    write_binary_file(join(dir, name), report.dump(2) + "\n");
}

// Bundles carry their recipe in scene.toml; hand-built bundles may omit it,
// in which case the background defaults to black.
Eigen::Vector3d bundle_background(const std::string& dir) {
    const std::string path = join(dir, "scene.toml");
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return Eigen::Vector3d::Zero();
    return spec_from_toml(path).background;
}

std::size_t bundle_bytes(const Bundle& bundle) {
    return serialize_ply(bundle.cloud).size() + serialize_trajectories(bundle.trajectories).size();
}

double mean_frame_interval(const std::vector<double>& timesteps) {
    if (timesteps.size() < 2) return 0.0;
    return (timesteps.back() - timesteps.front()) / static_cast<double>(timesteps.size() - 1);
}

// Per-control bandwidth for blend skinning: RMS canonical distance of the
// assigned members, floored so empty or single-point groups stay usable.
std::vector<double> lbs_radii(const GroupFlowModel& model, const GaussianCloud& cloud) {
    std::vector<double> sum(model.groups(), 0.0);
    std::vector<std::size_t> count(model.groups(), 0);
    for (std::size_t i = 0; i < model.gaussians(); ++i) {
        const std::uint32_t j = model.assignment[i];
        sum[j] += (cloud.mean(i) - model.control(j)).squaredNorm();
        ++count[j];
    }
    std::vector<double> radii(model.groups());
    for (std::size_t j = 0; j < model.groups(); ++j)
        radii[j] = std::max(1e-6, std::sqrt(sum[j] / std::max<std::size_t>(count[j], 1)));
    return radii;
}

// Blend-skinning view of a flow model; per-point weights depend only on the
// query cloud, so restriction is a plain copy.
class LbsField final : public DeformationField {
public:
    LbsField(GroupFlowModel model, std::vector<double> radii, std::size_t k)
        : model_(std::move(model)), radii_(std::move(radii)), k_(k) {}

    FieldDeltas evaluate(const GaussianCloud& cloud, double t) const override {
        std::vector<Eigen::Vector3d> canonical(cloud.size());
        for (std::size_t i = 0; i < cloud.size(); ++i) canonical[i] = cloud.mean(i);
        const std::vector<Eigen::Vector3d> moved = lbs_apply(canonical, model_, radii_, k_, t);
        FieldDeltas deltas;
        deltas.d_means.resize(3 * cloud.size());
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            const Eigen::Vector3d d = moved[i] - canonical[i];
            deltas.d_means[3 * i] = d[0];
            deltas.d_means[3 * i + 1] = d[1];
            deltas.d_means[3 * i + 2] = d[2];
        }
        return deltas;
    }

    std::unique_ptr<DeformationField> restrict_to(
        const std::vector<std::uint32_t>&) const override {
        return std::make_unique<LbsField>(model_, radii_, k_);
    }

private:
    GroupFlowModel model_;
    std::vector<double> radii_;
    std::size_t k_;
};

// Flags shared by every command that renders or evaluates a model: the cloud
// and its motion source. Without --ply the bundle's cloud is used; without
// --flow/--traj the bundle's own trajectories drive it.
struct ModelFlags {
    std::string ply;
    std::string flow;
    std::string traj;
    std::string variant = "base";
    std::size_t k_neighbors = 1;
};

void add_model_flags(CLI::App* sub, ModelFlags& m) {
    sub->add_option("--ply", m.ply, "model cloud (.ply); defaults to the bundle's");
    sub->add_option("--flow", m.flow, "grouped motion model (.gflw)");
    sub->add_option("--traj", m.traj, "trajectory motion model (.traj)");
    sub->add_option("--variant", m.variant, "flow application variant")
        ->check(CLI::IsMember({"base", "rot", "lbs"}))
        ->capture_default_str();
    sub->add_option("--k", m.k_neighbors, "blend-skinning neighbor count (lbs variant)")
        ->capture_default_str();
}

json model_flags_json(const ModelFlags& m) {
    return json{{"ply", m.ply},
                {"flow", m.flow},
                {"traj", m.traj},
                {"variant", m.variant},
                {"k", m.k_neighbors}};
}

struct LoadedModel {
    GaussianCloud cloud;
    std::shared_ptr<DeformationField> field;
    std::shared_ptr<GroupFlowModel> flow;  // set when driven by a flow model
    std::size_t bytes = 0;
};

LoadedModel load_model(const Bundle& bundle, const ModelFlags& flags) {
    if (!flags.flow.empty() && !flags.traj.empty())
        throw ConfigError("give at most one of --flow and --traj");

    LoadedModel m;
    m.cloud = flags.ply.empty() ? bundle.cloud : load_ply(flags.ply);

    if (!flags.flow.empty()) {
        m.flow = std::make_shared<GroupFlowModel>(load_flow(flags.flow));
        if (m.flow->gaussians() != m.cloud.size())
            throw ValidationError("flow model covers " + std::to_string(m.flow->gaussians()) +
                                  " Gaussians but the cloud has " +
                                  std::to_string(m.cloud.size()));
        if (flags.variant == "lbs")
            m.field = std::make_shared<LbsField>(*m.flow, lbs_radii(*m.flow, m.cloud),
                                                 flags.k_neighbors);
        else
            m.field = std::make_shared<GroupFlowField>(*m.flow, flags.variant == "rot");
        m.bytes = model_size(m.cloud, m.flow.get());
        return m;
    }

    if (!flags.traj.empty()) {
        TrajectorySet traj = load_trajectories(flags.traj);
        if (traj.count != m.cloud.size())
            throw ValidationError("trajectories cover " + std::to_string(traj.count) +
                                  " Gaussians but the cloud has " +
                                  std::to_string(m.cloud.size()));
        m.bytes = serialize_ply(m.cloud).size() + serialize_trajectories(traj).size();
        m.field = sampled_field(std::move(traj));
        return m;
    }

    if (m.cloud.size() != bundle.cloud.size())
        throw ConfigError("--ply needs --flow or --traj when the cloud size differs from "
                          "the bundle's");
    m.field = bundle.field;
    m.bytes = bundle_bytes(bundle);
    return m;
}

const std::vector<TrainingView>& pick_views(const Bundle& bundle, const std::string& which) {
    return which == "train" ? bundle.train_views : bundle.test_views;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::string spec_path;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
};

int cmd_synth(const SynthArgs& a) {
    const int threads = resolve_threads(a.threads);
    SceneSpec spec = spec_from_toml(a.spec_path);
    if (a.seed_set) spec.seed = a.seed;
    const Scene scene = make_scene(spec);
    save_bundle(scene, a.out, threads);
    std::cout << "synth: wrote bundle " << a.out << " (" << scene.cloud.size() << " gaussians, "
              << scene.train_views.size() << " train views, " << scene.test_views.size()
              << " test views)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// prune

struct PruneArgs {
    std::string bundle;
    std::string out;
    std::vector<double> fractions;
    std::vector<long> iterations;
    bool asp = true;
    double beta = 0.1;
    long tau = 20000;
    int finetune_iters = 0;
    double finetune_lr = 0.05;
    double ssim_weight = 0.2;
    std::uint64_t seed = 0;
    int threads = 0;
};

PruneSchedule schedule_from_flags(const PruneArgs& a) {
    if (a.fractions.empty() && a.iterations.empty()) return default_prune_schedule();
    std::vector<double> fractions = a.fractions;
    if (fractions.empty()) throw ConfigError("--iterations without --fractions");
    std::vector<long> iterations = a.iterations;
    if (iterations.empty())
        for (std::size_t k = 0; k < fractions.size(); ++k)
            iterations.push_back(15000 + 10000 * static_cast<long>(k));
    if (iterations.size() != fractions.size())
        throw ConfigError("--fractions and --iterations must have the same length");
    PruneSchedule schedule;
    for (std::size_t k = 0; k < fractions.size(); ++k)
        schedule.events.push_back({iterations[k], fractions[k]});
    schedule.densify_end = iterations.front();
    schedule.check();
    return schedule;
}

int cmd_prune(const PruneArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const int threads = resolve_threads(a.threads);
    const PruneSchedule schedule = schedule_from_flags(a);

    const Bundle bundle = load_bundle(a.bundle);
    const Eigen::Vector3d background = bundle_background(a.bundle);
    const std::vector<Image> gt = bundle.load_images(bundle.train_views);

    NoiseSchedule noise;
    noise.beta = a.beta;
    noise.delta_t = mean_frame_interval(bundle.trajectories.timesteps);
    noise.tau = a.tau;
    noise.enabled = a.asp;

    FinetuneConfig finetune;
    finetune.iters = a.finetune_iters;
    finetune.learning_rate = a.finetune_lr;
    finetune.ssim_weight = a.ssim_weight;

    const PrunePipelineResult result =
        run_prune_pipeline(bundle.cloud, *bundle.field, bundle.train_views, gt, background,
                           schedule, noise, finetune, a.seed, threads);

    ensure_dir(a.out);
    save_ply(result.cloud, join(a.out, "pruned.ply"));
    const TrajectorySet pruned_traj =
        sample_trajectories(*result.field, result.cloud, bundle.trajectories.timesteps);
    save_trajectories(pruned_traj, join(a.out, "pruned.traj"));

    json events = json::array();
    json event_seconds = json::array();
    for (const PruneEventReport& e : result.report.events) {
        events.push_back({{"iteration", e.iteration},
                          {"fraction", e.fraction},
                          {"n_before", e.n_before},
                          {"n_after", e.n_after},
                          {"psnr_before", e.psnr_before},
                          {"psnr_after", e.psnr_after}});
        event_seconds.push_back(e.seconds);
    }
    json fractions = json::array();
    json iterations = json::array();
    for (const PruneEvent& e : schedule.events) {
        fractions.push_back(e.fraction);
        iterations.push_back(e.iteration);
    }
    const json report = {
        {"command", "prune"},
        {"config",
         {{"bundle", a.bundle},
          {"out", a.out},
          {"fractions", fractions},
          {"iterations", iterations},
          {"densify_end", schedule.densify_end},
          {"asp", noise.enabled},
          {"beta", noise.beta},
          {"tau", noise.tau},
          {"delta_t", noise.delta_t},
          {"finetune_iters", finetune.iters},
          {"finetune_lr", finetune.learning_rate},
          {"ssim_weight", finetune.ssim_weight}}},
        {"seed", a.seed},
        {"threads", threads},
        {"n_before", bundle.cloud.size()},
        {"n_after", result.cloud.size()},
        {"events", events},
        {"kept", result.report.kept},
        {"deviations", deviations_block()},
        {"timing", {{"event_seconds", event_seconds}, {"total_seconds", seconds_since(t0)}}},
    };
    write_report(a.out, "report.json", report);
    std::cout << "prune: " << bundle.cloud.size() << " -> " << result.cloud.size()
              << " gaussians; wrote " << join(a.out, "pruned.ply") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// group

struct GroupArgs {
    std::string bundle;
    std::string out;
    std::string ply;
    std::string traj;
    std::size_t groups = 200;
    double lambda_r = 0.5;
    std::size_t n_max = 100;
    int refine_iters = 0;
    double refine_step = 1e-3;
    std::string variant = "base";
    std::size_t k_neighbors = 1;
    std::uint64_t seed = 0;
    int threads = 0;
};

int cmd_group(const GroupArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const int threads = resolve_threads(a.threads);
    const Bundle bundle = load_bundle(a.bundle);

    const GaussianCloud cloud = a.ply.empty() ? bundle.cloud : load_ply(a.ply);
    std::shared_ptr<DeformationField> field = bundle.field;
    if (!a.traj.empty()) {
        TrajectorySet traj = load_trajectories(a.traj);
        if (traj.count != cloud.size())
            throw ValidationError("trajectories cover " + std::to_string(traj.count) +
                                  " Gaussians but the cloud has " + std::to_string(cloud.size()));
        field = sampled_field(std::move(traj));
    } else if (cloud.size() != bundle.cloud.size()) {
        throw ConfigError("--ply needs --traj when the cloud size differs from the bundle's");
    }

    GroupingConfig config;
    config.groups = a.groups;
    config.lambda_r = a.lambda_r;
    config.n_max = a.n_max;
    config.seed = a.seed;
    config.refine_iters = a.refine_iters;
    config.refine_step = a.refine_step;

    const auto [model, rep] = groupflow_compress(cloud, *field, bundle.train_views, config,
                                                 threads);

    ensure_dir(a.out);
    save_flow(model, join(a.out, "model.gflw"));
    save_ply(cloud, join(a.out, "model.ply"));

    json purity = nullptr;
    if (bundle.labels.size() == model.gaussians())
        purity = grouping_purity(model.assignment, bundle.labels);

    const json report = {
        {"command", "group"},
        {"config",
         {{"bundle", a.bundle},
          {"out", a.out},
          {"ply", a.ply},
          {"traj", a.traj},
          {"groups", a.groups},
          {"lambda_r", a.lambda_r},
          {"n_max", a.n_max},
          {"refine_iters", a.refine_iters},
          {"refine_step", a.refine_step},
          {"variant", a.variant},
          {"k", a.k_neighbors}}},
        {"seed", a.seed},
        {"threads", threads},
        {"n_gaussians", model.gaussians()},
        {"frames", model.frames()},
        {"rmse", rep.rmse},
        {"purity", purity},
        {"param_floats", rep.param_floats},
        {"assignment_ints", rep.assignment_ints},
        {"model_bytes", model_size(cloud, &model)},
        {"group_sizes", rep.group_sizes},
        {"group_rmse", rep.group_rmse},
        {"deviations", deviations_block()},
        {"timing", {{"compress_seconds", rep.seconds}, {"total_seconds", seconds_since(t0)}}},
    };
    write_report(a.out, "report.json", report);
    std::cout << "group: " << model.groups() << " groups over " << model.gaussians()
              << " gaussians, rmse " << rep.rmse << "; wrote " << join(a.out, "model.gflw")
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// deform

struct DeformArgs {
    std::string bundle;
    std::string out;
    ModelFlags model;
    double t = 0.0;
    int threads = 0;
};

// Bakes field deltas into a standalone cloud: means shift, rotation offsets
// compose from the left, scale offsets add in log-space.
GaussianCloud bake_cloud(const GaussianCloud& cloud, const FieldDeltas& deltas) {
    GaussianCloud baked = cloud;
    const std::size_t n = cloud.size();
    if (!deltas.d_means.empty())
        for (std::size_t i = 0; i < 3 * n; ++i)
            baked.means[i] = static_cast<float>(cloud.means[i] + deltas.d_means[i]);
    if (!deltas.d_rotations.empty()) {
        for (std::size_t i = 0; i < n; ++i) {
            const Eigen::Vector4d offset(deltas.d_rotations[4 * i], deltas.d_rotations[4 * i + 1],
                                         deltas.d_rotations[4 * i + 2],
                                         deltas.d_rotations[4 * i + 3]);
            Eigen::Vector4d q = cloud.rotation(i);
            // (w, x, y, z) Hamilton product: offset * q
            const Eigen::Vector4d composed(
                offset[0] * q[0] - offset[1] * q[1] - offset[2] * q[2] - offset[3] * q[3],
                offset[0] * q[1] + offset[1] * q[0] + offset[2] * q[3] - offset[3] * q[2],
                offset[0] * q[2] - offset[1] * q[3] + offset[2] * q[0] + offset[3] * q[1],
                offset[0] * q[3] + offset[1] * q[2] - offset[2] * q[1] + offset[3] * q[0]);
            for (int c = 0; c < 4; ++c)
                baked.rotations[4 * i + c] = static_cast<float>(composed[c]);
        }
    }
    if (!deltas.d_log_scales.empty())
        for (std::size_t i = 0; i < 3 * n; ++i)
            baked.scales[i] = static_cast<float>(cloud.scales[i] + deltas.d_log_scales[i]);
    return baked;
}

int cmd_deform(const DeformArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const int threads = resolve_threads(a.threads);
    if (!(a.t >= 0.0 && a.t <= 1.0)) throw ConfigError("--t must lie in [0, 1]");
    const Bundle bundle = load_bundle(a.bundle);
    const LoadedModel m = load_model(bundle, a.model);
    const FieldDeltas deltas = m.field->evaluate(m.cloud, a.t);
    const GaussianCloud baked = bake_cloud(m.cloud, deltas);

    ensure_dir(a.out);
    save_ply(baked, join(a.out, "deformed.ply"));
    const json report = {
        {"command", "deform"},
        {"config", {{"bundle", a.bundle}, {"out", a.out}, {"t", a.t},
                    {"model", model_flags_json(a.model)}}},
        {"seed", 0},
        {"threads", threads},
        {"n_gaussians", baked.size()},
        {"deviations", deviations_block()},
        {"timing", {{"total_seconds", seconds_since(t0)}}},
    };
    write_report(a.out, "report.json", report);
    std::cout << "deform: baked " << baked.size() << " gaussians at t=" << a.t << "; wrote "
              << join(a.out, "deformed.ply") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// render

struct RenderArgs {
    std::string bundle;
    std::string out;
    ModelFlags model;
    std::string views = "train";
    std::size_t index = 0;
    double t_override = -1.0;  // < 0: use the view's own timestamp
    int threads = 0;
};

int cmd_render(const RenderArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const int threads = resolve_threads(a.threads);
    const Bundle bundle = load_bundle(a.bundle);
    const std::vector<TrainingView>& views = pick_views(bundle, a.views);
    if (a.index >= views.size())
        throw ConfigError("--index " + std::to_string(a.index) + " out of range; " + a.views +
                          " has " + std::to_string(views.size()) + " views");
    const TrainingView& view = views[a.index];
    const double t = a.t_override >= 0.0 ? a.t_override : view.timestamp;

    const LoadedModel m = load_model(bundle, a.model);
    const Eigen::Vector3d background = bundle_background(a.bundle);
    const FrameGaussians frame = prepare_frame(m.cloud, m.field.get(), t);
    const Image image = render(frame, view, background, threads);

    ensure_dir(a.out);
    write_png(image, join(a.out, "render.png"));
    const json report = {
        {"command", "render"},
        {"config",
         {{"bundle", a.bundle}, {"out", a.out}, {"views", a.views}, {"index", a.index},
          {"t", t}, {"model", model_flags_json(a.model)}}},
        {"seed", 0},
        {"threads", threads},
        {"n_gaussians", m.cloud.size()},
        {"deviations", deviations_block()},
        {"timing", {{"total_seconds", seconds_since(t0)}}},
    };
    write_report(a.out, "report.json", report);
    std::cout << "render: view " << a.index << " (" << a.views << ") at t=" << t << "; wrote "
              << join(a.out, "render.png") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string bundle;
    std::string out;
    ModelFlags model;
    std::string views = "test";
    int runs = 1;
    std::uint64_t seed = 0;
    int threads = 0;
};

int cmd_eval(const EvalArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const int threads = resolve_threads(a.threads);
    if (a.runs < 1) throw ConfigError("--runs must be >= 1");
    const Bundle bundle = load_bundle(a.bundle);
    const std::vector<TrainingView>& views = pick_views(bundle, a.views);
    const std::vector<Image> gt = bundle.load_images(views);
    const LoadedModel m = load_model(bundle, a.model);
    const Eigen::Vector3d background = bundle_background(a.bundle);

    json runs = json::array();
    double psnr_runs = 0.0;
    double ssim_runs = 0.0;
    for (int run = 0; run < a.runs; ++run) {
        json psnr_per_view = json::array();
        json ssim_per_view = json::array();
        double psnr_sum = 0.0;
        double ssim_sum = 0.0;
        for (std::size_t v = 0; v < views.size(); ++v) {
            const FrameGaussians frame =
                prepare_frame(m.cloud, m.field.get(), views[v].timestamp);
            const Image image = render(frame, views[v], background, threads);
            const double p = psnr(image, gt[v]);
            const double s = ssim(image, gt[v]);
            psnr_per_view.push_back(p);
            ssim_per_view.push_back(s);
            psnr_sum += p;
            ssim_sum += s;
        }
        const double psnr_mean = psnr_sum / static_cast<double>(views.size());
        const double ssim_mean = ssim_sum / static_cast<double>(views.size());
        runs.push_back({{"psnr", psnr_per_view},
                        {"ssim", ssim_per_view},
                        {"psnr_mean", psnr_mean},
                        {"ssim_mean", ssim_mean}});
        psnr_runs += psnr_mean;
        ssim_runs += ssim_mean;
    }

    ensure_dir(a.out);
    const json report = {
        {"command", "eval"},
        {"config",
         {{"bundle", a.bundle}, {"out", a.out}, {"views", a.views}, {"runs", a.runs},
          {"model", model_flags_json(a.model)}}},
        {"seed", a.seed},
        {"threads", threads},
        {"n_views", views.size()},
        {"n_gaussians", m.cloud.size()},
        {"model_bytes", m.bytes},
        {"runs", runs},
        {"psnr_mean", psnr_runs / a.runs},
        {"ssim_mean", ssim_runs / a.runs},
        {"deviations", deviations_block()},
        {"timing", {{"total_seconds", seconds_since(t0)}}},
    };
    write_report(a.out, "quality.json", report);
    std::cout << "eval: " << views.size() << " " << a.views << " views, psnr "
              << report.at("psnr_mean").get<double>() << ", ssim "
              << report.at("ssim_mean").get<double>() << "; wrote "
              << join(a.out, "quality.json") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
    std::string bundle;
    std::string out;
    std::vector<std::string> models;  // NAME=model.ply[:model.gflw|model.traj]
    std::string views = "test";
    int warmup = 1;
    int iters = 5;
    std::uint64_t seed = 0;
    int threads = 0;
};

struct BenchEntry {
    std::string name;
    LoadedModel model;
};

BenchEntry parse_model_arg(const Bundle& bundle, const std::string& arg) {
    const std::size_t eq = arg.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--model expects NAME=model.ply[:model.gflw|model.traj], got \"" + arg +
                          "\"");
    BenchEntry entry;
    entry.name = arg.substr(0, eq);
    if (entry.name.find(',') != std::string::npos || entry.name.find('"') != std::string::npos)
        throw ConfigError("model names must not contain ',' or '\"': \"" + entry.name + "\"");
    const std::string rhs = arg.substr(eq + 1);
    const std::size_t colon = rhs.find(':');
    ModelFlags flags;
    flags.ply = rhs.substr(0, colon == std::string::npos ? rhs.size() : colon);
    if (flags.ply.empty())
        throw ConfigError("--model \"" + arg + "\" is missing the .ply path");
    if (colon != std::string::npos) {
        const std::string second = rhs.substr(colon + 1);
        if (second.size() >= 5 && second.substr(second.size() - 5) == ".gflw")
            flags.flow = second;
        else if (second.size() >= 5 && second.substr(second.size() - 5) == ".traj")
            flags.traj = second;
        else
            throw ConfigError("--model motion path must end in .gflw or .traj: \"" + second +
                              "\"");
    }
    entry.model = load_model(bundle, flags);
    return entry;
}

int cmd_bench(const BenchArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const int threads = resolve_threads(a.threads);
    if (a.iters < 1) throw ConfigError("--iters must be >= 1");
    if (a.warmup < 0) throw ConfigError("--warmup must be >= 0");
    const Bundle bundle = load_bundle(a.bundle);
    const std::vector<TrainingView>& views = pick_views(bundle, a.views);
    const std::vector<Image> gt = bundle.load_images(views);
    const Eigen::Vector3d background = bundle_background(a.bundle);

    std::vector<BenchEntry> entries;
    {
        BenchEntry baseline;
        baseline.name = "baseline";
        baseline.model.cloud = bundle.cloud;
        baseline.model.field = bundle.field;
        baseline.model.bytes = bundle_bytes(bundle);
        entries.push_back(std::move(baseline));
    }
    for (const std::string& arg : a.models) entries.push_back(parse_model_arg(bundle, arg));

    std::vector<BenchReport> reports;
    reports.reserve(entries.size());
    for (const BenchEntry& entry : entries)
        reports.push_back(bench_render(entry.model.cloud, *entry.model.field, views, gt,
                                       background, entry.model.bytes, a.warmup, a.iters, a.seed,
                                       threads));

    const double baseline_fps = reports.front().fps_mean;
    const double baseline_bytes = static_cast<double>(reports.front().model_bytes);

    json rows = json::array();
    json fps_rows = json::array();
    std::string csv =
        "name,n_gaussians,model_bytes,psnr_mean,ssim_mean,size_ratio,fps_mean,fps_std,speedup\n";
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const BenchReport& r = reports[i];
        const double size_ratio = baseline_bytes / static_cast<double>(r.model_bytes);
        const double speedup = r.fps_mean / baseline_fps;
        rows.push_back({{"name", entries[i].name},
                        {"n_gaussians", r.n_gaussians},
                        {"model_bytes", r.model_bytes},
                        {"psnr_mean", r.psnr_mean},
                        {"ssim_mean", r.ssim_mean},
                        {"size_ratio", size_ratio}});
        fps_rows.push_back({{"name", entries[i].name},
                            {"fps_mean", r.fps_mean},
                            {"fps_std", r.fps_std},
                            {"speedup", speedup}});
        // cells are JSON literals so the CSV parses back to the exact values
        csv += json(entries[i].name).dump() + "," + json(r.n_gaussians).dump() + "," +
               json(r.model_bytes).dump() + "," + json(r.psnr_mean).dump() + "," +
               json(r.ssim_mean).dump() + "," + json(size_ratio).dump() + "," +
               json(r.fps_mean).dump() + "," + json(r.fps_std).dump() + "," +
               json(speedup).dump() + "\n";
    }

    ensure_dir(a.out);
    const json report = {
        {"command", "bench"},
        {"config",
         {{"bundle", a.bundle}, {"out", a.out}, {"models", a.models}, {"views", a.views},
          {"warmup", a.warmup}, {"iters", a.iters}}},
        {"seed", a.seed},
        {"threads", threads},
        {"n_views", views.size()},
        {"rows", rows},
        {"deviations", deviations_block()},
        {"timing", {{"rows", fps_rows}, {"total_seconds", seconds_since(t0)}}},
    };
    write_report(a.out, "bench.json", report);
    write_binary_file(join(a.out, "bench.csv"), csv);
    std::cout << "bench: " << entries.size() << " models over " << views.size() << " " << a.views
              << " views; wrote " << join(a.out, "bench.json") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
    std::string bundle;
    std::string out;
    std::vector<std::size_t> groups_list = {5, 10, 20, 50};
    double lambda_r = 0.5;
    std::size_t n_max = 100;
    int refine_iters = 0;
    double refine_step = 1e-3;
    std::string views = "test";
    int warmup = 1;
    int iters = 3;
    std::uint64_t seed = 0;
    int threads = 0;
};

int cmd_sweep(const SweepArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const int threads = resolve_threads(a.threads);
    if (a.groups_list.empty()) throw ConfigError("--groups-list must not be empty");
    const Bundle bundle = load_bundle(a.bundle);
    const std::vector<TrainingView>& views = pick_views(bundle, a.views);
    const std::vector<Image> gt = bundle.load_images(views);
    const Eigen::Vector3d background = bundle_background(a.bundle);

    const BenchReport baseline = bench_render(bundle.cloud, *bundle.field, views, gt, background,
                                              bundle_bytes(bundle), a.warmup, a.iters, a.seed,
                                              threads);

    json rows = json::array();
    json fps_rows = json::array();
    for (const std::size_t groups : a.groups_list) {
        GroupingConfig config;
        config.groups = groups;
        config.lambda_r = a.lambda_r;
        config.n_max = a.n_max;
        config.seed = a.seed;
        config.refine_iters = a.refine_iters;
        config.refine_step = a.refine_step;
        const auto [model, rep] = groupflow_compress(bundle.cloud, *bundle.field,
                                                     bundle.train_views, config, threads);
        const GroupFlowField field(model);
        const BenchReport bench =
            bench_render(bundle.cloud, field, views, gt, background,
                         model_size(bundle.cloud, &model), a.warmup, a.iters, a.seed, threads);
        json purity = nullptr;
        if (bundle.labels.size() == model.gaussians())
            purity = grouping_purity(model.assignment, bundle.labels);
        rows.push_back({{"groups", groups},
                        {"rmse", rep.rmse},
                        {"purity", purity},
                        {"param_floats", rep.param_floats},
                        {"assignment_ints", rep.assignment_ints},
                        {"model_bytes", model_size(bundle.cloud, &model)},
                        {"psnr_mean", bench.psnr_mean},
                        {"ssim_mean", bench.ssim_mean}});
        fps_rows.push_back({{"groups", groups},
                            {"fps_mean", bench.fps_mean},
                            {"fps_std", bench.fps_std},
                            {"speedup", bench.fps_mean / baseline.fps_mean}});
    }

    ensure_dir(a.out);
    const json report = {
        {"command", "sweep"},
        {"config",
         {{"bundle", a.bundle}, {"out", a.out}, {"groups_list", a.groups_list},
          {"lambda_r", a.lambda_r}, {"n_max", a.n_max}, {"refine_iters", a.refine_iters},
          {"refine_step", a.refine_step}, {"views", a.views}, {"warmup", a.warmup},
          {"iters", a.iters}}},
        {"seed", a.seed},
        {"threads", threads},
        {"baseline", {{"psnr_mean", baseline.psnr_mean}, {"ssim_mean", baseline.ssim_mean},
                      {"model_bytes", baseline.model_bytes}}},
        {"rows", rows},
        {"deviations", deviations_block()},
        {"timing",
         {{"baseline_fps", baseline.fps_mean}, {"rows", fps_rows},
          {"total_seconds", seconds_since(t0)}}},
    };
    write_report(a.out, "sweep.json", report);
    std::cout << "sweep: " << a.groups_list.size() << " group counts; wrote "
              << join(a.out, "sweep.json") << "\n";
    return 0;
}

int run_impl(const std::vector<std::string>& args, bool rethrow) {
    CLI::App app{"desk-scale dynamic gaussian splatting: synthesize, prune, group, evaluate"};
    app.require_subcommand(1);

    SynthArgs synth;
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic scene bundle");
    synth_cmd->add_option("--spec", synth.spec_path, "scene recipe (.toml)")->required();
    synth_cmd->add_option("--out", synth.out, "bundle output directory")->required();
    CLI::Option* synth_seed =
        synth_cmd->add_option("--seed", synth.seed, "override the recipe's seed");
    synth_cmd->add_option("--threads", synth.threads, "worker threads (0 = SPEEDE_THREADS or 1)");

    PruneArgs prune;
    CLI::App* prune_cmd = app.add_subcommand("prune", "score and prune a bundle's cloud");
    prune_cmd->add_option("--bundle", prune.bundle, "scene bundle directory")->required();
    prune_cmd->add_option("--out", prune.out, "output directory")->required();
    prune_cmd->add_option("--fractions", prune.fractions, "prune fractions, e.g. 0.8,0.3")
        ->delimiter(',');
    prune_cmd->add_option("--iterations", prune.iterations, "schedule iterations, e.g. 15000,25000")
        ->delimiter(',');
    prune_cmd->add_flag("--asp,!--no-asp", prune.asp, "timestamp noise annealing (default on)");
    prune_cmd->add_option("--beta", prune.beta, "noise scale")->capture_default_str();
    prune_cmd->add_option("--tau", prune.tau, "noise decay iteration")->capture_default_str();
    prune_cmd->add_option("--finetune-iters", prune.finetune_iters,
                          "color/opacity recovery steps after pruning")
        ->capture_default_str();
    prune_cmd->add_option("--finetune-lr", prune.finetune_lr, "recovery learning rate")
        ->capture_default_str();
    prune_cmd->add_option("--ssim-weight", prune.ssim_weight, "recovery loss SSIM weight")
        ->capture_default_str();
    prune_cmd->add_option("--seed", prune.seed, "noise seed")->capture_default_str();
    prune_cmd->add_option("--threads", prune.threads, "worker threads (0 = SPEEDE_THREADS or 1)");

    GroupArgs group;
    CLI::App* group_cmd = app.add_subcommand("group", "fit a grouped rigid motion model");
    group_cmd->add_option("--bundle", group.bundle, "scene bundle directory")->required();
    group_cmd->add_option("--out", group.out, "output directory")->required();
    group_cmd->add_option("--ply", group.ply, "cloud override (.ply), e.g. a pruned model");
    group_cmd->add_option("--traj", group.traj, "trajectory override (.traj)");
    group_cmd->add_option("--groups", group.groups, "control point count J")
        ->capture_default_str();
    group_cmd->add_option("--lambda-r", group.lambda_r, "similarity std/mean weight")
        ->capture_default_str();
    group_cmd->add_option("--n-max", group.n_max, "rigid-fit sample cap per group")
        ->capture_default_str();
    group_cmd->add_option("--refine-iters", group.refine_iters, "trajectory refinement steps")
        ->capture_default_str();
    group_cmd->add_option("--refine-step", group.refine_step, "refinement step size")
        ->capture_default_str();
    group_cmd->add_option("--variant", group.variant, "flow application variant")
        ->check(CLI::IsMember({"base", "rot", "lbs"}))
        ->capture_default_str();
    group_cmd->add_option("--k", group.k_neighbors, "blend-skinning neighbor count")
        ->capture_default_str();
    group_cmd->add_option("--seed", group.seed, "sampling seed")->capture_default_str();
    group_cmd->add_option("--threads", group.threads, "worker threads (0 = SPEEDE_THREADS or 1)");

    DeformArgs deform;
    CLI::App* deform_cmd =
        app.add_subcommand("deform", "bake a model's deformation at a time into a .ply");
    deform_cmd->add_option("--bundle", deform.bundle, "scene bundle directory")->required();
    deform_cmd->add_option("--out", deform.out, "output directory")->required();
    add_model_flags(deform_cmd, deform.model);
    deform_cmd->add_option("--t", deform.t, "timestamp in [0, 1]")->capture_default_str();
    deform_cmd->add_option("--threads", deform.threads,
                           "worker threads (0 = SPEEDE_THREADS or 1)");

    RenderArgs render;
    CLI::App* render_cmd = app.add_subcommand("render", "render one view of a model");
    render_cmd->add_option("--bundle", render.bundle, "scene bundle directory")->required();
    render_cmd->add_option("--out", render.out, "output directory")->required();
    add_model_flags(render_cmd, render.model);
    render_cmd->add_option("--views", render.views, "view list to pick from")
        ->check(CLI::IsMember({"train", "test"}))
        ->capture_default_str();
    render_cmd->add_option("--index", render.index, "view index")->capture_default_str();
    render_cmd->add_option("--t", render.t_override, "timestamp override (default: the view's)");
    render_cmd->add_option("--threads", render.threads,
                           "worker threads (0 = SPEEDE_THREADS or 1)");

    EvalArgs eval;
    CLI::App* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM of a model against ground truth");
    eval_cmd->add_option("--bundle", eval.bundle, "scene bundle directory")->required();
    eval_cmd->add_option("--out", eval.out, "output directory")->required();
    add_model_flags(eval_cmd, eval.model);
    eval_cmd->add_option("--views", eval.views, "view list to evaluate")
        ->check(CLI::IsMember({"train", "test"}))
        ->capture_default_str();
    eval_cmd->add_option("--runs", eval.runs, "independent evaluation repeats")
        ->capture_default_str();
    eval_cmd->add_option("--seed", eval.seed, "recorded seed")->capture_default_str();
    eval_cmd->add_option("--threads", eval.threads, "worker threads (0 = SPEEDE_THREADS or 1)");

    BenchArgs bench;
    CLI::App* bench_cmd = app.add_subcommand("bench", "FPS/size/quality table for models");
    bench_cmd->add_option("--bundle", bench.bundle, "scene bundle directory")->required();
    bench_cmd->add_option("--out", bench.out, "output directory")->required();
    bench_cmd->add_option("--model", bench.models,
                          "extra row: NAME=model.ply[:model.gflw|model.traj] (repeatable)");
    bench_cmd->add_option("--views", bench.views, "view list to time")
        ->check(CLI::IsMember({"train", "test"}))
        ->capture_default_str();
    bench_cmd->add_option("--warmup", bench.warmup, "untimed warmup passes")
        ->capture_default_str();
    bench_cmd->add_option("--iters", bench.iters, "timed passes")->capture_default_str();
    bench_cmd->add_option("--seed", bench.seed, "recorded seed")->capture_default_str();
    bench_cmd->add_option("--threads", bench.threads, "worker threads (0 = SPEEDE_THREADS or 1)");

    SweepArgs sweep;
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "quality/size/FPS across group counts");
    sweep_cmd->add_option("--bundle", sweep.bundle, "scene bundle directory")->required();
    sweep_cmd->add_option("--out", sweep.out, "output directory")->required();
    sweep_cmd->add_option("--groups-list", sweep.groups_list, "group counts, e.g. 5,10,20,50")
        ->delimiter(',');
    sweep_cmd->add_option("--lambda-r", sweep.lambda_r, "similarity std/mean weight")
        ->capture_default_str();
    sweep_cmd->add_option("--n-max", sweep.n_max, "rigid-fit sample cap per group")
        ->capture_default_str();
    sweep_cmd->add_option("--refine-iters", sweep.refine_iters, "trajectory refinement steps")
        ->capture_default_str();
    sweep_cmd->add_option("--refine-step", sweep.refine_step, "refinement step size")
        ->capture_default_str();
    sweep_cmd->add_option("--views", sweep.views, "view list to evaluate")
        ->check(CLI::IsMember({"train", "test"}))
        ->capture_default_str();
    sweep_cmd->add_option("--warmup", sweep.warmup, "untimed warmup passes")
        ->capture_default_str();
    sweep_cmd->add_option("--iters", sweep.iters, "timed passes")->capture_default_str();
    sweep_cmd->add_option("--seed", sweep.seed, "sampling seed")->capture_default_str();
    sweep_cmd->add_option("--threads", sweep.threads, "worker threads (0 = SPEEDE_THREADS or 1)");

    synth_cmd->callback([&] {
        synth.seed_set = synth_seed->count() > 0;
        cmd_synth(synth);
    });
    prune_cmd->callback([&] { cmd_prune(prune); });
    group_cmd->callback([&] { cmd_group(group); });
    deform_cmd->callback([&] { cmd_deform(deform); });
    render_cmd->callback([&] { cmd_render(render); });
    eval_cmd->callback([&] { cmd_eval(eval); });
    bench_cmd->callback([&] { cmd_bench(bench); });
    sweep_cmd->callback([&] { cmd_sweep(sweep); });

    try {
        std::vector<std::string> argv_store;
        argv_store.reserve(args.size() + 1);
        argv_store.push_back("speede");
        argv_store.insert(argv_store.end(), args.begin(), args.end());
        std::vector<char*> argv;
        argv.reserve(argv_store.size());
        for (std::string& s : argv_store) argv.push_back(s.data());
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);  // prints the help text
        return 0;
    } catch (const CLI::ParseError& e) {
        if (rethrow) throw ConfigError(std::string("usage: ") + e.what());
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        if (rethrow) throw;
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        if (rethrow) throw;
        std::cerr << "io error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        if (rethrow) throw;
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) { return run_impl(args, false); }

void run_cli_or_throw(const std::vector<std::string>& args) { run_impl(args, true); }

}  // namespace speede
