#include "speede/scene_synth.hpp"

#include <json.hpp>

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "speede/binio.hpp"
#include "speede/errors.hpp"
#include "speede/mathutil.hpp"
#include "speede/render.hpp"
#include "speede/rng.hpp"
#include "speede/toml_lite.hpp"

namespace speede {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Sub-stream tags for the per-purpose generators derived from the scene seed.
enum : std::uint64_t {
    kStreamCloud = 1,
    kStreamMotion = 2,
    kStreamTrajNoise = 3,
    kStreamPoseJitter = 4,
};

Eigen::Vector3d random_unit(Rng& rng) {
    while (true) {
        const Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
        const double n = v.norm();
        if (n > 1e-9) return v / n;
    }
}

Eigen::Vector3d hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp)) {
        case 0: r = c; g = x; break;
        case 1: r = x; g = c; break;
        case 2: g = c; b = x; break;
        case 3: g = x; b = c; break;
        case 4: r = x; b = c; break;
        default: r = c; b = x; break;
    }
    const double m = v - c;
    return {r + m, g + m, b + m};
}

// World-to-camera look-at with +z forward and image y growing downward.
TrainingView look_at(const Eigen::Vector3d& position, double focal, int size, double timestamp) {
    const Eigen::Vector3d forward = (-position).normalized();  // toward the origin
    Eigen::Vector3d up(0, 0, 1);
    if (std::abs(forward.dot(up)) > 0.99) up = Eigen::Vector3d(0, 1, 0);
    const Eigen::Vector3d right = up.cross(forward).normalized();
    const Eigen::Vector3d down = forward.cross(right);

    TrainingView v;
    v.rotation.row(0) = right;
    v.rotation.row(1) = down;
    v.rotation.row(2) = forward;
    v.translation = -(v.rotation * position);
    v.fx = focal;
    v.fy = focal;
    v.cx = size / 2.0;
    v.cy = size / 2.0;
    v.width = size;
    v.height = size;
    v.timestamp = timestamp;
    return v;
}

std::string frame_name(const char* prefix, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frames/%s_%04zu.png", prefix, index);
    return buf;
}

void emit_vector(std::ostringstream& out, const char* key, const Eigen::Vector3d& v) {
    out << key << " = [" << v[0] << ", " << v[1] << ", " << v[2] << "]\n";
}

Eigen::Vector3d vector_from(const toml_lite::Value& value, const std::string& key) {
    const std::vector<double> a = value.as_double_array();
    if (a.size() != 3) throw ConfigError(key + " must have exactly three entries");
    return {a[0], a[1], a[2]};
}

void write_labels(const std::vector<std::uint32_t>& labels, const std::string& path) {
    nlohmann::json doc = nlohmann::json::array();
    for (const std::uint32_t l : labels) doc.push_back(l);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write: " + path);
    out << doc.dump() << "\n";
}

std::vector<std::uint32_t> read_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad JSON in " + path + ": " + e.what());
    }
    if (!doc.is_array()) throw IoError(path + ": expected a JSON array of cluster ids");
    std::vector<std::uint32_t> labels;
    labels.reserve(doc.size());
    for (const auto& v : doc) {
        if (!v.is_number_unsigned()) throw IoError(path + ": labels must be non-negative integers");
        labels.push_back(v.get<std::uint32_t>());
    }
    return labels;
}

}  // namespace

void SceneSpec::check() const {
    if (n_gaussians < 1) throw ConfigError("scene: n_gaussians must be positive");
    if (n_clusters < 1) throw ConfigError("scene: n_clusters must be positive");
    if (n_gaussians < n_clusters)
        throw ConfigError("scene: need at least one Gaussian per cluster");
    if (n_frames < 2) throw ConfigError("scene: n_frames must be at least 2");
    if (n_views < 1) throw ConfigError("scene: n_views must be positive");
    if (n_test_views < 1) throw ConfigError("scene: n_test_views must be positive");
    if (image_size < 8) throw ConfigError("scene: image_size must be at least 8");
    if (!(cluster_radius > 0.0)) throw ConfigError("scene: cluster_radius must be positive");
    if (noise < 0.0) throw ConfigError("scene: noise must be non-negative");
    if (pose_jitter_rot < 0.0 || pose_jitter_trans < 0.0)
        throw ConfigError("scene: pose jitter must be non-negative");
    if (motion_speed < 0.0 || motion_rate < 0.0)
        throw ConfigError("scene: motion magnitudes must be non-negative");
    if (!(scale_min > 0.0) || scale_max < scale_min)
        throw ConfigError("scene: need 0 < scale_min <= scale_max");
    if (!(opacity_min > 0.0) || !(opacity_max < 1.0) || opacity_max < opacity_min)
        throw ConfigError("scene: need 0 < opacity_min <= opacity_max < 1");
    for (int a = 0; a < 3; ++a)
        if (background[a] < 0.0 || background[a] > 1.0)
            throw ConfigError("scene: background must lie in [0, 1]");
    if (!motion.empty() && motion.size() != static_cast<std::size_t>(n_clusters))
        throw ConfigError("scene: motion override must list one curve per cluster");
}

Scene make_scene(const SceneSpec& spec) {
    spec.check();
    Scene scene;
    scene.spec = spec;
    const Rng root(spec.seed);
    const std::size_t n = static_cast<std::size_t>(spec.n_gaussians);
    const std::size_t clusters = static_cast<std::size_t>(spec.n_clusters);

    // cluster centers on a ring, adjacent centers twelve radii apart: far
    // enough that tail samples plus a full unit of drift cannot blur the
    // ground-truth grouping
    std::vector<Eigen::Vector3d> centers(clusters);
    if (clusters == 1) {
        centers[0] = Eigen::Vector3d::Zero();
    } else {
        const double ring =
            12.0 * spec.cluster_radius / (2.0 * std::sin(kPi / static_cast<double>(clusters)));
        for (std::size_t c = 0; c < clusters; ++c) {
            const double angle = 2.0 * kPi * static_cast<double>(c) / static_cast<double>(clusters);
            centers[c] = Eigen::Vector3d(ring * std::cos(angle), ring * std::sin(angle), 0.0);
        }
    }

    // per-cluster rigid curves, identity at t = 0
    std::vector<Se3Curve> curves = spec.motion;
    if (curves.empty()) {
        Rng rng = root.fork(kStreamMotion);
        curves.resize(clusters);
        for (std::size_t c = 0; c < clusters; ++c) {
            curves[c].velocity = spec.motion_speed * rng.uniform(0.5, 1.0) * random_unit(rng);
            curves[c].axis = random_unit(rng);
            curves[c].rate = spec.motion_rate * rng.uniform(-1.0, 1.0);
            curves[c].pivot = centers[c];
        }
    }
    scene.spec.motion = curves;  // resolved spec round-trips to the same scene

    // Gaussians interleaved across clusters; golden-ratio hues keep cluster
    // colors distinct for any cluster count
    {
        Rng rng = root.fork(kStreamCloud);
        GaussianCloud& cloud = scene.cloud;
        cloud.sh_coeff_count = 1;
        cloud.means.resize(3 * n);
        cloud.scales.resize(3 * n);
        cloud.rotations.resize(4 * n);
        cloud.opacities.resize(n);
        cloud.sh_colors.resize(3 * n);
        scene.labels.resize(n);
        const double log_min = std::log(spec.scale_min);
        const double log_max = std::log(spec.scale_max);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = i % clusters;
            scene.labels[i] = static_cast<std::uint32_t>(c);
            const Eigen::Vector3d p =
                centers[c] + spec.cluster_radius *
                                 Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
            const double hue = 0.61803398875 * static_cast<double>(c);
            const Eigen::Vector3d color =
                hsv_to_rgb(hue + 0.04 * rng.uniform(-1.0, 1.0), rng.uniform(0.55, 0.9),
                           rng.uniform(0.5, 0.95));
            Eigen::Vector4d quat(rng.normal(), rng.normal(), rng.normal(), rng.normal());
            if (quat.norm() < 1e-9) quat = Eigen::Vector4d(1, 0, 0, 0);
            quat.normalize();
            for (int a = 0; a < 3; ++a) {
                cloud.means[3 * i + a] = static_cast<float>(p[a]);
                cloud.scales[3 * i + a] = static_cast<float>(rng.uniform(log_min, log_max));
                cloud.sh_colors[3 * i + a] = static_cast<float>((color[a] - 0.5) / kShC0);
            }
            for (int a = 0; a < 4; ++a)
                cloud.rotations[4 * i + a] = static_cast<float>(quat[a]);
            cloud.opacities[i] =
                static_cast<float>(logit(rng.uniform(spec.opacity_min, spec.opacity_max)));
        }
        cloud.check_shapes();
    }

    scene.clean_field = analytic_field(curves, scene.labels);

    // frame timesteps span [0, 1]; trajectory jitter models an imperfect
    // deformation source but never touches the canonical frame
    std::vector<double> frame_ts(spec.n_frames);
    for (int k = 0; k < spec.n_frames; ++k)
        frame_ts[k] = static_cast<double>(k) / static_cast<double>(spec.n_frames - 1);
    scene.trajectories = sample_trajectories(*scene.clean_field, scene.cloud, frame_ts);
    if (spec.noise > 0.0) {
        Rng rng = root.fork(kStreamTrajNoise);
        const std::size_t frames = scene.trajectories.frames();
        for (std::size_t k = 0; k < scene.trajectories.positions.size(); ++k) {
            const std::size_t frame = (k / 3) % frames;
            if (frame != 0) scene.trajectories.positions[k] += spec.noise * rng.normal();
        }
        scene.field = sampled_field(scene.trajectories);
    } else {
        scene.field = scene.clean_field;
    }

    // cameras on a ring outside the scene, looking at the origin, cycling
    // through the frame timesteps
    const double scene_radius = (clusters == 1 ? 0.0 : centers[0].norm()) +
                                4.0 * spec.cluster_radius + spec.motion_speed + 0.5;
    const double cam_distance = 3.0 * scene_radius;
    const double focal =
        (static_cast<double>(spec.image_size) / 2.0) / std::tan(27.5 * kPi / 180.0);
    const auto ring_view = [&](double angle, double timestamp) {
        const Eigen::Vector3d position(cam_distance * std::cos(angle),
                                       cam_distance * std::sin(angle), 0.6 * cam_distance);
        return look_at(position, focal, spec.image_size, timestamp);
    };
    for (int v = 0; v < spec.n_views; ++v) {
        TrainingView view = ring_view(2.0 * kPi * v / spec.n_views, frame_ts[v % spec.n_frames]);
        view.image_path = frame_name("train", static_cast<std::size_t>(v));
        scene.nominal_train_views.push_back(view);
    }
    for (int v = 0; v < spec.n_test_views; ++v) {
        TrainingView view = ring_view(2.0 * kPi * (v + 0.5) / spec.n_test_views,
                                      frame_ts[v % spec.n_frames]);
        view.image_path = frame_name("test", static_cast<std::size_t>(v));
        scene.test_views.push_back(view);
    }
    scene.train_views = (spec.pose_jitter_rot > 0.0 || spec.pose_jitter_trans > 0.0)
                            ? jitter_poses(scene.nominal_train_views, spec.pose_jitter_rot,
                                           spec.pose_jitter_trans, spec.seed + kStreamPoseJitter)
                            : scene.nominal_train_views;
    return scene;
}

std::vector<TrainingView> jitter_poses(const std::vector<TrainingView>& views, double sigma_rot,
                                       double sigma_trans, std::uint64_t seed) {
    if (sigma_rot < 0.0 || sigma_trans < 0.0)
        throw ConfigError("jitter_poses: sigma must be non-negative");
    if (sigma_rot == 0.0 && sigma_trans == 0.0) return views;

    std::vector<TrainingView> out = views;
    const Rng root(seed);
    for (std::size_t v = 0; v < out.size(); ++v) {
        Rng rng = root.fork(v);
        if (sigma_rot > 0.0) {
            const Eigen::Vector3d axis = random_unit(rng);
            const double angle = sigma_rot * rng.normal();
            out[v].rotation =
                out[v].rotation * Eigen::AngleAxisd(angle, axis).toRotationMatrix();
        }
        if (sigma_trans > 0.0)
            out[v].translation +=
                sigma_trans * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    }
    return out;
}

std::vector<Image> render_ground_truth(const Scene& scene, const std::vector<TrainingView>& poses,
                                       int threads) {
    std::vector<Image> images;
    images.reserve(poses.size());
    for (const TrainingView& view : poses) {
        const FrameGaussians frame =
            prepare_frame(scene.cloud, scene.clean_field.get(), view.timestamp);
        images.push_back(render(frame, view, scene.spec.background, threads));
    }
    return images;
}

SceneSpec spec_from_toml_text(const std::string& text, const std::string& origin) {
    const toml_lite::Document doc = toml_lite::parse(text, origin);
    SceneSpec spec;
    for (const auto& [key, value] : doc.root) try {
        if (key == "n_gaussians") spec.n_gaussians = static_cast<int>(value.as_int());
        else if (key == "n_clusters") spec.n_clusters = static_cast<int>(value.as_int());
        else if (key == "n_frames") spec.n_frames = static_cast<int>(value.as_int());
        else if (key == "n_views") spec.n_views = static_cast<int>(value.as_int());
        else if (key == "n_test_views") spec.n_test_views = static_cast<int>(value.as_int());
        else if (key == "image_size") spec.image_size = static_cast<int>(value.as_int());
        else if (key == "cluster_radius") spec.cluster_radius = value.as_double();
        else if (key == "noise") spec.noise = value.as_double();
        else if (key == "pose_jitter_rot") spec.pose_jitter_rot = value.as_double();
        else if (key == "pose_jitter_trans") spec.pose_jitter_trans = value.as_double();
        else if (key == "motion_speed") spec.motion_speed = value.as_double();
        else if (key == "motion_rate") spec.motion_rate = value.as_double();
        else if (key == "scale_min") spec.scale_min = value.as_double();
        else if (key == "scale_max") spec.scale_max = value.as_double();
        else if (key == "opacity_min") spec.opacity_min = value.as_double();
        else if (key == "opacity_max") spec.opacity_max = value.as_double();
        else if (key == "background") spec.background = vector_from(value, "background");
        else if (key == "seed") spec.seed = static_cast<std::uint64_t>(value.as_int());
        else throw ConfigError(origin + ": unknown scene key: " + key);
    } catch (const ConfigError& e) {
        if (std::string(e.what()).rfind(origin, 0) == 0) throw;
        throw ConfigError(origin + ": key \"" + key + "\": " + e.what());
    }
    if (const auto it = doc.table_arrays.find("motion"); it != doc.table_arrays.end()) {
        for (std::size_t c = 0; c < it->second.size(); ++c) {
            const toml_lite::Table& t = it->second[c];
            Se3Curve curve;
            for (const auto& [key, value] : t) try {
                if (key == "velocity") curve.velocity = vector_from(value, "velocity");
                else if (key == "axis") curve.axis = vector_from(value, "axis");
                else if (key == "rate") curve.rate = value.as_double();
                else if (key == "pivot") curve.pivot = vector_from(value, "pivot");
                else throw ConfigError(origin + ": unknown motion key: " + key);
            } catch (const ConfigError& e) {
                if (std::string(e.what()).rfind(origin, 0) == 0) throw;
                throw ConfigError(origin + ": motion key \"" + key + "\": " + e.what());
            }
            spec.motion.push_back(curve);
        }
    }
    spec.check();
    return spec;
}

SceneSpec spec_from_toml(const std::string& path) {
    return spec_from_toml_text(read_binary_file(path), path);
}

std::string spec_to_toml(const SceneSpec& spec) {
    std::ostringstream out;
    out.precision(17);
    out << "n_gaussians = " << spec.n_gaussians << "\n";
    out << "n_clusters = " << spec.n_clusters << "\n";
    out << "n_frames = " << spec.n_frames << "\n";
    out << "n_views = " << spec.n_views << "\n";
    out << "n_test_views = " << spec.n_test_views << "\n";
    out << "image_size = " << spec.image_size << "\n";
    out << "cluster_radius = " << spec.cluster_radius << "\n";
    out << "noise = " << spec.noise << "\n";
    out << "pose_jitter_rot = " << spec.pose_jitter_rot << "\n";
    out << "pose_jitter_trans = " << spec.pose_jitter_trans << "\n";
    out << "motion_speed = " << spec.motion_speed << "\n";
    out << "motion_rate = " << spec.motion_rate << "\n";
    out << "scale_min = " << spec.scale_min << "\n";
    out << "scale_max = " << spec.scale_max << "\n";
    out << "opacity_min = " << spec.opacity_min << "\n";
    out << "opacity_max = " << spec.opacity_max << "\n";
    emit_vector(out, "background", spec.background);
    out << "seed = " << spec.seed << "\n";
    for (const Se3Curve& curve : spec.motion) {
        out << "\n[[motion]]\n";
        emit_vector(out, "velocity", curve.velocity);
        emit_vector(out, "axis", curve.axis);
        out << "rate = " << curve.rate << "\n";
        emit_vector(out, "pivot", curve.pivot);
    }
    return out.str();
}

void save_bundle(const Scene& scene, const std::string& dir, int threads) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "frames", ec);
    if (ec) throw IoError("cannot create bundle directory: " + dir + ": " + ec.message());

    write_binary_file((fs::path(dir) / "scene.toml").string(), spec_to_toml(scene.spec));
    save_ply(scene.cloud, (fs::path(dir) / "cloud.ply").string());
    save_trajectories(scene.trajectories, (fs::path(dir) / "trajectories.traj").string());
    save_views(scene.train_views, (fs::path(dir) / "cameras.json").string());
    save_views(scene.test_views, (fs::path(dir) / "test_cameras.json").string());
    write_labels(scene.labels, (fs::path(dir) / "labels.json").string());

    // ground truth comes from the clean motion at the nominal poses: the
    // stored cameras may carry jittered extrinsics on purpose
    const std::vector<Image> train = render_ground_truth(scene, scene.nominal_train_views, threads);
    for (std::size_t v = 0; v < train.size(); ++v)
        write_png(train[v], (fs::path(dir) / scene.train_views[v].image_path).string());
    const std::vector<Image> test = render_ground_truth(scene, scene.test_views, threads);
    for (std::size_t v = 0; v < test.size(); ++v)
        write_png(test[v], (fs::path(dir) / scene.test_views[v].image_path).string());
}

std::vector<Image> Bundle::load_images(const std::vector<TrainingView>& views) const {
    namespace fs = std::filesystem;
    std::vector<Image> images;
    images.reserve(views.size());
    for (const TrainingView& view : views) {
        if (view.image_path.empty()) throw IoError("view has no ground-truth image path");
        images.push_back(read_png((fs::path(dir) / view.image_path).string()));
    }
    return images;
}

Bundle load_bundle(const std::string& dir) {
    namespace fs = std::filesystem;
    Bundle bundle;
    bundle.dir = dir;
    bundle.cloud = load_ply((fs::path(dir) / "cloud.ply").string());
    bundle.trajectories = load_trajectories((fs::path(dir) / "trajectories.traj").string());
    bundle.train_views = load_views((fs::path(dir) / "cameras.json").string());
    bundle.test_views = load_views((fs::path(dir) / "test_cameras.json").string());
    bundle.labels = read_labels((fs::path(dir) / "labels.json").string());

    if (bundle.trajectories.count != bundle.cloud.size())
        throw IoError(dir + ": trajectory count does not match the cloud");
    if (bundle.labels.size() != bundle.cloud.size())
        throw IoError(dir + ": label count does not match the cloud");
    TrajectorySet traj = bundle.trajectories;
    bundle.field = sampled_field(std::move(traj));
    return bundle;
}

}  // namespace speede
