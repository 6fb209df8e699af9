#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "speede/binio.hpp"
#include "speede/cli.hpp"
#include "speede/deformation.hpp"
#include "speede/errors.hpp"
#include "speede/gaussian_cloud.hpp"
#include "speede/groupflow.hpp"
#include "speede/image.hpp"
#include "speede/metrics.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

py::object to_py(const json& j) {
    switch (j.type()) {
        case json::value_t::null:
            return py::none();
        case json::value_t::boolean:
            return py::bool_(j.get<bool>());
        case json::value_t::number_integer:
            return py::int_(j.get<std::int64_t>());
        case json::value_t::number_unsigned:
            return py::int_(j.get<std::uint64_t>());
        case json::value_t::number_float:
            return py::float_(j.get<double>());
        case json::value_t::string:
            return py::str(j.get<std::string>());
        case json::value_t::array: {
            py::list list;
            for (const json& item : j) list.append(to_py(item));
            return list;
        }
        case json::value_t::object: {
            py::dict dict;
            for (const auto& [key, value] : j.items()) dict[py::str(key)] = to_py(value);
            return dict;
        }
        default:
            return py::none();
    }
}

// Numbers are forwarded as JSON literals so the flag parser recovers the
// exact double the caller passed.
std::string num(double v) { return json(v).dump(); }
std::string num(long v) { return std::to_string(v); }
std::string num(std::uint64_t v) { return std::to_string(v); }
std::string num(int v) { return std::to_string(v); }

template <typename T>
std::string join_list(const std::vector<T>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ",";
        out += num(values[i]);
    }
    return out;
}

void append_threads(std::vector<std::string>& args, int threads) {
    if (threads > 0) {
        args.push_back("--threads");
        args.push_back(num(threads));
    }
}

py::object report_of(const std::vector<std::string>& args, const std::string& out,
                     const std::string& report_name) {
    speede::run_cli_or_throw(args);
    const std::string path = (std::filesystem::path(out) / report_name).string();
    return to_py(json::parse(speede::read_binary_file(path)));
}

std::string py_synth(const std::string& spec, const std::string& out,
                     std::optional<std::uint64_t> seed, int threads) {
    std::vector<std::string> args = {"synth", "--spec", spec, "--out", out};
    if (seed) {
        args.push_back("--seed");
        args.push_back(num(*seed));
    }
    append_threads(args, threads);
    speede::run_cli_or_throw(args);
    return out;
}

py::object py_prune(const std::string& bundle, const std::string& out,
                    std::optional<std::vector<double>> fractions,
                    std::optional<std::vector<long>> iterations, bool asp, double beta, long tau,
                    int finetune_iters, double finetune_lr, double ssim_weight,
                    std::uint64_t seed, int threads) {
    std::vector<std::string> args = {"prune", "--bundle", bundle, "--out", out};
    if (fractions) {
        args.push_back("--fractions");
        args.push_back(join_list(*fractions));
    }
    if (iterations) {
        args.push_back("--iterations");
        args.push_back(join_list(*iterations));
    }
    args.push_back(asp ? "--asp" : "--no-asp");
    args.insert(args.end(), {"--beta", num(beta), "--tau", num(tau), "--finetune-iters",
                             num(finetune_iters), "--finetune-lr", num(finetune_lr),
                             "--ssim-weight", num(ssim_weight), "--seed", num(seed)});
    append_threads(args, threads);
    return report_of(args, out, "report.json");
}

py::object py_group(const std::string& bundle, const std::string& out, std::size_t groups,
                    double lambda_r, std::size_t n_max, int refine_iters, double refine_step,
                    const std::string& ply, const std::string& traj, std::uint64_t seed,
                    int threads) {
    std::vector<std::string> args = {"group",      "--bundle",
                                     bundle,       "--out",
                                     out,          "--groups",
                                     num(groups),  "--lambda-r",
                                     num(lambda_r), "--n-max",
                                     num(n_max),   "--refine-iters",
                                     num(refine_iters), "--refine-step",
                                     num(refine_step), "--seed",
                                     num(seed)};
    if (!ply.empty()) args.insert(args.end(), {"--ply", ply});
    if (!traj.empty()) args.insert(args.end(), {"--traj", traj});
    append_threads(args, threads);
    return report_of(args, out, "report.json");
}

py::object py_eval(const std::string& bundle, const std::string& out, const std::string& views,
                   int runs, const std::string& ply, const std::string& flow,
                   const std::string& traj, const std::string& variant, std::size_t k,
                   int threads) {
    std::vector<std::string> args = {"eval", "--bundle", bundle,   "--out",     out,
                                     "--views", views,   "--runs", num(runs),   "--variant",
                                     variant,   "--k",   num(k)};
    if (!ply.empty()) args.insert(args.end(), {"--ply", ply});
    if (!flow.empty()) args.insert(args.end(), {"--flow", flow});
    if (!traj.empty()) args.insert(args.end(), {"--traj", traj});
    append_threads(args, threads);
    return report_of(args, out, "quality.json");
}

py::object py_bench(const std::string& bundle, const std::string& out,
                    const std::vector<std::string>& models, const std::string& views, int warmup,
                    int iters, std::uint64_t seed, int threads) {
    std::vector<std::string> args = {"bench",   "--bundle", bundle,    "--out",  out,
                                     "--views", views,      "--warmup", num(warmup),
                                     "--iters", num(iters), "--seed",  num(seed)};
    for (const std::string& model : models) args.insert(args.end(), {"--model", model});
    append_threads(args, threads);
    return report_of(args, out, "bench.json");
}

py::object py_sweep(const std::string& bundle, const std::string& out,
                    const std::vector<std::size_t>& groups_list, double lambda_r,
                    std::size_t n_max, const std::string& views, int warmup, int iters,
                    std::uint64_t seed, int threads) {
    std::vector<std::string> args = {"sweep",        "--bundle",
                                     bundle,         "--out",
                                     out,            "--groups-list",
                                     join_list(groups_list), "--lambda-r",
                                     num(lambda_r),  "--n-max",
                                     num(n_max),     "--views",
                                     views,          "--warmup",
                                     num(warmup),    "--iters",
                                     num(iters),     "--seed",
                                     num(seed)};
    append_threads(args, threads);
    return report_of(args, out, "sweep.json");
}

std::string py_render(const std::string& bundle, const std::string& out,
                      const std::string& views, std::size_t index, double t,
                      const std::string& ply, const std::string& flow, const std::string& traj,
                      int threads) {
    std::vector<std::string> args = {"render", "--bundle", bundle,     "--out", out,
                                     "--views", views,     "--index", num(index)};
    if (t >= 0.0) args.insert(args.end(), {"--t", num(t)});
    if (!ply.empty()) args.insert(args.end(), {"--ply", ply});
    if (!flow.empty()) args.insert(args.end(), {"--flow", flow});
    if (!traj.empty()) args.insert(args.end(), {"--traj", traj});
    append_threads(args, threads);
    speede::run_cli_or_throw(args);
    return (std::filesystem::path(out) / "render.png").string();
}

double py_psnr_png(const std::string& a, const std::string& b) {
    return speede::psnr(speede::read_png(a), speede::read_png(b));
}

double py_ssim_png(const std::string& a, const std::string& b) {
    return speede::ssim(speede::read_png(a), speede::read_png(b));
}

py::dict py_ply_info(const std::string& path) {
    const speede::GaussianCloud cloud = speede::load_ply(path);
    py::dict info;
    info["gaussians"] = cloud.size();
    info["sh_degree"] = cloud.sh_degree();
    info["sh_coeffs"] = cloud.sh_coeff_count;
    info["bytes"] = speede::serialize_ply(cloud).size();
    return info;
}

py::dict py_flow_info(const std::string& path) {
    const speede::GroupFlowModel model = speede::load_flow(path);
    py::dict info;
    info["groups"] = model.groups();
    info["frames"] = model.frames();
    info["gaussians"] = model.gaussians();
    info["lambda_r"] = model.lambda_r;
    info["timesteps"] = model.timesteps;
    info["param_floats"] = speede::flow_param_count(model.groups(), model.frames());
    return info;
}

py::dict py_traj_info(const std::string& path) {
    const speede::TrajectorySet traj = speede::load_trajectories(path);
    py::dict info;
    info["gaussians"] = traj.count;
    info["frames"] = traj.frames();
    info["timesteps"] = traj.timesteps;
    return info;
}

}  // namespace

PYBIND11_MODULE(_speede, m) {
    m.doc() = "desk-scale toolkit for accelerating deformable 3D gaussian splatting";
    m.attr("__version__") = "0.1.0";

    py::register_exception<speede::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<speede::IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<speede::ValidationError>(m, "ValidationError", PyExc_ValueError);

    m.def("run", &speede::run_cli, py::arg("args"),
          "Run a CLI command in-process; returns the exit code.");

    m.def("synth", &py_synth, py::arg("spec"), py::arg("out"), py::arg("seed") = py::none(),
          py::arg("threads") = 0, "Generate a synthetic scene bundle; returns the bundle dir.");

    m.def("prune", &py_prune, py::arg("bundle"), py::arg("out"),
          py::arg("fractions") = py::none(), py::arg("iterations") = py::none(),
          py::arg("asp") = true, py::arg("beta") = 0.1, py::arg("tau") = 20000L,
          py::arg("finetune_iters") = 0, py::arg("finetune_lr") = 0.05,
          py::arg("ssim_weight") = 0.2, py::arg("seed") = 0, py::arg("threads") = 0,
          "Score and prune a bundle's cloud; returns the report.");

    m.def("group", &py_group, py::arg("bundle"), py::arg("out"), py::arg("groups") = 200,
          py::arg("lambda_r") = 0.5, py::arg("n_max") = 100, py::arg("refine_iters") = 0,
          py::arg("refine_step") = 1e-3, py::arg("ply") = "", py::arg("traj") = "",
          py::arg("seed") = 0, py::arg("threads") = 0,
          "Fit a grouped rigid motion model; returns the report.");

    m.def("evaluate", &py_eval, py::arg("bundle"), py::arg("out"), py::arg("views") = "test",
          py::arg("runs") = 1, py::arg("ply") = "", py::arg("flow") = "", py::arg("traj") = "",
          py::arg("variant") = "base", py::arg("k") = 1, py::arg("threads") = 0,
          "PSNR/SSIM of a model against the bundle's ground truth; returns the report.");

    m.def("bench", &py_bench, py::arg("bundle"), py::arg("out"),
          py::arg("models") = std::vector<std::string>{}, py::arg("views") = "test",
          py::arg("warmup") = 1, py::arg("iters") = 5, py::arg("seed") = 0,
          py::arg("threads") = 0, "FPS/size/quality table for models; returns the report.");

    m.def("sweep", &py_sweep, py::arg("bundle"), py::arg("out"),
          py::arg("groups_list") = std::vector<std::size_t>{5, 10, 20, 50},
          py::arg("lambda_r") = 0.5, py::arg("n_max") = 100, py::arg("views") = "test",
          py::arg("warmup") = 1, py::arg("iters") = 3, py::arg("seed") = 0,
          py::arg("threads") = 0, "Quality/size/FPS across group counts; returns the report.");

    m.def("render", &py_render, py::arg("bundle"), py::arg("out"), py::arg("views") = "train",
          py::arg("index") = 0, py::arg("t") = -1.0, py::arg("ply") = "", py::arg("flow") = "",
          py::arg("traj") = "", py::arg("threads") = 0,
          "Render one view of a model; returns the written PNG path.");

    m.def("psnr_png", &py_psnr_png, py::arg("a"), py::arg("b"),
          "PSNR between two PNG files, in dB (capped at 99).");
    m.def("ssim_png", &py_ssim_png, py::arg("a"), py::arg("b"),
          "Mean SSIM between two PNG files.");
    m.def("ply_info", &py_ply_info, py::arg("path"), "Shape summary of a .ply model.");
    m.def("flow_info", &py_flow_info, py::arg("path"), "Shape summary of a .gflw model.");
    m.def("traj_info", &py_traj_info, py::arg("path"), "Shape summary of a .traj file.");
}
