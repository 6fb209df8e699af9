#include "speede/groupflow.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "speede/binio.hpp"
#include "speede/errors.hpp"
#include "speede/mathutil.hpp"
#include "speede/metrics.hpp"
#include "speede/parallel.hpp"

namespace speede {

namespace {

constexpr char kFlowMagic[] = "GFLW1";
constexpr double kRotationTol = 1e-6;

std::vector<Eigen::Vector3d> trajectory_row(const TrajectorySet& traj, std::size_t i) {
    std::vector<Eigen::Vector3d> row(traj.frames());
    for (std::size_t k = 0; k < traj.frames(); ++k) row[k] = traj.position(i, k);
    return row;
}

std::vector<std::vector<std::uint32_t>> group_members(
    const std::vector<std::uint32_t>& assignment, std::size_t groups) {
    std::vector<std::vector<std::uint32_t>> members(groups);
    for (std::uint32_t i = 0; i < assignment.size(); ++i)
        members[assignment[i]].push_back(i);
    return members;
}

}  // namespace

Eigen::Matrix3d GroupFlowModel::rotation(std::size_t frame, std::size_t j) const {
    const std::size_t base = (frame * groups() + j) * 9;
    Eigen::Matrix3d rot;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) rot(r, c) = rotations[base + 3 * r + c];
    return rot;
}

void GroupFlowModel::set_rotation(std::size_t frame, std::size_t j, const Eigen::Matrix3d& rot) {
    const std::size_t base = (frame * groups() + j) * 9;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) rotations[base + 3 * r + c] = rot(r, c);
}

void GroupFlowModel::check() const {
    const std::size_t j_count = groups();
    const std::size_t f_count = frames();
    if (j_count == 0) throw ValidationError("flow model: no groups");
    if (control_points.size() != 3 * j_count)
        throw ValidationError("flow model: control point array length is not a multiple of 3");
    if (f_count == 0) throw ValidationError("flow model: no timesteps");
    if (rotations.size() != f_count * j_count * 9)
        throw ValidationError("flow model: rotation array has " +
                              std::to_string(rotations.size()) + " values, expected " +
                              std::to_string(f_count * j_count * 9));
    if (translations.size() != f_count * j_count * 3)
        throw ValidationError("flow model: translation array has " +
                              std::to_string(translations.size()) + " values, expected " +
                              std::to_string(f_count * j_count * 3));
    if (lambda_r < 0.0 || lambda_r > 1.0)
        throw ValidationError("flow model: lambda_r outside [0, 1]");
    if (timesteps[0] != 0.0)
        throw ValidationError("flow model: first timestep must be the canonical frame t = 0");
    for (std::size_t k = 1; k < f_count; ++k)
        if (!(timesteps[k] > timesteps[k - 1]))
            throw ValidationError("flow model: timesteps must be strictly increasing");
    for (const double v : control_points)
        if (!std::isfinite(v)) throw ValidationError("flow model: non-finite control point");
    for (const double v : translations)
        if (!std::isfinite(v)) throw ValidationError("flow model: non-finite translation");
    for (const std::uint32_t a : assignment)
        if (a >= j_count)
            throw ValidationError("flow model: assignment references group " + std::to_string(a) +
                                  " of " + std::to_string(j_count));
    for (std::size_t f = 0; f < f_count; ++f) {
        for (std::size_t j = 0; j < j_count; ++j) {
            const Eigen::Matrix3d rot = rotation(f, j);
            if (!rot.allFinite()) throw ValidationError("flow model: non-finite rotation");
            const double ortho =
                (rot.transpose() * rot - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
            if (ortho > kRotationTol)
                throw ValidationError("flow model: rotation of frame " + std::to_string(f) +
                                      ", group " + std::to_string(j) +
                                      " leaves SO(3) (|R^T R - I| = " + std::to_string(ortho) +
                                      ")");
            if (rot.determinant() <= 0.0)
                throw ValidationError("flow model: rotation of frame " + std::to_string(f) +
                                      ", group " + std::to_string(j) + " is a reflection");
            if (f == 0) {
                if ((rot - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > kRotationTol ||
                    translation(0, j).cwiseAbs().maxCoeff() > kRotationTol)
                    throw ValidationError(
                        "flow model: canonical frame transforms must be the identity");
            }
        }
    }
}

std::vector<std::uint32_t> farthest_point_sample(const std::vector<Eigen::Vector3d>& points,
                                                 std::size_t count, std::uint64_t seed) {
    const std::size_t n = points.size();
    if (count > n)
        throw ConfigError("farthest_point_sample: asked for " + std::to_string(count) +
                          " samples from " + std::to_string(n) + " points");
    std::vector<std::uint32_t> selected;
    if (count == 0) return selected;
    selected.reserve(count);

    Rng rng(seed);
    const auto first = static_cast<std::uint32_t>(rng.below(n));
    selected.push_back(first);

    // min squared distance from each point to the selected set
    std::vector<double> min_d2(n);
    for (std::size_t i = 0; i < n; ++i) min_d2[i] = (points[i] - points[first]).squaredNorm();

    while (selected.size() < count) {
        std::uint32_t best = 0;
        double best_d2 = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (min_d2[i] > best_d2) {  // strict: ties keep the lowest index
                best_d2 = min_d2[i];
                best = static_cast<std::uint32_t>(i);
            }
        }
        selected.push_back(best);
        for (std::size_t i = 0; i < n; ++i)
            min_d2[i] = std::min(min_d2[i], (points[i] - points[best]).squaredNorm());
    }
    return selected;
}

double trajectory_similarity(const std::vector<Eigen::Vector3d>& traj_i,
                             const std::vector<Eigen::Vector3d>& traj_h, double lambda_r) {
    if (traj_i.size() != traj_h.size() || traj_i.empty())
        throw std::invalid_argument("trajectory_similarity: frame counts differ or are zero");
    const std::size_t f = traj_i.size();
    std::vector<double> dist(f);
    double mean = 0.0;
    for (std::size_t k = 0; k < f; ++k) {
        dist[k] = (traj_i[k] - traj_h[k]).norm();
        mean += dist[k];
    }
    mean /= static_cast<double>(f);
    double var = 0.0;
    for (const double d : dist) var += (d - mean) * (d - mean);
    var /= static_cast<double>(f);  // population normalization
    return lambda_r * std::sqrt(var) + (1.0 - lambda_r) * mean;
}

std::vector<std::uint32_t> assign_groups(const TrajectorySet& trajectories,
                                         const std::vector<std::uint32_t>& control_indices,
                                         double lambda_r, int threads) {
    if (control_indices.empty()) throw ConfigError("assign_groups: no control points");
    for (const std::uint32_t c : control_indices)
        if (c >= trajectories.count)
            throw ConfigError("assign_groups: control index " + std::to_string(c) +
                              " out of range");

    std::vector<std::vector<Eigen::Vector3d>> controls(control_indices.size());
    for (std::size_t j = 0; j < control_indices.size(); ++j)
        controls[j] = trajectory_row(trajectories, control_indices[j]);

    std::vector<std::uint32_t> assignment(trajectories.count);
    parallel_ranges(trajectories.count, 16, threads, [&](std::size_t, std::size_t begin,
                                                         std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const std::vector<Eigen::Vector3d> row = trajectory_row(trajectories, i);
            double best = std::numeric_limits<double>::infinity();
            std::uint32_t best_j = 0;
            for (std::size_t j = 0; j < controls.size(); ++j) {
                const double s = trajectory_similarity(row, controls[j], lambda_r);
                if (s < best) {  // strict: ties keep the lowest group index
                    best = s;
                    best_j = static_cast<std::uint32_t>(j);
                }
            }
            assignment[i] = best_j;
        }
    });
    return assignment;
}

RigidTransform fit_rigid(const TrajectorySet& trajectories,
                         const std::vector<std::uint32_t>& members, const Eigen::Vector3d& h0,
                         std::size_t frame, std::size_t n_max, Rng rng) {
    RigidTransform result;
    if (members.empty()) return result;

    // seeded subsample keeps large groups affordable; sorting keeps the
    // summation order canonical
    std::vector<std::uint32_t> used;
    if (members.size() > n_max) {
        const auto picks =
            rng.sample_without_replacement(static_cast<std::uint32_t>(members.size()),
                                           static_cast<std::uint32_t>(n_max));
        used.reserve(n_max);
        for (const std::uint32_t p : picks) used.push_back(members[p]);
        std::sort(used.begin(), used.end());
    } else {
        used = members;
    }

    const std::size_t m = used.size();
    Eigen::Vector3d src_centroid = Eigen::Vector3d::Zero();
    Eigen::Vector3d tgt_centroid = Eigen::Vector3d::Zero();
    for (const std::uint32_t i : used) {
        src_centroid += trajectories.position(i, 0) - h0;
        tgt_centroid += trajectories.position(i, frame) - h0;
    }
    src_centroid /= static_cast<double>(m);
    tgt_centroid /= static_cast<double>(m);

    if (m >= 3) {
        Eigen::Matrix3d cross = Eigen::Matrix3d::Zero();
        for (const std::uint32_t i : used) {
            const Eigen::Vector3d s = trajectories.position(i, 0) - h0 - src_centroid;
            const Eigen::Vector3d t = trajectories.position(i, frame) - h0 - tgt_centroid;
            cross += s * t.transpose();
        }
        const Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross,
                                                    Eigen::ComputeFullU | Eigen::ComputeFullV);
        const Eigen::Vector3d sv = svd.singularValues();
        // rank <= 1 (coincident or collinear points) leaves the rotation
        // under-determined: fall back to translation only
        if (sv[1] > 1e-12 * std::max(1.0, sv[0])) {
            Eigen::Matrix3d diag = Eigen::Matrix3d::Identity();
            if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) diag(2, 2) = -1.0;
            result.rotation = svd.matrixV() * diag * svd.matrixU().transpose();
        }
    }
    result.translation = tgt_centroid - result.rotation * src_centroid;
    return result;
}

RigidTransform group_transform_at(const GroupFlowModel& model, std::size_t j, double t) {
    const auto& ts = model.timesteps;
    RigidTransform result;
    std::size_t k1 = 0;
    if (t <= ts.front()) {
        result.rotation = model.rotation(0, j);
        result.translation = model.translation(0, j);
        return result;
    }
    if (t >= ts.back()) {
        result.rotation = model.rotation(ts.size() - 1, j);
        result.translation = model.translation(ts.size() - 1, j);
        return result;
    }
    const auto it = std::upper_bound(ts.begin(), ts.end(), t);
    k1 = static_cast<std::size_t>(it - ts.begin());
    const std::size_t k0 = k1 - 1;
    if (t == ts[k0]) {  // stored frame: return it exactly, no slerp round trip
        result.rotation = model.rotation(k0, j);
        result.translation = model.translation(k0, j);
        return result;
    }
    const double w = (t - ts[k0]) / (ts[k1] - ts[k0]);
    const Eigen::Vector4d q0 = matrix_to_quat(model.rotation(k0, j));
    const Eigen::Vector4d q1 = matrix_to_quat(model.rotation(k1, j));
    result.rotation = quat_to_matrix(quat_slerp(q0, q1, w));
    result.translation =
        (1.0 - w) * model.translation(k0, j) + w * model.translation(k1, j);
    return result;
}

std::vector<Eigen::Vector3d> apply_group_flow(const std::vector<Eigen::Vector3d>& canonical_means,
                                              const GroupFlowModel& model, double t) {
    if (canonical_means.size() != model.gaussians())
        throw std::invalid_argument("apply_group_flow: mean count does not match assignment");
    std::vector<RigidTransform> transforms(model.groups());
    for (std::size_t j = 0; j < model.groups(); ++j) transforms[j] = group_transform_at(model, j, t);

    std::vector<Eigen::Vector3d> out(canonical_means.size());
    for (std::size_t i = 0; i < canonical_means.size(); ++i) {
        const std::uint32_t j = model.assignment[i];
        out[i] = flow_point(transforms[j].rotation, transforms[j].translation, model.control(j),
                            canonical_means[i]);
    }
    return out;
}

double trajectory_loss(const GroupFlowModel& model, const TrajectorySet& trajectories) {
    if (trajectories.count != model.gaussians())
        throw std::invalid_argument("trajectory_loss: trajectory count does not match assignment");
    double loss = 0.0;
    for (std::size_t f = 0; f < model.frames(); ++f) {
        for (std::size_t i = 0; i < trajectories.count; ++i) {
            const std::uint32_t j = model.assignment[i];
            const Eigen::Vector3d predicted =
                flow_point(model.rotation(f, j), model.translation(f, j), model.control(j),
                           trajectories.position(i, 0));
            loss += (predicted - trajectories.position(i, f)).squaredNorm();
        }
    }
    return loss;
}

std::pair<Eigen::Vector3d, Eigen::Vector3d> refine_gradients(const GroupFlowModel& model,
                                                             const TrajectorySet& trajectories,
                                                             std::size_t j, std::size_t frame) {
    const Eigen::Matrix3d rot = model.rotation(frame, j);
    const Eigen::Vector3d trans = model.translation(frame, j);
    const Eigen::Vector3d h0 = model.control(j);
    Eigen::Vector3d grad_omega = Eigen::Vector3d::Zero();
    Eigen::Vector3d grad_t = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < trajectories.count; ++i) {
        if (model.assignment[i] != j) continue;
        const Eigen::Vector3d rotated = rot * (trajectories.position(i, 0) - h0);
        const Eigen::Vector3d residual = rotated + h0 + trans - trajectories.position(i, frame);
        // left-composed increment: d(exp(w) R v)/dw at w = 0 is -[Rv]x
        grad_omega += 2.0 * rotated.cross(residual);
        grad_t += 2.0 * residual;
    }
    return {grad_omega, grad_t};
}

GroupFlowModel refine_flows(const GroupFlowModel& model, const TrajectorySet& trajectories,
                            int iters, double step, int threads) {
    GroupFlowModel current = model;
    if (iters <= 0) return current;
    if (step <= 0.0) throw ConfigError("refine_flows: step must be positive");

    const std::size_t j_count = current.groups();
    const std::size_t f_count = current.frames();
    double loss = trajectory_loss(current, trajectories);

    std::vector<Eigen::Vector3d> grad_omega(j_count * f_count), grad_t(j_count * f_count);
    for (int it = 0; it < iters; ++it) {
        // frame 0 is pinned to the identity; gradients for frames 1..F-1
        parallel_chunks(j_count, threads, [&](std::size_t j) {
            for (std::size_t f = 1; f < f_count; ++f) {
                const auto [go, gt] = refine_gradients(current, trajectories, j, f);
                grad_omega[j * f_count + f] = go;
                grad_t[j * f_count + f] = gt;
            }
        });

        for (int halving = 0; halving < 64; ++halving) {
            GroupFlowModel proposal = current;
            for (std::size_t j = 0; j < j_count; ++j) {
                for (std::size_t f = 1; f < f_count; ++f) {
                    const Eigen::Vector3d omega = -step * grad_omega[j * f_count + f];
                    proposal.set_rotation(f, j, so3_exp(omega) * current.rotation(f, j));
                    proposal.set_translation(f, j, current.translation(f, j) -
                                                       step * grad_t[j * f_count + f]);
                }
            }
            const double new_loss = trajectory_loss(proposal, trajectories);
            if (std::isfinite(new_loss) && new_loss <= loss) {
                current = std::move(proposal);
                loss = new_loss;
                break;
            }
            step *= 0.5;  // accepted steps never increase the loss
        }
    }
    return current;
}

std::vector<Eigen::Vector4d> rotation_offset(const std::vector<Eigen::Vector4d>& canonical_rots,
                                             const GroupFlowModel& model, double t) {
    if (canonical_rots.size() != model.gaussians())
        throw std::invalid_argument("rotation_offset: rotation count does not match assignment");
    std::vector<Eigen::Vector4d> group_quats(model.groups());
    for (std::size_t j = 0; j < model.groups(); ++j)
        group_quats[j] = matrix_to_quat(group_transform_at(model, j, t).rotation);

    std::vector<Eigen::Vector4d> out(canonical_rots.size());
    for (std::size_t i = 0; i < canonical_rots.size(); ++i) {
        const Eigen::Vector4d q = quat_multiply(group_quats[model.assignment[i]],
                                                canonical_rots[i]);
        out[i] = q / q.norm();
    }
    return out;
}

std::vector<std::uint32_t> nearest_controls(const Eigen::Vector3d& point,
                                            const GroupFlowModel& model, std::size_t k) {
    const std::size_t j_count = model.groups();
    std::vector<std::uint32_t> order(j_count);
    std::iota(order.begin(), order.end(), 0u);
    std::vector<double> d2(j_count);
    for (std::size_t j = 0; j < j_count; ++j) d2[j] = (model.control(j) - point).squaredNorm();
    const std::size_t take = std::min(k, j_count);
    std::partial_sort(order.begin(), order.begin() + take, order.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                          if (d2[a] != d2[b]) return d2[a] < d2[b];
                          return a < b;
                      });
    order.resize(take);
    return order;
}

std::vector<Eigen::Vector3d> lbs_apply(const std::vector<Eigen::Vector3d>& canonical_means,
                                       const GroupFlowModel& model,
                                       const std::vector<double>& radii, std::size_t k_neighbors,
                                       double t) {
    if (radii.size() != model.groups())
        throw std::invalid_argument("lbs_apply: need one radius per group");
    if (k_neighbors < 1) throw ConfigError("lbs_apply: k_neighbors must be at least 1");
    for (const double r : radii)
        if (!(r > 0.0)) throw ConfigError("lbs_apply: radii must be positive");

    std::vector<RigidTransform> transforms(model.groups());
    for (std::size_t j = 0; j < model.groups(); ++j) transforms[j] = group_transform_at(model, j, t);

    std::vector<Eigen::Vector3d> out(canonical_means.size());
    for (std::size_t i = 0; i < canonical_means.size(); ++i) {
        const Eigen::Vector3d& mu = canonical_means[i];
        const std::vector<std::uint32_t> neighbors = nearest_controls(mu, model, k_neighbors);
        std::vector<double> weights(neighbors.size());
        double total = 0.0;
        for (std::size_t a = 0; a < neighbors.size(); ++a) {
            const std::uint32_t j = neighbors[a];
            const double d2 = (model.control(j) - mu).squaredNorm();
            weights[a] = std::exp(-d2 / (2.0 * radii[j] * radii[j]));
            total += weights[a];
        }
        Eigen::Vector3d blended = Eigen::Vector3d::Zero();
        if (total == 0.0) {
            // all weights underflowed: fall back to the nearest control alone
            const std::uint32_t j = neighbors[0];
            blended = flow_point(transforms[j].rotation, transforms[j].translation,
                                 model.control(j), mu);
        } else {
            for (std::size_t a = 0; a < neighbors.size(); ++a) {
                const std::uint32_t j = neighbors[a];
                blended += (weights[a] / total) *
                           flow_point(transforms[j].rotation, transforms[j].translation,
                                      model.control(j), mu);
            }
        }
        out[i] = blended;
    }
    return out;
}

std::size_t flow_param_count(std::size_t groups, std::size_t frames) {
    return groups * (frames * 6 + 3);
}

std::pair<GroupFlowModel, GroupFlowReport> groupflow_compress(
    const GaussianCloud& cloud, const DeformationField& field,
    const std::vector<TrainingView>& views, const GroupingConfig& config, int threads) {
    if (config.groups < 1) throw ConfigError("groupflow: need at least one group");
    if (config.lambda_r < 0.0 || config.lambda_r > 1.0)
        throw ConfigError("groupflow: lambda_r must lie in [0, 1]");
    if (config.n_max < 3) throw ConfigError("groupflow: n_max must be at least 3");
    if (config.groups > cloud.size())
        throw ConfigError("groupflow: more groups (" + std::to_string(config.groups) +
                          ") than Gaussians (" + std::to_string(cloud.size()) + ")");

    const auto start = std::chrono::steady_clock::now();

    // trajectory timesteps: the views' distinct timestamps plus the
    // canonical frame when absent
    std::vector<double> timesteps;
    for (const TrainingView& v : views) timesteps.push_back(v.timestamp);
    timesteps.push_back(0.0);
    std::sort(timesteps.begin(), timesteps.end());
    timesteps.erase(std::unique(timesteps.begin(), timesteps.end()), timesteps.end());
    if (timesteps.size() < 2)
        throw ConfigError("groupflow: views span fewer than two distinct timestamps");
    if (timesteps.front() < 0.0 || timesteps.back() > 1.0)
        throw ConfigError("groupflow: view timestamps must lie in [0, 1]");

    const TrajectorySet traj = sample_trajectories(field, cloud, timesteps);
    const std::size_t f_count = traj.frames();

    std::vector<Eigen::Vector3d> points(traj.count);
    for (std::size_t i = 0; i < traj.count; ++i) points[i] = traj.position(i, 0);
    const std::vector<std::uint32_t> controls =
        farthest_point_sample(points, config.groups, config.seed);

    GroupFlowModel model;
    model.lambda_r = config.lambda_r;
    model.timesteps = timesteps;
    model.assignment = assign_groups(traj, controls, config.lambda_r, threads);
    model.control_points.resize(3 * config.groups);
    for (std::size_t j = 0; j < config.groups; ++j) {
        const Eigen::Vector3d h0 = points[controls[j]];
        for (int a = 0; a < 3; ++a) model.control_points[3 * j + a] = h0[a];
    }

    const auto members = group_members(model.assignment, config.groups);

    model.rotations.assign(f_count * config.groups * 9, 0.0);
    model.translations.assign(f_count * config.groups * 3, 0.0);
    const Rng root(config.seed);
    parallel_chunks(config.groups, threads, [&](std::size_t j) {
        const Rng group_rng = root.fork(j);  // one sample shared by all frames
        model.set_rotation(0, j, Eigen::Matrix3d::Identity());
        for (std::size_t f = 1; f < f_count; ++f) {
            const RigidTransform fit =
                fit_rigid(traj, members[j], model.control(j), f, config.n_max, group_rng);
            model.set_rotation(f, j, fit.rotation);
            model.set_translation(f, j, fit.translation);
        }
    });

    if (config.refine_iters > 0)
        model = refine_flows(model, traj, config.refine_iters, config.refine_step, threads);
    model.check();

    GroupFlowReport report;
    report.group_sizes.resize(config.groups);
    report.group_rmse.assign(config.groups, 0.0);
    std::vector<double> group_sq(config.groups, 0.0);
    double total_sq = 0.0;
    for (std::size_t f = 0; f < f_count; ++f) {
        std::vector<RigidTransform> transforms(config.groups);
        for (std::size_t j = 0; j < config.groups; ++j) {
            transforms[j].rotation = model.rotation(f, j);
            transforms[j].translation = model.translation(f, j);
        }
        for (std::size_t i = 0; i < traj.count; ++i) {
            const std::uint32_t j = model.assignment[i];
            const Eigen::Vector3d predicted =
                flow_point(transforms[j].rotation, transforms[j].translation, model.control(j),
                           traj.position(i, 0));
            const double sq = (predicted - traj.position(i, f)).squaredNorm();
            group_sq[j] += sq;
            total_sq += sq;
        }
    }
    for (std::size_t j = 0; j < config.groups; ++j) {
        report.group_sizes[j] = members[j].size();
        if (!members[j].empty())
            report.group_rmse[j] =
                std::sqrt(group_sq[j] / static_cast<double>(members[j].size() * f_count));
    }
    report.rmse = std::sqrt(total_sq / static_cast<double>(traj.count * f_count));
    report.param_floats = flow_param_count(config.groups, f_count);
    report.assignment_ints = traj.count;
    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(model), report};
}

FieldDeltas GroupFlowField::evaluate(const GaussianCloud& cloud, double t) const {
    if (cloud.size() != model_.gaussians())
        throw ConfigError("group flow field: cloud has " + std::to_string(cloud.size()) +
                          " Gaussians but the model covers " +
                          std::to_string(model_.gaussians()));
    std::vector<Eigen::Vector3d> canonical(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) canonical[i] = cloud.mean(i);
    const std::vector<Eigen::Vector3d> moved = apply_group_flow(canonical, model_, t);

    FieldDeltas deltas;
    deltas.d_means.resize(3 * cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Eigen::Vector3d d = moved[i] - canonical[i];
        deltas.d_means[3 * i] = d[0];
        deltas.d_means[3 * i + 1] = d[1];
        deltas.d_means[3 * i + 2] = d[2];
    }
    if (rotation_offsets_) {
        deltas.d_rotations.resize(4 * cloud.size());
        std::vector<Eigen::Vector4d> group_quats(model_.groups());
        for (std::size_t j = 0; j < model_.groups(); ++j)
            group_quats[j] = matrix_to_quat(group_transform_at(model_, j, t).rotation);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            const Eigen::Vector4d& q = group_quats[model_.assignment[i]];
            for (int a = 0; a < 4; ++a) deltas.d_rotations[4 * i + a] = q[a];
        }
    }
    return deltas;
}

std::unique_ptr<DeformationField> GroupFlowField::restrict_to(
    const std::vector<std::uint32_t>& kept) const {
    GroupFlowModel sub = model_;
    sub.assignment.resize(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
        if (kept[i] >= model_.gaussians())
            throw ConfigError("group flow field: kept index " + std::to_string(kept[i]) +
                              " out of range");
        sub.assignment[i] = model_.assignment[kept[i]];
    }
    return std::make_unique<GroupFlowField>(std::move(sub), rotation_offsets_);
}

std::string serialize_flow(const GroupFlowModel& model) {
    model.check();
    const std::size_t j_count = model.groups();
    const std::size_t f_count = model.frames();
    std::string out;
    out.reserve(5 + 3 * 8 + 8 + f_count * 8 + j_count * 3 * 4 +
                f_count * j_count * 12 * 4 + model.assignment.size() * 4);
    out.append(kFlowMagic, 5);
    put_u64(out, j_count);
    put_u64(out, f_count);
    put_u64(out, model.assignment.size());
    put_f64(out, model.lambda_r);
    for (const double t : model.timesteps) put_f64(out, t);
    for (const double v : model.control_points) put_f32(out, static_cast<float>(v));
    for (std::size_t f = 0; f < f_count; ++f) {
        const std::size_t rbase = f * j_count * 9;
        for (std::size_t v = 0; v < j_count * 9; ++v)
            put_f32(out, static_cast<float>(model.rotations[rbase + v]));
        const std::size_t tbase = f * j_count * 3;
        for (std::size_t v = 0; v < j_count * 3; ++v)
            put_f32(out, static_cast<float>(model.translations[tbase + v]));
    }
    for (const std::uint32_t a : model.assignment) put_u32(out, a);
    return out;
}

GroupFlowModel parse_flow(const std::string& bytes, const std::string& origin) {
    ByteReader reader(bytes, origin);
    if (reader.read_magic(5) != kFlowMagic)
        throw IoError(origin + ": not a GFLW1 file (bad magic)");
    const std::uint64_t j_count = reader.read_u64();
    const std::uint64_t f_count = reader.read_u64();
    const std::uint64_t n_count = reader.read_u64();

    GroupFlowModel model;
    model.lambda_r = reader.read_f64();
    model.timesteps.resize(f_count);
    for (auto& t : model.timesteps) t = reader.read_f64();
    model.control_points.resize(j_count * 3);
    for (auto& v : model.control_points) v = static_cast<double>(reader.read_f32());
    model.rotations.resize(f_count * j_count * 9);
    model.translations.resize(f_count * j_count * 3);
    for (std::uint64_t f = 0; f < f_count; ++f) {
        const std::size_t rbase = f * j_count * 9;
        for (std::size_t v = 0; v < j_count * 9; ++v)
            model.rotations[rbase + v] = static_cast<double>(reader.read_f32());
        const std::size_t tbase = f * j_count * 3;
        for (std::size_t v = 0; v < j_count * 3; ++v)
            model.translations[tbase + v] = static_cast<double>(reader.read_f32());
    }
    model.assignment.resize(n_count);
    for (auto& a : model.assignment) a = reader.read_u32();
    if (reader.remaining() != 0)
        throw IoError(origin + ": " + std::to_string(reader.remaining()) +
                      " trailing bytes after flow data");
    try {
        model.check();
    } catch (const ValidationError& e) {
        throw IoError(origin + ": " + e.what());
    }
    return model;
}

void save_flow(const GroupFlowModel& model, const std::string& path) {
    write_binary_file(path, serialize_flow(model));
}

GroupFlowModel load_flow(const std::string& path) {
    return parse_flow(read_binary_file(path), path);
}

std::size_t model_size(const GaussianCloud& cloud, const GroupFlowModel* flow) {
    std::size_t bytes = serialize_ply(cloud).size();
    if (flow) bytes += serialize_flow(*flow).size();
    return bytes;
}

}  // namespace speede
