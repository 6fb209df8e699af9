#include "speede/deformation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>

#include "speede/binio.hpp"
#include "speede/errors.hpp"
#include "speede/mathutil.hpp"

namespace speede {

namespace {

class AnalyticField final : public DeformationField {
public:
    AnalyticField(std::vector<Se3Curve> curves, std::vector<std::uint32_t> membership)
        : curves_(std::move(curves)), membership_(std::move(membership)) {
        if (curves_.empty()) throw ConfigError("analytic field: no curves given");
        for (std::size_t i = 0; i < membership_.size(); ++i) {
            if (membership_[i] >= curves_.size())
                throw ConfigError("analytic field: membership[" + std::to_string(i) +
                                  "] = " + std::to_string(membership_[i]) + " but only " +
                                  std::to_string(curves_.size()) + " curves exist");
        }
        for (std::size_t c = 0; c < curves_.size(); ++c) {
            const double n = curves_[c].axis.norm();
            if (!(n > 0.0) || !std::isfinite(n))
                throw ConfigError("analytic field: curve " + std::to_string(c) +
                                  " has a zero or non-finite axis");
            curves_[c].axis /= n;
        }
    }

    FieldDeltas evaluate(const GaussianCloud& cloud, double t) const override {
        if (cloud.size() != membership_.size())
            throw ConfigError("analytic field: cloud has " + std::to_string(cloud.size()) +
                              " Gaussians but membership covers " +
                              std::to_string(membership_.size()));
        const std::size_t n = cloud.size();
        FieldDeltas deltas;
        deltas.d_means.resize(3 * n);
        deltas.d_rotations.resize(4 * n);

        std::vector<Eigen::Matrix3d> rot(curves_.size());
        std::vector<Eigen::Vector4d> quat(curves_.size());
        for (std::size_t c = 0; c < curves_.size(); ++c) {
            const Eigen::Matrix3d r =
                Eigen::AngleAxisd(curves_[c].rate * t, curves_[c].axis).toRotationMatrix();
            rot[c] = r;
            quat[c] = matrix_to_quat(r);
        }
        for (std::size_t i = 0; i < n; ++i) {
            const Se3Curve& c = curves_[membership_[i]];
            const Eigen::Vector3d p = cloud.mean(i);
            const Eigen::Vector3d moved =
                rot[membership_[i]] * (p - c.pivot) + c.pivot + t * c.velocity;
            const Eigen::Vector3d d = moved - p;
            deltas.d_means[3 * i] = d[0];
            deltas.d_means[3 * i + 1] = d[1];
            deltas.d_means[3 * i + 2] = d[2];
            const Eigen::Vector4d& q = quat[membership_[i]];
            deltas.d_rotations[4 * i] = q[0];
            deltas.d_rotations[4 * i + 1] = q[1];
            deltas.d_rotations[4 * i + 2] = q[2];
            deltas.d_rotations[4 * i + 3] = q[3];
        }
        return deltas;
    }

    std::unique_ptr<DeformationField> restrict_to(
        const std::vector<std::uint32_t>& kept) const override {
        std::vector<std::uint32_t> membership(kept.size());
        for (std::size_t i = 0; i < kept.size(); ++i) {
            if (kept[i] >= membership_.size())
                throw ConfigError("analytic field: kept index " + std::to_string(kept[i]) +
                                  " out of range");
            membership[i] = membership_[kept[i]];
        }
        return std::make_unique<AnalyticField>(curves_, std::move(membership));
    }

private:
    std::vector<Se3Curve> curves_;
    std::vector<std::uint32_t> membership_;
};

class SampledField final : public DeformationField {
public:
    explicit SampledField(TrajectorySet trajectories) : traj_(std::move(trajectories)) {
        traj_.check();
    }

    FieldDeltas evaluate(const GaussianCloud& cloud, double t) const override {
        if (cloud.size() != traj_.count)
            throw ConfigError("sampled field: cloud has " + std::to_string(cloud.size()) +
                              " Gaussians but trajectories cover " + std::to_string(traj_.count));
        const std::size_t frames = traj_.frames();
        // clamp outside the stored range, lerp between bracketing frames
        std::size_t k0 = 0, k1 = 0;
        double w = 0.0;
        if (t <= traj_.timesteps.front()) {
            k0 = k1 = 0;
        } else if (t >= traj_.timesteps.back()) {
            k0 = k1 = frames - 1;
        } else {
            const auto it = std::upper_bound(traj_.timesteps.begin(), traj_.timesteps.end(), t);
            k1 = static_cast<std::size_t>(it - traj_.timesteps.begin());
            k0 = k1 - 1;
            w = (t - traj_.timesteps[k0]) / (traj_.timesteps[k1] - traj_.timesteps[k0]);
        }

        FieldDeltas deltas;
        deltas.d_means.resize(3 * traj_.count);
        for (std::size_t i = 0; i < traj_.count; ++i) {
            const Eigen::Vector3d p0 = traj_.position(i, k0);
            const Eigen::Vector3d p = (k0 == k1) ? p0
                                                 : Eigen::Vector3d(p0 +
                                                                   w * (traj_.position(i, k1) - p0));
            const Eigen::Vector3d d = p - cloud.mean(i).cast<double>();
            deltas.d_means[3 * i] = d[0];
            deltas.d_means[3 * i + 1] = d[1];
            deltas.d_means[3 * i + 2] = d[2];
        }
        return deltas;
    }

    std::unique_ptr<DeformationField> restrict_to(
        const std::vector<std::uint32_t>& kept) const override {
        TrajectorySet sub;
        sub.count = kept.size();
        sub.timesteps = traj_.timesteps;
        sub.positions.resize(kept.size() * traj_.frames() * 3);
        for (std::size_t i = 0; i < kept.size(); ++i) {
            if (kept[i] >= traj_.count)
                throw ConfigError("sampled field: kept index " + std::to_string(kept[i]) +
                                  " out of range");
            std::copy_n(traj_.positions.begin() + kept[i] * traj_.frames() * 3,
                        traj_.frames() * 3, sub.positions.begin() + i * traj_.frames() * 3);
        }
        return std::make_unique<SampledField>(std::move(sub));
    }

private:
    TrajectorySet traj_;
};

constexpr char kTrajMagic[] = "TRAJ1";

}  // namespace

void TrajectorySet::check() const {
    if (timesteps.size() < 2)
        throw ValidationError("trajectory set: needs at least 2 timesteps, has " +
                              std::to_string(timesteps.size()));
    if (positions.size() != count * timesteps.size() * 3)
        throw ValidationError("trajectory set: positions has " +
                              std::to_string(positions.size()) + " values, expected " +
                              std::to_string(count * timesteps.size() * 3));
    for (std::size_t k = 0; k < timesteps.size(); ++k) {
        if (!std::isfinite(timesteps[k]))
            throw ValidationError("trajectory set: non-finite timestep at index " +
                                  std::to_string(k));
        if (k > 0 && timesteps[k] <= timesteps[k - 1])
            throw ValidationError("trajectory set: timesteps must be strictly increasing (index " +
                                  std::to_string(k) + ")");
    }
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (!std::isfinite(positions[i]))
            throw ValidationError("trajectory set: non-finite position value at index " +
                                  std::to_string(i));
    }
}

std::unique_ptr<DeformationField> analytic_field(std::vector<Se3Curve> curves,
                                                 std::vector<std::uint32_t> membership) {
    return std::make_unique<AnalyticField>(std::move(curves), std::move(membership));
}

std::unique_ptr<DeformationField> sampled_field(TrajectorySet trajectories) {
    return std::make_unique<SampledField>(std::move(trajectories));
}

TrajectorySet sample_trajectories(const DeformationField& field, const GaussianCloud& cloud,
                                  const std::vector<double>& timesteps) {
    TrajectorySet traj;
    traj.count = cloud.size();
    traj.timesteps = timesteps;
    traj.positions.resize(cloud.size() * timesteps.size() * 3);
    for (std::size_t k = 0; k < timesteps.size(); ++k) {
        const FieldDeltas deltas = field.evaluate(cloud, timesteps[k]);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            const Eigen::Vector3d p = cloud.mean(i).cast<double>() +
                                      Eigen::Vector3d(deltas.d_means[3 * i],
                                                      deltas.d_means[3 * i + 1],
                                                      deltas.d_means[3 * i + 2]);
            traj.set_position(i, k, p);
        }
    }
    traj.check();
    return traj;
}

std::string serialize_trajectories(const TrajectorySet& trajectories) {
    trajectories.check();
    std::string out;
    out.reserve(5 + 16 + trajectories.frames() * 8 + trajectories.positions.size() * 4);
    out.append(kTrajMagic, 5);
    put_u64(out, trajectories.count);
    put_u64(out, trajectories.frames());
    for (const double t : trajectories.timesteps) put_f64(out, t);
    for (const double v : trajectories.positions) put_f32(out, static_cast<float>(v));
    return out;
}

TrajectorySet parse_trajectories(const std::string& bytes, const std::string& origin) {
    ByteReader reader(bytes, origin);
    if (reader.read_magic(5) != kTrajMagic)
        throw IoError(origin + ": not a TRAJ1 file (bad magic)");
    TrajectorySet traj;
    traj.count = reader.read_u64();
    const std::uint64_t frames = reader.read_u64();
    if (frames == 0) throw IoError(origin + ": trajectory file with zero frames");
    traj.timesteps.resize(frames);
    for (std::uint64_t k = 0; k < frames; ++k) traj.timesteps[k] = reader.read_f64();
    traj.positions.resize(traj.count * frames * 3);
    for (std::size_t i = 0; i < traj.positions.size(); ++i)
        traj.positions[i] = static_cast<double>(reader.read_f32());
    if (reader.remaining() != 0)
        throw IoError(origin + ": " + std::to_string(reader.remaining()) +
                      " trailing bytes after trajectory data");
    try {
        traj.check();
    } catch (const ValidationError& e) {
        throw IoError(origin + ": " + e.what());
    }
    return traj;
}

void save_trajectories(const TrajectorySet& trajectories, const std::string& path) {
    write_binary_file(path, serialize_trajectories(trajectories));
}

TrajectorySet load_trajectories(const std::string& path) {
    return parse_trajectories(read_binary_file(path), path);
}

}  // namespace speede
