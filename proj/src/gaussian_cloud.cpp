#include "speede/gaussian_cloud.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "speede/errors.hpp"

namespace speede {

namespace {

constexpr double kQuatNormTol = 1e-6;

bool finite3(const float* p) {
    return std::isfinite(p[0]) && std::isfinite(p[1]) && std::isfinite(p[2]);
}

}  // namespace

int GaussianCloud::sh_degree() const {
    switch (sh_coeff_count) {
        case 1: return 0;
        case 4: return 1;
        case 9: return 2;
        case 16: return 3;
        default: return -1;
    }
}

Eigen::Vector3d GaussianCloud::mean(std::size_t i) const {
    return Eigen::Vector3d(means[3 * i], means[3 * i + 1], means[3 * i + 2]);
}

Eigen::Vector4d GaussianCloud::rotation(std::size_t i) const {
    return Eigen::Vector4d(rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2],
                           rotations[4 * i + 3]);
}

Eigen::Vector3d GaussianCloud::log_scale(std::size_t i) const {
    return Eigen::Vector3d(scales[3 * i], scales[3 * i + 1], scales[3 * i + 2]);
}

Eigen::Vector3d GaussianCloud::dc_color(std::size_t i) const {
    const std::size_t base = static_cast<std::size_t>(i) * sh_coeff_count * 3;
    return Eigen::Vector3d(sh_colors[base], sh_colors[base + 1], sh_colors[base + 2]);
}

void GaussianCloud::check_shapes() const {
    const std::size_t n = opacities.size();
    if (sh_coeff_count != 1 && sh_coeff_count != 4 && sh_coeff_count != 9 && sh_coeff_count != 16)
        throw std::invalid_argument("GaussianCloud: sh_coeff_count must be 1, 4, 9 or 16");
    if (means.size() != 3 * n || scales.size() != 3 * n || rotations.size() != 4 * n ||
        sh_colors.size() != n * static_cast<std::size_t>(sh_coeff_count) * 3) {
        throw std::invalid_argument("GaussianCloud: array lengths disagree");
    }
}

std::string ValidationReport::summary(std::size_t max_items) const {
    std::ostringstream out;
    out << issues.size() << " issue(s)";
    for (std::size_t i = 0; i < issues.size() && i < max_items; ++i) {
        out << "; [" << issues[i].index << "] " << issues[i].kind;
        if (!issues[i].detail.empty()) out << " (" << issues[i].detail << ")";
    }
    return out.str();
}

ValidationReport validate(const GaussianCloud& cloud) {
    ValidationReport report;
    const std::size_t n = cloud.size();
    const std::size_t k3 = static_cast<std::size_t>(cloud.sh_coeff_count) * 3;
    for (std::size_t i = 0; i < n; ++i) {
        if (!finite3(&cloud.means[3 * i]))
            report.issues.push_back({i, "non-finite", "mean"});
        if (!finite3(&cloud.scales[3 * i])) {
            report.issues.push_back({i, "non-finite", "scale"});
        } else {
            // exp() underflows to 0 for very negative log-scales
            for (int a = 0; a < 3; ++a) {
                if (std::exp(static_cast<double>(cloud.scales[3 * i + a])) <= 0.0) {
                    report.issues.push_back({i, "non-positive scale", "exp underflow"});
                    break;
                }
            }
        }
        const float* q = &cloud.rotations[4 * i];
        if (!std::isfinite(q[0]) || !finite3(q + 1)) {
            report.issues.push_back({i, "non-finite", "rotation"});
        } else {
            const double norm = std::sqrt(double(q[0]) * q[0] + double(q[1]) * q[1] +
                                          double(q[2]) * q[2] + double(q[3]) * q[3]);
            if (norm < 1e-12) report.issues.push_back({i, "zero-norm quaternion", ""});
        }
        if (!std::isfinite(cloud.opacities[i]))
            report.issues.push_back({i, "non-finite", "opacity"});
        for (std::size_t c = 0; c < k3; ++c) {
            if (!std::isfinite(cloud.sh_colors[i * k3 + c])) {
                report.issues.push_back({i, "non-finite", "sh color"});
                break;
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// PLY
// ---------------------------------------------------------------------------

namespace {

struct PlyProperty {
    std::string name;
    std::size_t byte_size = 0;
    bool is_float = false;
    std::size_t offset = 0;  // within one vertex record
};

struct PlyHeader {
    std::size_t vertex_count = 0;
    std::vector<PlyProperty> properties;
    std::size_t stride = 0;
    std::size_t payload_offset = 0;
};

std::size_t type_size(const std::string& t) {
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
        t == "float32")
        return 4;
    if (t == "double" || t == "float64") return 8;
    return 0;
}

PlyHeader parse_ply_header(const std::string& bytes, const std::string& origin) {
    PlyHeader header;
    std::size_t pos = 0;
    int line_no = 0;
    bool saw_ply = false, saw_format = false, in_vertex_element = false, done = false;

    auto fail = [&](const std::string& why, const std::string& line) {
        throw IoError("PLY parse error in " + origin + " at line " + std::to_string(line_no) +
                      " (\"" + line + "\"): " + why);
    };

    while (pos < bytes.size() && !done) {
        const std::size_t eol = bytes.find('\n', pos);
        if (eol == std::string::npos) break;
        std::string line = bytes.substr(pos, eol - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pos = eol + 1;
        ++line_no;

        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (line_no == 1) {
            if (line != "ply") fail("expected \"ply\" magic", line);
            saw_ply = true;
            continue;
        }
        if (tok == "comment" || tok.empty()) continue;
        if (tok == "format") {
            std::string fmt, ver;
            ss >> fmt >> ver;
            if (fmt != "binary_little_endian")
                fail("only binary_little_endian is supported, got \"" + fmt + "\"", line);
            saw_format = true;
            continue;
        }
        if (tok == "element") {
            std::string kind;
            long long count = -1;
            ss >> kind >> count;
            if (kind != "vertex") fail("unsupported element \"" + kind + "\"", line);
            if (in_vertex_element) fail("duplicate vertex element", line);
            if (count < 0 || !ss) fail("bad vertex count", line);
            header.vertex_count = static_cast<std::size_t>(count);
            in_vertex_element = true;
            continue;
        }
        if (tok == "property") {
            if (!in_vertex_element) fail("property before element", line);
            std::string type, name;
            ss >> type >> name;
            if (type == "list") fail("list properties are not supported", line);
            const std::size_t sz = type_size(type);
            if (sz == 0 || name.empty()) fail("bad property declaration", line);
            header.properties.push_back({name, sz, sz == 4 && (type == "float" || type == "float32"),
                                         header.stride});
            header.stride += sz;
            continue;
        }
        if (tok == "end_header") {
            done = true;
            break;
        }
        fail("unrecognized header line", line);
    }
    if (!saw_ply || !done) throw IoError("PLY parse error in " + origin + ": truncated header");
    if (!saw_format)
        throw IoError("PLY parse error in " + origin + ": missing format declaration");
    if (!in_vertex_element)
        throw IoError("PLY parse error in " + origin + ": missing vertex element");
    header.payload_offset = pos;
    return header;
}

const PlyProperty* find_property(const PlyHeader& h, const std::string& name) {
    for (const auto& p : h.properties)
        if (p.name == name) return &p;
    return nullptr;
}

const PlyProperty& require_float_property(const PlyHeader& h, const std::string& name,
                                          const std::string& origin) {
    const PlyProperty* p = find_property(h, name);
    if (!p) throw IoError("PLY in " + origin + ": missing required property \"" + name + "\"");
    if (!p->is_float)
        throw IoError("PLY in " + origin + ": property \"" + name + "\" must have type float");
    return *p;
}

float read_f32(const char* base) {
    float v;
    std::memcpy(&v, base, sizeof(float));
    return v;
}

void write_f32(std::string& out, float v) {
    char buf[sizeof(float)];
    std::memcpy(buf, &v, sizeof(float));
    out.append(buf, sizeof(float));
}

}  // namespace

GaussianCloud parse_ply(const std::string& bytes, const std::string& origin) {
    const PlyHeader header = parse_ply_header(bytes, origin);
    const std::size_t n = header.vertex_count;
    if (bytes.size() - header.payload_offset < n * header.stride)
        throw IoError("PLY in " + origin + ": payload shorter than header promises");

    const PlyProperty* pos[3] = {&require_float_property(header, "x", origin),
                                 &require_float_property(header, "y", origin),
                                 &require_float_property(header, "z", origin)};
    const PlyProperty* dc[3] = {&require_float_property(header, "f_dc_0", origin),
                                &require_float_property(header, "f_dc_1", origin),
                                &require_float_property(header, "f_dc_2", origin)};
    const PlyProperty* opacity = &require_float_property(header, "opacity", origin);
    const PlyProperty* scale[3] = {&require_float_property(header, "scale_0", origin),
                                   &require_float_property(header, "scale_1", origin),
                                   &require_float_property(header, "scale_2", origin)};
    const PlyProperty* rot[4] = {&require_float_property(header, "rot_0", origin),
                                 &require_float_property(header, "rot_1", origin),
                                 &require_float_property(header, "rot_2", origin),
                                 &require_float_property(header, "rot_3", origin)};

    // SH degree from the f_rest_* count: 3 * (K - 1) entries, K in {1,4,9,16}
    std::size_t rest_count = 0;
    while (find_property(header, "f_rest_" + std::to_string(rest_count))) ++rest_count;
    if (rest_count % 3 != 0)
        throw IoError("PLY in " + origin + ": f_rest count " + std::to_string(rest_count) +
                      " is not divisible by 3");
    const std::size_t k = 1 + rest_count / 3;
    if (k != 1 && k != 4 && k != 9 && k != 16)
        throw IoError("PLY in " + origin + ": f_rest count " + std::to_string(rest_count) +
                      " does not match SH degree 0-3");
    std::vector<const PlyProperty*> rest(rest_count);
    for (std::size_t r = 0; r < rest_count; ++r)
        rest[r] = &require_float_property(header, "f_rest_" + std::to_string(r), origin);

    GaussianCloud cloud;
    cloud.sh_coeff_count = static_cast<int>(k);
    cloud.means.resize(3 * n);
    cloud.scales.resize(3 * n);
    cloud.rotations.resize(4 * n);
    cloud.opacities.resize(n);
    cloud.sh_colors.resize(n * k * 3);

    const char* payload = bytes.data() + header.payload_offset;
    for (std::size_t i = 0; i < n; ++i) {
        const char* rec = payload + i * header.stride;
        for (int a = 0; a < 3; ++a) {
            cloud.means[3 * i + a] = read_f32(rec + pos[a]->offset);
            cloud.scales[3 * i + a] = read_f32(rec + scale[a]->offset);
            cloud.sh_colors[(i * k) * 3 + a] = read_f32(rec + dc[a]->offset);
        }
        for (int a = 0; a < 4; ++a) cloud.rotations[4 * i + a] = read_f32(rec + rot[a]->offset);
        cloud.opacities[i] = read_f32(rec + opacity->offset);
        // rest coefficients are stored channel-major: all R, then G, then B
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t b = 1; b < k; ++b) {
                cloud.sh_colors[(i * k + b) * 3 + c] =
                    read_f32(rec + rest[c * (k - 1) + (b - 1)]->offset);
            }
        }
    }

    // renormalize quaternions, but leave already-unit ones untouched bit-for-bit
    for (std::size_t i = 0; i < n; ++i) {
        float* q = &cloud.rotations[4 * i];
        const double norm = std::sqrt(double(q[0]) * q[0] + double(q[1]) * q[1] +
                                      double(q[2]) * q[2] + double(q[3]) * q[3]);
        if (std::isfinite(norm) && norm > 1e-12 && std::abs(norm - 1.0) > kQuatNormTol) {
            for (int a = 0; a < 4; ++a) q[a] = static_cast<float>(q[a] / norm);
        }
    }

    const ValidationReport report = validate(cloud);
    if (!report.ok())
        throw ValidationError("PLY in " + origin + " failed validation: " + report.summary());
    return cloud;
}

GaussianCloud load_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_ply: cannot open: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_ply(buf.str(), path);
}

std::string serialize_ply(const GaussianCloud& cloud) {
    cloud.check_shapes();
    const std::size_t n = cloud.size();
    const std::size_t k = static_cast<std::size_t>(cloud.sh_coeff_count);

    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\nelement vertex " << n << "\n";
    const char* base_props[] = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
    for (const char* p : base_props) header << "property float " << p << "\n";
    for (std::size_t r = 0; r < 3 * (k - 1); ++r) header << "property float f_rest_" << r << "\n";
    header << "property float opacity\n";
    for (int a = 0; a < 3; ++a) header << "property float scale_" << a << "\n";
    for (int a = 0; a < 4; ++a) header << "property float rot_" << a << "\n";
    header << "end_header\n";

    std::string out = header.str();
    out.reserve(out.size() + n * (17 + 3 * (k - 1)) * 4);
    for (std::size_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) write_f32(out, cloud.means[3 * i + a]);
        for (int a = 0; a < 3; ++a) write_f32(out, 0.0f);  // unused normals
        for (int a = 0; a < 3; ++a) write_f32(out, cloud.sh_colors[(i * k) * 3 + a]);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t b = 1; b < k; ++b) write_f32(out, cloud.sh_colors[(i * k + b) * 3 + c]);
        write_f32(out, cloud.opacities[i]);
        for (int a = 0; a < 3; ++a) write_f32(out, cloud.scales[3 * i + a]);
        for (int a = 0; a < 4; ++a) write_f32(out, cloud.rotations[4 * i + a]);
    }
    return out;
}

void save_ply(const GaussianCloud& cloud, const std::string& path) {
    const std::string bytes = serialize_ply(cloud);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_ply: cannot open for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("save_ply: write failed: " + path);
}

GaussianCloud subset(const GaussianCloud& cloud, const std::vector<std::uint32_t>& indices) {
    cloud.check_shapes();
    const std::size_t k3 = static_cast<std::size_t>(cloud.sh_coeff_count) * 3;
    GaussianCloud out;
    out.sh_coeff_count = cloud.sh_coeff_count;
    out.means.reserve(indices.size() * 3);
    out.scales.reserve(indices.size() * 3);
    out.rotations.reserve(indices.size() * 4);
    out.sh_colors.reserve(indices.size() * k3);
    out.opacities.reserve(indices.size());
    for (const std::uint32_t i : indices) {
        if (i >= cloud.size()) throw std::out_of_range("subset: index out of range");
        out.means.insert(out.means.end(), &cloud.means[3 * i], &cloud.means[3 * i] + 3);
        out.scales.insert(out.scales.end(), &cloud.scales[3 * i], &cloud.scales[3 * i] + 3);
        out.rotations.insert(out.rotations.end(), &cloud.rotations[4 * i],
                             &cloud.rotations[4 * i] + 4);
        out.sh_colors.insert(out.sh_colors.end(), &cloud.sh_colors[i * k3],
                             &cloud.sh_colors[i * k3] + k3);
        out.opacities.push_back(cloud.opacities[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cameras JSON
// ---------------------------------------------------------------------------

void check_view(const TrainingView& view, const std::string& context) {
    const Eigen::Matrix3d gram = view.rotation.transpose() * view.rotation;
    if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6)
        throw ValidationError(context + ": rotation is not orthonormal within 1e-6");
    if (view.rotation.determinant() < 0)
        throw ValidationError(context + ": rotation has negative determinant");
    if (view.width <= 0 || view.height <= 0)
        throw ValidationError(context + ": image dimensions must be positive");
    if (!std::isfinite(view.timestamp)) throw ValidationError(context + ": non-finite timestamp");
    if (!std::isfinite(view.fx) || !std::isfinite(view.fy) || !std::isfinite(view.cx) ||
        !std::isfinite(view.cy) || !view.translation.allFinite())
        throw ValidationError(context + ": non-finite camera parameters");
}

std::vector<TrainingView> load_views(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_views: cannot open: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("load_views: bad JSON in " + path + ": " + e.what());
    }
    if (!doc.is_array()) throw IoError("load_views: expected a JSON array in " + path);

    std::vector<TrainingView> views;
    views.reserve(doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& rec = doc[i];
        TrainingView v;
        try {
            const auto& rot = rec.at("rotation");
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) v.rotation(r, c) = rot.at(r).at(c).get<double>();
            for (int a = 0; a < 3; ++a) v.translation[a] = rec.at("translation").at(a).get<double>();
            v.fx = rec.at("fx").get<double>();
            v.fy = rec.at("fy").get<double>();
            v.cx = rec.at("cx").get<double>();
            v.cy = rec.at("cy").get<double>();
            v.width = rec.at("width").get<int>();
            v.height = rec.at("height").get<int>();
            v.timestamp = rec.at("timestamp").get<double>();
            v.image_path = rec.value("image_path", std::string{});
        } catch (const nlohmann::json::exception& e) {
            throw IoError("load_views: bad record " + std::to_string(i) + " in " + path + ": " +
                          e.what());
        }
        check_view(v, path + "[" + std::to_string(i) + "]");
        views.push_back(std::move(v));
    }
    return views;
}

void save_views(const std::vector<TrainingView>& views, const std::string& path) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& v : views) {
        nlohmann::json rec;
        rec["rotation"] = {{v.rotation(0, 0), v.rotation(0, 1), v.rotation(0, 2)},
                           {v.rotation(1, 0), v.rotation(1, 1), v.rotation(1, 2)},
                           {v.rotation(2, 0), v.rotation(2, 1), v.rotation(2, 2)}};
        rec["translation"] = {v.translation[0], v.translation[1], v.translation[2]};
        rec["fx"] = v.fx;
        rec["fy"] = v.fy;
        rec["cx"] = v.cx;
        rec["cy"] = v.cy;
        rec["width"] = v.width;
        rec["height"] = v.height;
        rec["timestamp"] = v.timestamp;
        rec["image_path"] = v.image_path;
        doc.push_back(std::move(rec));
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("save_views: cannot open for writing: " + path);
    out << doc.dump(2) << "\n";
    if (!out) throw IoError("save_views: write failed: " + path);
}

}  // namespace speede
