#pragma once

// On-disk formats: PFM images, camera metadata sidecars, dataset manifests and
// model checkpoints.
//
// Camera metadata (UTF-8 text, '#' starts a comment):
//   camera_id = canon_like_01          (optional)
//   cm1 = v1 ... v9                    XYZ -> raw at calib1_cct, row-major
//   cm2 = v1 ... v9                    XYZ -> raw at calib2_cct
//   fm1 = v1 ... v9                    white-balanced raw -> XYZ
//   fm2 = v1 ... v9
//   calib1_cct = 2856                  (optional, default 2856)
//   calib2_cct = 6504                  (optional, default 6504)
//
// Manifest (UTF-8 text, paths relative to the manifest's directory):
//   image_path, r, g, b, camera_id
//   ...
//   [cameras]
//   camera_id = metadata_path
//
// Checkpoint: "CCMK", u32 version, u32 header length, JSON header with the
// model configuration, then the parameter blob.

#include <ccmnet/colorimetry.hpp>
#include <ccmnet/errors.hpp>
#include <ccmnet/estimator.hpp>
#include <ccmnet/histogram.hpp>
#include <ccmnet/params.hpp>

#include <json.hpp>

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace ccmnet {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Files

inline std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw LoadError("write failed for '" + path.string() + "'");
}

inline void write_file_text(const fs::path& path, const std::string& text) {
    write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline std::string format_double(const char* fmt, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

// ---------------------------------------------------------------------------
// PFM

/// Float image, rows stored top to bottom, channels interleaved (1 or 3).
struct PfmImage {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<float> data;
};

inline std::vector<std::uint8_t> encode_pfm(const PfmImage& img) {
    if (img.channels != 1 && img.channels != 3) throw FormatError("PFM supports 1 or 3 channels");
    if (img.width <= 0 || img.height <= 0 ||
        img.data.size() != static_cast<std::size_t>(img.width) * img.height * img.channels) {
        throw FormatError("PFM image dimensions do not match its data");
    }
    const std::string header = std::string(img.channels == 3 ? "PF" : "Pf") + "\n" + std::to_string(img.width) + " " +
                               std::to_string(img.height) + "\n-1.0\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
    out.reserve(out.size() + img.data.size() * 4);
    for (int y = img.height - 1; y >= 0; --y) {
        for (std::size_t i = 0; i < row; ++i) {
            const std::uint32_t bits = std::bit_cast<std::uint32_t>(img.data[static_cast<std::size_t>(y) * row + i]);
            for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
        }
    }
    return out;
}

inline PfmImage decode_pfm(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    auto token = [&](const char* what) {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) ++pos;
        if (start == pos) throw FormatError(std::string("PFM: missing ") + what + " at byte " + std::to_string(start));
        return std::make_pair(std::string(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                                          bytes.begin() + static_cast<std::ptrdiff_t>(pos)),
                              start);
    };
    PfmImage img;
    const auto [magic, magic_at] = token("magic");
    if (magic == "PF") {
        img.channels = 3;
    } else if (magic == "Pf") {
        img.channels = 1;
    } else {
        throw FormatError("PFM: bad magic '" + magic + "' at byte " + std::to_string(magic_at));
    }
    auto integer = [&](const char* what) {
        const auto [s, at] = token(what);
        int v = 0;
        const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc() || r.ptr != s.data() + s.size() || v <= 0 || v > (1 << 16)) {
            throw FormatError(std::string("PFM: invalid ") + what + " '" + s + "' at byte " + std::to_string(at));
        }
        return v;
    };
    img.width = integer("width");
    img.height = integer("height");
    const auto [scale_s, scale_at] = token("scale");
    double scale = 0.0;
    try {
        std::size_t used = 0;
        scale = std::stod(scale_s, &used);
        if (used != scale_s.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw FormatError("PFM: invalid scale '" + scale_s + "' at byte " + std::to_string(scale_at));
    }
    if (scale == 0.0 || !std::isfinite(scale)) {
        throw FormatError("PFM: scale must be non-zero at byte " + std::to_string(scale_at));
    }
    const bool little = scale < 0.0;
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
        throw FormatError("PFM: missing newline after header at byte " + std::to_string(pos));
    }
    ++pos;
    const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
    const std::size_t count = row * static_cast<std::size_t>(img.height);
    if (bytes.size() - pos < count * 4) {
        throw FormatError("PFM: truncated pixel data at byte " + std::to_string(bytes.size()) + " (expected " +
                          std::to_string(pos + count * 4) + " bytes)");
    }
    if (bytes.size() - pos > count * 4) {
        throw FormatError("PFM: unexpected trailing data at byte " + std::to_string(pos + count * 4));
    }
    img.data.resize(count);
    for (int y = img.height - 1, src = 0; y >= 0; --y, ++src) {
        for (std::size_t i = 0; i < row; ++i) {
            const std::size_t at = pos + (static_cast<std::size_t>(src) * row + i) * 4;
            std::uint32_t bits = 0;
            for (int k = 0; k < 4; ++k) {
                const std::uint32_t b = bytes[at + static_cast<std::size_t>(k)];
                bits |= little ? b << (8 * k) : b << (8 * (3 - k));
            }
            img.data[static_cast<std::size_t>(y) * row + i] = std::bit_cast<float>(bits);
        }
    }
    return img;
}

inline void write_pfm(const fs::path& path, const PfmImage& img) { write_file_bytes(path, encode_pfm(img)); }

inline PfmImage read_pfm(const fs::path& path) {
    try {
        return decode_pfm(read_file_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline PfmImage to_pfm(const RawImage& img) {
    PfmImage p{img.width, img.height, 3, {}};
    p.data.reserve(img.pixels.size());
    for (double v : img.pixels) p.data.push_back(static_cast<float>(v));
    return p;
}

inline RawImage to_raw_image(const PfmImage& p, double saturation_level = 1.0) {
    if (p.channels != 3) throw FormatError("expected a 3-channel PFM image");
    RawImage img(p.width, p.height, saturation_level);
    for (std::size_t i = 0; i < p.data.size(); ++i) img.pixels[i] = static_cast<double>(p.data[i]);
    return img;
}

inline void write_raw_image(const fs::path& path, const RawImage& img) { write_pfm(path, to_pfm(img)); }
inline RawImage read_raw_image(const fs::path& path) { return to_raw_image(read_pfm(path)); }

// ---------------------------------------------------------------------------
// Camera metadata

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<double> parse_numbers(const std::string& text, const std::string& where) {
    std::vector<double> out;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
        double v = 0.0;
        const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (r.ec != std::errc() || r.ptr != tok.data() + tok.size() || !std::isfinite(v)) {
            throw LoadError(where + ": invalid number '" + tok + "'");
        }
        out.push_back(v);
    }
    return out;
}

inline std::string matrix_line(const ColorMatrix3& m) {
    std::string s;
    for (std::size_t i = 0; i < 9; ++i) {
        if (i) s += ' ';
        s += format_double("%.17g", m.entries()[i]);
    }
    return s;
}

}  // namespace detail

inline CameraCalibration parse_camera_metadata(const std::string& text, const std::string& source,
                                               const std::string& default_id = {}) {
    CameraCalibration cal;
    cal.camera_id = default_id;
    std::map<std::string, bool> seen;
    double cct1 = 2856.0, cct2 = 6504.0;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = source + ":" + std::to_string(lineno);
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw LoadError(where + ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (seen[key]) throw LoadError(where + ": duplicate key '" + key + "'");
        seen[key] = true;
        if (key == "camera_id") {
            if (value.empty()) throw LoadError(where + ": empty camera_id");
            cal.camera_id = value;
        } else if (key == "cm1" || key == "cm2" || key == "fm1" || key == "fm2") {
            const auto v = detail::parse_numbers(value, where);
            if (v.size() != 9) {
                throw LoadError(where + ": " + key + " needs 9 values, got " + std::to_string(v.size()));
            }
            std::array<double, 9> e{};
            std::copy(v.begin(), v.end(), e.begin());
            ColorMatrix3& m = key == "cm1" ? cal.cm_low : key == "cm2" ? cal.cm_high : key == "fm1" ? cal.fm_low : cal.fm_high;
            m = ColorMatrix3(e);
        } else if (key == "calib1_cct" || key == "calib2_cct") {
            const auto v = detail::parse_numbers(value, where);
            if (v.size() != 1) throw LoadError(where + ": " + key + " needs one value");
            (key == "calib1_cct" ? cct1 : cct2) = v[0];
        } else {
            throw LoadError(where + ": unknown key '" + key + "'");
        }
    }
    for (const char* k : {"cm1", "cm2", "fm1", "fm2"}) {
        if (!seen[k]) throw LoadError(source + ": missing '" + k + "'");
    }
    try {
        cal.cct_low = Cct(cct1);
        cal.cct_high = Cct(cct2);
        cal.validate();
    } catch (const Error& e) {
        throw LoadError(source + ": " + e.what());
    }
    return cal;
}

inline CameraCalibration load_camera_metadata(const fs::path& path, const std::string& default_id = {}) {
    const auto bytes = read_file_bytes(path);
    return parse_camera_metadata(std::string(bytes.begin(), bytes.end()), path.string(),
                                 default_id.empty() ? path.stem().string() : default_id);
}

inline std::string format_camera_metadata(const CameraCalibration& cal) {
    std::string s;
    if (!cal.camera_id.empty()) s += "camera_id = " + cal.camera_id + "\n";
    s += "cm1 = " + detail::matrix_line(cal.cm_low) + "\n";
    s += "cm2 = " + detail::matrix_line(cal.cm_high) + "\n";
    s += "fm1 = " + detail::matrix_line(cal.fm_low) + "\n";
    s += "fm2 = " + detail::matrix_line(cal.fm_high) + "\n";
    s += "calib1_cct = " + format_double("%.17g", cal.cct_low.kelvin()) + "\n";
    s += "calib2_cct = " + format_double("%.17g", cal.cct_high.kelvin()) + "\n";
    return s;
}

inline void save_camera_metadata(const fs::path& path, const CameraCalibration& cal) {
    write_file_text(path, format_camera_metadata(cal));
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRecord {
    fs::path image_path;
    RgbColor gt;
    std::string camera_id;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::map<std::string, CameraCalibration> cameras;
    std::map<std::string, fs::path> camera_files;
};

/// Parses and validates a manifest. Image files must exist; every camera
/// referenced must map to a loadable metadata file.
inline DatasetManifest load_manifest(const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    const fs::path base = path.parent_path();
    DatasetManifest m;
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    std::string line;
    int lineno = 0;
    bool cameras = false;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line == "[cameras]") {
            cameras = true;
            continue;
        }
        if (cameras) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw LoadError(where + ": expected 'camera_id = metadata_path'");
            const std::string id = detail::trim(line.substr(0, eq));
            const fs::path meta = base / detail::trim(line.substr(eq + 1));
            if (m.camera_files.count(id)) throw LoadError(where + ": duplicate camera '" + id + "'");
            m.camera_files[id] = meta;
            continue;
        }
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ',')) fields.push_back(detail::trim(f));
        if (fields.size() != 5) {
            throw LoadError(where + ": expected 'image_path, r, g, b, camera_id', got " + std::to_string(fields.size()) +
                            " fields");
        }
        const auto rgb = detail::parse_numbers(fields[1] + " " + fields[2] + " " + fields[3], where);
        const RgbColor gt{rgb[0], rgb[1], rgb[2]};
        if (!gt.all_positive()) throw LoadError(where + ": ground-truth illuminant must be positive");
        m.records.push_back({base / fields[0], gt, fields[4]});
    }
    for (const auto& r : m.records) {
        if (!m.camera_files.count(r.camera_id)) {
            throw LoadError(path.string() + ": image '" + r.image_path.string() + "' refers to unknown camera_id '" +
                            r.camera_id + "'");
        }
        if (!fs::exists(r.image_path)) throw LoadError(path.string() + ": missing image '" + r.image_path.string() + "'");
    }
    for (const auto& [id, file] : m.camera_files) {
        if (!fs::exists(file)) throw LoadError(path.string() + ": missing metadata for camera '" + id + "'");
        m.cameras[id] = load_camera_metadata(file, id);
        m.cameras[id].camera_id = id;
    }
    return m;
}

/// Writes a manifest; record and camera paths are stored relative to its directory.
inline void save_manifest(const fs::path& path, const DatasetManifest& m) {
    const fs::path base = path.parent_path();
    std::string s = "# image_path, r, g, b, camera_id\n";
    for (const auto& r : m.records) {
        s += fs::relative(r.image_path, base).generic_string() + ", " + format_double("%.17g", r.gt.r) + ", " +
             format_double("%.17g", r.gt.g) + ", " + format_double("%.17g", r.gt.b) + ", " + r.camera_id + "\n";
    }
    s += "[cameras]\n";
    for (const auto& [id, file] : m.camera_files) s += id + " = " + fs::relative(file, base).generic_string() + "\n";
    write_file_text(path, s);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr char kCheckpointMagic[4] = {'C', 'C', 'M', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::ordered_json model_config_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["backbone"] = {{"widths", c.backbone.widths},
                     {"in_channels", c.backbone.in_channels},
                     {"out_channels", c.backbone.out_channels},
                     {"bins", c.backbone.bins}};
    j["cfe"] = {{"bins", c.cfe.bins}, {"widths", c.cfe.widths}, {"hidden", c.cfe.hidden}, {"output", c.cfe.output}};
    j["query"] = {{"bins", c.query.bins},
                  {"u_min", c.query.u_min},
                  {"u_max", c.query.u_max},
                  {"v_min", c.query.v_min},
                  {"v_max", c.query.v_max}};
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.backbone.widths = j.at("backbone").at("widths").get<std::array<int, 4>>();
        c.backbone.in_channels = j.at("backbone").at("in_channels").get<int>();
        c.backbone.out_channels = j.at("backbone").at("out_channels").get<int>();
        c.backbone.bins = j.at("backbone").at("bins").get<int>();
        c.cfe.bins = j.at("cfe").at("bins").get<int>();
        c.cfe.widths = j.at("cfe").at("widths").get<std::array<int, 4>>();
        c.cfe.hidden = j.at("cfe").at("hidden").get<int>();
        c.cfe.output = j.at("cfe").at("output").get<int>();
        const auto& q = j.at("query");
        c.query = {q.at("bins").get<int>(), q.at("u_min").get<double>(), q.at("u_max").get<double>(),
                   q.at("v_min").get<double>(), q.at("v_max").get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint header: ") + e.what());
    }
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint header: ") + e.what());
    }
    return c;
}

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const Model<T>& m) {
    const std::string header = model_config_json(m.config).dump();
    detail::ByteWriter w;
    w.bytes(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(header.size()));
    w.bytes(header.data(), header.size());
    auto out = w.take();
    const auto blob = serialize_params(m.params);
    out.insert(out.end(), blob.begin(), blob.end());
    return out;
}

template <typename T>
Model<T> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    detail::ByteReader r(bytes);
    if (r.remaining() < 4 || r.str(4) != std::string(kCheckpointMagic, 4)) {
        throw FormatError("checkpoint: bad magic at byte 0 (expected \"CCMK\")");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " at byte 4");
    }
    const std::uint32_t len = r.u32();
    const std::string header = r.str(len);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header at byte 12: ") + e.what());
    }
    Model<T> m;
    m.config = model_config_from_json(j);
    const std::size_t at = r.offset();
    m.params = deserialize_params<T>(std::span<const std::uint8_t>(bytes).subspan(at));
    // The parameter set must match a freshly initialized model exactly.
    const Model<T> ref = init_model<T>(m.config, 0);
    if (ref.params.size() != m.params.size()) {
        throw FormatError("checkpoint: expected " + std::to_string(ref.params.size()) + " tensors, found " +
                          std::to_string(m.params.size()));
    }
    for (const auto& p : ref.params) {
        if (!m.params.contains(p.name)) throw FormatError("checkpoint: missing tensor '" + p.name + "'");
        if (m.params.get(p.name).value.shape() != p.value.shape()) {
            throw FormatError("checkpoint: tensor '" + p.name + "' has shape " +
                              shape_str(m.params.get(p.name).value.shape()) + ", expected " + shape_str(p.value.shape()));
        }
    }
    return m;
}

template <typename T>
void save_checkpoint(const fs::path& path, const Model<T>& m) {
    write_file_bytes(path, serialize_checkpoint(m));
}

template <typename T>
Model<T> load_checkpoint(const fs::path& path) {
    try {
        return deserialize_checkpoint<T>(read_file_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace ccmnet
