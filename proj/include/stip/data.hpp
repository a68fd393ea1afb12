#pragma once

// Synthetic moving-shapes videos, clip windows, and the on-disk sequence format.
//
// Sequence file layout (little-endian):
//   bytes 0..7    magic "STIPDS1\0"
//   bytes 8..23   uint32 T, C, H, W
//   bytes 24..    T*C*H*W float32 values, row-major [t][c][h][w]

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "stip/tensor.hpp"

namespace stip {

struct VideoSequence {
    Tensor<float> frames;  // [T, C, H, W], values in [0, 1]
    double frame_rate = 0;  // informational only
    std::string sequence_id;

    int length() const { return frames.dim(0); }
    int channels() const { return frames.dim(1); }
    int height() const { return frames.dim(2); }
    int width() const { return frames.dim(3); }

    void validate() const {
        require(frames.rank() == 4, "VideoSequence: frames must be [T, C, H, W], got " + shape_str(frames.shape()));
        require(length() >= 2, "VideoSequence: at least 2 frames required");
        for (float v : frames.vec())
            if (!std::isfinite(v) || v < 0.f || v > 1.f) throw ValidationError("VideoSequence: pixel outside [0,1]");
    }
};

struct ClipWindow {
    Tensor<float> clip;  // [L, C, H, W]
    int t_index = 0;     // 1-based index of the newest frame
};

/// Frames t-L+1 .. t (1-based). Indices before the first frame replicate frame 1.
inline ClipWindow make_clip(const VideoSequence& seq, int t, int L) {
    const int T = seq.length();
    if (t < 1 || t > T) throw IndexError("make_clip: t=" + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
    require(L >= 1, "make_clip: clip length must be >= 1");
    std::vector<Tensor<float>> parts;
    for (int i = t - L + 1; i <= t; ++i) parts.push_back(seq.frames.index0(std::max(i, 1) - 1));
    return {stack0(parts), t};
}

// ---------------------------------------------------------------------------
// Generator

enum class ShapeKind : int { kRectangle = 0, kCircle = 1, kTriangle = 2 };

struct ShapeSpec {
    ShapeKind kind = ShapeKind::kRectangle;
    double half_extent = 4;  // bounding half-size; center stays in [half_extent, dim-1-half_extent]
    double intensity = 1;
    double x0 = 0, y0 = 0;
    double vx = 0, vy = 0;
};

/// Position and velocity after `frame` steps of reflective motion in [lo, hi].
inline std::pair<double, double> reflect_position(double x0, double v, int frame, double lo, double hi) {
    double x = x0;
    for (int f = 0; f < frame; ++f) {
        x += v;
        // Fold until inside; one fold suffices unless |v| exceeds the track length.
        for (int guard = 0; guard < 64 && (x < lo || x > hi); ++guard) {
            if (x > hi) x = 2 * hi - x;
            else x = 2 * lo - x;
            v = -v;
        }
    }
    return {x, v};
}

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline ShapeSpec random_shape(std::mt19937_64& rng, int H, int W) {
    ShapeSpec s;
    s.kind = static_cast<ShapeKind>(rng() % 3);
    const double m = std::min(H, W);
    s.half_extent = m / 16.0 + unit_uniform(rng) * (m / 8.0 - m / 16.0);
    s.intensity = 0.6 + 0.4 * unit_uniform(rng);
    s.x0 = s.half_extent + unit_uniform(rng) * (W - 1 - 2 * s.half_extent);
    s.y0 = s.half_extent + unit_uniform(rng) * (H - 1 - 2 * s.half_extent);
    const double speed = 1.0 + 2.0 * unit_uniform(rng);
    const double angle = 2.0 * 3.14159265358979323846 * unit_uniform(rng);
    s.vx = speed * std::cos(angle);
    s.vy = speed * std::sin(angle);
    return s;
}

/// Center of `s` at frame index `frame` (0-based) inside an H x W canvas.
inline std::pair<double, double> shape_center(const ShapeSpec& s, int frame, int H, int W) {
    const double x = reflect_position(s.x0, s.vx, frame, s.half_extent, W - 1 - s.half_extent).first;
    const double y = reflect_position(s.y0, s.vy, frame, s.half_extent, H - 1 - s.half_extent).first;
    return {x, y};
}

inline bool shape_contains(const ShapeSpec& s, double cx, double cy, double px, double py) {
    const double dx = px - cx, dy = py - cy, r = s.half_extent;
    switch (s.kind) {
        case ShapeKind::kRectangle: return std::abs(dx) <= r && std::abs(dy) <= r;
        case ShapeKind::kCircle: return dx * dx + dy * dy <= r * r;
        case ShapeKind::kTriangle:
            // Apex at the top, base along the bottom edge of the bounding box.
            if (dy < -r || dy > r) return false;
            return std::abs(dx) <= (dy + r) * 0.5;
    }
    return false;
}

/// Rasterize shapes at one frame with 4x4 supersampled coverage; overlapping shapes take the max.
inline void render_frame(const std::vector<ShapeSpec>& shapes, int frame, int H, int W, float* out) {
    constexpr int kSub = 4;
    std::fill_n(out, static_cast<std::size_t>(H) * W, 0.f);
    for (const auto& s : shapes) {
        const auto [cx, cy] = shape_center(s, frame, H, W);
        const int x_lo = std::max(0, static_cast<int>(std::floor(cx - s.half_extent - 1)));
        const int x_hi = std::min(W - 1, static_cast<int>(std::ceil(cx + s.half_extent + 1)));
        const int y_lo = std::max(0, static_cast<int>(std::floor(cy - s.half_extent - 1)));
        const int y_hi = std::min(H - 1, static_cast<int>(std::ceil(cy + s.half_extent + 1)));
        for (int y = y_lo; y <= y_hi; ++y)
            for (int x = x_lo; x <= x_hi; ++x) {
                int hits = 0;
                for (int sy = 0; sy < kSub; ++sy)
                    for (int sx = 0; sx < kSub; ++sx)
                        hits += shape_contains(s, cx, cy, x + (sx + 0.5) / kSub - 0.5, y + (sy + 0.5) / kSub - 0.5);
                const float v = static_cast<float>(s.intensity * hits / (kSub * kSub));
                float& px = out[static_cast<std::size_t>(y) * W + x];
                px = std::max(px, v);
            }
    }
}

/// One sequence of moving shapes. Deterministic in (index, seed).
inline VideoSequence generate_sequence(int index, int T, int H, int W, int num_shapes, std::uint64_t seed, int channels = 1) {
    std::mt19937_64 rng(seed ^ static_cast<std::uint64_t>(index));
    std::vector<ShapeSpec> shapes;
    for (int i = 0; i < num_shapes; ++i) shapes.push_back(random_shape(rng, H, W));
    VideoSequence seq;
    seq.frames = Tensor<float>({T, channels, H, W});
    seq.frame_rate = 10;
    char id[32];
    std::snprintf(id, sizeof id, "seq_%05d", index);
    seq.sequence_id = id;
    std::vector<float> plane(static_cast<std::size_t>(H) * W);
    for (int t = 0; t < T; ++t) {
        render_frame(shapes, t, H, W, plane.data());
        for (int c = 0; c < channels; ++c)
            std::copy(plane.begin(), plane.end(), seq.frames.data() + (static_cast<std::size_t>(t) * channels + c) * plane.size());
    }
    return seq;
}

// ---------------------------------------------------------------------------
// Binary sequence files

inline constexpr std::array<char, 8> kSequenceMagic = {'S', 'T', 'I', 'P', 'D', 'S', '1', '\0'};
inline constexpr std::size_t kSequenceHeaderBytes = 24;

namespace detail {

inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 | static_cast<std::uint32_t>(p[2]) << 16 |
           static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

inline std::vector<unsigned char> encode_sequence(const Tensor<float>& frames) {
    require(frames.rank() == 4, "encode_sequence: frames must be [T, C, H, W]");
    std::vector<unsigned char> b(kSequenceMagic.begin(), kSequenceMagic.end());
    for (int d = 0; d < 4; ++d) detail::put_u32(b, static_cast<std::uint32_t>(frames.dim(d)));
    b.reserve(b.size() + frames.numel() * 4);
    for (float v : frames.vec()) detail::put_u32(b, std::bit_cast<std::uint32_t>(v));
    return b;
}

inline Tensor<float> decode_sequence(const std::vector<unsigned char>& b) {
    if (b.size() < kSequenceMagic.size() || std::memcmp(b.data(), kSequenceMagic.data(), kSequenceMagic.size()) != 0)
        throw FormatError("bad magic: not a STIPDS1 sequence file", 0);
    if (b.size() < kSequenceHeaderBytes) throw FormatError("truncated header", b.size());
    std::uint64_t count = 1;
    Shape shape;
    for (int d = 0; d < 4; ++d) {
        const std::uint32_t v = detail::get_u32(b.data() + 8 + 4 * d);
        if (v == 0 || v > static_cast<std::uint32_t>(std::numeric_limits<int>::max()))
            throw FormatError("invalid dimension " + std::to_string(v), static_cast<std::uint64_t>(8 + 4 * d));
        count *= v;
        if (count > (std::numeric_limits<std::uint64_t>::max() / 4) || count > (std::uint64_t{1} << 40))
            throw FormatError("dimension product overflows", static_cast<std::uint64_t>(8 + 4 * d));
        shape.push_back(static_cast<int>(v));
    }
    const std::uint64_t need = kSequenceHeaderBytes + count * 4;
    if (b.size() < need)
        throw FormatError("truncated payload: header declares " + std::to_string(count) + " values, file holds " +
                              std::to_string((b.size() - kSequenceHeaderBytes) / 4),
                          b.size());
    if (b.size() > need) throw FormatError("trailing bytes after payload", need);
    Tensor<float> t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = std::bit_cast<float>(detail::get_u32(b.data() + kSequenceHeaderBytes + 4 * i));
    return t;
}

inline void save_sequence(const std::filesystem::path& path, const VideoSequence& seq) {
    detail::write_file(path, encode_sequence(seq.frames));
}

inline VideoSequence load_sequence(const std::filesystem::path& path) {
    VideoSequence seq;
    seq.frames = decode_sequence(detail::read_file(path));
    seq.sequence_id = path.stem().string();
    return seq;
}

// ---------------------------------------------------------------------------
// Datasets

struct SequenceEntry {
    std::string id;
    std::string file;  // relative to the manifest root
    int T = 0, C = 0, H = 0, W = 0;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<SequenceEntry> sequences;
    std::uint64_t seed = 0;
    std::string split = "train";
    nlohmann::json generator;  // generation arguments, for reproduction

    nlohmann::json to_json() const {
        nlohmann::json seqs = nlohmann::json::array();
        for (const auto& s : sequences)
            seqs.push_back({{"id", s.id}, {"file", s.file}, {"T", s.T}, {"C", s.C}, {"H", s.H}, {"W", s.W}});
        return {{"format", "STIPDS1"}, {"seed", seed}, {"split", split}, {"generator", generator}, {"sequences", seqs}};
    }
};

inline constexpr const char* kManifestName = "manifest.json";

inline void save_manifest(const DatasetManifest& m) {
    std::ofstream out(m.root / kManifestName);
    if (!out) throw IoError("cannot write manifest under " + m.root.string());
    out << m.to_json().dump(2) << '\n';
}

/// Reads `dir/manifest.json` (or a manifest file path) and checks every listed file parses.
inline DatasetManifest load_manifest(const std::filesystem::path& dir_or_file) {
    namespace fs = std::filesystem;
    const fs::path file = fs::is_directory(dir_or_file) ? dir_or_file / kManifestName : dir_or_file;
    std::ifstream in(file);
    if (!in) throw IoError("cannot open manifest " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("manifest " + file.string() + " is not valid JSON: " + e.what());
    }
    DatasetManifest m;
    m.root = file.parent_path();
    try {
        m.seed = j.at("seed").get<std::uint64_t>();
        m.split = j.at("split").get<std::string>();
        if (j.contains("generator")) m.generator = j.at("generator");
        for (const auto& s : j.at("sequences")) {
            SequenceEntry e{s.at("id").get<std::string>(), s.at("file").get<std::string>(), s.at("T").get<int>(),
                            s.at("C").get<int>(), s.at("H").get<int>(), s.at("W").get<int>()};
            m.sequences.push_back(e);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("manifest " + file.string() + " is missing fields: " + e.what());
    }
    for (const auto& e : m.sequences) {
        const auto path = m.root / e.file;
        if (!fs::exists(path)) throw IoError("manifest lists missing file " + path.string());
    }
    return m;
}

inline std::vector<VideoSequence> load_dataset(const DatasetManifest& m) {
    std::vector<VideoSequence> out;
    for (const auto& e : m.sequences) {
        VideoSequence s = load_sequence(m.root / e.file);
        const Shape expect{e.T, e.C, e.H, e.W};
        if (s.frames.shape() != expect)
            throw ValidationError("sequence " + e.file + " has shape " + shape_str(s.frames.shape()) + ", manifest says " +
                                  shape_str(expect));
        s.sequence_id = e.id;
        out.push_back(std::move(s));
    }
    return out;
}

struct GeneratorArgs {
    int num_sequences = 16;
    int frames = 10;
    int height = 64;
    int width = 64;
    int num_shapes = 1;
    std::uint64_t seed = 0;
    int channels = 1;
    std::string split = "train";

    void validate() const {
        require(num_sequences >= 1, "sequences must be >= 1");
        require(frames >= 2, "frames must be >= 2");
        require(height >= 32 && width >= 32, "size must be >= 32");
        require(height % 16 == 0 && width % 16 == 0,
                "size must be divisible by 16 (got " + std::to_string(height) + "x" + std::to_string(width) + ")");
        require(num_shapes >= 1, "shapes must be >= 1");
        require(channels >= 1, "channels must be >= 1");
    }
};

/// Writes every sequence plus manifest.json into `out_dir` (created if needed).
inline DatasetManifest generate_moving_shapes(const std::filesystem::path& out_dir, const GeneratorArgs& args) {
    namespace fs = std::filesystem;
    args.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir.string());
    DatasetManifest m;
    m.root = out_dir;
    m.seed = args.seed;
    m.split = args.split;
    m.generator = {{"sequences", args.num_sequences}, {"frames", args.frames}, {"height", args.height},
                   {"width", args.width},             {"shapes", args.num_shapes}, {"channels", args.channels},
                   {"seed", args.seed}};
    for (int i = 0; i < args.num_sequences; ++i) {
        VideoSequence s = generate_sequence(i, args.frames, args.height, args.width, args.num_shapes, args.seed, args.channels);
        const std::string file = s.sequence_id + ".stipds";
        save_sequence(out_dir / file, s);
        m.sequences.push_back({s.sequence_id, file, args.frames, args.channels, args.height, args.width});
    }
    save_manifest(m);
    return m;
}

}  // namespace stip
