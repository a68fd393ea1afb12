#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>

#include "test_support.hpp"

using namespace stip;
using namespace stip::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("stip_data_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

/// Reflective motion on [lo, hi] by unfolding onto a line of period 2(hi - lo).
double unfolded_position(double x0, double v, int frame, double lo, double hi) {
    const double len = hi - lo;
    double m = std::fmod(x0 - lo + v * frame, 2 * len);
    if (m < 0) m += 2 * len;
    return lo + (m <= len ? m : 2 * len - m);
}

VideoSequence counting_sequence(int T) {
    VideoSequence s;
    s.frames = Tensor<float>({T, 1, 2, 2});
    for (int t = 0; t < T; ++t)
        for (int i = 0; i < 4; ++i) s.frames[static_cast<std::size_t>(t * 4 + i)] = static_cast<float>(t + 1);
    s.sequence_id = "count";
    return s;
}

}  // namespace

TEST(Kinematics, LinearMotionWithoutWallContact) {
    EXPECT_DOUBLE_EQ(reflect_position(10, 2, 5, 0, 63).first, 20.0);
    EXPECT_DOUBLE_EQ(reflect_position(10, 2, 5, 0, 63).second, 2.0);
}

TEST(Kinematics, BounceMatchesUnfoldedReference) {
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 500; ++trial) {
        const double lo = 4 + unit_uniform(rng) * 4;
        const double hi = 63 - lo;
        const double x0 = lo + unit_uniform(rng) * (hi - lo);
        const double v = (unit_uniform(rng) * 2 - 1) * 3;
        for (int f = 0; f <= 40; ++f)
            ASSERT_NEAR(reflect_position(x0, v, f, lo, hi).first, unfolded_position(x0, v, f, lo, hi), 1e-9)
                << "x0=" << x0 << " v=" << v << " frame=" << f;
    }
}

TEST(Kinematics, ApproachingRightWall) {
    // Starts 1 px from the wall at x = 62, moving right at 3 px/frame.
    const double lo = 1, hi = 62;
    for (int f = 0; f < 10; ++f)
        EXPECT_NEAR(reflect_position(61, 3, f, lo, hi).first, unfolded_position(61, 3, f, lo, hi), 1e-12);
    EXPECT_DOUBLE_EQ(reflect_position(61, 3, 1, lo, hi).first, 60.0);
    EXPECT_DOUBLE_EQ(reflect_position(61, 3, 1, lo, hi).second, -3.0);
}

TEST(Generator, DeterministicAndBounded) {
    const auto a = generate_sequence(3, 10, 64, 64, 2, 7);
    const auto b = generate_sequence(3, 10, 64, 64, 2, 7);
    EXPECT_EQ(a.frames, b.frames);
    EXPECT_EQ(a.sequence_id, "seq_00003");
    const auto c = generate_sequence(4, 10, 64, 64, 2, 7);
    EXPECT_NE(a.frames, c.frames);
    for (float v : a.frames.vec()) {
        ASSERT_GE(v, 0.f);
        ASSERT_LE(v, 1.f);
    }
    double total = 0;
    for (float v : a.frames.vec()) total += v;
    EXPECT_GT(total, 0);
}

TEST(Generator, ShapeCentreFollowsKinematics) {
    // The intensity-weighted centroid of a single rendered shape tracks its centre.
    ShapeSpec s;
    s.kind = ShapeKind::kRectangle;
    s.half_extent = 5;
    s.intensity = 1;
    s.x0 = 10;
    s.y0 = 30;
    s.vx = 2;
    s.vy = 0;
    std::vector<float> frame(64 * 64);
    render_frame({s}, 5, 64, 64, frame.data());
    double mx = 0, mass = 0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            mx += x * frame[static_cast<std::size_t>(y * 64 + x)];
            mass += frame[static_cast<std::size_t>(y * 64 + x)];
        }
    EXPECT_NEAR(mx / mass, 20.0, 0.05);
    EXPECT_DOUBLE_EQ(shape_center(s, 5, 64, 64).first, 20.0);
}

TEST(Generator, ValidatesArguments) {
    GeneratorArgs a;
    a.height = a.width = 63;
    EXPECT_THROW(a.validate(), ValidationError);
    a.height = a.width = 16;
    EXPECT_THROW(a.validate(), ValidationError);
    a = GeneratorArgs{};
    a.frames = 1;
    EXPECT_THROW(a.validate(), ValidationError);
}

TEST(Generator, WritesByteIdenticalDatasets) {
    const auto d1 = scratch("gen1"), d2 = scratch("gen2");
    GeneratorArgs a;
    a.num_sequences = 2;
    a.frames = 10;
    a.seed = 7;
    const auto m = generate_moving_shapes(d1, a);
    generate_moving_shapes(d2, a);
    ASSERT_EQ(m.sequences.size(), 2u);
    for (const auto& e : m.sequences) EXPECT_EQ(detail::read_file(d1 / e.file), detail::read_file(d2 / e.file));
    EXPECT_EQ(detail::read_file(d1 / kManifestName), detail::read_file(d2 / kManifestName));

    const auto loaded = load_manifest(d1);
    EXPECT_EQ(loaded.sequences.size(), 2u);
    EXPECT_EQ(loaded.sequences[0].T, 10);
    const auto data = load_dataset(loaded);
    EXPECT_EQ(data[1].frames, generate_sequence(1, 10, 64, 64, 1, 7).frames);
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST(Clip, Indexing) {
    const auto seq = counting_sequence(10);
    auto frames_of = [](const ClipWindow& c) {
        std::vector<float> out;
        for (int l = 0; l < c.clip.dim(0); ++l) out.push_back(c.clip.index0(l)[0]);
        return out;
    };
    EXPECT_EQ(frames_of(make_clip(seq, 5, 2)), (std::vector<float>{4, 5}));
    EXPECT_EQ(frames_of(make_clip(seq, 1, 2)), (std::vector<float>{1, 1}));
    EXPECT_EQ(frames_of(make_clip(seq, 10, 2)), (std::vector<float>{9, 10}));
    EXPECT_EQ(make_clip(seq, 5, 2).t_index, 5);
    EXPECT_THROW(make_clip(seq, 0, 2), IndexError);
    EXPECT_THROW(make_clip(seq, 11, 2), IndexError);
}

TEST(Clip, NeverReadsOutsideSequenceProperty) {
    std::mt19937_64 rng(43);
    for (int trial = 0; trial < 200; ++trial) {
        const int T = 1 + static_cast<int>(rng() % 12);
        const int L = 1 + static_cast<int>(rng() % 5);
        const int t = 1 + static_cast<int>(rng() % static_cast<unsigned>(T));
        const auto c = make_clip(counting_sequence(T), t, L);
        ASSERT_EQ(c.clip.dim(0), L);
        for (int l = 0; l < L; ++l) {
            const float f = c.clip.index0(l)[0];
            ASSERT_EQ(f, static_cast<float>(std::max(1, t - L + 1 + l)));
        }
    }
}

TEST(SequenceFormat, RoundTripIsBitIdentical) {
    const auto seq = generate_sequence(0, 6, 32, 32, 2, 11, 3);
    const auto bytes = encode_sequence(seq.frames);
    ASSERT_EQ(bytes.size(), kSequenceHeaderBytes + seq.frames.numel() * 4);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), std::string("STIPDS1\0", 8));
    EXPECT_EQ(detail::get_u32(bytes.data() + 8), 6u);
    EXPECT_EQ(detail::get_u32(bytes.data() + 12), 3u);
    const auto back = decode_sequence(bytes);
    EXPECT_EQ(back, seq.frames);
    EXPECT_EQ(encode_sequence(back), bytes);

    const auto dir = scratch("fmt");
    save_sequence(dir / "a.stipds", seq);
    EXPECT_EQ(load_sequence(dir / "a.stipds").frames, seq.frames);
    fs::remove_all(dir);
}

TEST(SequenceFormat, LittleEndianFloatLayout) {
    Tensor<float> f({1, 1, 1, 2}, std::vector<float>{1.0f, -2.5f});
    const auto b = encode_sequence(f);
    // 1.0f = 0x3F800000
    EXPECT_EQ(b[24], 0x00);
    EXPECT_EQ(b[27], 0x3F);
    EXPECT_EQ(b[26], 0x80);
}

TEST(SequenceFormat, Errors) {
    const auto good = encode_sequence(generate_sequence(0, 2, 32, 32, 1, 1).frames);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    try {
        decode_sequence(bad_magic);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }

    auto truncated = good;
    truncated.resize(truncated.size() - 5);
    EXPECT_THROW(decode_sequence(truncated), FormatError);

    EXPECT_THROW(decode_sequence(std::vector<unsigned char>(good.begin(), good.begin() + 12)), FormatError);

    auto huge = good;
    for (int i = 8; i < 24; ++i) huge[static_cast<std::size_t>(i)] = 0xFF;  // T*C*H*W overflows
    EXPECT_THROW(decode_sequence(huge), FormatError);

    auto trailing = good;
    trailing.push_back(0);
    EXPECT_THROW(decode_sequence(trailing), FormatError);
}

TEST(Manifest, MissingFileIsReported) {
    const auto dir = scratch("manifest");
    GeneratorArgs a;
    a.num_sequences = 1;
    a.frames = 3;
    a.height = a.width = 32;
    const auto m = generate_moving_shapes(dir, a);
    fs::remove(dir / m.sequences[0].file);
    EXPECT_THROW(load_manifest(dir), IoError);
    fs::remove_all(dir);
}
