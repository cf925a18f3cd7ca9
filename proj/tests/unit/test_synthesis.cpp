#include <fstream>
#include <iterator>

#include <gtest/gtest.h>
#include <opencv2/imgproc.hpp>

#include "desmoke/error.hpp"
#include "desmoke/image_io.hpp"
#include "desmoke/smoke_synthesis.hpp"
#include "oracles.hpp"

using namespace desmoke;
using namespace desmoke::synth;

namespace {

cv::Mat random_frame(int h, int w, uint64_t seed) {
    cv::Mat m(h, w, CV_8UC3);
    cv::RNG rng(seed);
    rng.fill(m, cv::RNG::UNIFORM, 0, 256);
    return m;
}

cv::Mat constant_mask(int h, int w, int v) {
    return cv::Mat(h, w, CV_8UC1, cv::Scalar(v));
}

bool same_bytes(const cv::Mat& a, const cv::Mat& b) {
    return a.size() == b.size() && a.type() == b.type() && cv::norm(a, b, cv::NORM_INF) == 0.0;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("desmoke_synth_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST(SceneConfig, RejectsInvalid) {
    auto c = SceneConfig::defaults(Scenario::Diffusion);
    c.sources[0].x = 200.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = SceneConfig::defaults(Scenario::Diffusion);
    c.clip_length = 0;
    EXPECT_THROW(simulate_diffusion_smoke(c), ConfigError);
    c = SceneConfig::defaults(Scenario::Diffusion);
    c.omega = OmegaMode{false, 1.5};
    EXPECT_THROW(c.validate(), ConfigError);
    c = SceneConfig::defaults(Scenario::Diffusion);
    c.aug.blur_length = -1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = SceneConfig::defaults(Scenario::Ambient);
    EXPECT_THROW(simulate_diffusion_smoke(c), ConfigError);
}

TEST(SceneConfig, JsonRoundTrip) {
    auto c = SceneConfig::defaults(Scenario::Entangled, 64, 96, 5, 9);
    c.omega = OmegaMode{false, 0.4};
    c.aug = {true, 5};
    nlohmann::json j = c;
    const auto back = j.get<SceneConfig>();
    EXPECT_EQ(nlohmann::json(back), j);
}

TEST(DiffusionSmoke, StaticSingleStepIsIsotropicBlob) {
    auto c = SceneConfig::defaults(Scenario::Diffusion, 64, 64, 1);
    c.sources[0] = {32.0, 32.0, 0, 0.0, 0.0, 1.0};
    c.ambient.noise_scale = 0.0;
    const auto m = simulate_diffusion_smoke(c).at(0);
    const auto [cx, cy] = oracle::centroid(m);
    EXPECT_NEAR(cx, 32.0, 1e-9);
    EXPECT_NEAR(cy, 32.0, 1e-9);
    for (int d = 1; d < 12; ++d) {
        const int v = m.at<uchar>(32, 32 + d);
        EXPECT_EQ(m.at<uchar>(32, 32 - d), v);
        EXPECT_EQ(m.at<uchar>(32 + d, 32), v);
        EXPECT_EQ(m.at<uchar>(32 - d, 32), v);
        EXPECT_LE(v, m.at<uchar>(32, 32 + d - 1));
    }
    EXPECT_EQ(m.at<uchar>(32, 32), 255);
}

TEST(DiffusionSmoke, PlumeAdvectsAlongDirection) {
    auto c = SceneConfig::defaults(Scenario::Diffusion, 64, 64, 10);
    c.sources[0] = {10.0, 10.0, 0, 0.0, 2.0, 0.8};
    const auto masks = simulate_diffusion_smoke(c);
    EXPECT_GT(oracle::centroid(masks[9]).first, oracle::centroid(masks[0]).first);
}

TEST(DiffusionSmoke, CentroidDisplacementFollowsDirection) {
    for (double dir : {0.0, 60.0, 135.0, 200.0, 290.0}) {
        auto c = SceneConfig::defaults(Scenario::Diffusion, 96, 96, 12, 3);
        c.sources[0] = {48.0, 48.0, 0, dir, 2.0, 0.8};
        const auto masks = simulate_diffusion_smoke(c);
        const auto a = oracle::centroid(masks.front()), b = oracle::centroid(masks.back());
        const double ux = std::cos(dir * M_PI / 180.0), uy = std::sin(dir * M_PI / 180.0);
        EXPECT_GT((b.first - a.first) * ux + (b.second - a.second) * uy, 0.0) << "direction " << dir;
    }
}

TEST(DiffusionSmoke, Deterministic) {
    auto c = SceneConfig::defaults(Scenario::Diffusion, 64, 64, 6, 42);
    const auto a = simulate_diffusion_smoke(c), b = simulate_diffusion_smoke(c);
    for (size_t i = 0; i < a.size(); ++i) {
        EXPECT_TRUE(same_bytes(a[i], b[i]));
    }
}

TEST(DiffusionSmoke, DefaultCoverageIsLocal) {
    const auto masks = simulate_diffusion_smoke(SceneConfig::defaults(Scenario::Diffusion));
    for (const auto& m : masks) {
        EXPECT_LE(coverage_fraction(m), 0.25);
    }
}

TEST(AmbientSmoke, ZeroBaseGivesZeroMask) {
    auto c = SceneConfig::defaults(Scenario::Ambient);
    c.ambient.base_density = 0.0;
    for (const auto& m : simulate_ambient_smoke(c)) {
        EXPECT_EQ(cv::countNonZero(m), 0);
    }
}

TEST(AmbientSmoke, NoDriftIsStatic) {
    auto c = SceneConfig::defaults(Scenario::Ambient);
    c.ambient.base_density = 0.5;
    c.ambient.drift_speed = 0.0;
    const auto masks = simulate_ambient_smoke(c);
    const double m0 = cv::mean(masks[0])[0];
    for (const auto& m : masks) {
        EXPECT_LT(std::abs(cv::mean(m)[0] - m0), 1e-6);
    }
}

TEST(AmbientSmoke, DefaultCoverageIsGlobal) {
    for (const auto& m : simulate_ambient_smoke(SceneConfig::defaults(Scenario::Ambient))) {
        EXPECT_GE(coverage_fraction(m), 0.5);
    }
}

TEST(Composite, ZeroMaskAndZeroOmegaAreIdentity) {
    const auto clean = random_frame(16, 20, 1);
    EXPECT_TRUE(same_bytes(composite_frame(clean, constant_mask(16, 20, 0), 0.7, {}), clean));
    EXPECT_TRUE(same_bytes(composite_frame(clean, constant_mask(16, 20, 200), 0.0, {}), clean));
}

TEST(Composite, FullMaskFullOmegaIsWhite) {
    const auto clean = random_frame(16, 20, 2);
    const auto s = composite_frame(clean, constant_mask(16, 20, 255), 1.0, {});
    EXPECT_TRUE(same_bytes(s, cv::Mat(16, 20, CV_8UC3, cv::Scalar::all(255))));
}

TEST(Composite, MatchesBlendFormula) {
    const auto clean = random_frame(12, 12, 3);
    cv::Mat mask(12, 12, CV_8UC1);
    cv::RNG(4).fill(mask, cv::RNG::UNIFORM, 0, 256);
    const double omega = 0.6;
    const auto s = composite_frame(clean, mask, omega, {});
    for (int y = 0; y < 12; ++y) {
        for (int x = 0; x < 12; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double ic = clean.at<cv::Vec3b>(y, x)[c];
                const double expect = ic + omega * (255.0 - ic) * mask.at<uchar>(y, x) / 255.0;
                EXPECT_NEAR(s.at<cv::Vec3b>(y, x)[c], expect, 0.5 + 1e-4);
            }
        }
    }
}

TEST(Composite, InvertibleWithinOneLevel) {
    const auto clean = random_frame(24, 24, 5);
    cv::Mat mask(24, 24, CV_8UC1);
    cv::RNG(6).fill(mask, cv::RNG::UNIFORM, 0, 256);
    const double omega = 0.5;  // omega * M / 255 <= 0.5
    const auto s = composite_frame(clean, mask, omega, {});
    for (int y = 0; y < 24; ++y) {
        for (int x = 0; x < 24; ++x) {
            const double a = omega * mask.at<uchar>(y, x) / 255.0;
            for (int c = 0; c < 3; ++c) {
                const double recovered = (s.at<cv::Vec3b>(y, x)[c] - 255.0 * a) / (1.0 - a);
                EXPECT_LE(std::abs(recovered - clean.at<cv::Vec3b>(y, x)[c]), 1.0 + 1e-9);
            }
        }
    }
}

TEST(Composite, RejectsBadInputs) {
    const auto clean = random_frame(8, 8, 7);
    EXPECT_THROW(composite_frame(clean, constant_mask(8, 9, 0), 0.5, {}), ConfigError);
    EXPECT_THROW(composite_frame(clean, constant_mask(8, 8, 0), 1.5, {}), ConfigError);
    EXPECT_THROW(composite_frame(clean, constant_mask(8, 8, 0), -0.1, {}), ConfigError);
}

TEST(Composite, MotionBlurSpreadsAlongDirection) {
    const cv::Mat clean(21, 21, CV_8UC3, cv::Scalar::all(0));
    cv::Mat mask = constant_mask(21, 21, 0);
    mask.at<uchar>(10, 10) = 255;
    const auto s = composite_frame(clean, mask, 1.0, {true, 5}, 0.0);
    EXPECT_GT(s.at<cv::Vec3b>(10, 12)[0], 0);
    EXPECT_EQ(s.at<cv::Vec3b>(12, 10)[0], 0);
}

TEST(Omega, AutoIsClampedMeanDensity) {
    EXPECT_DOUBLE_EQ(auto_omega(constant_mask(4, 4, 0)), 0.2);
    EXPECT_DOUBLE_EQ(auto_omega(constant_mask(4, 4, 255)), 0.95);
    EXPECT_DOUBLE_EQ(auto_omega(constant_mask(4, 4, 102)), 0.4);
}

TEST(GenerateClip, ScenarioPurity) {
    const auto d = generate_clip(SceneConfig::defaults(Scenario::Diffusion));
    for (const auto& m : d.masks.amb) {
        EXPECT_EQ(cv::countNonZero(m), 0);
    }
    const auto a = generate_clip(SceneConfig::defaults(Scenario::Ambient));
    for (const auto& m : a.masks.diff) {
        EXPECT_EQ(cv::countNonZero(m), 0);
    }
}

TEST(GenerateClip, EntangledMasksIntersect) {
    const auto clip = generate_clip(SceneConfig::defaults(Scenario::Entangled));
    int best = 0;
    for (size_t t = 0; t < clip.masks.diff.size(); ++t) {
        cv::Mat bd = clip.masks.diff[t] > 0, ba = clip.masks.amb[t] > 0;
        best = std::max(best, cv::countNonZero(bd & ba));
    }
    EXPECT_GT(best, 0);
}

TEST(GenerateClip, RangeAndDims) {
    const auto clip = generate_clip(SceneConfig::defaults(Scenario::Entangled, 64, 80, 4));
    ASSERT_EQ(clip.smoky.size(), 4u);
    ASSERT_EQ(clip.omega.size(), 4u);
    for (size_t t = 0; t < 4; ++t) {
        EXPECT_EQ(clip.smoky[t].size(), cv::Size(80, 64));
        EXPECT_EQ(clip.masks.diff[t].size(), cv::Size(80, 64));
        EXPECT_GE(clip.omega[t], 0.0);
        EXPECT_LE(clip.omega[t], 1.0);
    }
}

TEST(GenerateClip, DirectoriesAreByteIdentical) {
    const auto cfg = randomize_scene(SceneConfig::defaults(Scenario::Entangled), 42);
    const auto a = temp_dir("a"), b = temp_dir("b");
    write_clip(generate_clip(cfg), a);
    write_clip(generate_clip(cfg), b);
    int files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (e.is_regular_file()) {
            const auto rel = fs::relative(e.path(), a);
            EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
            ++files;
        }
    }
    EXPECT_EQ(files, 8 * 4 + 1);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(ClipIo, RoundTripAndMetaSchema) {
    const auto dir = temp_dir("io");
    const auto clip = generate_clip(SceneConfig::defaults(Scenario::Entangled, 32, 32, 3));
    write_clip(clip, dir);
    const auto back = read_clip(dir);
    for (size_t t = 0; t < 3; ++t) {
        EXPECT_TRUE(same_bytes(back.smoky[t], clip.smoky[t]));
        EXPECT_TRUE(same_bytes(back.masks.amb[t], clip.masks.amb[t]));
    }
    const auto meta = nlohmann::json::parse(slurp(dir / "meta.json"));
    EXPECT_EQ(meta.at("schema_version").get<int>(), kMetaSchemaVersion);
    EXPECT_EQ(meta.at("omega").size(), 3u);
    fs::remove_all(dir);
}

TEST(ClipIo, MissingPartNamesClip) {
    const auto dir = temp_dir("broken") / "clip_0007";
    write_clip(generate_clip(SceneConfig::defaults(Scenario::Diffusion, 32, 32, 2)), dir);
    fs::remove_all(dir / "mask_amb");
    try {
        read_clip(dir);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("clip_0007"), std::string::npos);
    }
    fs::remove_all(dir.parent_path());
}
