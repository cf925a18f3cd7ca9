#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

namespace desmoke::synth {

namespace fs = std::filesystem;

enum class Scenario { Diffusion, Ambient, Entangled };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

/// Point emitter for a directional plume, typically placed at a tool tip.
struct SmokeSource {
    double x = 0.0;
    double y = 0.0;
    int start_frame = 0;
    double direction_deg = 0.0;  // 0 = +x, 90 = +y (image down)
    double velocity = 1.5;       // px per frame
    double emission_rate = 0.8;  // peak density added per frame
};

struct AmbientParams {
    double base_density = 0.45;
    double drift_speed = 0.5;  // px per frame
    double noise_scale = 1.0;  // turbulence strength, shared with the plume curl noise
};

struct OmegaMode {
    bool automatic = true;
    double value = 0.0;  // used when !automatic
};

struct AugParams {
    bool motion_blur = false;
    int blur_length = 0;  // px
};

struct SceneConfig {
    int clip_length = 8;
    int height = 96;
    int width = 96;
    Scenario scenario = Scenario::Entangled;
    std::vector<SmokeSource> sources;
    AmbientParams ambient;
    OmegaMode omega;
    AugParams aug;
    std::uint64_t seed = 0;
    /// Directory of clean PNG frames; empty selects the procedural tissue pattern.
    std::string clean_dir;

    /// Throws ConfigError on any violated invariant.
    void validate() const;

    /// Reference scene for a scenario: one source in the lower-left quadrant
    /// heading up-right for plume scenarios, default ambient parameters.
    static SceneConfig defaults(Scenario scenario, int height = 96, int width = 96,
                                int clip_length = 8, std::uint64_t seed = 0);
};

void to_json(nlohmann::json& j, const SceneConfig& c);
void from_json(const nlohmann::json& j, SceneConfig& c);

/// Per-type density masks, CV_8UC1 per frame.
struct SmokeMaskSet {
    std::vector<cv::Mat> diff;
    std::vector<cv::Mat> amb;
};

struct SyntheticClip {
    std::vector<cv::Mat> clean;  // CV_8UC3 RGB
    std::vector<cv::Mat> smoky;
    SmokeMaskSet masks;
    std::vector<double> omega;
    SceneConfig meta;
};

inline constexpr int kMetaSchemaVersion = 1;

std::vector<cv::Mat> simulate_diffusion_smoke(const SceneConfig& cfg);
std::vector<cv::Mat> simulate_ambient_smoke(const SceneConfig& cfg);

/// Soft compositing of white smoke over a clean frame:
///   I_s = clamp(I_c + omega * Aug((255 - I_c) * M / 255))
/// Aug is a directional box blur along `blur_direction_deg`, identity when disabled.
cv::Mat composite_frame(const cv::Mat& clean, const cv::Mat& mask, double omega,
                        const AugParams& aug, double blur_direction_deg = 0.0);

/// mean(M)/255 clamped to [0.2, 0.95].
double auto_omega(const cv::Mat& total_mask);

/// Fraction of pixels with normalized density above `threshold`.
double coverage_fraction(const cv::Mat& mask, double threshold = 0.05);

std::vector<cv::Mat> procedural_clean_clip(const SceneConfig& cfg);

SyntheticClip generate_clip(const SceneConfig& cfg);
SyntheticClip generate_clip(const SceneConfig& cfg, const std::vector<cv::Mat>& clean);

/// Per-clip variation of `base` used by `synth --count`: jitters source
/// placement/heading/speed and ambient density from `seed`.
SceneConfig randomize_scene(const SceneConfig& base, std::uint64_t seed);

/// Writes clean/, smoky/, mask_diff/, mask_amb/ and meta.json under `dir`.
void write_clip(const SyntheticClip& clip, const fs::path& dir);

/// Reads a clip directory written by write_clip. Throws DataError naming the
/// clip on missing parts or inconsistent frame counts/dims.
SyntheticClip read_clip(const fs::path& dir);

/// Sorted clip_* subdirectories of a dataset root.
std::vector<fs::path> list_clip_dirs(const fs::path& root);

}  // namespace desmoke::synth
