#include "desmoke/smoke_synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <opencv2/imgproc.hpp>

#include "desmoke/error.hpp"
#include "desmoke/image_io.hpp"

namespace desmoke::synth {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

// Plume dynamics.
constexpr double kEmitSigmaFrac = 1.0 / 24.0;  // splat sigma as a fraction of max(H, W)
constexpr double kDiffuseSigma = 0.6;    // px, per-step blur
constexpr double kPlumeDecay = 0.95;     // per-step density retention
constexpr double kCurlLength = 16.0;     // px, spatial scale of the turbulence potential
constexpr double kCurlTimeScale = 0.15;  // potential evolution per frame
constexpr double kCurlGain = 1.0;        // px/frame at noise_scale 1

// Ambient field.
constexpr int kAmbientOctaves = 4;
constexpr double kAmbientContrast = 0.6;
constexpr double kAmbientDriftDeg = 30.0;

constexpr double kOmegaMin = 0.2;
constexpr double kOmegaMax = 0.95;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Smooth lattice noise in [0,1], fully determined by the seed.
class ValueNoise {
public:
    explicit ValueNoise(std::uint64_t seed) : seed_(splitmix64(seed)) {}

    double at(double x, double y, double z) const {
        const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
        const auto ix = static_cast<std::int64_t>(fx);
        const auto iy = static_cast<std::int64_t>(fy);
        const auto iz = static_cast<std::int64_t>(fz);
        const double u = fade(x - fx), v = fade(y - fy), w = fade(z - fz);
        auto lerp = [](double a, double b, double s) { return a + (b - a) * s; };
        const double x00 = lerp(lattice(ix, iy, iz), lattice(ix + 1, iy, iz), u);
        const double x10 = lerp(lattice(ix, iy + 1, iz), lattice(ix + 1, iy + 1, iz), u);
        const double x01 = lerp(lattice(ix, iy, iz + 1), lattice(ix + 1, iy, iz + 1), u);
        const double x11 = lerp(lattice(ix, iy + 1, iz + 1), lattice(ix + 1, iy + 1, iz + 1), u);
        return lerp(lerp(x00, x10, v), lerp(x01, x11, v), w);
    }

    /// Fractal sum of octaves, normalized to [-1,1].
    double fbm(double x, double y, double z, int octaves) const {
        double sum = 0.0, amp = 1.0, norm = 0.0, freq = 1.0;
        for (int o = 0; o < octaves; ++o) {
            sum += amp * (2.0 * at(x * freq, y * freq, z + 17.0 * o) - 1.0);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        return sum / norm;
    }

private:
    static double fade(double t) { return t * t * (3.0 - 2.0 * t); }

    double lattice(std::int64_t ix, std::int64_t iy, std::int64_t iz) const {
        std::uint64_t h = seed_;
        h = splitmix64(h ^ static_cast<std::uint64_t>(ix) * 0x8da6b343ULL);
        h = splitmix64(h ^ static_cast<std::uint64_t>(iy) * 0xd8163841ULL);
        h = splitmix64(h ^ static_cast<std::uint64_t>(iz) * 0xcb1ab31fULL);
        return static_cast<double>(h >> 11) * 0x1.0p-53;
    }

    std::uint64_t seed_;
};

/// Uniform double in [0,1) from a 64-bit engine, independent of the
/// standard library's distribution implementation.
double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

cv::Mat to_mask8(const cv::Mat& density) {
    cv::Mat out;
    density.convertTo(out, CV_8UC1, 255.0);  // saturating, round-to-nearest
    return out;
}

void add_gaussian_splat(cv::Mat& field, double cx, double cy, double sigma, double amp) {
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx)) - r);
    const int x1 = std::min(field.cols - 1, static_cast<int>(std::ceil(cx)) + r);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy)) - r);
    const int y1 = std::min(field.rows - 1, static_cast<int>(std::ceil(cy)) + r);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int y = y0; y <= y1; ++y) {
        auto* row = field.ptr<float>(y);
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - cx, dy = y - cy;
            row[x] += static_cast<float>(amp * std::exp(-(dx * dx + dy * dy) * inv));
        }
    }
}

/// Divergence-free turbulence: v = (d psi/dy, -d psi/dx) of a smooth potential.
void curl_velocity(const ValueNoise& noise, int frame, int rows, int cols, double gain,
                   cv::Mat& vx, cv::Mat& vy) {
    vx.create(rows, cols, CV_32F);
    vy.create(rows, cols, CV_32F);
    const double z = frame * kCurlTimeScale;
    // Potential sampled on a (rows+2)x(cols+2) grid for central differences.
    cv::Mat psi(rows + 2, cols + 2, CV_64F);
    for (int y = 0; y < rows + 2; ++y) {
        auto* row = psi.ptr<double>(y);
        for (int x = 0; x < cols + 2; ++x) {
            row[x] = noise.at((x - 1) / kCurlLength, (y - 1) / kCurlLength, z);
        }
    }
    // d(psi)/d(px) ~ 1/kCurlLength, so scale back to px/frame.
    const double s = gain * kCurlLength * 0.5;
    for (int y = 0; y < rows; ++y) {
        auto* ox = vx.ptr<float>(y);
        auto* oy = vy.ptr<float>(y);
        for (int x = 0; x < cols; ++x) {
            const double dpdy = psi.at<double>(y + 2, x + 1) - psi.at<double>(y, x + 1);
            const double dpdx = psi.at<double>(y + 1, x + 2) - psi.at<double>(y + 1, x);
            ox[x] = static_cast<float>(s * dpdy);
            oy[x] = static_cast<float>(-s * dpdx);
        }
    }
}

/// Semi-Lagrangian advection: out(p) = field(p - v(p)), zero outside the frame.
cv::Mat advect(const cv::Mat& field, double ux, double uy, const cv::Mat* vx, const cv::Mat* vy) {
    cv::Mat map_x(field.size(), CV_32F), map_y(field.size(), CV_32F);
    for (int y = 0; y < field.rows; ++y) {
        auto* mx = map_x.ptr<float>(y);
        auto* my = map_y.ptr<float>(y);
        const float* cx = vx ? vx->ptr<float>(y) : nullptr;
        const float* cy = vy ? vy->ptr<float>(y) : nullptr;
        for (int x = 0; x < field.cols; ++x) {
            const double dx = ux + (cx ? cx[x] : 0.0);
            const double dy = uy + (cy ? cy[x] : 0.0);
            mx[x] = static_cast<float>(x - dx);
            my[x] = static_cast<float>(y - dy);
        }
    }
    cv::Mat out;
    cv::remap(field, out, map_x, map_y, cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar(0));
    return out;
}

cv::Mat motion_blur(const cv::Mat& layer, int length, double direction_deg) {
    if (length <= 1) {
        return layer;
    }
    const int size = length % 2 == 1 ? length : length + 1;
    cv::Mat kernel = cv::Mat::zeros(size, size, CV_32F);
    const double c = (size - 1) / 2.0;
    const double dx = std::cos(direction_deg * kDegToRad);
    const double dy = std::sin(direction_deg * kDegToRad);
    for (int i = 0; i < length; ++i) {
        const double s = i - (length - 1) / 2.0;
        const int x = static_cast<int>(std::lround(c + s * dx));
        const int y = static_cast<int>(std::lround(c + s * dy));
        kernel.at<float>(y, x) += 1.0f;
    }
    kernel /= cv::sum(kernel)[0];
    cv::Mat out;
    cv::filter2D(layer, out, -1, kernel, cv::Point(-1, -1), 0.0, cv::BORDER_REFLECT);
    return out;
}

std::vector<cv::Mat> zero_masks(const SceneConfig& cfg) {
    std::vector<cv::Mat> out;
    for (int t = 0; t < cfg.clip_length; ++t) {
        out.push_back(cv::Mat::zeros(cfg.height, cfg.width, CV_8UC1));
    }
    return out;
}

std::vector<cv::Mat> load_clean(const SceneConfig& cfg) {
    auto frames = io::read_rgb_sequence(cfg.clean_dir);
    if (static_cast<int>(frames.size()) < cfg.clip_length) {
        throw ConfigError("clean_dir " + cfg.clean_dir + " has " + std::to_string(frames.size()) +
                          " frames, need " + std::to_string(cfg.clip_length));
    }
    frames.resize(static_cast<size_t>(cfg.clip_length));
    for (const auto& f : frames) {
        if (f.rows != cfg.height || f.cols != cfg.width) {
            throw ConfigError("clean_dir frame size does not match scene height/width");
        }
    }
    return frames;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

}  // namespace

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::Diffusion: return "diffusion";
        case Scenario::Ambient: return "ambient";
        case Scenario::Entangled: return "entangled";
    }
    return "unknown";
}

Scenario scenario_from_string(const std::string& s) {
    if (s == "diffusion") return Scenario::Diffusion;
    if (s == "ambient") return Scenario::Ambient;
    if (s == "entangled") return Scenario::Entangled;
    throw ConfigError("unknown scenario '" + s + "'");
}

void SceneConfig::validate() const {
    if (clip_length < 1) {
        throw ConfigError("clip_length must be >= 1");
    }
    if (height < 1 || width < 1) {
        throw ConfigError("height and width must be positive");
    }
    for (size_t i = 0; i < sources.size(); ++i) {
        const auto& s = sources[i];
        if (!(s.x >= 0.0 && s.x < width && s.y >= 0.0 && s.y < height)) {
            throw ConfigError("source " + std::to_string(i) + " lies outside the frame");
        }
        if (s.start_frame < 0) {
            throw ConfigError("source " + std::to_string(i) + " has negative start_frame");
        }
        if (s.emission_rate < 0.0 || s.velocity < 0.0) {
            throw ConfigError("source " + std::to_string(i) + " has negative velocity/emission");
        }
    }
    if (ambient.base_density < 0.0 || ambient.base_density > 1.0) {
        throw ConfigError("ambient base_density must lie in [0,1]");
    }
    if (ambient.noise_scale < 0.0) {
        throw ConfigError("noise_scale must be >= 0");
    }
    if (!omega.automatic && (omega.value < 0.0 || omega.value > 1.0)) {
        throw ConfigError("fixed omega must lie in [0,1]");
    }
    if (aug.blur_length < 0) {
        throw ConfigError("blur_length must be >= 0");
    }
}

SceneConfig SceneConfig::defaults(Scenario scenario, int height, int width, int clip_length,
                                  std::uint64_t seed) {
    SceneConfig c;
    c.scenario = scenario;
    c.height = height;
    c.width = width;
    c.clip_length = clip_length;
    c.seed = seed;
    if (scenario != Scenario::Ambient) {
        SmokeSource s;
        s.x = 0.3 * width;
        s.y = 0.7 * height;
        s.direction_deg = -45.0;
        // Later cauterization: the plume starts after the ambient haze exists.
        s.start_frame = scenario == Scenario::Entangled ? 1 : 0;
        c.sources.push_back(s);
    }
    return c;
}

void to_json(nlohmann::json& j, const SceneConfig& c) {
    nlohmann::json sources = nlohmann::json::array();
    for (const auto& s : c.sources) {
        sources.push_back({{"x", s.x},
                           {"y", s.y},
                           {"start_frame", s.start_frame},
                           {"direction_deg", s.direction_deg},
                           {"velocity", s.velocity},
                           {"emission_rate", s.emission_rate}});
    }
    j = nlohmann::json{
        {"clip_length", c.clip_length},
        {"height", c.height},
        {"width", c.width},
        {"scenario", to_string(c.scenario)},
        {"sources", sources},
        {"ambient",
         {{"base_density", c.ambient.base_density},
          {"drift_speed", c.ambient.drift_speed},
          {"noise_scale", c.ambient.noise_scale}}},
        {"aug", {{"motion_blur", c.aug.motion_blur}, {"blur_length", c.aug.blur_length}}},
        {"seed", c.seed},
        {"clean_dir", c.clean_dir},
    };
    if (c.omega.automatic) {
        j["omega"] = "auto";
    } else {
        j["omega"] = c.omega.value;
    }
}

void from_json(const nlohmann::json& j, SceneConfig& c) {
    try {
        c = SceneConfig{};
        c.scenario = scenario_from_string(j.value("scenario", std::string("entangled")));
        c.clip_length = j.value("clip_length", c.clip_length);
        c.height = j.value("height", c.height);
        c.width = j.value("width", c.width);
        c.seed = j.value("seed", c.seed);
        c.clean_dir = j.value("clean_dir", std::string());
        if (j.contains("sources")) {
            for (const auto& js : j.at("sources")) {
                SmokeSource s;
                s.x = js.at("x").get<double>();
                s.y = js.at("y").get<double>();
                s.start_frame = js.value("start_frame", s.start_frame);
                s.direction_deg = js.value("direction_deg", s.direction_deg);
                s.velocity = js.value("velocity", s.velocity);
                s.emission_rate = js.value("emission_rate", s.emission_rate);
                c.sources.push_back(s);
            }
        } else if (c.scenario != Scenario::Ambient) {
            c.sources = SceneConfig::defaults(c.scenario, c.height, c.width).sources;
        }
        if (j.contains("ambient")) {
            const auto& a = j.at("ambient");
            c.ambient.base_density = a.value("base_density", c.ambient.base_density);
            c.ambient.drift_speed = a.value("drift_speed", c.ambient.drift_speed);
            c.ambient.noise_scale = a.value("noise_scale", c.ambient.noise_scale);
        }
        if (j.contains("aug")) {
            const auto& a = j.at("aug");
            c.aug.motion_blur = a.value("motion_blur", c.aug.motion_blur);
            c.aug.blur_length = a.value("blur_length", c.aug.blur_length);
        }
        if (j.contains("omega")) {
            const auto& o = j.at("omega");
            if (o.is_string()) {
                if (o.get<std::string>() != "auto") {
                    throw ConfigError("omega must be \"auto\" or a number");
                }
                c.omega = OmegaMode{};
            } else {
                c.omega = OmegaMode{false, o.get<double>()};
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed scene config: ") + e.what());
    }
}

std::vector<cv::Mat> simulate_diffusion_smoke(const SceneConfig& cfg) {
    cfg.validate();
    if (cfg.scenario == Scenario::Ambient) {
        throw ConfigError("diffusion smoke requires a diffusion or entangled scenario");
    }
    if (cfg.sources.empty()) {
        throw ConfigError("diffusion smoke requires at least one source");
    }
    const ValueNoise noise(cfg.seed ^ 0x51ed2701ULL);
    const bool turbulent = cfg.ambient.noise_scale > 0.0;
    const double gain = kCurlGain * cfg.ambient.noise_scale;
    const double emit_sigma = kEmitSigmaFrac * std::max(cfg.height, cfg.width);

    std::vector<cv::Mat> fields(cfg.sources.size());
    for (auto& f : fields) {
        f = cv::Mat::zeros(cfg.height, cfg.width, CV_32F);
    }
    std::vector<cv::Mat> out;
    out.reserve(static_cast<size_t>(cfg.clip_length));
    cv::Mat vx, vy;
    for (int t = 0; t < cfg.clip_length; ++t) {
        if (turbulent && t > 0) {
            curl_velocity(noise, t, cfg.height, cfg.width, gain, vx, vy);
        }
        cv::Mat total = cv::Mat::zeros(cfg.height, cfg.width, CV_32F);
        for (size_t i = 0; i < cfg.sources.size(); ++i) {
            const auto& src = cfg.sources[i];
            cv::Mat& field = fields[i];
            if (t > src.start_frame) {
                const double ux = src.velocity * std::cos(src.direction_deg * kDegToRad);
                const double uy = src.velocity * std::sin(src.direction_deg * kDegToRad);
                field = advect(field, ux, uy, turbulent ? &vx : nullptr, turbulent ? &vy : nullptr);
                cv::GaussianBlur(field, field, cv::Size(0, 0), kDiffuseSigma, kDiffuseSigma,
                                 cv::BORDER_CONSTANT);
                field *= kPlumeDecay;
            }
            if (t >= src.start_frame) {
                add_gaussian_splat(field, src.x, src.y, emit_sigma, src.emission_rate);
            }
            total += field;
        }
        out.push_back(to_mask8(total));
    }
    return out;
}

std::vector<cv::Mat> simulate_ambient_smoke(const SceneConfig& cfg) {
    cfg.validate();
    if (cfg.scenario == Scenario::Diffusion) {
        throw ConfigError("ambient smoke requires an ambient or entangled scenario");
    }
    const ValueNoise noise(cfg.seed ^ 0xa3b1e6c5ULL);
    const double scale = std::max(cfg.height, cfg.width) / 3.0;
    const double contrast = kAmbientContrast * std::min(1.0, cfg.ambient.noise_scale);
    const double drift_x = std::cos(kAmbientDriftDeg * kDegToRad) * cfg.ambient.drift_speed;
    const double drift_y = std::sin(kAmbientDriftDeg * kDegToRad) * cfg.ambient.drift_speed;

    std::vector<cv::Mat> out;
    out.reserve(static_cast<size_t>(cfg.clip_length));
    for (int t = 0; t < cfg.clip_length; ++t) {
        cv::Mat density(cfg.height, cfg.width, CV_32F);
        const double ox = drift_x * t, oy = drift_y * t;
        for (int y = 0; y < cfg.height; ++y) {
            auto* row = density.ptr<float>(y);
            for (int x = 0; x < cfg.width; ++x) {
                const double n = noise.fbm((x + ox) / scale, (y + oy) / scale, 0.0, kAmbientOctaves);
                const double d = cfg.ambient.base_density * (1.0 + contrast * n);
                row[x] = static_cast<float>(std::clamp(d, 0.0, 1.0));
            }
        }
        out.push_back(to_mask8(density));
    }
    return out;
}

cv::Mat composite_frame(const cv::Mat& clean, const cv::Mat& mask, double omega,
                        const AugParams& aug, double blur_direction_deg) {
    if (clean.type() != CV_8UC3 || mask.type() != CV_8UC1) {
        throw ConfigError("composite_frame expects an 8-bit RGB frame and an 8-bit mask");
    }
    if (clean.size() != mask.size()) {
        throw ConfigError("composite_frame: frame and mask dimensions differ");
    }
    if (!(omega >= 0.0 && omega <= 1.0)) {
        throw ConfigError("composite_frame: omega must lie in [0,1]");
    }
    cv::Mat c, m;
    clean.convertTo(c, CV_32FC3);
    mask.convertTo(m, CV_32F, 1.0 / 255.0);
    cv::Mat m3;
    cv::merge(std::vector<cv::Mat>{m, m, m}, m3);
    cv::Mat layer = (cv::Scalar::all(255.0) - c).mul(m3);
    if (aug.motion_blur) {
        layer = motion_blur(layer, aug.blur_length, blur_direction_deg);
    }
    cv::Mat smoky_f = c + layer * omega;
    cv::Mat smoky;
    smoky_f.convertTo(smoky, CV_8UC3);
    return smoky;
}

double auto_omega(const cv::Mat& total_mask) {
    return std::clamp(cv::mean(total_mask)[0] / 255.0, kOmegaMin, kOmegaMax);
}

double coverage_fraction(const cv::Mat& mask, double threshold) {
    const double cutoff = threshold * 255.0;
    int count = 0;
    for (int y = 0; y < mask.rows; ++y) {
        const auto* row = mask.ptr<std::uint8_t>(y);
        for (int x = 0; x < mask.cols; ++x) {
            count += row[x] > cutoff ? 1 : 0;
        }
    }
    return static_cast<double>(count) / (static_cast<double>(mask.rows) * mask.cols);
}

std::vector<cv::Mat> procedural_clean_clip(const SceneConfig& cfg) {
    const ValueNoise tissue(cfg.seed ^ 0x7f4a7c15ULL);
    const ValueNoise vessels(cfg.seed ^ 0x2545f491ULL);
    const double scale = std::max(cfg.height, cfg.width) / 4.0;
    std::vector<cv::Mat> frames;
    for (int t = 0; t < cfg.clip_length; ++t) {
        // Slow camera pan.
        const double px = 0.7 * t, py = 0.3 * t;
        cv::Mat frame(cfg.height, cfg.width, CV_8UC3);
        for (int y = 0; y < cfg.height; ++y) {
            auto* row = frame.ptr<cv::Vec3b>(y);
            for (int x = 0; x < cfg.width; ++x) {
                const double u = (x + px) / scale, v = (y + py) / scale;
                const double n1 = tissue.fbm(u, v, 0.0, 4);
                const double n2 = tissue.fbm(u, v, 5.0, 3);
                const double n3 = vessels.fbm(u * 0.7, v * 0.7, 0.0, 2);
                const double vessel = std::abs(std::sin((x + px) / 9.0 + 4.0 * n3));
                const double dark = vessel < 0.12 ? 0.55 + 3.75 * vessel : 1.0;
                const double r = (165.0 + 55.0 * n1) * dark;
                const double g = (70.0 + 35.0 * n2 + 10.0 * n1) * dark;
                const double b = (60.0 + 30.0 * n2) * dark;
                row[x] = cv::Vec3b(cv::saturate_cast<uchar>(r), cv::saturate_cast<uchar>(g),
                                   cv::saturate_cast<uchar>(b));
            }
        }
        frames.push_back(frame);
    }
    return frames;
}

SyntheticClip generate_clip(const SceneConfig& cfg) {
    cfg.validate();
    return generate_clip(cfg, cfg.clean_dir.empty() ? procedural_clean_clip(cfg) : load_clean(cfg));
}

SyntheticClip generate_clip(const SceneConfig& cfg, const std::vector<cv::Mat>& clean) {
    cfg.validate();
    if (static_cast<int>(clean.size()) != cfg.clip_length) {
        throw ConfigError("clean clip length does not match clip_length");
    }
    SyntheticClip clip;
    clip.meta = cfg;
    clip.clean = clean;
    clip.masks.diff = cfg.scenario == Scenario::Ambient ? zero_masks(cfg) : simulate_diffusion_smoke(cfg);
    clip.masks.amb = cfg.scenario == Scenario::Diffusion ? zero_masks(cfg) : simulate_ambient_smoke(cfg);
    const double blur_dir = cfg.sources.empty() ? kAmbientDriftDeg : cfg.sources.front().direction_deg;
    for (int t = 0; t < cfg.clip_length; ++t) {
        const auto& c = clean[static_cast<size_t>(t)];
        if (c.rows != cfg.height || c.cols != cfg.width || c.type() != CV_8UC3) {
            throw ConfigError("clean frame " + std::to_string(t) + " does not match scene dims");
        }
        cv::Mat total;
        cv::add(clip.masks.diff[static_cast<size_t>(t)], clip.masks.amb[static_cast<size_t>(t)], total);
        const double omega = cfg.omega.automatic ? auto_omega(total) : cfg.omega.value;
        clip.omega.push_back(omega);
        clip.smoky.push_back(composite_frame(c, total, omega, cfg.aug, blur_dir));
    }
    return clip;
}

SceneConfig randomize_scene(const SceneConfig& base, std::uint64_t seed) {
    SceneConfig c = base;
    c.seed = seed;
    std::mt19937_64 rng(splitmix64(seed));
    for (auto& s : c.sources) {
        s.x = uniform(rng, 0.15, 0.85) * c.width;
        s.y = uniform(rng, 0.15, 0.85) * c.height;
        s.direction_deg = uniform(rng, 0.0, 360.0);
        s.velocity *= uniform(rng, 0.7, 1.3);
        s.emission_rate *= uniform(rng, 0.8, 1.2);
    }
    c.ambient.base_density = std::clamp(c.ambient.base_density * uniform(rng, 0.8, 1.2), 0.0, 1.0);
    return c;
}

void write_clip(const SyntheticClip& clip, const fs::path& dir) {
    io::write_rgb_sequence(dir / "clean", clip.clean);
    io::write_rgb_sequence(dir / "smoky", clip.smoky);
    io::write_gray_sequence(dir / "mask_diff", clip.masks.diff);
    io::write_gray_sequence(dir / "mask_amb", clip.masks.amb);
    nlohmann::json meta{
        {"schema_version", kMetaSchemaVersion},
        {"scene", clip.meta},
        {"omega", clip.omega},
    };
    write_json(dir / "meta.json", meta);
}

SyntheticClip read_clip(const fs::path& dir) {
    const std::string name = dir.filename().string();
    auto need = [&](const fs::path& p) {
        if (!fs::exists(p)) {
            throw DataError("clip " + name + ": missing " + p.filename().string());
        }
    };
    need(dir / "clean");
    need(dir / "smoky");
    need(dir / "mask_diff");
    need(dir / "mask_amb");
    need(dir / "meta.json");

    SyntheticClip clip;
    try {
        clip.clean = io::read_rgb_sequence(dir / "clean");
        clip.smoky = io::read_rgb_sequence(dir / "smoky");
        clip.masks.diff = io::read_gray_sequence(dir / "mask_diff");
        clip.masks.amb = io::read_gray_sequence(dir / "mask_amb");
    } catch (const IoError& e) {
        throw DataError("clip " + name + ": " + e.what());
    }
    const size_t n = clip.clean.size();
    if (n == 0 || clip.smoky.size() != n || clip.masks.diff.size() != n || clip.masks.amb.size() != n) {
        throw DataError("clip " + name + ": frame counts differ between clean/smoky/masks");
    }
    const cv::Size size = clip.clean.front().size();
    for (size_t t = 0; t < n; ++t) {
        if (clip.clean[t].size() != size || clip.smoky[t].size() != size ||
            clip.masks.diff[t].size() != size || clip.masks.amb[t].size() != size) {
            throw DataError("clip " + name + ": frame " + std::to_string(t) + " has mismatched dims");
        }
    }
    std::ifstream in(dir / "meta.json");
    try {
        const auto meta = nlohmann::json::parse(in);
        if (meta.value("schema_version", 0) != kMetaSchemaVersion) {
            throw DataError("clip " + name + ": unsupported meta.json schema_version");
        }
        clip.meta = meta.at("scene").get<SceneConfig>();
        clip.omega = meta.at("omega").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("clip " + name + ": malformed meta.json (" + e.what() + ")");
    } catch (const ConfigError& e) {
        throw DataError("clip " + name + ": " + e.what());
    }
    return clip;
}

std::vector<fs::path> list_clip_dirs(const fs::path& root) {
    if (!fs::is_directory(root)) {
        throw DataError("dataset directory does not exist: " + root.string());
    }
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory() && entry.path().filename().string().rfind("clip_", 0) == 0) {
            out.push_back(entry.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace desmoke::synth
