#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

namespace desmoke::metrics {

namespace fs = std::filesystem;

inline constexpr double kPsnrCap = 100.0;
inline constexpr int kReportSchemaVersion = 1;

struct Psnr {
    double db = 0.0;        // capped at kPsnrCap
    bool infinite = false;  // zero MSE
};

/// 10 log10(255^2 / MSE) over all pixels and channels of two 8-bit images.
Psnr psnr(const cv::Mat& a, const cv::Mat& b);

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// L = 255, population statistics, averaged over the valid region and channels.
double ssim(const cv::Mat& a, const cv::Mat& b);

struct ClipScore {
    std::string name;
    int frames = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    int infinite_frames = 0;
};

struct EvalReport {
    std::vector<ClipScore> clips;
    double psnr = 0.0;  // mean over frames, then clips
    double ssim = 0.0;
    std::string pred_dir;
    std::string gt_dir;
    std::string pred_subdir;
    std::string gt_subdir;
};

nlohmann::json to_json(const EvalReport& r);

struct EvalOptions {
    std::string pred_subdir = "desmoked";
    std::string gt_subdir = "clean";
};

/// Scores every clip of `pred` against the same-named clip of `gt`. Either
/// root may itself be a single clip. Throws DataError listing clips whose
/// frame counts or sizes differ.
EvalReport evaluate(const fs::path& pred, const fs::path& gt, const EvalOptions& opts = {});

}  // namespace desmoke::metrics
