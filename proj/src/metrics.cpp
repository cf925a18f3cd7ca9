#include "desmoke/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <opencv2/imgproc.hpp>

#include "desmoke/error.hpp"
#include "desmoke/image_io.hpp"

namespace desmoke::metrics {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kPeak = 255.0;

void require_pair(const cv::Mat& a, const cv::Mat& b) {
    if (a.size() != b.size() || a.channels() != b.channels() || a.depth() != CV_8U || b.depth() != CV_8U) {
        throw DataError("metric inputs must be 8-bit images of equal size and channel count");
    }
}

cv::Mat blur(const cv::Mat& x, const cv::Mat& kernel) {
    cv::Mat out;
    cv::sepFilter2D(x, out, CV_64F, kernel, kernel, cv::Point(-1, -1), 0.0, cv::BORDER_REFLECT);
    return out;
}

double ssim_channel(const cv::Mat& a, const cv::Mat& b, const cv::Mat& kernel) {
    const double c1 = (0.01 * kPeak) * (0.01 * kPeak);
    const double c2 = (0.03 * kPeak) * (0.03 * kPeak);
    cv::Mat x, y;
    a.convertTo(x, CV_64F);
    b.convertTo(y, CV_64F);
    const cv::Mat mx = blur(x, kernel), my = blur(y, kernel);
    const cv::Mat vx = blur(x.mul(x), kernel) - mx.mul(mx);
    const cv::Mat vy = blur(y.mul(y), kernel) - my.mul(my);
    const cv::Mat cxy = blur(x.mul(y), kernel) - mx.mul(my);
    cv::Mat num = (2.0 * mx.mul(my) + c1).mul(2.0 * cxy + c2);
    cv::Mat den = (mx.mul(mx) + my.mul(my) + c1).mul(vx + vy + c2);
    cv::Mat s;
    cv::divide(num, den, s);
    const int pad = kWindow / 2;
    return cv::mean(s(cv::Rect(pad, pad, s.cols - 2 * pad, s.rows - 2 * pad)))[0];
}

std::vector<fs::path> clips_under(const fs::path& root, const std::string& subdir) {
    if (fs::is_directory(root / subdir)) {
        return {root};
    }
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory() && fs::is_directory(e.path() / subdir)) {
            out.push_back(e.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

Psnr psnr(const cv::Mat& a, const cv::Mat& b) {
    require_pair(a, b);
    cv::Mat diff;
    cv::absdiff(a, b, diff);
    diff.convertTo(diff, CV_64F);
    const cv::Mat sq = diff.mul(diff);
    const double mse = cv::mean(sq.reshape(1))[0];
    if (mse == 0.0) {
        return {kPsnrCap, true};
    }
    return {std::min(kPsnrCap, 10.0 * std::log10(kPeak * kPeak / mse)), false};
}

double ssim(const cv::Mat& a, const cv::Mat& b) {
    require_pair(a, b);
    if (a.rows < kWindow || a.cols < kWindow) {
        throw DataError("ssim needs images of at least 11x11 pixels");
    }
    const cv::Mat kernel = cv::getGaussianKernel(kWindow, kSigma, CV_64F);
    std::vector<cv::Mat> ca, cb;
    cv::split(a, ca);
    cv::split(b, cb);
    double sum = 0.0;
    for (size_t c = 0; c < ca.size(); ++c) {
        sum += ssim_channel(ca[c], cb[c], kernel);
    }
    return sum / static_cast<double>(ca.size());
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json clips = nlohmann::json::array();
    for (const auto& c : r.clips) {
        clips.push_back({{"name", c.name},
                         {"frames", c.frames},
                         {"psnr", c.psnr},
                         {"ssim", c.ssim},
                         {"infinite_frames", c.infinite_frames}});
    }
    return {{"schema_version", kReportSchemaVersion},
            {"aggregate", {{"psnr", r.psnr}, {"ssim", r.ssim}, {"clips", r.clips.size()}}},
            {"clips", clips},
            {"manifest",
             {{"pred", r.pred_dir}, {"gt", r.gt_dir}, {"pred_subdir", r.pred_subdir}, {"gt_subdir", r.gt_subdir}}},
            {"config",
             {{"peak", kPeak},
              {"psnr_cap_db", kPsnrCap},
              {"ssim_window", kWindow},
              {"ssim_sigma", kSigma},
              {"ssim_k1", 0.01},
              {"ssim_k2", 0.03}}}};
}

EvalReport evaluate(const fs::path& pred, const fs::path& gt, const EvalOptions& opts) {
    for (const auto& root : {pred, gt}) {
        if (!fs::is_directory(root)) {
            throw IoError("not a directory: " + root.string());
        }
    }
    EvalReport report;
    report.pred_dir = pred.string();
    report.gt_dir = gt.string();
    report.pred_subdir = opts.pred_subdir;
    report.gt_subdir = opts.gt_subdir;

    const auto pred_clips = clips_under(pred, opts.pred_subdir);
    const auto gt_clips = clips_under(gt, opts.gt_subdir);
    if (pred_clips.empty()) {
        throw DataError("no clips with a '" + opts.pred_subdir + "' directory under " + pred.string());
    }
    std::map<std::string, fs::path> gt_by_name;
    for (const auto& c : gt_clips) {
        gt_by_name[c.filename().string()] = c;
    }
    const bool single = pred_clips.size() == 1 && gt_clips.size() == 1;

    std::vector<std::string> mismatched;
    std::vector<std::pair<fs::path, fs::path>> pairs;
    for (const auto& p : pred_clips) {
        const auto name = p.filename().string();
        auto it = gt_by_name.find(name);
        if (single) {
            pairs.emplace_back(p, gt_clips.front());
        } else if (it == gt_by_name.end()) {
            mismatched.push_back(name + " (missing ground truth)");
        } else {
            pairs.emplace_back(p, it->second);
        }
    }

    for (const auto& [p, g] : pairs) {
        const auto pf = io::list_frames(p / opts.pred_subdir);
        const auto gf = io::list_frames(g / opts.gt_subdir);
        const auto name = p.filename().string();
        if (pf.size() != gf.size() || pf.empty()) {
            mismatched.push_back(name + " (" + std::to_string(pf.size()) + " vs " + std::to_string(gf.size()) +
                                 " frames)");
            continue;
        }
        ClipScore score;
        score.name = name;
        score.frames = static_cast<int>(pf.size());
        bool size_ok = true;
        for (size_t i = 0; i < pf.size(); ++i) {
            const auto a = io::read_rgb(pf[i]), b = io::read_rgb(gf[i]);
            if (a.size() != b.size()) {
                size_ok = false;
                break;
            }
            const auto ps = psnr(a, b);
            score.psnr += ps.db;
            score.infinite_frames += ps.infinite ? 1 : 0;
            score.ssim += ssim(a, b);
        }
        if (!size_ok) {
            mismatched.push_back(name + " (frame size)");
            continue;
        }
        score.psnr /= score.frames;
        score.ssim /= score.frames;
        report.clips.push_back(score);
    }
    if (!mismatched.empty()) {
        std::string msg = "prediction/ground-truth mismatch:";
        for (const auto& m : mismatched) {
            msg += " " + m + ";";
        }
        throw DataError(msg);
    }
    for (const auto& c : report.clips) {
        report.psnr += c.psnr / static_cast<double>(report.clips.size());
        report.ssim += c.ssim / static_cast<double>(report.clips.size());
    }
    return report;
}

}  // namespace desmoke::metrics
