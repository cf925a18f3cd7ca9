#include "desmoke/image_io.hpp"

#include <algorithm>
#include <cstdio>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "desmoke/error.hpp"

namespace desmoke::io {

namespace {

cv::Mat read_checked(const fs::path& path, int flags) {
    cv::Mat img = cv::imread(path.string(), flags);
    if (img.empty()) {
        throw IoError("cannot read image: " + path.string());
    }
    return img;
}

void write_checked(const fs::path& path, const cv::Mat& img) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    if (!cv::imwrite(path.string(), img)) {
        throw IoError("cannot write image: " + path.string());
    }
}

}  // namespace

cv::Mat read_rgb(const fs::path& path) {
    cv::Mat bgr = read_checked(path, cv::IMREAD_COLOR);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return rgb;
}

cv::Mat read_gray(const fs::path& path) {
    return read_checked(path, cv::IMREAD_GRAYSCALE);
}

void write_rgb(const fs::path& path, const cv::Mat& rgb) {
    if (rgb.type() != CV_8UC3) {
        throw IoError("write_rgb expects CV_8UC3: " + path.string());
    }
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    write_checked(path, bgr);
}

void write_gray(const fs::path& path, const cv::Mat& gray) {
    if (gray.type() != CV_8UC1) {
        throw IoError("write_gray expects CV_8UC1: " + path.string());
    }
    write_checked(path, gray);
}

std::string frame_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d.png", index);
    return buf;
}

std::vector<fs::path> list_frames(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw IoError("not a directory: " + dir.string());
    }
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            out.push_back(entry.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<cv::Mat> read_rgb_sequence(const fs::path& dir) {
    std::vector<cv::Mat> frames;
    for (const auto& p : list_frames(dir)) {
        frames.push_back(read_rgb(p));
    }
    return frames;
}

std::vector<cv::Mat> read_gray_sequence(const fs::path& dir) {
    std::vector<cv::Mat> masks;
    for (const auto& p : list_frames(dir)) {
        masks.push_back(read_gray(p));
    }
    return masks;
}

void write_rgb_sequence(const fs::path& dir, const std::vector<cv::Mat>& frames) {
    fs::create_directories(dir);
    for (size_t i = 0; i < frames.size(); ++i) {
        write_rgb(dir / frame_name(static_cast<int>(i)), frames[i]);
    }
}

void write_gray_sequence(const fs::path& dir, const std::vector<cv::Mat>& masks) {
    fs::create_directories(dir);
    for (size_t i = 0; i < masks.size(); ++i) {
        write_gray(dir / frame_name(static_cast<int>(i)), masks[i]);
    }
}

torch::Tensor frames_to_tensor(const std::vector<cv::Mat>& frames) {
    if (frames.empty()) {
        throw DataError("empty frame sequence");
    }
    const int h = frames[0].rows;
    const int w = frames[0].cols;
    auto out = torch::empty({static_cast<int64_t>(frames.size()), 3, h, w}, torch::kFloat32);
    for (size_t t = 0; t < frames.size(); ++t) {
        const cv::Mat& f = frames[t];
        if (f.rows != h || f.cols != w || f.type() != CV_8UC3) {
            throw DataError("frame " + std::to_string(t) + " has mismatched size or type");
        }
        cv::Mat contiguous = f.isContinuous() ? f : f.clone();
        auto hwc = torch::from_blob(contiguous.data, {h, w, 3}, torch::kUInt8);
        out[static_cast<int64_t>(t)] = hwc.permute({2, 0, 1}).to(torch::kFloat32) / 255.0;
    }
    return out;
}

std::vector<cv::Mat> tensor_to_frames(const torch::Tensor& frames) {
    TORCH_CHECK(frames.dim() == 4 && frames.size(1) == 3, "expected (T,3,H,W), got ", frames.sizes());
    auto bytes = (frames.detach().to(torch::kCPU, torch::kFloat32).clamp(0.0, 1.0) * 255.0)
                     .round()
                     .to(torch::kUInt8)
                     .permute({0, 2, 3, 1})
                     .contiguous();
    const int h = static_cast<int>(frames.size(2));
    const int w = static_cast<int>(frames.size(3));
    std::vector<cv::Mat> out;
    for (int64_t t = 0; t < bytes.size(0); ++t) {
        cv::Mat m(h, w, CV_8UC3);
        std::memcpy(m.data, bytes[t].data_ptr<uint8_t>(), static_cast<size_t>(h) * w * 3);
        out.push_back(m);
    }
    return out;
}

torch::Tensor masks_to_tensor(const std::vector<cv::Mat>& masks) {
    if (masks.empty()) {
        throw DataError("empty mask sequence");
    }
    const int h = masks[0].rows;
    const int w = masks[0].cols;
    auto out = torch::empty({static_cast<int64_t>(masks.size()), h, w}, torch::kFloat32);
    for (size_t t = 0; t < masks.size(); ++t) {
        const cv::Mat& m = masks[t];
        if (m.rows != h || m.cols != w || m.type() != CV_8UC1) {
            throw DataError("mask " + std::to_string(t) + " has mismatched size or type");
        }
        cv::Mat contiguous = m.isContinuous() ? m : m.clone();
        out[static_cast<int64_t>(t)] =
            torch::from_blob(contiguous.data, {h, w}, torch::kUInt8).to(torch::kFloat32) / 255.0;
    }
    return out;
}

std::vector<cv::Mat> tensor_to_masks(const torch::Tensor& masks) {
    TORCH_CHECK(masks.dim() == 3, "expected (T,H,W), got ", masks.sizes());
    auto bytes = (masks.detach().to(torch::kCPU, torch::kFloat32).clamp(0.0, 1.0) * 255.0)
                     .round()
                     .to(torch::kUInt8)
                     .contiguous();
    const int h = static_cast<int>(masks.size(1));
    const int w = static_cast<int>(masks.size(2));
    std::vector<cv::Mat> out;
    for (int64_t t = 0; t < bytes.size(0); ++t) {
        cv::Mat m(h, w, CV_8UC1);
        std::memcpy(m.data, bytes[t].data_ptr<uint8_t>(), static_cast<size_t>(h) * w);
        out.push_back(m);
    }
    return out;
}

}  // namespace desmoke::io
