#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace desmoke::io {

namespace fs = std::filesystem;

// Frames are CV_8UC3 in RGB channel order; masks are CV_8UC1.

cv::Mat read_rgb(const fs::path& path);
cv::Mat read_gray(const fs::path& path);
void write_rgb(const fs::path& path, const cv::Mat& rgb);
void write_gray(const fs::path& path, const cv::Mat& gray);

/// "%04d.png"
std::string frame_name(int index);

/// Sorted list of *.png files in `dir`.
std::vector<fs::path> list_frames(const fs::path& dir);

std::vector<cv::Mat> read_rgb_sequence(const fs::path& dir);
std::vector<cv::Mat> read_gray_sequence(const fs::path& dir);
void write_rgb_sequence(const fs::path& dir, const std::vector<cv::Mat>& frames);
void write_gray_sequence(const fs::path& dir, const std::vector<cv::Mat>& masks);

/// (T,3,H,W) float32 in [0,1].
torch::Tensor frames_to_tensor(const std::vector<cv::Mat>& frames);
/// Inverse of frames_to_tensor; values are clamped and rounded.
std::vector<cv::Mat> tensor_to_frames(const torch::Tensor& frames);

/// (T,H,W) float32 in [0,1].
torch::Tensor masks_to_tensor(const std::vector<cv::Mat>& masks);
std::vector<cv::Mat> tensor_to_masks(const torch::Tensor& masks);

}  // namespace desmoke::io
