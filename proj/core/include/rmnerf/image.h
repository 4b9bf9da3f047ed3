#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace rmnerf {

// Row-major RGB image with linear values nominally in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  double& at(int x, int y, int c) { return data_[Index(x, y, c)]; }
  double at(int x, int y, int c) const { return data_[Index(x, y, c)]; }
  Eigen::Vector3d Pixel(int x, int y) const;
  void SetPixel(int x, int y, const Eigen::Vector3d& rgb);

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

 private:
  std::size_t Index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

inline constexpr double kPsnrCap = 99.0;

// 10 log10(1 / MSE) over all channels; kPsnrCap for identical images. Throws
// std::invalid_argument on a size mismatch.
double Psnr(const Image& a, const Image& b);
double MeanSquaredError(const Image& a, const Image& b);
// Mean SSIM over channels with an 11x11 Gaussian window (sigma 1.5),
// K1 = 0.01, K2 = 0.03, dynamic range 1, evaluated on the valid region. Images
// smaller than the window use the largest odd window that fits.
double Ssim(const Image& a, const Image& b);

// Average of factor x factor blocks; dimensions must divide evenly.
Image BoxDownsample(const Image& image, int factor);

// 8-bit sRGB-agnostic PNG (values clamped to [0, 1] and rounded).
void WritePng(const Image& image, const std::string& path);
Image ReadPng(const std::string& path);

// Little-endian float32 RGB payload at `path` plus `path`.json holding
// {"width", "height", "channels", "dtype"}.
void WriteRaw(const Image& image, const std::string& path);
Image ReadRaw(const std::string& path);

}  // namespace rmnerf
