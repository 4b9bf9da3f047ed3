#include "rmnerf/image.h"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace rmnerf {
namespace {

void RequireSameSize(const Image& a, const Image& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw std::invalid_argument(std::string(what) + ": image size mismatch");
  }
  if (a.empty()) throw std::invalid_argument(std::string(what) + ": empty image");
}

std::vector<double> GaussianKernel(int size, double sigma) {
  std::vector<double> k(size);
  const double c = 0.5 * (size - 1);
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    k[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    total += k[i];
  }
  for (double& v : k) v /= total;
  return k;
}

// Valid-region separable filtering of a single-channel plane.
std::vector<double> FilterValid(const std::vector<double>& plane, int w, int h,
                                const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1;
  const int oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * plane[y * w + x + i];
      tmp[y * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};

}  // namespace

Image::Image(int width, int height) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw std::invalid_argument("Image: negative size");
  data_.assign(static_cast<std::size_t>(width) * height * 3, 0.0);
}

Eigen::Vector3d Image::Pixel(int x, int y) const {
  const std::size_t i = Index(x, y, 0);
  return {data_[i], data_[i + 1], data_[i + 2]};
}

void Image::SetPixel(int x, int y, const Eigen::Vector3d& rgb) {
  const std::size_t i = Index(x, y, 0);
  data_[i] = rgb[0];
  data_[i + 1] = rgb[1];
  data_[i + 2] = rgb[2];
}

double MeanSquaredError(const Image& a, const Image& b) {
  RequireSameSize(a, b, "MeanSquaredError");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data().size());
}

double Psnr(const Image& a, const Image& b) {
  const double mse = MeanSquaredError(a, b);
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double Ssim(const Image& a, const Image& b) {
  RequireSameSize(a, b, "Ssim");
  const int w = a.width();
  const int h = a.height();
  int size = std::min({11, w, h});
  if (size % 2 == 0) --size;
  const std::vector<double> k = GaussianKernel(size, 1.5);
  constexpr double kC1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double kC2 = (0.03 * 1.0) * (0.03 * 1.0);
  const std::size_t n = static_cast<std::size_t>(w) * h;
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = a.data()[3 * i + c];
      y[i] = b.data()[3 * i + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = FilterValid(x, w, h, k);
    const auto my = FilterValid(y, w, h, k);
    const auto sxx = FilterValid(xx, w, h, k);
    const auto syy = FilterValid(yy, w, h, k);
    const auto sxy = FilterValid(xy, w, h, k);
    double sum = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      sum += ((2.0 * mx[i] * my[i] + kC1) * (2.0 * cov + kC2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
    }
    total += sum / static_cast<double>(mx.size());
  }
  return total / 3.0;
}

Image BoxDownsample(const Image& image, int factor) {
  if (factor < 1 || image.width() % factor != 0 || image.height() % factor != 0) {
    throw std::invalid_argument("BoxDownsample: factor must divide the image size");
  }
  Image out(image.width() / factor, image.height() / factor);
  const double norm = 1.0 / (factor * factor);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      Eigen::Vector3d s = Eigen::Vector3d::Zero();
      for (int dy = 0; dy < factor; ++dy) {
        for (int dx = 0; dx < factor; ++dx) {
          s += image.Pixel(x * factor + dx, y * factor + dy);
        }
      }
      out.SetPixel(x, y, s * norm);
    }
  }
  return out;
}

void WritePng(const Image& image, const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("WritePng: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("WritePng: libpng init failed");
  }
  std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width()) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("WritePng: libpng error writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width(), image.height(), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Fixed header contents keep files byte-identical across runs.
  png_write_info(png, info);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(x, y, c), 0.0, 1.0);
        row[3 * x + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image ReadPng(const std::string& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw std::runtime_error("ReadPng: cannot read " + path);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error("ReadPng: decode failed for " + path);
  }
  Image out(static_cast<int>(img.width), static_cast<int>(img.height));
  for (std::size_t i = 0; i < buf.size(); ++i) out.data()[i] = buf[i] / 255.0;
  return out;
}

void WriteRaw(const Image& image, const std::string& path) {
  static_assert(std::endian::native == std::endian::little,
                "raw image I/O assumes a little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("WriteRaw: cannot open " + path);
  for (double v : image.data()) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), sizeof(f));
  }
  nlohmann::json header = {{"width", image.width()},
                           {"height", image.height()},
                           {"channels", 3},
                           {"dtype", "float32le"}};
  std::ofstream side(path + ".json");
  if (!side) throw std::runtime_error("WriteRaw: cannot open " + path + ".json");
  side << header.dump(2) << "\n";
}

Image ReadRaw(const std::string& path) {
  std::ifstream side(path + ".json");
  if (!side) throw std::runtime_error("ReadRaw: missing header " + path + ".json");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(side);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("ReadRaw: bad header: " + std::string(e.what()));
  }
  if (header.value("dtype", "") != "float32le" || header.value("channels", 0) != 3) {
    throw std::runtime_error("ReadRaw: unsupported format in " + path + ".json");
  }
  Image image(header.at("width").get<int>(), header.at("height").get<int>());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("ReadRaw: cannot open " + path);
  for (double& v : image.data()) {
    float f = 0.0f;
    if (!in.read(reinterpret_cast<char*>(&f), sizeof(f))) {
      throw std::runtime_error("ReadRaw: truncated payload " + path);
    }
    v = f;
  }
  return image;
}

}  // namespace rmnerf
