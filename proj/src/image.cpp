#include "logoid/image.hpp"

#include "logoid/common.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace logoid {

double iou(const BBox& a, const BBox& b) {
  const long ix0 = std::max(a.x, b.x);
  const long iy0 = std::max(a.y, b.y);
  const long ix1 = std::min(a.x + a.w, b.x + b.w);
  const long iy1 = std::min(a.y + a.h, b.y + b.h);
  const long inter = std::max(0L, ix1 - ix0) * std::max(0L, iy1 - iy0);
  const long uni = a.area() + b.area() - inter;
  if (a.area() <= 0 || b.area() <= 0 || uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Image::Image(int channels, int height, int width, float fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels <= 0 || height <= 0 || width <= 0) {
    throw std::invalid_argument(
        fmt::format("Image: invalid shape {}x{}x{}", channels, height, width));
  }
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

Image load_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error(fmt::format("cannot decode image '{}'", path.string()));
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  Image out(3, rgb.rows, rgb.cols);
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<cv::Vec3b>(y);
    for (int x = 0; x < rgb.cols; ++x) {
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = row[x][c] / 255.0f;
    }
  }
  return out;
}

void save_png(const Image& image, const std::filesystem::path& path) {
  if (image.channels() != 3) throw std::invalid_argument("save_png: expected 3 channels");
  cv::Mat bgr(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        row[x][2 - c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) {
    throw Error(fmt::format("cannot write image '{}'", path.string()));
  }
}

std::pair<int, int> image_size(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw Error(fmt::format("cannot decode image '{}'", path.string()));
  return {m.cols, m.rows};
}

Image crop(const Image& image, const BBox& box) {
  if (!box.valid_within(image.width(), image.height())) {
    throw std::out_of_range(fmt::format("crop: box ({},{},{},{}) outside {}x{} image", box.x,
                                        box.y, box.w, box.h, image.width(), image.height()));
  }
  Image out(image.channels(), box.h, box.w);
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < box.h; ++y) {
      for (int x = 0; x < box.w; ++x) out.at(c, y, x) = image.at(c, box.y + y, box.x + x);
    }
  }
  return out;
}

Image resize_region(const Image& image, double x0, double y0, double w, double h, int out_h,
                    int out_w) {
  if (image.empty()) throw std::invalid_argument("resize_region: empty image");
  Image out(image.channels(), out_h, out_w);
  const double sx = w / out_w;
  const double sy = h / out_h;
  const int max_x = image.width() - 1;
  const int max_y = image.height() - 1;

  std::vector<int> xa(out_w), xb(out_w);
  std::vector<float> xf(out_w);
  for (int ox = 0; ox < out_w; ++ox) {
    const double fx = std::clamp(x0 + (ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(max_x));
    xa[ox] = static_cast<int>(std::floor(fx));
    xb[ox] = std::min(xa[ox] + 1, max_x);
    xf[ox] = static_cast<float>(fx - xa[ox]);
  }
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = std::clamp(y0 + (oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(max_y));
    const int ya = static_cast<int>(std::floor(fy));
    const int yb = std::min(ya + 1, max_y);
    const float ty = static_cast<float>(fy - ya);
    for (int c = 0; c < image.channels(); ++c) {
      for (int ox = 0; ox < out_w; ++ox) {
        const float top = image.at(c, ya, xa[ox]) +
                          xf[ox] * (image.at(c, ya, xb[ox]) - image.at(c, ya, xa[ox]));
        const float bot = image.at(c, yb, xa[ox]) +
                          xf[ox] * (image.at(c, yb, xb[ox]) - image.at(c, yb, xa[ox]));
        out.at(c, oy, ox) = top + ty * (bot - top);
      }
    }
  }
  return out;
}

}  // namespace logoid
