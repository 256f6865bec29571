#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace logoid {

/// Pixel rectangle. x, y are the top-left corner.
struct BBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  friend bool operator==(const BBox&, const BBox&) = default;

  long area() const { return static_cast<long>(w) * h; }
  bool valid_within(int width, int height) const {
    return x >= 0 && y >= 0 && w >= 1 && h >= 1 && x + w <= width && y + h <= height;
  }
};

/// Intersection over union of two boxes; 0 when either is empty.
double iou(const BBox& a, const BBox& b);

/// Planar float image, channel-major (C x H x W). Values are in [0, 1] for
/// decoded images.
class Image {
 public:
  Image() = default;
  Image(int channels, int height, int width, float fill = 0.0f);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  float& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  float at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  std::span<float> plane(int c) {
    return {data_.data() + static_cast<std::size_t>(c) * height_ * width_,
            static_cast<std::size_t>(height_) * width_};
  }
  std::span<const float> plane(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * height_ * width_,
            static_cast<std::size_t>(height_) * width_};
  }
  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

/// Decodes an image file to 3-channel RGB in [0, 1]. Throws logoid::Error.
Image load_image(const std::filesystem::path& path);

/// Writes a 3-channel image as PNG (values clamped to [0, 1]).
void save_png(const Image& image, const std::filesystem::path& path);

/// Reads only the pixel dimensions (width, height) of an image file.
std::pair<int, int> image_size(const std::filesystem::path& path);

/// Exact sub-rectangle copy. Throws std::out_of_range for an out-of-bounds box.
Image crop(const Image& image, const BBox& box);

/// Bilinear resampling of a sub-rectangle (in continuous pixel coordinates)
/// to out_h x out_w, with half-pixel centers.
Image resize_region(const Image& image, double x0, double y0, double w, double h,
                    int out_h, int out_w);

inline Image resize(const Image& image, int out_h, int out_w) {
  return resize_region(image, 0.0, 0.0, image.width(), image.height(), out_h, out_w);
}

}  // namespace logoid
