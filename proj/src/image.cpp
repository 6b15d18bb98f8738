#include "histopipe/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "histopipe/error.hpp"

namespace histopipe {

RgbImage::RgbImage(int width, int height, std::uint8_t fill)
    : width_(width), height_(height) {
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::InvalidArgument, "image dimensions must be positive");
  }
  pixels_.assign(pixel_count() * kChannels, fill);
}

RgbImage::RgbImage(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::InvalidArgument, "image dimensions must be positive");
  }
  if (pixels_.size() != pixel_count() * kChannels) {
    throw Error(ErrorCode::InvalidArgument, "pixel buffer does not match 3-channel dimensions");
  }
}

RgbImage RgbImage::crop(int x, int y, int w, int h) const {
  if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > width_ || y + h > height_) {
    throw Error(ErrorCode::CropLargerThanImage, "crop window outside image bounds");
  }
  RgbImage out(w, h);
  const std::size_t row_bytes = static_cast<std::size_t>(w) * kChannels;
  for (int r = 0; r < h; ++r) {
    const auto* src = pixels_.data() + (static_cast<std::size_t>(y + r) * width_ + x) * kChannels;
    std::copy(src, src + row_bytes, out.pixels_.data() + static_cast<std::size_t>(r) * row_bytes);
  }
  return out;
}

RgbImage flip_horizontal(const RgbImage& img) {
  RgbImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) out.at(img.width() - 1 - x, y, c) = img.at(x, y, c);
    }
  }
  return out;
}

RgbImage flip_vertical(const RgbImage& img) {
  RgbImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) out.at(x, img.height() - 1 - y, c) = img.at(x, y, c);
    }
  }
  return out;
}

RgbImage rotate90(const RgbImage& img, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return img;
  const int w = img.width();
  const int h = img.height();
  if (k == 2) {
    RgbImage out(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) out.at(w - 1 - x, h - 1 - y, c) = img.at(x, y, c);
      }
    }
    return out;
  }
  RgbImage out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        if (k == 1) {
          // counter-clockwise: (x, y) -> (y, w-1-x)
          out.at(y, w - 1 - x, c) = img.at(x, y, c);
        } else {
          out.at(h - 1 - y, x, c) = img.at(x, y, c);
        }
      }
    }
  }
  return out;
}

RgbImage read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw Error(ErrorCode::UnreadableImage, "cannot decode image '" + path.string() + "'");
  }
  if (bgr.depth() != CV_8U) {
    throw Error(ErrorCode::UnreadableImage, "not an 8-bit image: '" + path.string() + "'");
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  std::vector<std::uint8_t> px(rgb.total() * 3);
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<std::uint8_t>(y);
    std::copy(row, row + rgb.cols * 3, px.data() + static_cast<std::size_t>(y) * rgb.cols * 3);
  }
  return RgbImage(rgb.cols, rgb.rows, std::move(px));
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  cv::Mat rgb(img.height(), img.width(), CV_8UC3,
              const_cast<std::uint8_t*>(img.data().data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) {
    throw Error(ErrorCode::IoError, "cannot write image '" + path.string() + "'");
  }
}

}  // namespace histopipe
