#include "crackseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "crackseg/errors.hpp"

namespace crackseg {

namespace {

png_image begin_read(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    raise<DataError>("cannot read PNG '", path, "': ", image.message);
  }
  return image;
}

std::vector<png_byte> finish_read(png_image& image, const std::string& path) {
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    raise<DataError>("cannot decode PNG '", path, "': ", image.message);
  }
  return buffer;
}

void write_png(const std::string& path, png_uint_32 width, png_uint_32 height,
               png_uint_32 format, const png_byte* pixels) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = width;
  image.height = height;
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels, 0, nullptr)) {
    raise<DataError>("cannot write PNG '", path, "': ", image.message);
  }
}

}  // namespace

Tensor<float> read_image_png(const std::string& path) {
  png_image image = begin_read(path);
  image.format = PNG_FORMAT_RGB;
  const std::vector<png_byte> buffer = finish_read(image, path);
  const std::int64_t h = image.height;
  const std::int64_t w = image.width;
  Tensor<float> out({3, h, w});
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const std::size_t px = static_cast<std::size_t>((y * w + x) * 3);
      for (std::int64_t c = 0; c < 3; ++c) {
        out[(c * h + y) * w + x] =
            static_cast<float>(buffer[px + static_cast<std::size_t>(c)]) / 255.0f;
      }
    }
  }
  return out;
}

Mask read_mask_png(const std::string& path) {
  png_image image = begin_read(path);
  image.format = PNG_FORMAT_GRAY;
  const std::vector<png_byte> buffer = finish_read(image, path);
  Mask mask(image.height, image.width);
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    mask.data[i] = buffer[i] > 127 ? 1 : 0;
  }
  return mask;
}

void write_mask_png(const std::string& path, const Mask& mask) {
  require<DimensionError>(mask.h > 0 && mask.w > 0, "cannot write empty mask to '", path, "'");
  std::vector<png_byte> pixels(mask.data.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = mask.data[i] ? 255 : 0;
  }
  write_png(path, static_cast<png_uint_32>(mask.w), static_cast<png_uint_32>(mask.h),
            PNG_FORMAT_GRAY, pixels.data());
}

void write_image_png(const std::string& path, const Tensor<float>& image) {
  require<DimensionError>(image.rank() == 3 && image.dim(0) == 3,
                          "write_image_png expects a 3xHxW tensor, got ", image.shape_str());
  const std::int64_t h = image.dim(1);
  const std::int64_t w = image.dim(2);
  std::vector<png_byte> pixels(static_cast<std::size_t>(3 * h * w));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (std::int64_t c = 0; c < 3; ++c) {
        const float v = std::clamp(image[(c * h + y) * w + x], 0.0f, 1.0f);
        pixels[static_cast<std::size_t>((y * w + x) * 3 + c)] =
            static_cast<png_byte>(std::lround(v * 255.0f));
      }
    }
  }
  write_png(path, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), PNG_FORMAT_RGB,
            pixels.data());
}

}  // namespace crackseg
