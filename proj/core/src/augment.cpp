#include "crackseg/augment.hpp"

#include <algorithm>
#include <cmath>

#include "crackseg/errors.hpp"

namespace crackseg {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_pair(const Sample& sample, const char* where) {
  require<DimensionError>(sample.image.rank() == 3 && sample.image.dim(0) == 3, where,
                          ": image must be 3xHxW, got ", sample.image.shape_str());
  require<DimensionError>(sample.mask.rank() == 3 && sample.mask.dim(0) == 1, where,
                          ": mask must be 1xHxW, got ", sample.mask.shape_str());
  require<DimensionError>(sample.image.dim(1) == sample.mask.dim(1) &&
                              sample.image.dim(2) == sample.mask.dim(2),
                          where, ": image ", sample.image.shape_str(), " and mask ",
                          sample.mask.shape_str(), " disagree spatially");
  require<DimensionError>(sample.image.dim(1) >= 1 && sample.image.dim(2) >= 1, where,
                          ": degenerate image dims ", sample.image.shape_str());
}

// out[y][x] = in[map(y,x)] over every channel of a CxHxW tensor.
template <typename MapFn>
Tensor<float> permute_pixels(const Tensor<float>& in, const MapFn& map) {
  const std::int64_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
  Tensor<float> out({c, h, w});
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const auto [sy, sx] = map(y, x);
      for (std::int64_t ch = 0; ch < c; ++ch) {
        out[(ch * h + y) * w + x] = in[(ch * h + sy) * w + sx];
      }
    }
  }
  return out;
}

float sample_bilinear_reflect(const Tensor<float>& in, std::int64_t ch, double sy, double sx) {
  const std::int64_t h = in.dim(1), w = in.dim(2);
  const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
  const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
  const double fx = sx - static_cast<double>(x0);
  const double fy = sy - static_cast<double>(y0);
  const std::int64_t xs[2] = {reflect_index(x0, w), reflect_index(x0 + 1, w)};
  const std::int64_t ys[2] = {reflect_index(y0, h), reflect_index(y0 + 1, h)};
  const double v00 = in[(ch * h + ys[0]) * w + xs[0]];
  const double v01 = in[(ch * h + ys[0]) * w + xs[1]];
  const double v10 = in[(ch * h + ys[1]) * w + xs[0]];
  const double v11 = in[(ch * h + ys[1]) * w + xs[1]];
  return static_cast<float>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                            fy * ((1 - fx) * v10 + fx * v11));
}

// Bilinear scale of a CxHxW tensor to out_h x out_w with half-pixel centers
// and edge clamping.
Tensor<float> resize_bilinear(const Tensor<float>& in, std::int64_t out_h, std::int64_t out_w) {
  const std::int64_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
  if (out_h == h && out_w == w) {
    return in;
  }
  Tensor<float> out({c, out_h, out_w});
  const double sy_scale = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx_scale = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::int64_t y = 0; y < out_h; ++y) {
    const double sy = std::clamp((static_cast<double>(y) + 0.5) * sy_scale - 0.5, 0.0,
                                 static_cast<double>(h - 1));
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
    const std::int64_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::int64_t x = 0; x < out_w; ++x) {
      const double sx = std::clamp((static_cast<double>(x) + 0.5) * sx_scale - 0.5, 0.0,
                                   static_cast<double>(w - 1));
      const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
      const std::int64_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double v00 = in[(ch * h + y0) * w + x0];
        const double v01 = in[(ch * h + y0) * w + x1];
        const double v10 = in[(ch * h + y1) * w + x0];
        const double v11 = in[(ch * h + y1) * w + x1];
        out[(ch * out_h + y) * out_w + x] = static_cast<float>(
            (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11));
      }
    }
  }
  return out;
}

Tensor<float> crop3(const Tensor<float>& in, std::int64_t y0, std::int64_t x0,
                    std::int64_t size) {
  const std::int64_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
  Tensor<float> out({c, size, size});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t y = 0; y < size; ++y) {
      for (std::int64_t x = 0; x < size; ++x) {
        out[(ch * size + y) * size + x] = in[(ch * h + y0 + y) * w + x0 + x];
      }
    }
  }
  return out;
}

void rebinarize(Tensor<float>& mask) {
  for (std::int64_t i = 0; i < mask.numel(); ++i) {
    mask[i] = mask[i] > 0.5f ? 1.0f : 0.0f;
  }
}

}  // namespace

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) {
    return 0;
  }
  const std::int64_t period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

Sample rotate_sample(const Sample& sample, double degrees) {
  check_pair(sample, "rotate_sample");
  const std::int64_t h = sample.image.dim(1), w = sample.image.dim(2);

  double deg = std::fmod(degrees, 360.0);
  if (deg < 0) {
    deg += 360.0;
  }

  Sample out;
  out.name = sample.name;
  if (deg == 0.0) {
    out.image = sample.image;
    out.mask = sample.mask;
    return out;
  }
  if (deg == 180.0) {
    const auto map = [&](std::int64_t y, std::int64_t x) {
      return std::pair{h - 1 - y, w - 1 - x};
    };
    out.image = permute_pixels(sample.image, map);
    out.mask = permute_pixels(sample.mask, map);
    return out;
  }
  if ((deg == 90.0 || deg == 270.0) && h == w) {
    const auto map_cw = [&](std::int64_t y, std::int64_t x) { return std::pair{h - 1 - x, y}; };
    const auto map_ccw = [&](std::int64_t y, std::int64_t x) { return std::pair{x, w - 1 - y}; };
    if (deg == 90.0) {
      out.image = permute_pixels(sample.image, map_cw);
      out.mask = permute_pixels(sample.mask, map_cw);
    } else {
      out.image = permute_pixels(sample.image, map_ccw);
      out.mask = permute_pixels(sample.mask, map_ccw);
    }
    return out;
  }

  // General angle: inverse-map each output pixel; clockwise for positive
  // degrees so 90 degrees agrees with the transpose-then-hflip permutation.
  const double alpha = deg * kPi / 180.0;
  const double c = std::cos(alpha), s = std::sin(alpha);
  const double cx = static_cast<double>(w - 1) / 2.0;
  const double cy = static_cast<double>(h - 1) / 2.0;

  out.image = Tensor<float>({3, h, w});
  out.mask = Tensor<float>({1, h, w});
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      const double sx = c * dx + s * dy + cx;
      const double sy = -s * dx + c * dy + cy;
      for (std::int64_t ch = 0; ch < 3; ++ch) {
        out.image[(ch * h + y) * w + x] = sample_bilinear_reflect(sample.image, ch, sy, sx);
      }
      const std::int64_t ny = reflect_index(std::llround(sy), h);
      const std::int64_t nx = reflect_index(std::llround(sx), w);
      out.mask[y * w + x] = sample.mask[ny * w + nx];
    }
  }
  rebinarize(out.mask);
  return out;
}

Sample flip_sample(const Sample& sample, bool horizontal, bool vertical) {
  check_pair(sample, "flip_sample");
  if (!horizontal && !vertical) {
    return sample;
  }
  const std::int64_t h = sample.image.dim(1), w = sample.image.dim(2);
  const auto map = [&](std::int64_t y, std::int64_t x) {
    return std::pair{vertical ? h - 1 - y : y, horizontal ? w - 1 - x : x};
  };
  Sample out;
  out.name = sample.name;
  out.image = permute_pixels(sample.image, map);
  out.mask = permute_pixels(sample.mask, map);
  return out;
}

Tensor<float> apply_lighting(const Tensor<float>& image, double brightness, double contrast) {
  Tensor<float> out = image;
  if (brightness == 0.0 && contrast == 0.0) {
    return out;  // keep the zero jitter an exact identity
  }
  const float gain = static_cast<float>(1.0 + contrast);
  const float shift = static_cast<float>(brightness);
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    out[i] = std::clamp((out[i] - 0.5f) * gain + 0.5f + shift, 0.0f, 1.0f);
  }
  return out;
}

Sample augment(const Sample& sample, const AugmentSpec& spec, Rng& rng) {
  const double degrees = rng.uniform(0.0, 360.0);
  const bool hflip = rng.bernoulli(spec.hflip_prob);
  const bool vflip = rng.bernoulli(spec.vflip_prob);
  const double brightness = rng.uniform(-spec.lighting_delta, spec.lighting_delta);
  const double contrast = rng.uniform(-spec.lighting_delta, spec.lighting_delta);

  Sample out = rotate_sample(sample, degrees);
  out = flip_sample(out, hflip, vflip);
  out.image = apply_lighting(out.image, brightness, contrast);
  return out;
}

Sample resize_crop(const Sample& sample, int target, Mode mode, Rng& rng) {
  check_pair(sample, "resize_crop");
  require<ConfigError>(target > 0 && target % 32 == 0,
                       "crop target must be a positive multiple of 32, got ", target);
  const std::int64_t h = sample.image.dim(1), w = sample.image.dim(2);

  std::int64_t rh = h, rw = w;
  if (std::min(h, w) != target) {
    const double scale = static_cast<double>(target) / static_cast<double>(std::min(h, w));
    if (h <= w) {
      rh = target;
      rw = std::max<std::int64_t>(target, std::llround(scale * static_cast<double>(w)));
    } else {
      rw = target;
      rh = std::max<std::int64_t>(target, std::llround(scale * static_cast<double>(h)));
    }
  }

  Sample out;
  out.name = sample.name;
  out.image = resize_bilinear(sample.image, rh, rw);
  out.mask = resize_bilinear(sample.mask, rh, rw);

  std::int64_t y0, x0;
  if (mode == Mode::train) {
    y0 = rng.uniform_int(0, rh - target);
    x0 = rng.uniform_int(0, rw - target);
  } else {
    y0 = (rh - target) / 2;
    x0 = (rw - target) / 2;
  }
  out.image = crop3(out.image, y0, x0, target);
  out.mask = crop3(out.mask, y0, x0, target);
  rebinarize(out.mask);
  return out;
}

}  // namespace crackseg
