#include "crackseg/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "crackseg/errors.hpp"

namespace crackseg {

std::int64_t Mask::positives() const {
  std::int64_t n = 0;
  for (std::uint8_t v : data) {
    n += v != 0;
  }
  return n;
}

template <typename S>
Mask binarize(const Tensor<S>& pred, S threshold) {
  require<ContractError>(threshold >= S(0) && threshold <= S(1),
                         "binarize: threshold must lie in [0, 1]");
  std::int64_t h = 0;
  std::int64_t w = 0;
  if (pred.rank() == 2) {
    h = pred.dim(0);
    w = pred.dim(1);
  } else if (pred.rank() == 3 && pred.dim(0) == 1) {
    h = pred.dim(1);
    w = pred.dim(2);
  } else if (pred.rank() == 4 && pred.dim(0) == 1 && pred.dim(1) == 1) {
    h = pred.dim(2);
    w = pred.dim(3);
  } else {
    raise<DimensionError>("binarize: expected a single HxW image, got shape ", pred.shape_str());
  }
  Mask out(h, w);
  for (std::int64_t i = 0; i < h * w; ++i) {
    out.data[static_cast<std::size_t>(i)] = pred[i] > threshold ? 1 : 0;
  }
  return out;
}

template Mask binarize<float>(const Tensor<float>&, float);
template Mask binarize<double>(const Tensor<double>&, double);

Mask dilate(const Mask& mask, int radius) {
  require<ContractError>(radius >= 0, "dilate: radius must be non-negative");
  if (radius == 0) {
    return mask;
  }
  const std::int64_t h = mask.h;
  const std::int64_t w = mask.w;
  const std::int64_t r = radius;
  // Square element separates into a horizontal then a vertical 1-D pass.
  Mask tmp(h, w);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      std::uint8_t v = 0;
      const std::int64_t x0 = std::max<std::int64_t>(0, x - r);
      const std::int64_t x1 = std::min<std::int64_t>(w - 1, x + r);
      for (std::int64_t xx = x0; xx <= x1 && !v; ++xx) {
        v = mask.at(y, xx);
      }
      tmp.set(y, x, v);
    }
  }
  Mask out(h, w);
  for (std::int64_t y = 0; y < h; ++y) {
    const std::int64_t y0 = std::max<std::int64_t>(0, y - r);
    const std::int64_t y1 = std::min<std::int64_t>(h - 1, y + r);
    for (std::int64_t x = 0; x < w; ++x) {
      std::uint8_t v = 0;
      for (std::int64_t yy = y0; yy <= y1 && !v; ++yy) {
        v = tmp.at(yy, x);
      }
      out.set(y, x, v);
    }
  }
  return out;
}

TolerantCounts tolerant_counts(const Mask& pred, const Mask& gt, const ToleranceConfig& tol) {
  require<DimensionError>(pred.h == gt.h && pred.w == gt.w,
                          "tolerant_counts: mask sizes differ (", pred.h, "x", pred.w, " vs ",
                          gt.h, "x", gt.w, ")");
  const Mask gt_zone = dilate(gt, tol.radius);
  const Mask pred_zone = dilate(pred, tol.radius);
  TolerantCounts c;
  const std::size_t n = pred.data.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (pred.data[i]) {
      if (gt_zone.data[i]) {
        ++c.tp_pr;
      } else {
        ++c.fp;
      }
    }
    if (gt.data[i]) {
      if (pred_zone.data[i]) {
        ++c.tp_re;
      } else {
        ++c.fn;
      }
    }
  }
  return c;
}

PixelScores precision_recall_f1(const TolerantCounts& counts) {
  require<ContractError>(counts.tp_pr >= 0 && counts.fp >= 0 && counts.tp_re >= 0 &&
                             counts.fn >= 0,
                         "precision_recall_f1: counts must be non-negative");
  PixelScores s;
  const std::int64_t pred_total = counts.tp_pr + counts.fp;
  const std::int64_t gt_total = counts.tp_re + counts.fn;
  if (pred_total == 0 && gt_total == 0) {
    s.precision = s.recall = s.f1 = 1.0;
    return s;
  }
  s.precision = pred_total > 0 ? static_cast<double>(counts.tp_pr) / static_cast<double>(pred_total)
                               : 0.0;
  s.recall = gt_total > 0 ? static_cast<double>(counts.tp_re) / static_cast<double>(gt_total)
                          : 0.0;
  s.f1 = (s.precision + s.recall) > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

namespace {

void append_json_string(std::ostringstream& os, const std::string& s) {
  os << '"';
  for (char ch : s) {
    switch (ch) {
      case '"': os << "\\\""; break;
      case '\\': os << "\\\\"; break;
      case '\n': os << "\\n"; break;
      case '\t': os << "\\t"; break;
      case '\r': os << "\\r"; break;
      default:
        if (static_cast<unsigned char>(ch) < 0x20) {
          os << "\\u" << std::hex << std::setw(4) << std::setfill('0')
             << static_cast<int>(static_cast<unsigned char>(ch)) << std::dec
             << std::setfill(' ');
        } else {
          os << ch;
        }
    }
  }
  os << '"';
}

}  // namespace

std::string MetricsReport::to_json() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "{\n  \"per_image\": [\n";
  for (std::size_t i = 0; i < per_image.size(); ++i) {
    const ImageMetrics& row = per_image[i];
    os << "    {\"image\": ";
    append_json_string(os, row.image);
    os << ", \"tp_pr\": " << row.counts.tp_pr << ", \"fp\": " << row.counts.fp
       << ", \"tp_re\": " << row.counts.tp_re << ", \"fn\": " << row.counts.fn
       << ", \"precision\": " << row.scores.precision << ", \"recall\": " << row.scores.recall
       << ", \"f1\": " << row.scores.f1 << "}";
    if (i + 1 < per_image.size()) {
      os << ",";
    }
    os << "\n";
  }
  os << "  ],\n";
  os << "  \"mean_precision\": " << mean_precision << ",\n";
  os << "  \"mean_recall\": " << mean_recall << ",\n";
  os << "  \"mean_f1\": " << mean_f1 << "\n";
  os << "}\n";
  return os.str();
}

MetricsReport make_report(std::vector<ImageMetrics> rows, bool pooled) {
  MetricsReport report;
  std::sort(rows.begin(), rows.end(),
            [](const ImageMetrics& a, const ImageMetrics& b) { return a.image < b.image; });
  report.per_image = std::move(rows);
  report.pooled = pooled;
  if (report.per_image.empty()) {
    return report;
  }
  if (pooled) {
    TolerantCounts total;
    for (const ImageMetrics& row : report.per_image) {
      total.tp_pr += row.counts.tp_pr;
      total.fp += row.counts.fp;
      total.tp_re += row.counts.tp_re;
      total.fn += row.counts.fn;
    }
    const PixelScores s = precision_recall_f1(total);
    report.mean_precision = s.precision;
    report.mean_recall = s.recall;
    report.mean_f1 = s.f1;
  } else {
    double sp = 0.0, sr = 0.0, sf = 0.0;
    for (const ImageMetrics& row : report.per_image) {
      sp += row.scores.precision;
      sr += row.scores.recall;
      sf += row.scores.f1;
    }
    const double n = static_cast<double>(report.per_image.size());
    report.mean_precision = sp / n;
    report.mean_recall = sr / n;
    report.mean_f1 = sf / n;
  }
  return report;
}

}  // namespace crackseg
