#include "crackseg/evaluate.hpp"

#include <utility>

#include "crackseg/augment.hpp"
#include "crackseg/errors.hpp"
#include "crackseg/tape.hpp"

namespace crackseg {

Tensor<float> pad_reflect_to_multiple(const Tensor<float>& image, std::int64_t multiple) {
  require<DimensionError>(image.rank() == 3 && image.dim(0) == 3,
                          "pad_reflect_to_multiple expects 3xHxW, got ", image.shape_str());
  const std::int64_t h = image.dim(1), w = image.dim(2);
  const std::int64_t ph = (h + multiple - 1) / multiple * multiple;
  const std::int64_t pw = (w + multiple - 1) / multiple * multiple;
  if (ph == h && pw == w) {
    return image;
  }
  Tensor<float> out({3, ph, pw});
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t y = 0; y < ph; ++y) {
      const std::int64_t sy = reflect_index(y, h);
      for (std::int64_t x = 0; x < pw; ++x) {
        out[(c * ph + y) * pw + x] = image[(c * h + sy) * w + reflect_index(x, w)];
      }
    }
  }
  return out;
}

Mask predict_mask(Model<float>& model, const Tensor<float>& image, float threshold) {
  const std::int64_t h = image.dim(1), w = image.dim(2);
  const Tensor<float> padded = pad_reflect_to_multiple(image, 32);
  const std::int64_t ph = padded.dim(1), pw = padded.dim(2);

  Tensor<float> batch({1, 3, ph, pw}, padded.values());
  Tape<float> tape;
  const Var<float> pred = model.forward(tape, batch, Mode::eval);
  const Tensor<float>& probs = tape.value(pred);

  Mask mask(h, w);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      mask.set(y, x, probs[y * pw + x] > threshold ? 1 : 0);
    }
  }
  return mask;
}

ImageMetrics evaluate_sample(Model<float>& model, const Sample& sample,
                             const EvalConfig& config) {
  const Mask pred = predict_mask(model, sample.image, config.threshold);
  Mask gt(sample.mask.dim(1), sample.mask.dim(2));
  for (std::int64_t i = 0; i < sample.mask.numel(); ++i) {
    gt.data[static_cast<std::size_t>(i)] = sample.mask[i] > 0.5f ? 1 : 0;
  }
  ImageMetrics row;
  row.image = sample.name;
  row.counts = tolerant_counts(pred, gt, config.tolerance);
  row.scores = precision_recall_f1(row.counts);
  return row;
}

MetricsReport evaluate_dataset(Model<float>& model, const DatasetIndex& index,
                               const EvalConfig& config) {
  require<ContractError>(!index.empty(), "no samples to evaluate");
  std::vector<ImageMetrics> rows;
  rows.reserve(index.entries.size());
  for (const auto& entry : index.entries) {
    rows.push_back(evaluate_sample(model, load_sample(entry), config));
  }
  return make_report(std::move(rows), config.pooled);
}

}  // namespace crackseg
