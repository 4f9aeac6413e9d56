// Microbenchmarks for the training hot paths. Build with
// -DCRACKSEG_BUILD_BENCHMARKS=ON and run build/benchmarks/crackseg_bench.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <optional>
#include <vector>

#include "crackseg/loss.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/model.hpp"
#include "crackseg/ops.hpp"
#include "crackseg/optimizer.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/tape.hpp"
#include "crackseg/threading.hpp"

using namespace crackseg;

namespace {

TensorF random_tensor(Rng& rng, std::vector<std::int64_t> shape) {
  TensorF t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  }
  return t;
}

void bm_conv2d_3x3(benchmark::State& state) {
  set_num_threads(static_cast<int>(state.range(0)));
  Rng rng(1);
  const TensorF x = random_tensor(rng, {1, 64, 64, 64});
  const TensorF w = random_tensor(rng, {64, 64, 3, 3});
  for (auto _ : state) {
    Tape<float> tape;
    const VarF out = conv2d(tape.leaf(x), tape.leaf(w), std::optional<VarF>{}, 1, 1);
    benchmark::DoNotOptimize(tape.value(out)[0]);
  }
  set_num_threads(1);
}
BENCHMARK(bm_conv2d_3x3)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void bm_conv2d_stem_7x7(benchmark::State& state) {
  set_num_threads(static_cast<int>(state.range(0)));
  Rng rng(2);
  const TensorF x = random_tensor(rng, {1, 3, 256, 256});
  const TensorF w = random_tensor(rng, {64, 3, 7, 7});
  for (auto _ : state) {
    Tape<float> tape;
    const VarF out = conv2d(tape.leaf(x), tape.leaf(w), std::optional<VarF>{}, 2, 3);
    benchmark::DoNotOptimize(tape.value(out)[0]);
  }
  set_num_threads(1);
}
BENCHMARK(bm_conv2d_stem_7x7)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void bm_model_forward_eval(benchmark::State& state) {
  Model<float> model(ModelConfig::reduced_test());
  model.he_init(3);
  Rng rng(4);
  const TensorF x = random_tensor(rng, {1, 3, 128, 128});
  for (auto _ : state) {
    Tape<float> tape;
    const VarF out = model.forward(tape, x, Mode::eval);
    benchmark::DoNotOptimize(tape.value(out)[0]);
  }
}
BENCHMARK(bm_model_forward_eval)->Unit(benchmark::kMillisecond);

void bm_train_step(benchmark::State& state) {
  Model<float> model(ModelConfig::reduced_test());
  model.he_init(5);
  AdamW<float> opt;
  const GroupLrs lrs = group_lrs(1e-3);
  Rng rng(6);
  const TensorF x = random_tensor(rng, {4, 3, 64, 64});
  TensorF target({4, 1, 64, 64});
  for (std::int64_t i = 0; i < target.numel(); ++i) {
    target[i] = rng.bernoulli(0.1) ? 1.0f : 0.0f;
  }
  for (auto _ : state) {
    Tape<float> tape;
    const VarF loss = dice_loss(model.forward(tape, x, Mode::train), target);
    tape.backward(loss);
    opt.step(model.parameters(), lrs);
    AdamW<float>::zero_grads(model.parameters());
    benchmark::DoNotOptimize(tape.value(loss)[0]);
  }
}
BENCHMARK(bm_train_step)->Unit(benchmark::kMillisecond);

void bm_adamw_step(benchmark::State& state) {
  Parameter<float> p;
  p.name = "w";
  Rng rng(7);
  p.value = random_tensor(rng, {1024, 1024});
  p.grad = random_tensor(rng, {1024, 1024});
  AdamW<float> opt;
  const GroupLrs lrs = group_lrs(1e-3);
  for (auto _ : state) {
    opt.step({{&p, LayerGroup::g3}}, lrs);
    benchmark::DoNotOptimize(p.value[0]);
  }
}
BENCHMARK(bm_adamw_step)->Unit(benchmark::kMillisecond);

void bm_tolerant_counts(benchmark::State& state) {
  Rng rng(8);
  Mask pred(512, 512), gt(512, 512);
  for (auto& v : pred.data) {
    v = rng.bernoulli(0.05) ? 1 : 0;
  }
  for (auto& v : gt.data) {
    v = rng.bernoulli(0.05) ? 1 : 0;
  }
  const ToleranceConfig tol{2};
  for (auto _ : state) {
    const TolerantCounts c = tolerant_counts(pred, gt, tol);
    benchmark::DoNotOptimize(c.tp_pr);
  }
}
BENCHMARK(bm_tolerant_counts)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
