// crackseg: train and evaluate a crack-segmentation network, end to end.
//
// Subcommands: split, train, evaluate, predict, gradcheck, ablate.
// Exit codes: 0 success, 1 numeric/training failure, 2 input or IO error.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crackseg/augment.hpp"
#include "crackseg/batcher.hpp"
#include "crackseg/dataset.hpp"
#include "crackseg/errors.hpp"
#include "crackseg/evaluate.hpp"
#include "crackseg/gradcheck.hpp"
#include "crackseg/image_io.hpp"
#include "crackseg/model.hpp"
#include "crackseg/threading.hpp"
#include "crackseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace crackseg;

namespace {

constexpr double kGradTolerance = 1e-4;

struct CommonOpts {
  int threads = 0;
  std::uint64_t seed = 0;
  std::string config_path;
};

struct ModelOpts {
  bool no_scse = false;
  int base_channels = 64;
  std::vector<int> blocks = {3, 4, 6, 3};
  std::string pretrained_encoder;

  ModelConfig to_config() const {
    ModelConfig config;
    config.use_scse = !no_scse;
    config.base_channels = base_channels;
    require<ConfigError>(blocks.size() == 4, "--blocks needs exactly 4 values");
    for (std::size_t i = 0; i < 4; ++i) {
      config.blocks_per_stage[i] = blocks[i];
    }
    if (!pretrained_encoder.empty()) {
      config.pretrained_encoder_path = pretrained_encoder;
    }
    return config;
  }
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--threads", opts.threads, "worker threads (default 1)")
      ->envname("CRACKSEG_THREADS");
  cmd->add_option("--seed", opts.seed, "RNG seed");
  cmd->add_option("--config", opts.config_path,
                  "flat key=value config file; explicit flags override");
}

// CLI11 only honors set_config on the top-level app, so the flat key=value
// file is merged by hand: every key must name a long option of the
// subcommand, and a value only lands where no explicit flag was given.
void apply_config_file(CLI::App* cmd, const std::string& path) {
  if (path.empty()) {
    return;
  }
  std::ifstream in(path);
  require<DataError>(in.good(), "cannot read config file '", path, "'");
  const auto trim = [](const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') {
      continue;
    }
    const auto eq = text.find('=');
    require<ConfigError>(eq != std::string::npos, "config '", path, "' line ", line_no,
                         ": expected key=value, got '", text, "'");
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    require<ConfigError>(!key.empty(), "config '", path, "' line ", line_no, ": empty key");
    require<ConfigError>(key != "config", "config '", path,
                         "': config files cannot include other config files");
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    require<ConfigError>(opt != nullptr, "config '", path, "': unknown key '", key, "'");
    if (opt->count() > 0) {
      continue;  // the command line wins
    }
    try {
      opt->add_result(value);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      raise<ConfigError>("config '", path, "': key '", key, "': ", e.what());
    }
  }
}

void add_model_opts(CLI::App* cmd, ModelOpts& opts) {
  cmd->add_flag("--no-scse", opts.no_scse, "drop the attention gates from the decoder");
  cmd->add_option("--base-channels", opts.base_channels, "stem width (default 64)");
  cmd->add_option("--blocks", opts.blocks, "residual blocks per encoder stage")
      ->delimiter(',')
      ->expected(4);
  cmd->add_option("--pretrained-encoder", opts.pretrained_encoder,
                  "checkpoint whose encoder.* tensors seed the encoder");
}

void apply_threads(const CommonOpts& opts) {
  if (opts.threads > 0) {
    set_num_threads(opts.threads);
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  require<DataError>(out.good(), "cannot open '", path, "' for writing");
  out << text;
  require<DataError>(out.good(), "failed writing '", path, "'");
}

void print_means(const MetricsReport& report) {
  std::cout << std::fixed << std::setprecision(4) << "Pr " << report.mean_precision << " Re "
            << report.mean_recall << " F1 " << report.mean_f1 << "\n";
}

// ---------------------------------------------------------------- split ----

struct SplitOpts {
  CommonOpts common;
  std::string root;
  std::string out;
  double ratio = 0.6;
};

int cmd_split(const SplitOpts& opts) {
  require<ConfigError>(!opts.root.empty(), "--root is required");
  const DatasetIndex index = load_dataset(opts.root);
  if (index.empty()) {
    std::cerr << "warning: dataset at '" << opts.root << "' is empty\n";
  }
  const auto [train, test] = split(index, opts.ratio, opts.common.seed);
  const std::string out_dir = opts.out.empty() ? opts.root : opts.out;
  fs::create_directories(out_dir);
  write_manifest(out_dir + "/train.txt", train);
  write_manifest(out_dir + "/test.txt", test);
  std::cout << "train: " << train.size() << ", test: " << test.size() << "\n";
  return 0;
}

// ---------------------------------------------------------------- train ----

struct TrainOpts {
  CommonOpts common;
  ModelOpts model;
  std::string root;
  std::string manifest;
  std::string out = "out";
  double lr = 0.0;
  int batch = 4;
  int epochs_stage1 = 15;
  int epochs_stage2 = 30;
  int epochs_per_size = 30;
  int single_size = 0;
  int epochs = 90;
  std::vector<int> sizes = {128, 256, 320};
  bool no_two_stage = false;
};

int cmd_train(const TrainOpts& opts) {
  require<ConfigError>(!opts.root.empty(), "--root is required");
  require<ConfigError>(opts.lr > 0.0, "--lr is required and must be positive");
  const DatasetIndex index = load_dataset(opts.root);
  const std::string manifest =
      opts.manifest.empty() ? opts.root + "/train.txt" : opts.manifest;
  const DatasetIndex data = subset_from_manifest(index, manifest);
  require<DataError>(!data.empty(), "manifest '", manifest, "' selects no images");

  TrainConfig config;
  config.lr_max = opts.lr;
  config.batch_size = opts.batch;
  config.epochs_stage1 = opts.epochs_stage1;
  config.epochs_stage2 = opts.epochs_stage2;
  config.epochs_per_size = opts.epochs_per_size;
  config.two_stage = !opts.no_two_stage;
  config.seed = opts.common.seed;
  config.checkpoint_dir = opts.out;
  config.log_path = opts.out + "/train_log.jsonl";
  if (opts.single_size > 0) {
    config.progressive = false;
    config.sizes = {opts.single_size};
    config.single_size_epochs = opts.epochs;
  } else {
    config.sizes = opts.sizes;
  }
  config.validate();

  fs::create_directories(opts.out);
  Model<float> model(opts.model.to_config());
  model.he_init(config.seed);
  const auto logs = train_model(model, data, config);
  std::cout << "trained " << logs.size() << " epochs; final checkpoint " << opts.out
            << "/final.ckpt\n";
  return 0;
}

// ------------------------------------------------------------- evaluate ----

struct EvaluateOpts {
  CommonOpts common;
  ModelOpts model;
  std::string root;
  std::string manifest;
  std::string checkpoint;
  std::string out = "metrics.json";
  int radius = 2;
  double threshold = 0.5;
  bool pooled = false;
};

int cmd_evaluate(const EvaluateOpts& opts) {
  require<ConfigError>(!opts.root.empty(), "--root is required");
  require<ConfigError>(!opts.checkpoint.empty(), "--checkpoint is required");
  const DatasetIndex index = load_dataset(opts.root);
  const std::string manifest = opts.manifest.empty() ? opts.root + "/test.txt" : opts.manifest;
  const DatasetIndex data = subset_from_manifest(index, manifest);
  require<DataError>(!data.empty(), "manifest '", manifest, "' selects no images");

  Model<float> model(opts.model.to_config());
  load_checkpoint(model, opts.checkpoint);

  EvalConfig config;
  config.tolerance.radius = opts.radius;
  config.threshold = static_cast<float>(opts.threshold);
  config.pooled = opts.pooled;
  const MetricsReport report = evaluate_dataset(model, data, config);

  write_text_file(opts.out, report.to_json() + "\n");
  print_means(report);
  return 0;
}

// -------------------------------------------------------------- predict ----

struct PredictOpts {
  CommonOpts common;
  ModelOpts model;
  std::string checkpoint;
  std::string image;
  std::string out;
  std::string overlay;
  double threshold = 0.5;
};

int cmd_predict(const PredictOpts& opts) {
  require<ConfigError>(!opts.checkpoint.empty(), "--checkpoint is required");
  require<ConfigError>(!opts.image.empty(), "--image is required");
  Model<float> model(opts.model.to_config());
  load_checkpoint(model, opts.checkpoint);

  const Tensor<float> image = read_image_png(opts.image);
  const Mask mask = predict_mask(model, image, static_cast<float>(opts.threshold));

  const std::string stem = (fs::path(opts.image).parent_path() /
                            fs::path(opts.image).stem())
                               .string();
  const std::string mask_path = opts.out.empty() ? stem + "_mask.png" : opts.out;
  const std::string overlay_path = opts.overlay.empty() ? stem + "_overlay.png" : opts.overlay;

  write_mask_png(mask_path, mask);

  Tensor<float> overlay = image;
  const std::int64_t h = image.dim(1), w = image.dim(2);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      if (mask.at(y, x)) {
        overlay[(0 * h + y) * w + x] = 1.0f;
        overlay[(1 * h + y) * w + x] = 0.0f;
        overlay[(2 * h + y) * w + x] = 0.0f;
      }
    }
  }
  write_image_png(overlay_path, overlay);
  std::cout << "mask " << mask_path << " (" << mask.positives() << " crack pixels), overlay "
            << overlay_path << "\n";
  return 0;
}

// ------------------------------------------------------------ gradcheck ----

struct GradcheckOpts {
  CommonOpts common;
  std::string scope = "ops";
};

int cmd_gradcheck(const GradcheckOpts& opts) {
  bool failed = false;
  std::cout << std::scientific << std::setprecision(3);
  if (opts.scope == "ops") {
    const std::uint64_t seed = opts.common.seed ? opts.common.seed : 107;
    for (const auto& row : builtin_op_checks(seed)) {
      const bool ok = row.max_rel_error < kGradTolerance;
      failed |= !ok;
      std::cout << std::left << std::setw(18) << row.name << std::right << std::setw(4)
                << row.instances << "  " << row.max_rel_error << "  "
                << (ok ? "ok" : "FAIL") << "\n";
    }
  } else {
    const std::uint64_t seed = opts.common.seed ? opts.common.seed : 211;
    const ModelCheckResult result = model_grad_check(2, 1e-5, seed);
    const bool ok = result.max_rel_error < kGradTolerance;
    failed = !ok;
    std::cout << std::left << std::setw(18) << "model" << std::right << std::setw(4)
              << result.checked_elements << "  " << result.max_rel_error << "  "
              << (ok ? "ok" : "FAIL") << "\n";
  }
  return failed ? 1 : 0;
}

// --------------------------------------------------------------- ablate ----

struct AblateOpts {
  CommonOpts common;
  ModelOpts model;
  std::string name;
  std::string root;
  std::string train_manifest;
  std::string test_manifest;
  std::string out = "out";
  double lr = 0.0;
  int batch = 4;
  int epochs_stage1 = 15;
  int epochs_stage2 = 30;
  int epochs_per_size = 30;
  std::vector<int> sizes = {128, 256, 320};
};

int cmd_ablate(const AblateOpts& opts) {
  require<ConfigError>(!opts.name.empty(), "--name is required");
  require<ConfigError>(!opts.root.empty(), "--root is required");
  require<ConfigError>(opts.lr > 0.0, "--lr is required and must be positive");
  const DatasetIndex index = load_dataset(opts.root);
  const std::string train_path =
      opts.train_manifest.empty() ? opts.root + "/train.txt" : opts.train_manifest;
  const std::string test_path =
      opts.test_manifest.empty() ? opts.root + "/test.txt" : opts.test_manifest;
  const DatasetIndex train_data = subset_from_manifest(index, train_path);
  const DatasetIndex test_data = subset_from_manifest(index, test_path);
  require<DataError>(!train_data.empty(), "manifest '", train_path, "' selects no images");
  require<DataError>(!test_data.empty(), "manifest '", test_path, "' selects no images");

  TrainConfig config;
  config.lr_max = opts.lr;
  config.batch_size = opts.batch;
  config.epochs_stage1 = opts.epochs_stage1;
  config.epochs_stage2 = opts.epochs_stage2;
  config.epochs_per_size = opts.epochs_per_size;
  config.sizes = opts.sizes;
  config.seed = opts.common.seed;
  fs::create_directories(opts.out);
  config.checkpoint_dir = opts.out;
  config.log_path = opts.out + "/ablation_log";
  config.validate();

  const AblationResult result =
      run_ablation(opts.name, train_data, test_data, opts.model.to_config(), config);

  for (const AblationArm* arm : {&result.a, &result.b}) {
    write_text_file(opts.out + "/" + result.name + "_" + arm->label + ".json",
                    arm->report.to_json() + "\n");
  }

  std::cout << "ablation: " << result.name << "\n";
  std::cout << std::left << std::setw(16) << "  arm"
            << "Pr      Re      F1\n";
  std::cout << std::fixed << std::setprecision(4);
  for (const AblationArm* arm : {&result.a, &result.b}) {
    std::cout << "  " << std::left << std::setw(14) << arm->label << arm->report.mean_precision
              << "  " << arm->report.mean_recall << "  " << arm->report.mean_f1 << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pavement crack segmentation: training, evaluation, prediction"};
  app.require_subcommand(1);

  SplitOpts split_opts;
  CLI::App* split_cmd = app.add_subcommand("split", "partition a dataset into train/test");
  add_common(split_cmd, split_opts.common);
  split_cmd->add_option("--root", split_opts.root,
                        "dataset root with images/ and masks/ (required)");
  split_cmd->add_option("--ratio", split_opts.ratio, "train fraction (default 0.6)");
  split_cmd->add_option("--out", split_opts.out, "manifest directory (default: root)");

  TrainOpts train_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model from a manifest");
  add_common(train_cmd, train_opts.common);
  add_model_opts(train_cmd, train_opts.model);
  train_cmd->add_option("--root", train_opts.root, "dataset root (required)");
  train_cmd->add_option("--manifest", train_opts.manifest,
                        "training manifest (default <root>/train.txt)");
  train_cmd->add_option("--lr", train_opts.lr, "peak learning rate (required)");
  train_cmd->add_option("--batch", train_opts.batch, "batch size (default 4)");
  train_cmd->add_option("--epochs-stage1", train_opts.epochs_stage1,
                        "frozen-encoder epochs (default 15)");
  train_cmd->add_option("--epochs-stage2", train_opts.epochs_stage2,
                        "unfrozen epochs (default 30)");
  train_cmd->add_option("--epochs-per-size", train_opts.epochs_per_size,
                        "epochs at each later size (default 30)");
  train_cmd->add_option("--sizes", train_opts.sizes, "progressive crop sizes")
      ->delimiter(',');
  train_cmd->add_option("--single-size", train_opts.single_size,
                        "train at one size only (disables the size schedule)");
  train_cmd->add_option("--epochs", train_opts.epochs,
                        "total epochs for --single-size runs (default 90)");
  train_cmd->add_flag("--no-two-stage", train_opts.no_two_stage,
                      "skip the frozen first stage");
  train_cmd->add_option("--out", train_opts.out, "output directory (default out)");

  EvaluateOpts eval_opts;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a manifest");
  add_common(eval_cmd, eval_opts.common);
  add_model_opts(eval_cmd, eval_opts.model);
  eval_cmd->add_option("--root", eval_opts.root, "dataset root (required)");
  eval_cmd->add_option("--manifest", eval_opts.manifest,
                       "evaluation manifest (default <root>/test.txt)");
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "model checkpoint (required)");
  eval_cmd->add_option("--radius", eval_opts.radius, "matching tolerance in pixels (default 2)");
  eval_cmd->add_option("--threshold", eval_opts.threshold,
                       "probability threshold (default 0.5)");
  eval_cmd->add_flag("--pooled", eval_opts.pooled,
                     "pool counts over the dataset instead of averaging per image");
  eval_cmd->add_option("--out", eval_opts.out, "report path (default metrics.json)");

  PredictOpts predict_opts;
  CLI::App* predict_cmd = app.add_subcommand("predict", "segment one image");
  add_common(predict_cmd, predict_opts.common);
  add_model_opts(predict_cmd, predict_opts.model);
  predict_cmd->add_option("--checkpoint", predict_opts.checkpoint,
                          "model checkpoint (required)");
  predict_cmd->add_option("--image", predict_opts.image, "input PNG (required)");
  predict_cmd->add_option("--out", predict_opts.out, "mask path (default <image>_mask.png)");
  predict_cmd->add_option("--overlay", predict_opts.overlay,
                          "overlay path (default <image>_overlay.png)");
  predict_cmd->add_option("--threshold", predict_opts.threshold,
                          "probability threshold (default 0.5)");

  GradcheckOpts gradcheck_opts;
  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference checks of the gradients");
  add_common(gradcheck_cmd, gradcheck_opts.common);
  gradcheck_cmd
      ->add_option("scope", gradcheck_opts.scope, "ops (per-op) or model (full graph)")
      ->check(CLI::IsMember({"ops", "model"}));

  AblateOpts ablate_opts;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "train and compare two configurations");
  add_common(ablate_cmd, ablate_opts.common);
  add_model_opts(ablate_cmd, ablate_opts.model);
  ablate_cmd
      ->add_option("--name", ablate_opts.name,
                   "one-stage-vs-two-stage, scse, or progressive-sizes (required)")
      ->check(CLI::IsMember({"one-stage-vs-two-stage", "scse", "progressive-sizes"}));
  ablate_cmd->add_option("--root", ablate_opts.root, "dataset root (required)");
  ablate_cmd->add_option("--train-manifest", ablate_opts.train_manifest,
                         "training manifest (default <root>/train.txt)");
  ablate_cmd->add_option("--test-manifest", ablate_opts.test_manifest,
                         "evaluation manifest (default <root>/test.txt)");
  ablate_cmd->add_option("--lr", ablate_opts.lr, "peak learning rate (required)");
  ablate_cmd->add_option("--batch", ablate_opts.batch, "batch size (default 4)");
  ablate_cmd->add_option("--epochs-stage1", ablate_opts.epochs_stage1,
                         "frozen-encoder epochs (default 15)");
  ablate_cmd->add_option("--epochs-stage2", ablate_opts.epochs_stage2,
                         "unfrozen epochs (default 30)");
  ablate_cmd->add_option("--epochs-per-size", ablate_opts.epochs_per_size,
                         "epochs at each later size (default 30)");
  ablate_cmd->add_option("--sizes", ablate_opts.sizes, "progressive crop sizes")
      ->delimiter(',');
  ablate_cmd->add_option("--out", ablate_opts.out, "output directory (default out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*split_cmd) {
      apply_config_file(split_cmd, split_opts.common.config_path);
      apply_threads(split_opts.common);
      return cmd_split(split_opts);
    }
    if (*train_cmd) {
      apply_config_file(train_cmd, train_opts.common.config_path);
      apply_threads(train_opts.common);
      return cmd_train(train_opts);
    }
    if (*eval_cmd) {
      apply_config_file(eval_cmd, eval_opts.common.config_path);
      apply_threads(eval_opts.common);
      return cmd_evaluate(eval_opts);
    }
    if (*predict_cmd) {
      apply_config_file(predict_cmd, predict_opts.common.config_path);
      apply_threads(predict_opts.common);
      return cmd_predict(predict_opts);
    }
    if (*gradcheck_cmd) {
      apply_config_file(gradcheck_cmd, gradcheck_opts.common.config_path);
      apply_threads(gradcheck_opts.common);
      return cmd_gradcheck(gradcheck_opts);
    }
    if (*ablate_cmd) {
      apply_config_file(ablate_cmd, ablate_opts.common.config_path);
      apply_threads(ablate_opts.common);
      return cmd_ablate(ablate_opts);
    }
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
