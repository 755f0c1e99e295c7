#include "tensorforge/app/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <memory>

#include "tensorforge/app/checkpoint.hpp"
#include "tensorforge/app/models.hpp"
#include "tensorforge/error.hpp"
#include "tensorforge/rng.hpp"
#include "tensorforge/train/iter.hpp"
#include "tensorforge/train/loss.hpp"
#include "tensorforge/train/optim.hpp"

namespace tensorforge::app {

namespace {

using Clock = std::chrono::steady_clock;

// stand-in split sizes when no CIFAR-10 directory is available
constexpr std::int64_t kSynthTrain = 5000;
constexpr std::int64_t kSynthTest = 1000;

std::string data_directory(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("TENSORFORGE_CIFAR_DIR"); env != nullptr && *env != '\0') return env;
  return {};
}

DataSource load_from(const std::string& configured, std::int64_t subset) {
  DataSource src;
  const std::string dir = data_directory(configured);
  if (dir.empty()) {
    src.data.train = train::synthesize(std::max(kSynthTrain, subset), 1);
    src.data.test = train::synthesize(kSynthTest, 2);
    src.description = "synthetic (no CIFAR-10 directory given)";
  } else {
    src.data = train::load_cifar10(dir);
    src.description = "cifar10 from " + dir;
  }
  src.data.train = src.data.train.subset(subset);
  return src;
}

EngineOptions engine_options(std::int64_t conv_threshold) {
  EngineOptions o;
  o.conv_threshold = conv_threshold;
  return o;
}

std::unique_ptr<train::Optimizer> make_optimizer(const TrainConfig& cfg, nn::Module& model) {
  if (cfg.optimizer == OptimizerKind::sgd) return std::make_unique<train::Sgd>(model.params(), cfg.lr);
  return std::make_unique<train::Adam>(model.params(), cfg.lr);
}

}  // namespace

void TrainConfig::validate() const {
  const auto& names = model_names();
  require(std::find(names.begin(), names.end(), net) != names.end(), ErrorKind::argument,
          "config: unknown net '" + net + "'");
  require(epochs >= 0, ErrorKind::argument, "config: epochs must be non-negative");
  require(batch_size >= 1, ErrorKind::argument, "config: batch-size must be positive");
  require(std::isfinite(lr) && lr > 0.0f, ErrorKind::argument, "config: lr must be a positive number");
  require(subset >= 1, ErrorKind::argument, "config: subset must be positive");
  require(conv_threshold >= 1, ErrorKind::argument, "config: conv-threshold must be positive");
  require(!metrics_out.empty(), ErrorKind::argument, "config: metrics-out must name a file");
}

std::filesystem::path TrainConfig::summary_path() const {
  return summary_out.empty() ? std::filesystem::path(metrics_out + ".summary") : std::filesystem::path(summary_out);
}

DataSource load_data(const TrainConfig& cfg) { return load_from(cfg.data_dir, cfg.subset); }

double accuracy(nn::Module& model, Engine& engine, const train::DatasetSplit& split, std::int64_t batch_size) {
  if (split.count() == 0) return 0.0;
  const bool was_training = model.training();
  model.eval();
  train::BufferedIter it(engine, split, batch_size, 0, true);
  std::int64_t hits = 0;
  for (it.reset(false); it.has_next();) {
    train::Batch b = it.next();
    const Tensor logits = model.forward(engine.to_float(b.input));
    const std::vector<float> z = logits.to_host();
    const std::vector<float> y = b.label.to_host();
    const std::int64_t rows = logits.dim(0), k = logits.dim(1);
    for (std::int64_t r = 0; r < rows; ++r) {
      const auto zr = z.begin() + r * k, yr = y.begin() + r * k;
      hits += std::max_element(zr, zr + k) - zr == std::max_element(yr, yr + k) - yr ? 1 : 0;
    }
    model.gc();
  }
  model.train(was_training);
  return static_cast<double>(hits) / static_cast<double>(split.count());
}

TrainResult run_train(const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  DataSource src = load_data(cfg);
  TrainResult result = run_train(cfg, src.data, hooks);
  result.data_description = src.description;
  return result;
}

TrainResult run_train(const TrainConfig& cfg, const train::Cifar10& data, const TrainHooks& hooks) {
  cfg.validate();
  const train::DatasetSplit split = data.train.subset(cfg.subset);
  if (cfg.epochs > 0) {
    require(split.count() >= cfg.batch_size, ErrorKind::argument,
            "config: training split has " + std::to_string(split.count()) + " images, fewer than batch-size " +
                std::to_string(cfg.batch_size));
  }

  Engine engine(nullptr, engine_options(cfg.conv_threshold));
  engine.set_flags(true, true);
  auto model = build_model(cfg.net, engine, cfg.seed);
  model->train();
  auto opt = make_optimizer(cfg, *model);
  train::SoftmaxCrossEntropy loss;
  train::BufferedIter iter(engine, split, cfg.batch_size, Rng(cfg.seed).split(1).seed());
  Tensor epoch_loss = engine.zeros({1});

  TrainResult result;
  result.parameter_count = parameter_count(*model);
  MetricsLog& log = result.log;
  TrainSummary& summary = log.summary();
  std::int64_t iteration = 0;

  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (epoch == 2) engine.set_flags(cfg.sync, cfg.check);
    const auto start = Clock::now();
    std::int64_t batches = 0;
    for (iter.reset(true); iter.has_next();) {
      train::Batch batch = iter.next();
      const Tensor x = engine.to_float(batch.input);
      const Tensor yh = model->forward(x);
      const Tensor l = loss.loss_tensor(yh, batch.label);
      engine.accumulate(l, epoch_loss);
      ++iteration;
      ++batches;
      if (MetricsLog::due(iteration)) log.record(iteration, epoch, l.item());
      model->backward(loss.gradient(yh, batch.label));
      opt->update().clear_grads();
      model->gc();
      if (hooks.after_iteration) hooks.after_iteration({iteration, epoch, &engine, model.get()});
    }
    engine.synchronize();
    summary.epoch_seconds.push_back(std::chrono::duration<double>(Clock::now() - start).count());
    summary.total_train_seconds += summary.epoch_seconds.back();
    summary.epoch_mean_loss.push_back(static_cast<double>(epoch_loss.item()) / static_cast<double>(batches));
    engine.fill(epoch_loss, 0.0f);
  }
  summary.iterations = iteration;
  summary.peak_pool_bytes = engine.pool().stats().peak_in_use_bytes;

  if (cfg.evaluate) {
    summary.train_accuracy = accuracy(*model, engine, split, cfg.batch_size);
    summary.test_accuracy = accuracy(*model, engine, data.test, cfg.batch_size);
  }

  log.write_csv(cfg.metrics_out);
  log.write_summary(cfg.summary_path());
  if (!cfg.checkpoint.empty()) {
    if (hooks.during_save) hooks.during_save();
    save_checkpoint(*model, cfg.checkpoint);
  }
  return result;
}

double run_eval(const EvalConfig& cfg) {
  require(cfg.split == "train" || cfg.split == "test", ErrorKind::argument,
          "eval: split must be train or test, got '" + cfg.split + "'");
  require(!cfg.checkpoint.empty(), ErrorKind::argument, "eval: a checkpoint is required");
  require(cfg.batch_size >= 1 && cfg.subset >= 1 && cfg.conv_threshold >= 1, ErrorKind::argument,
          "eval: batch-size, subset and conv-threshold must be positive");
  DataSource src = load_from(cfg.data_dir, cfg.subset);
  Engine engine(nullptr, engine_options(cfg.conv_threshold));
  auto model = build_model(cfg.net, engine, 0);
  load_checkpoint(cfg.checkpoint, *model);
  return accuracy(*model, engine, cfg.split == "train" ? src.data.train : src.data.test, cfg.batch_size);
}

}  // namespace tensorforge::app
