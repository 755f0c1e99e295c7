#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "tensorforge/app/metrics.hpp"
#include "tensorforge/nn/layers.hpp"
#include "tensorforge/train/cifar.hpp"

namespace tensorforge::app {

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  std::string net = "fig2_resnet";
  std::int64_t epochs = 10;
  std::int64_t batch_size = 64;
  float lr = 0.01f;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;
  // empty: $TENSORFORGE_CIFAR_DIR, else generated data
  std::string data_dir;
  std::int64_t subset = 2000;
  // engine flags from the second epoch on; the first always runs sync + check
  bool sync = false;
  bool check = false;
  std::int64_t conv_threshold = 64;
  std::string metrics_out = "metrics.csv";
  // empty: metrics_out + ".summary"
  std::string summary_out;
  // empty: no checkpoint
  std::string checkpoint;
  // accuracy passes after training
  bool evaluate = true;

  // Raises an argument error naming the first invalid field.
  void validate() const;
  std::filesystem::path summary_path() const;
};

// Where the data came from, for logs.
struct DataSource {
  train::Cifar10 data;
  std::string description;
};

// Loads the configured directory or generates the stand-in set. The training
// split is cut to cfg.subset.
DataSource load_data(const TrainConfig& cfg);

struct IterationInfo {
  std::int64_t iteration = 0;
  std::int64_t epoch = 0;
  Engine* engine = nullptr;
  nn::Module* model = nullptr;
};

struct TrainHooks {
  // after gc at the end of every iteration
  std::function<void(const IterationInfo&)> after_iteration;
  // inside checkpoint saving (tests inject delays here)
  std::function<void()> during_save;
};

struct TrainResult {
  MetricsLog log;
  std::int64_t parameter_count = 0;
  std::string data_description;
};

// Runs the training loop, writes the metrics CSV, summary and checkpoint.
TrainResult run_train(const TrainConfig& cfg, const TrainHooks& hooks = {});
// Same loop over caller-provided data; nothing is read from disk.
TrainResult run_train(const TrainConfig& cfg, const train::Cifar10& data, const TrainHooks& hooks = {});

// Fraction of records whose argmax logit matches the label, in inference mode.
double accuracy(nn::Module& model, Engine& engine, const train::DatasetSplit& split, std::int64_t batch_size);

struct EvalConfig {
  std::string net = "fig2_resnet";
  std::string checkpoint;
  std::string data_dir;
  std::string split = "test";  // train | test
  std::int64_t subset = 2000;
  std::int64_t batch_size = 64;
  std::int64_t conv_threshold = 64;
};

double run_eval(const EvalConfig& cfg);

}  // namespace tensorforge::app
