// tensorforge command line: train, eval and synth.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include "tensorforge/app/models.hpp"
#include "tensorforge/app/trainer.hpp"
#include "tensorforge/error.hpp"
#include "tensorforge/train/cifar.hpp"

namespace app = tensorforge::app;

namespace {

const std::map<std::string, bool> kOnOff{{"on", true}, {"off", false}};

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"tensorforge: train and evaluate NHWC convolutional networks"};
  cli.require_subcommand(1);

  app::TrainConfig tc;
  std::string optimizer = "adam";
  auto* train = cli.add_subcommand("train", "train a network and write metrics and a checkpoint");
  train->add_option("--net", tc.net, "fig2_resnet | alexnet_small")->capture_default_str();
  train->add_option("--epochs", tc.epochs)->capture_default_str();
  train->add_option("--batch-size", tc.batch_size)->capture_default_str();
  train->add_option("--lr", tc.lr)->capture_default_str();
  train->add_option("--optimizer", optimizer, "adam | sgd")->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
  train->add_option("--seed", tc.seed)->capture_default_str();
  train->add_option("--data-dir", tc.data_dir, "CIFAR-10 binary directory (default: $TENSORFORGE_CIFAR_DIR, else generated data)");
  train->add_option("--subset", tc.subset, "training images used")->capture_default_str();
  train->add_option("--sync", tc.sync, "engine sync mode after the first epoch")
      ->transform(CLI::CheckedTransformer(kOnOff))->default_str("off");
  train->add_option("--check", tc.check, "parameter checks after the first epoch")
      ->transform(CLI::CheckedTransformer(kOnOff))->default_str("off");
  train->add_option("--conv-threshold", tc.conv_threshold, "output H*W at or below which convs run direct")
      ->capture_default_str();
  train->add_option("--metrics-out", tc.metrics_out)->capture_default_str();
  train->add_option("--summary-out", tc.summary_out, "default: <metrics-out>.summary");
  train->add_option("--checkpoint", tc.checkpoint, "checkpoint file to write");
  train->add_flag("!--no-eval", tc.evaluate, "skip the accuracy passes");

  app::EvalConfig ec;
  auto* eval = cli.add_subcommand("eval", "report accuracy of a checkpoint");
  eval->add_option("--net", ec.net)->capture_default_str();
  eval->add_option("--checkpoint", ec.checkpoint)->required();
  eval->add_option("--data-dir", ec.data_dir);
  eval->add_option("--split", ec.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  eval->add_option("--subset", ec.subset)->capture_default_str();
  eval->add_option("--batch-size", ec.batch_size)->capture_default_str();
  eval->add_option("--conv-threshold", ec.conv_threshold)->capture_default_str();

  std::string synth_dir;
  std::int64_t synth_train = 5000, synth_test = 1000;
  std::uint64_t synth_seed = 1;
  auto* synth = cli.add_subcommand("synth", "write a generated dataset in CIFAR-10 binary layout");
  synth->add_option("--out", synth_dir)->required();
  synth->add_option("--train", synth_train)->capture_default_str();
  synth->add_option("--test", synth_test)->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return cli.exit(e);
    std::cerr << "argument error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*train) {
      tc.optimizer = optimizer == "sgd" ? app::OptimizerKind::sgd : app::OptimizerKind::adam;
      const app::TrainResult r = app::run_train(tc);
      const auto& s = r.log.summary();
      std::printf("data: %s\n", r.data_description.c_str());
      std::printf("net %s, %lld parameters, %lld iterations\n", tc.net.c_str(),
                  static_cast<long long>(r.parameter_count), static_cast<long long>(s.iterations));
      for (std::size_t e = 0; e < s.epoch_mean_loss.size(); ++e) {
        std::printf("epoch %zu: mean loss %.6f, %.2f s\n", e + 1, s.epoch_mean_loss[e], s.epoch_seconds[e]);
      }
      std::printf("train time %.2f s, train accuracy %.4f, test accuracy %.4f, peak pool %lld bytes\n",
                  s.total_train_seconds, s.train_accuracy, s.test_accuracy, static_cast<long long>(s.peak_pool_bytes));
    } else if (*eval) {
      std::printf("accuracy %.6f\n", app::run_eval(ec));
    } else if (*synth) {
      tensorforge::train::Cifar10 data{tensorforge::train::synthesize(synth_train, synth_seed),
                                       tensorforge::train::synthesize(synth_test, synth_seed + 1)};
      tensorforge::train::write_cifar10(synth_dir, data);
      std::printf("wrote %lld train and %lld test records to %s\n", static_cast<long long>(synth_train),
                  static_cast<long long>(synth_test), synth_dir.c_str());
    }
  } catch (const tensorforge::Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
