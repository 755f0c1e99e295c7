#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tensorforge::app {

struct MetricsRow {
  std::int64_t iteration = 0;
  std::int64_t epoch = 0;
  float loss = 0.0f;
};

struct TrainSummary {
  double total_train_seconds = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::int64_t peak_pool_bytes = 0;
  std::int64_t iterations = 0;
  std::vector<double> epoch_seconds;
  std::vector<double> epoch_mean_loss;
};

// Loss time series sampled every 10 iterations.
class MetricsLog {
 public:
  static constexpr std::int64_t kCadence = 10;

  static bool due(std::int64_t iteration) noexcept { return iteration % kCadence == 0; }
  // Appends a row when the iteration is due; returns whether it did.
  bool record(std::int64_t iteration, std::int64_t epoch, float loss);

  const std::vector<MetricsRow>& rows() const noexcept { return rows_; }
  TrainSummary& summary() noexcept { return summary_; }
  const TrainSummary& summary() const noexcept { return summary_; }

  // "iteration,epoch,loss" with losses printed to round-trip exactly.
  std::string csv() const;
  std::string summary_text() const;
  void write_csv(const std::filesystem::path& path) const;
  void write_summary(const std::filesystem::path& path) const;

 private:
  std::vector<MetricsRow> rows_;
  TrainSummary summary_;
};

}  // namespace tensorforge::app
