#include "tensorforge/app/metrics.hpp"

#include <cstdio>
#include <fstream>

#include "tensorforge/error.hpp"

namespace tensorforge::app {

namespace {

std::string number(double v, const char* fmt) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::format, "metrics: cannot create " + path.string());
  out << text;
  if (!out) fail(ErrorKind::format, "metrics: write failed for " + path.string());
}

}  // namespace

bool MetricsLog::record(std::int64_t iteration, std::int64_t epoch, float loss) {
  require(iteration >= 1, ErrorKind::argument, "record_metrics: iteration must be at least 1");
  if (!due(iteration)) return false;
  rows_.push_back({iteration, epoch, loss});
  return true;
}

std::string MetricsLog::csv() const {
  std::string s = "iteration,epoch,loss\n";
  for (const auto& r : rows_) {
    s += std::to_string(r.iteration) + "," + std::to_string(r.epoch) + "," + number(r.loss, "%.9g") + "\n";
  }
  return s;
}

std::string MetricsLog::summary_text() const {
  const auto& m = summary_;
  std::string s;
  s += "total_train_seconds=" + number(m.total_train_seconds, "%.6f") + "\n";
  s += "train_accuracy=" + number(m.train_accuracy, "%.6f") + "\n";
  s += "test_accuracy=" + number(m.test_accuracy, "%.6f") + "\n";
  s += "peak_pool_bytes=" + std::to_string(m.peak_pool_bytes) + "\n";
  s += "iterations=" + std::to_string(m.iterations) + "\n";
  for (std::size_t e = 0; e < m.epoch_seconds.size(); ++e) {
    s += "epoch_" + std::to_string(e + 1) + "_seconds=" + number(m.epoch_seconds[e], "%.6f") + "\n";
    s += "epoch_" + std::to_string(e + 1) + "_mean_loss=" + number(m.epoch_mean_loss[e], "%.9g") + "\n";
  }
  return s;
}

void MetricsLog::write_csv(const std::filesystem::path& path) const { write_text(path, csv()); }
void MetricsLog::write_summary(const std::filesystem::path& path) const { write_text(path, summary_text()); }

}  // namespace tensorforge::app
