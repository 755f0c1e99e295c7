#include "tensorforge/train/iter.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "tensorforge/error.hpp"
#include "tensorforge/rng.hpp"

namespace tensorforge::train {

BufferedIter::BufferedIter(Engine& engine, const DatasetSplit& split, std::int64_t batch_size, std::uint64_t seed,
                           bool keep_last)
    : engine_(engine), split_(split), batch_(batch_size), keep_last_(keep_last), seed_(seed) {
  require(batch_size >= 1, ErrorKind::argument, "buffered_iter: batch size must be positive");
  reset(false);
}

BufferedIter::~BufferedIter() { drain(); }

void BufferedIter::drain() noexcept {
  if (pending_.valid()) pending_.wait();
  pending_ = {};
}

std::int64_t BufferedIter::batches_per_epoch() const noexcept {
  const std::int64_t n = split_.count();
  return keep_last_ ? (n + batch_ - 1) / batch_ : n / batch_;
}

std::int64_t BufferedIter::rows_at(std::int64_t cursor) const noexcept {
  const std::int64_t left = split_.count() - cursor;
  if (left >= batch_) return batch_;
  return keep_last_ && left > 0 ? left : 0;
}

BufferedIter& BufferedIter::reset(bool shuffle) {
  drain();
  order_.resize(static_cast<std::size_t>(split_.count()));
  std::iota(order_.begin(), order_.end(), std::int64_t{0});
  if (shuffle) {
    Rng rng = Rng(seed_).split(shuffles_++);
    for (std::int64_t i = split_.count() - 1; i > 0; --i) {
      const auto j = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(i + 1)));
      std::swap(order_[static_cast<std::size_t>(i)], order_[static_cast<std::size_t>(j)]);
    }
  }
  cursor_ = 0;
  prefetch();
  return *this;
}

bool BufferedIter::has_next() const noexcept { return rows_at(cursor_) > 0; }

BufferedIter::HostBatch BufferedIter::gather(std::int64_t begin, std::int64_t rows) const {
  HostBatch b;
  b.rows = rows;
  b.pixels.resize(static_cast<std::size_t>(rows * kPixelBytes));
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t src = order_[static_cast<std::size_t>(begin + r)];
    std::copy_n(split_.pixels.begin() + src * kPixelBytes, kPixelBytes, b.pixels.begin() + r * kPixelBytes);
    labels[static_cast<std::size_t>(r)] = split_.labels[static_cast<std::size_t>(src)];
  }
  b.labels = onehot_rows(labels);
  return b;
}

void BufferedIter::prefetch() {
  const std::int64_t rows = rows_at(cursor_);
  if (rows == 0) return;
  pending_ = std::async(std::launch::async, [this, begin = cursor_, rows] { return gather(begin, rows); });
}

Batch BufferedIter::next() {
  require(has_next(), ErrorKind::iteration,
          "buffered_iter: no batch left (cursor " + std::to_string(cursor_) + " of " +
              std::to_string(split_.count()) + "); call reset()");
  HostBatch host = pending_.get();
  cursor_ += host.rows;
  prefetch();
  Batch out;
  out.input = engine_.from_host_bytes(host.pixels, {host.rows, kImageSide, kImageSide, kChannels});
  out.label = engine_.from_host(host.labels, {host.rows, kClasses});
  return out;
}

}  // namespace tensorforge::train
