#include "tensorforge/train/cifar.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "tensorforge/error.hpp"
#include "tensorforge/rng.hpp"

namespace tensorforge::train {

namespace fs = std::filesystem;

namespace {

constexpr std::int64_t kPlane = kImageSide * kImageSide;

[[noreturn]] void format_error(const fs::path& file, std::int64_t offset, const std::string& what) {
  fail(ErrorKind::format, "cifar10: " + file.string() + " at offset " + std::to_string(offset) + ": " + what);
}

void append(DatasetSplit& into, const DatasetSplit& from) {
  into.pixels.insert(into.pixels.end(), from.pixels.begin(), from.pixels.end());
  into.labels.insert(into.labels.end(), from.labels.begin(), from.labels.end());
}

}  // namespace

DatasetSplit DatasetSplit::subset(std::int64_t n) const {
  require(n >= 0, ErrorKind::argument, "subset: count must be non-negative");
  n = std::min(n, count());
  DatasetSplit out;
  out.pixels.assign(pixels.begin(), pixels.begin() + n * kPixelBytes);
  out.labels.assign(labels.begin(), labels.begin() + n);
  return out;
}

Tensor DatasetSplit::images(Engine& engine) const {
  return engine.from_host_bytes(pixels, {count(), kImageSide, kImageSide, kChannels});
}

Tensor DatasetSplit::onehot(Engine& engine) const { return engine.from_host(onehot_rows(labels), {count(), kClasses}); }

std::vector<float> onehot_rows(const std::vector<std::uint8_t>& labels) {
  std::vector<float> rows(labels.size() * kClasses, 0.0f);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < kClasses, ErrorKind::label, "one-hot: label " + std::to_string(labels[i]) + " out of range");
    rows[i * kClasses + labels[i]] = 1.0f;
  }
  return rows;
}

DatasetSplit read_cifar_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) format_error(file, 0, "cannot open file");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto size = static_cast<std::int64_t>(bytes.size());
  if (size % kRecordBytes != 0) {
    format_error(file, size - size % kRecordBytes,
                 "truncated record (" + std::to_string(size % kRecordBytes) + " of " + std::to_string(kRecordBytes) +
                     " bytes)");
  }
  const std::int64_t n = size / kRecordBytes;
  DatasetSplit out;
  out.labels.resize(static_cast<std::size_t>(n));
  out.pixels.resize(static_cast<std::size_t>(n * kPixelBytes));
  for (std::int64_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kRecordBytes;
    if (rec[0] >= kClasses) format_error(file, r * kRecordBytes, "label " + std::to_string(rec[0]) + " not in 0..9");
    out.labels[static_cast<std::size_t>(r)] = rec[0];
    std::uint8_t* img = out.pixels.data() + r * kPixelBytes;
    // planar RGB -> interleaved
    for (std::int64_t c = 0; c < kChannels; ++c) {
      const std::uint8_t* plane = rec + 1 + c * kPlane;
      for (std::int64_t p = 0; p < kPlane; ++p) img[p * kChannels + c] = plane[p];
    }
  }
  return out;
}

void write_cifar_file(const fs::path& file, const DatasetSplit& split) {
  require(static_cast<std::int64_t>(split.pixels.size()) == split.count() * kPixelBytes, ErrorKind::shape,
          "cifar10: pixel buffer does not match the label count");
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(split.count() * kRecordBytes));
  for (std::int64_t r = 0; r < split.count(); ++r) {
    std::uint8_t* rec = bytes.data() + r * kRecordBytes;
    rec[0] = split.labels[static_cast<std::size_t>(r)];
    const std::uint8_t* img = split.pixels.data() + r * kPixelBytes;
    for (std::int64_t c = 0; c < kChannels; ++c) {
      for (std::int64_t p = 0; p < kPlane; ++p) rec[1 + c * kPlane + p] = img[p * kChannels + c];
    }
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::format, "cifar10: cannot create " + file.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::format, "cifar10: write failed for " + file.string());
}

Cifar10 load_cifar10(const fs::path& directory) {
  Cifar10 data;
  for (int i = 1; i <= 5; ++i) {
    const fs::path file = directory / ("data_batch_" + std::to_string(i) + ".bin");
    if (!fs::exists(file)) {
      // fewer files are accepted as long as the first one exists
      if (i == 1) format_error(file, 0, "missing file");
      break;
    }
    append(data.train, read_cifar_file(file));
  }
  data.test = read_cifar_file(directory / "test_batch.bin");
  return data;
}

void write_cifar10(const fs::path& directory, const Cifar10& data, int train_files) {
  require(train_files >= 1 && train_files <= 5, ErrorKind::argument, "cifar10: train_files must be in 1..5");
  fs::create_directories(directory);
  const std::int64_t n = data.train.count();
  const std::int64_t per = (n + train_files - 1) / train_files;
  for (int i = 0; i < train_files; ++i) {
    const std::int64_t begin = std::min(n, i * per), end = std::min(n, begin + per);
    DatasetSplit part;
    part.labels.assign(data.train.labels.begin() + begin, data.train.labels.begin() + end);
    part.pixels.assign(data.train.pixels.begin() + begin * kPixelBytes, data.train.pixels.begin() + end * kPixelBytes);
    write_cifar_file(directory / ("data_batch_" + std::to_string(i + 1) + ".bin"), part);
  }
  write_cifar_file(directory / "test_batch.bin", data.test);
}

DatasetSplit synthesize(std::int64_t count, std::uint64_t seed) {
  require(count >= 0, ErrorKind::argument, "synthesize: count must be non-negative");
  constexpr int kWaves = 3;
  struct Wave {
    double fy, fx, phase, amp;
  };
  auto draw_wave = [](Rng& r) {
    const double two_pi = 2.0 * std::numbers::pi;
    return Wave{two_pi * (1 + static_cast<double>(r.next_below(4))) / kImageSide,
                two_pi * (1 + static_cast<double>(r.next_below(4))) / kImageSide, two_pi * r.next_unit(),
                0.5 + 0.5 * r.next_unit()};
  };
  // prototypes depend only on a fixed stream so train and test share classes
  Rng proto_rng = Rng(0x7f4a7c15ull).split(0);
  std::vector<Wave> protos(kClasses * kChannels * kWaves);
  std::vector<double> tint(kClasses * kChannels);
  for (auto& w : protos) w = draw_wave(proto_rng);
  for (auto& t : tint) t = 60.0 * (proto_rng.next_unit() - 0.5);

  Rng rng(seed);
  DatasetSplit out;
  out.labels.resize(static_cast<std::size_t>(count));
  out.pixels.resize(static_cast<std::size_t>(count * kPixelBytes));
  for (std::int64_t i = 0; i < count; ++i) {
    const auto label = static_cast<std::uint8_t>(i % kClasses);
    out.labels[static_cast<std::size_t>(i)] = label;
    const double sy = static_cast<double>(rng.next_below(9)) - 4.0, sx = static_cast<double>(rng.next_below(9)) - 4.0;
    const double gain = 0.7 + 0.6 * rng.next_unit();
    Wave distractor[kChannels];
    for (auto& d : distractor) d = draw_wave(rng);
    std::uint8_t* img = out.pixels.data() + i * kPixelBytes;
    for (std::int64_t h = 0; h < kImageSide; ++h) {
      for (std::int64_t w = 0; w < kImageSide; ++w) {
        for (std::int64_t c = 0; c < kChannels; ++c) {
          double v = 0.0;
          for (int k = 0; k < kWaves; ++k) {
            const Wave& p = protos[static_cast<std::size_t>((label * kChannels + c) * kWaves + k)];
            v += p.amp * std::sin(p.fy * (static_cast<double>(h) + sy) + p.fx * (static_cast<double>(w) + sx) + p.phase);
          }
          const Wave& d = distractor[c];
          v = gain * 28.0 * v + 35.0 * d.amp * std::sin(d.fy * static_cast<double>(h) + d.fx * static_cast<double>(w) + d.phase);
          v += 128.0 + tint[static_cast<std::size_t>(label * kChannels + c)] + 50.0 * (rng.next_unit() - 0.5);
          img[(h * kImageSide + w) * kChannels + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
    }
  }
  // deterministic shuffle so subsets stay class-balanced but unordered
  for (std::int64_t i = count - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(i + 1)));
    std::swap(out.labels[static_cast<std::size_t>(i)], out.labels[static_cast<std::size_t>(j)]);
    std::swap_ranges(out.pixels.begin() + i * kPixelBytes, out.pixels.begin() + (i + 1) * kPixelBytes,
                     out.pixels.begin() + j * kPixelBytes);
  }
  return out;
}

}  // namespace tensorforge::train
