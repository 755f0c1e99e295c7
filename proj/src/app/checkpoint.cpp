#include "tensorforge/app/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "tensorforge/error.hpp"

namespace tensorforge::app {

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

  template <typename T>
  T get(const std::string& what) {
    need(sizeof(T), what);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::string text(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const std::string& what) const {
    if (bytes_.size() - pos_ < n) {
      fail(ErrorKind::format, "checkpoint " + origin_ + ": truncated while reading " + what + " at offset " +
                                  std::to_string(pos_));
    }
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }
  std::size_t pos() const noexcept { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  const std::string& origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    require(static_cast<std::int64_t>(e.values.size()) == element_count(e.shape), ErrorKind::shape,
            "checkpoint: entry '" + e.name + "' holds " + std::to_string(e.values.size()) + " values for shape " +
                to_string(e.shape));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put<std::int64_t>(out, d);
    for (float v : e.values) put<float>(out, v);
  }
  return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.text(4, "magic") != std::string(kCheckpointMagic, 4)) {
    fail(ErrorKind::format, "checkpoint " + origin + ": bad magic (not a TFRG file)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    fail(ErrorKind::format, "checkpoint " + origin + ": unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("entry count");
  std::vector<CheckpointEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "entry " + std::to_string(i);
    CheckpointEntry e;
    e.name = r.text(r.get<std::uint32_t>(where + " name length"), where + " name");
    const auto rank = r.get<std::uint32_t>("rank of '" + e.name + "'");
    if (rank < 1 || rank > 4) {
      fail(ErrorKind::format, "checkpoint " + origin + ": entry '" + e.name + "' has rank " + std::to_string(rank));
    }
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::int64_t>("extents of '" + e.name + "'");
      if (d < 0) fail(ErrorKind::format, "checkpoint " + origin + ": entry '" + e.name + "' has a negative extent");
      e.shape.push_back(d);
    }
    const std::int64_t n = element_count(e.shape);
    r.need(static_cast<std::size_t>(n) * sizeof(float), "values of '" + e.name + "'");
    e.values.resize(static_cast<std::size_t>(n));
    for (auto& v : e.values) v = r.get<float>("values of '" + e.name + "'");
    entries.push_back(std::move(e));
  }
  if (!r.done()) {
    fail(ErrorKind::format, "checkpoint " + origin + ": trailing bytes after offset " + std::to_string(r.pos()));
  }
  return entries;
}

void save_checkpoint(autograd::Unit& module, const std::filesystem::path& path) {
  std::vector<CheckpointEntry> entries;
  for (auto& s : module.state()) entries.push_back({s.name, s.tensor.shape(), s.tensor.to_host()});
  const auto bytes = encode_checkpoint(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::format, "checkpoint: cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::format, "checkpoint: write failed for " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, autograd::Unit& module) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::format, "checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto entries = decode_checkpoint(bytes, path.string());

  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) {
    if (!by_name.emplace(e.name, &e).second) {
      fail(ErrorKind::format, "checkpoint " + path.string() + ": duplicate entry '" + e.name + "'");
    }
  }
  const auto state = module.state();
  for (const auto& s : state) {
    auto it = by_name.find(s.name);
    if (it == by_name.end()) fail(ErrorKind::format, "checkpoint " + path.string() + ": missing entry '" + s.name + "'");
    if (it->second->shape != s.tensor.shape()) {
      fail(ErrorKind::format, "checkpoint " + path.string() + ": extent mismatch for entry '" + s.name + "': file has " +
                                  to_string(it->second->shape) + ", module has " + to_string(s.tensor.shape()));
    }
  }
  if (entries.size() != state.size()) {
    for (const auto& e : entries) {
      bool known = false;
      for (const auto& s : state) known = known || s.name == e.name;
      if (!known) fail(ErrorKind::format, "checkpoint " + path.string() + ": unexpected entry '" + e.name + "'");
    }
  }
  for (const auto& s : state) s.tensor.engine().assign(s.tensor, by_name.at(s.name)->values);
}

}  // namespace tensorforge::app
