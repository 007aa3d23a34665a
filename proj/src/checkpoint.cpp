#include "xvfg/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace xvfg {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(const char* what) { return take(1, what)[0]; }
  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(s[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    auto s = take(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(s[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> serialize_checkpoint(const NamedTensors& tensors) {
  std::set<std::string> seen;
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.empty()) throw CheckpointError("checkpoint: empty tensor name");
    if (!seen.insert(name).second) throw CheckpointError("checkpoint: duplicate name '" + name + "'");
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(kDtypeFloat64);
    out.push_back(4);
    const Shape s = t.shape();
    for (int d : {s.n, s.c, s.h, s.w}) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  put_u32(out, crc32_of(out));
  return out;
}

NamedTensors parse_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 4 + 4 + 4) throw CheckpointError("checkpoint truncated: header incomplete");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError("checkpoint: bad magic (expected XVFG)");
  }
  const auto body = bytes.first(bytes.size() - 4);
  Reader crc_reader(bytes.last(4));
  const std::uint32_t stored = crc_reader.u32("crc");
  if (crc32_of(body) != stored) throw CrcError("checkpoint: CRC32 mismatch");

  Reader r(body);
  r.take(4, "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32("entry count");
  NamedTensors out;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("name length");
    const auto name_bytes = r.take(name_len, "name");
    std::string name(name_bytes.begin(), name_bytes.end());
    if (!seen.insert(name).second) throw CheckpointError("checkpoint: duplicate name '" + name + "'");
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype != kDtypeFloat64) {
      throw CheckpointError("checkpoint: unsupported dtype " + std::to_string(dtype) + " for '" + name + "'");
    }
    const std::uint8_t rank = r.u8("rank");
    if (rank > 4) throw CheckpointError("checkpoint: rank " + std::to_string(rank) + " exceeds 4");
    int dims[4] = {1, 1, 1, 1};
    for (int d = 0; d < rank; ++d) dims[4 - rank + d] = static_cast<int>(r.u32("dims"));
    const Shape s{dims[0], dims[1], dims[2], dims[3]};
    std::vector<double> data(s.numel());
    for (auto& v : data) v = std::bit_cast<double>(r.u64("payload"));
    out.emplace_back(std::move(name), Tensor(s, std::move(data)));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes after last entry");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  const auto bytes = serialize_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace xvfg
