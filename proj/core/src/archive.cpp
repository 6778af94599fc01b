#include "cei/archive.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cei {

namespace {

constexpr char kMagicPrefix[3] = {'C', 'E', 'I'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw ArchiveError(ArchiveError::Kind::Truncated, std::string("archive truncated while reading ") + what);
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_archive(const ParamSet& params) {
  std::vector<std::uint8_t> out{'C', 'E', 'I', static_cast<std::uint8_t>('0' + kArchiveFormatVersion)};
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    for (std::size_t extent : e.tensor.shape().extents()) put_u32(out, static_cast<std::uint32_t>(extent));
  }
  const std::size_t payload_start = out.size();
  for (const auto& e : params.entries()) {
    for (float v : e.tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  const std::uint32_t crc = crc32(std::span<const std::uint8_t>(out).subspan(payload_start));
  put_u32(out, crc);
  return out;
}

ParamSet decode_archive(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagicPrefix, 3) != 0) {
    throw ArchiveError(ArchiveError::Kind::BadMagic, "not a parameter archive (bad magic)");
  }
  if (magic[3] != static_cast<std::uint8_t>('0' + kArchiveFormatVersion)) {
    throw ArchiveError(ArchiveError::Kind::VersionMismatch,
                       std::string("archive format version '") + static_cast<char>(magic[3]) + "' is not supported (expected '" +
                           static_cast<char>('0' + kArchiveFormatVersion) + "')");
  }

  struct Header {
    std::string name;
    Shape shape;
  };
  const std::uint32_t count = r.u32("entry count");
  std::vector<Header> headers;
  std::size_t payload_floats = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32("entry name length");
    auto name = r.take(len, "entry name");
    Header h;
    h.name.assign(name.begin(), name.end());
    h.shape.n = r.u32("entry shape");
    h.shape.c = r.u32("entry shape");
    h.shape.h = r.u32("entry shape");
    h.shape.w = r.u32("entry shape");
    // Bound the element count by what is left in the buffer before multiplying
    // further, so corrupted extents cannot overflow.
    const std::size_t room = r.remaining() / 4 - std::min(r.remaining() / 4, payload_floats);
    std::size_t numel = 1;
    for (std::size_t e : h.shape.extents()) {
      if (e != 0 && numel > room / e) {
        throw ArchiveError(ArchiveError::Kind::Truncated, "entry '" + h.name + "' with shape " +
                                                              to_string(h.shape) + " exceeds the archive size");
      }
      numel *= e;
    }
    payload_floats += numel;
    headers.push_back(std::move(h));
  }

  auto payload = r.take(payload_floats * 4, "payload");
  const std::uint32_t stored = r.u32("checksum");
  if (r.remaining() != 0) {
    throw ArchiveError(ArchiveError::Kind::Malformed,
                       "archive has " + std::to_string(r.remaining()) + " trailing bytes after the checksum");
  }
  const std::uint32_t actual = crc32(payload);
  if (stored != actual) {
    throw ArchiveError(ArchiveError::Kind::Checksum, "archive payload checksum mismatch (stored " +
                                                         std::to_string(stored) + ", computed " +
                                                         std::to_string(actual) + ")");
  }

  ParamSet out;
  std::size_t off = 0;
  for (auto& h : headers) {
    std::vector<float> data(h.shape.numel());
    for (float& v : data) {
      std::uint32_t bits = 0;
      for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(payload[off + i]) << (8 * i);
      v = std::bit_cast<float>(bits);
      off += 4;
    }
    try {
      out.add(std::move(h.name), Tensor(h.shape, std::move(data)));
    } catch (const std::invalid_argument& e) {
      throw ArchiveError(ArchiveError::Kind::Malformed, e.what());
    }
  }
  return out;
}

void save_archive(const ParamSet& params, const std::filesystem::path& path) {
  const auto bytes = encode_archive(params);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ArchiveError(ArchiveError::Kind::Io, "cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ArchiveError(ArchiveError::Kind::Io, "failed writing '" + path.string() + "'");
}

ParamSet load_archive(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArchiveError(ArchiveError::Kind::Io, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

}  // namespace cei
