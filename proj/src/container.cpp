#include "sallie/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "sallie/error.hpp"

namespace sallie::container {

namespace fs = std::filesystem;

namespace {

template <typename T>
void put_le(std::string& buf, T v) {
  if constexpr (std::endian::native == std::endian::big) {
    if constexpr (sizeof(T) == 4) v = __builtin_bswap32(v);
    if constexpr (sizeof(T) == 8) v = __builtin_bswap64(v);
  }
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <typename T>
T get_le(std::string_view raw) {
  T v;
  std::memcpy(&v, raw.data(), sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    if constexpr (sizeof(T) == 4) v = __builtin_bswap32(v);
    if constexpr (sizeof(T) == 8) v = __builtin_bswap64(v);
  }
  return v;
}

std::uint32_t crc32_of(std::string_view data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < data.size(); off += kChunk) {
    const std::size_t n = std::min(kChunk, data.size() - off);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data() + off), static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void Writer::u32(std::uint32_t v) { put_le(buf_, v); }
void Writer::u64(std::uint64_t v) { put_le(buf_, v); }
void Writer::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }
void Writer::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }

void Writer::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.append(s);
}

void Writer::f32s(std::span<const float> v) {
  buf_.reserve(buf_.size() + v.size() * 4);
  for (float x : v) f32(x);
}

void Writer::bytes(std::span<const std::uint8_t> v) { buf_.append(reinterpret_cast<const char*>(v.data()), v.size()); }

std::string_view Reader::take(std::size_t n) {
  if (n > data_.size() - pos_) fail(ErrorCode::kCorrupt, "detector file truncated");
  auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t Reader::u8() { return static_cast<std::uint8_t>(take(1)[0]); }
std::uint32_t Reader::u32() { return get_le<std::uint32_t>(take(4)); }
std::uint64_t Reader::u64() { return get_le<std::uint64_t>(take(8)); }
float Reader::f32() { return std::bit_cast<float>(u32()); }
double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::str() {
  const auto n = u32();
  return std::string(take(n));
}

std::vector<float> Reader::f32s(std::size_t n) {
  if (n > (data_.size() - pos_) / 4) fail(ErrorCode::kCorrupt, "detector file truncated");
  std::vector<float> out(n);
  for (auto& v : out) v = f32();
  return out;
}

std::vector<std::uint8_t> Reader::bytes(std::size_t n) {
  auto raw = take(n);
  return {raw.begin(), raw.end()};
}

void write_file(const fs::path& path, const Header& header, const std::vector<Section>& sections) {
  Writer w;
  w.buffer().append(kMagic, sizeof(kMagic));
  w.u32(kFormatVersion);
  w.str(header.model_name);
  w.u32(header.num_layers);
  w.u32(header.hidden_dim);
  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& s : sections) {
    w.u32(static_cast<std::uint32_t>(s.tag));
    w.u64(s.payload.size());
    w.buffer().append(s.payload);
  }
  w.u32(crc32_of(w.buffer()));

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) fail(ErrorCode::kIo, "failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIo, "cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void read_file(const fs::path& path, Header& header, std::vector<Section>& sections) {
  if (!fs::is_regular_file(path)) fail(ErrorCode::kMissingFile, "missing detector file " + path.string());
  std::ifstream in(path, std::ios::binary);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (!in.eof() && in.fail()) fail(ErrorCode::kIo, "failed reading " + path.string());

  if (data.size() < sizeof(kMagic)) fail(ErrorCode::kCorrupt, path.string() + ": detector file truncated");
  if (std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCode::kUnsupportedVersion, path.string() + " is not a detector file (bad magic)");
  }
  if (data.size() < sizeof(kMagic) + 8) fail(ErrorCode::kCorrupt, path.string() + ": detector file truncated");
  const auto version = get_le<std::uint32_t>(std::string_view(data).substr(4, 4));
  if (version != kFormatVersion) {
    fail(ErrorCode::kUnsupportedVersion,
         path.string() + ": unsupported detector format_version " + std::to_string(version));
  }
  const std::string_view body(data.data(), data.size() - 4);
  const auto stored = get_le<std::uint32_t>(std::string_view(data).substr(data.size() - 4));
  if (crc32_of(body) != stored) fail(ErrorCode::kCorrupt, path.string() + ": checksum mismatch");

  Reader r(body.substr(8));
  header.model_name = r.str();
  header.num_layers = r.u32();
  header.hidden_dim = r.u32();
  const auto count = r.u32();
  sections.clear();
  for (std::uint32_t i = 0; i < count; ++i) {
    Section s{static_cast<SectionTag>(r.u32()), {}};
    const auto len = r.u64();
    auto payload = r.bytes(static_cast<std::size_t>(len));
    s.payload.assign(payload.begin(), payload.end());
    sections.push_back(std::move(s));
  }
  if (!r.done()) fail(ErrorCode::kCorrupt, path.string() + ": trailing bytes after last section");
}

}  // namespace sallie::container
