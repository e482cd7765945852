#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace sallie::container {

// Single-file container shared by SALLIE detectors and the baseline models:
//
//   "SALD" | u32 format_version | str model_name | u32 num_layers | u32 hidden_dim
//   | u32 section_count | { u32 tag | u64 length | payload }* | u32 crc32
//
// Integers and floats are little-endian; str is u32 length + bytes. The CRC-32 covers
// every byte before it.

inline constexpr char kMagic[4] = {'S', 'A', 'L', 'D'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class SectionTag : std::uint32_t {
  kProbes = 1,      // SALLIE probes for one modality
  kPrototype = 2,   // prototype-distance baseline for one modality
  kLogistic = 3,    // logistic-probe baseline for one modality
};

struct Header {
  std::string model_name;
  std::uint32_t num_layers = 0;
  std::uint32_t hidden_dim = 0;
};

struct Section {
  SectionTag tag;
  std::string payload;
};

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void str(const std::string& s);
  void f32s(std::span<const float> v);
  void bytes(std::span<const std::uint8_t> v);

  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

/// Bounds-checked reader; any overrun throws kCorrupt.
class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();
  std::vector<float> f32s(std::size_t n);
  std::vector<std::uint8_t> bytes(std::size_t n);

  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view take(std::size_t n);

  std::string_view data_;
  std::size_t pos_ = 0;
};

/// Writes through a temporary file and renames it into place.
void write_file(const std::filesystem::path& path, const Header& header, const std::vector<Section>& sections);
void read_file(const std::filesystem::path& path, Header& header, std::vector<Section>& sections);

}  // namespace sallie::container
