#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "lad/errors.hpp"

namespace lad::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

using Magic = std::array<char, 8>;

constexpr Magic make_magic(std::string_view tag) {
  Magic m{};
  for (std::size_t i = 0; i < tag.size() && i < 8; ++i) m[i] = tag[i];
  return m;
}

class BinaryWriter {
 public:
  explicit BinaryWriter(Magic magic) { put_bytes(magic.data(), magic.size()); }

  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    put_bytes(&value, sizeof(T));
  }

  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buffer_.insert(buffer_.end(), p, p + n);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrorCode::io_failure, "cannot open " + path.string() + " for writing");
    out.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
    if (!out) throw FormatError(FormatErrorCode::io_failure, "write failed for " + path.string());
  }

  const std::vector<char>& bytes() const { return buffer_; }

 private:
  std::vector<char> buffer_;
};

class BinaryReader {
 public:
  BinaryReader(const std::filesystem::path& path, Magic magic) : name_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatErrorCode::io_failure, "cannot open " + name_);
    buffer_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    check_magic(magic);
  }

  BinaryReader(std::vector<char> bytes, Magic magic, std::string name)
      : buffer_(std::move(bytes)), name_(std::move(name)) {
    check_magic(magic);
  }

  template <typename T>
  T get() {
    T value;
    get_bytes(&value, sizeof(T));
    return value;
  }

  void get_bytes(void* out, std::size_t n) {
    if (remaining() < n) throw FormatError(FormatErrorCode::truncated, name_ + " ends early");
    std::memcpy(out, buffer_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t remaining() const { return buffer_.size() - pos_; }

  /// Guards against headers announcing payloads larger than the file.
  void require(std::size_t n) const {
    if (remaining() < n) throw FormatError(FormatErrorCode::truncated, name_ + " payload shorter than header declares");
  }

  const std::string& name() const { return name_; }

 private:
  void check_magic(Magic magic) {
    if (buffer_.size() < magic.size()) throw FormatError(FormatErrorCode::truncated, name_ + " shorter than magic");
    // The last non-NUL character of each tag is the format version digit.
    std::size_t tag_len = 0;
    while (tag_len < magic.size() && magic[tag_len] != '\0') ++tag_len;
    if (std::memcmp(buffer_.data(), magic.data(), magic.size()) != 0) {
      const bool same_family = tag_len > 1 && std::memcmp(buffer_.data(), magic.data(), tag_len - 1) == 0;
      throw FormatError(same_family ? FormatErrorCode::version_mismatch : FormatErrorCode::bad_magic, name_);
    }
    pos_ = magic.size();
  }

  std::vector<char> buffer_;
  std::size_t pos_ = 0;
  std::string name_;
};

}  // namespace lad::detail
