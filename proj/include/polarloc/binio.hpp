#pragma once

// Little-endian binary helpers shared by the PSCN scan, checkpoint and map
// database formats. Readers track the byte offset for FormatError messages.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "polarloc/error.hpp"

namespace polarloc::binio {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void magic(const char (&tag)[5]) { os_.write(tag, 4); }

  template <typename T>
  void put(T value) {
    static_assert(std::is_arithmetic_v<T>);
    std::array<char, sizeof(T)> buf;
    std::memcpy(buf.data(), &value, sizeof(T));
    os_.write(buf.data(), buf.size());
  }

  template <typename T>
  void put_array(const T* data, std::size_t n) {
    static_assert(std::is_arithmetic_v<T>);
    os_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
  }

  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  void finish(const std::string& what) {
    os_.flush();
    if (!os_) throw IoError("failed writing " + what);
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::size_t offset() const noexcept { return offset_; }

  void expect_magic(const char (&tag)[5], const std::string& what) {
    char buf[4];
    read_raw(buf, 4, what + " magic");
    if (std::memcmp(buf, tag, 4) != 0) {
      throw FormatError("bad " + what + " magic, expected \"" + std::string(tag, 4) + "\"", 0);
    }
  }

  template <typename T>
  T get(const std::string& field) {
    static_assert(std::is_arithmetic_v<T>);
    T value;
    read_raw(reinterpret_cast<char*>(&value), sizeof(T), field);
    return value;
  }

  template <typename T>
  void get_array(T* data, std::size_t n, const std::string& field) {
    static_assert(std::is_arithmetic_v<T>);
    read_raw(reinterpret_cast<char*>(data), n * sizeof(T), field);
  }

  std::string get_string(const std::string& field, std::size_t max_len = 1 << 20) {
    const std::size_t start = offset_;
    const auto n = get<std::uint32_t>(field + " length");
    if (n > max_len) throw FormatError(field + " length " + std::to_string(n) + " too large", start);
    std::string s(n, '\0');
    read_raw(s.data(), n, field);
    return s;
  }

  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  void read_raw(char* dst, std::size_t n, const std::string& field) {
    is_.read(dst, static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(is_.gcount());
    if (got != n) {
      throw FormatError("truncated payload while reading " + field, offset_ + got);
    }
    offset_ += n;
  }

  std::istream& is_;
  std::size_t offset_ = 0;
};

}  // namespace polarloc::binio
