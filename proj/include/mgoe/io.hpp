#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mgoe/common.hpp"

namespace mgoe {

// Little-endian binary stream helpers for the versioned file formats
// (datasets, graphs, checkpoints share the same conventions).
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path) : os_(path, std::ios::binary), path_(path) {
    if (!os_) throw IoError("cannot open for writing: " + path);
  }

  template <typename T>
  void pod(const T& x) {
    static_assert(std::is_trivially_copyable_v<T>);
    os_.write(reinterpret_cast<const char*>(&x), sizeof(T));
  }

  void u32(std::uint32_t x) { pod(x); }
  void u64(std::uint64_t x) { pod(x); }
  void i64(std::int64_t x) { pod(x); }
  void f64(double x) { pod(x); }

  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  template <typename T>
  void pod_vec(const std::vector<T>& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    u64(v.size());
    os_.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(T)));
  }

  void magic(const char m[8]) { os_.write(m, 8); }

  void close() {
    os_.close();
    if (!os_) throw IoError("write failed: " + path_);
  }

 private:
  std::ofstream os_;
  std::string path_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path) : is_(path, std::ios::binary), path_(path) {
    if (!is_) throw IoError("cannot open for reading: " + path);
  }

  template <typename T>
  T pod() {
    static_assert(std::is_trivially_copyable_v<T>);
    T x{};
    is_.read(reinterpret_cast<char*>(&x), sizeof(T));
    if (!is_) throw IoError("unexpected end of file: " + path_);
    return x;
  }

  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  std::int64_t i64() { return pod<std::int64_t>(); }
  double f64() { return pod<double>(); }

  std::string str() {
    const auto n = u32();
    std::string s(n, '\0');
    is_.read(s.data(), n);
    if (!is_) throw IoError("unexpected end of file: " + path_);
    return s;
  }

  template <typename T>
  std::vector<T> pod_vec() {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto n = u64();
    std::vector<T> v(n);
    is_.read(reinterpret_cast<char*>(v.data()),
             static_cast<std::streamsize>(n * sizeof(T)));
    if (!is_) throw IoError("unexpected end of file: " + path_);
    return v;
  }

  void expect_magic(const char m[8], const std::string& what) {
    char got[8];
    is_.read(got, 8);
    if (!is_ || std::memcmp(got, m, 8) != 0)
      throw IoError(path_ + " is not a " + what + " file");
  }

 private:
  std::ifstream is_;
  std::string path_;
};

}  // namespace mgoe
