#include "svmix/io.hpp"

#include <bit>
#include <cstring>

namespace svmix::io {

Writer::Writer(const std::string& path) : path_(path) {
  f_.open(path, std::ios::binary | std::ios::trunc);
  if (!f_) throw IoError("cannot open for writing: " + path);
}

void Writer::bytes(const void* p, std::size_t n) {
  f_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!f_) throw IoError("write failed: " + path_);
}

void Writer::u8(std::uint8_t v) { bytes(&v, 1); }

void Writer::u32(std::uint32_t v) {
  std::uint8_t b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  bytes(b, 4);
}

void Writer::u64(std::uint64_t v) {
  std::uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  bytes(b, 8);
}

void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Writer::f64_array(const std::vector<double>& v) {
  for (double x : v) f64(x);
}

void Writer::str(const std::string& s) {
  u64(s.size());
  if (!s.empty()) bytes(s.data(), s.size());
}

void Writer::magic(const char tag[8]) { bytes(tag, 8); }

void Writer::close() {
  f_.close();
  if (!f_) throw IoError("close failed: " + path_);
}

Reader::Reader(const std::string& path) : path_(path) {
  f_.open(path, std::ios::binary);
  if (!f_) throw IoError("cannot open for reading: " + path);
}

void Reader::bytes(void* p, std::size_t n) {
  f_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (f_.gcount() != static_cast<std::streamsize>(n))
    throw FormatError("truncated file " + path_ + " at byte " +
                      std::to_string(offset_));
  offset_ += n;
}

std::uint8_t Reader::u8() {
  std::uint8_t v;
  bytes(&v, 1);
  return v;
}

std::uint32_t Reader::u32() {
  std::uint8_t b[4];
  bytes(b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t Reader::u64() {
  std::uint8_t b[8];
  bytes(b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::vector<double> Reader::f64_array(std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = f64();
  return v;
}

std::string Reader::str() {
  const std::uint64_t n = u64();
  if (n > (1ull << 32))
    throw FormatError("implausible string length in " + path_ + " at byte " +
                      std::to_string(offset_ - 8));
  std::string s(n, '\0');
  if (n) bytes(s.data(), n);
  return s;
}

void Reader::expect_magic(const char tag[8]) {
  char got[8];
  bytes(got, 8);
  if (std::memcmp(got, tag, 8) != 0)
    throw FormatError("bad magic in " + path_ + " at byte " +
                      std::to_string(offset_ - 8) + ": expected '" +
                      std::string(tag, 8) + "'");
}

bool Reader::at_eof() { return f_.peek() == std::ifstream::traits_type::eof(); }

}  // namespace svmix::io
