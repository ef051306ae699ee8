#pragma once

// Little-endian binary readers/writers shared by the dataset cache,
// checkpoint, and mask-dump formats. Read failures carry the byte offset.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "svmix/error.hpp"

namespace svmix::io {

class Writer {
 public:
  explicit Writer(const std::string& path);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64_array(const std::vector<double>& v);
  void str(const std::string& s);
  void magic(const char tag[8]);
  void close();

 private:
  void bytes(const void* p, std::size_t n);
  std::ofstream f_;
  std::string path_;
};

class Reader {
 public:
  explicit Reader(const std::string& path);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::vector<double> f64_array(std::size_t n);
  std::string str();
  void expect_magic(const char tag[8]);
  bool at_eof();
  std::size_t offset() const { return offset_; }

 private:
  void bytes(void* p, std::size_t n);
  std::ifstream f_;
  std::string path_;
  std::size_t offset_ = 0;
};

}  // namespace svmix::io
