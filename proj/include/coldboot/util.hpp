// Copyright 2026 the coldboot authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef COLDBOOT_UTIL_HPP_
#define COLDBOOT_UTIL_HPP_

#include <unistd.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace coldboot {

namespace fs = std::filesystem;

// Error taxonomy. `category()` is the stable machine-readable tag the CLI
// prints on failure ("error: <category>: <message>").
class Error : public std::runtime_error {
 public:
  Error(std::string category, std::string msg)
      : std::runtime_error(category + ": " + msg),
        category_(std::move(category)),
        message_(std::move(msg)) {}
  const std::string& category() const { return category_; }
  // the bare message, without the category prefix what() carries
  const std::string& message() const { return message_; }

 private:
  std::string category_;
  std::string message_;
};

#define COLDBOOT_DEFINE_ERROR(Name, tag)                       \
  class Name : public Error {                                  \
   public:                                                     \
    explicit Name(const std::string& msg) : Error(tag, msg) {} \
  }

COLDBOOT_DEFINE_ERROR(BuildError, "build_error");
COLDBOOT_DEFINE_ERROR(NotFoundError, "not_found");
COLDBOOT_DEFINE_ERROR(RangeError, "range_error");
COLDBOOT_DEFINE_ERROR(TraceError, "trace_error");
COLDBOOT_DEFINE_ERROR(FetchError, "fetch_error");
COLDBOOT_DEFINE_ERROR(ScanError, "scan_error");
COLDBOOT_DEFINE_ERROR(DiffError, "diff_error");
COLDBOOT_DEFINE_ERROR(ExpiredCacheError, "expired_cache");
COLDBOOT_DEFINE_ERROR(PutError, "put_error");
COLDBOOT_DEFINE_ERROR(GetError, "get_error");
COLDBOOT_DEFINE_ERROR(MetricError, "metric_error");
COLDBOOT_DEFINE_ERROR(ReportError, "report_error");
COLDBOOT_DEFINE_ERROR(ConfigError, "config_error");
COLDBOOT_DEFINE_ERROR(WireError, "wire_error");
COLDBOOT_DEFINE_ERROR(IoError, "io_error");

#undef COLDBOOT_DEFINE_ERROR

inline std::string to_hex(const uint8_t* data, size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string out(n * 2, '0');
  for (size_t i = 0; i < n; ++i) {
    out[2 * i] = digits[data[i] >> 4];
    out[2 * i + 1] = digits[data[i] & 0xf];
  }
  return out;
}

inline int hex_nibble(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

inline std::vector<uint8_t> from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw Error("hex", "odd-length hex string");
  std::vector<uint8_t> out(hex.size() / 2);
  for (size_t i = 0; i < out.size(); ++i) {
    int hi = hex_nibble(hex[2 * i]);
    int lo = hex_nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error("hex", "invalid hex digit");
    out[i] = static_cast<uint8_t>((hi << 4) | lo);
  }
  return out;
}

// Little-endian scalar append/read, used by every binary format here.
inline void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_i64(std::string& buf, int64_t v) { put_u64(buf, static_cast<uint64_t>(v)); }

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  uint8_t u8() { return static_cast<uint8_t>(take(1)[0]); }
  uint32_t u32() {
    std::string_view b = take(4);
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<uint8_t>(b[i]);
    return v;
  }
  uint64_t u64() {
    std::string_view b = take(8);
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<uint8_t>(b[i]);
    return v;
  }
  int64_t i64() { return static_cast<int64_t>(u64()); }
  std::string_view bytes(size_t n) { return take(n); }
  // u32 length-prefixed string
  std::string str() {
    uint32_t n = u32();
    return std::string(take(n));
  }
  std::string_view rest() {
    std::string_view r = data_.substr(pos_);
    pos_ = data_.size();
    return r;
  }
  size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }
  void expect_done() const {
    if (!done()) throw WireError("trailing bytes in message");
  }

 private:
  std::string_view take(size_t n) {
    if (pos_ + n > data_.size()) throw WireError("truncated message");
    std::string_view r = data_.substr(pos_, n);
    pos_ += n;
    return r;
  }
  std::string_view data_;
  size_t pos_ = 0;
};

inline void put_str(std::string& buf, std::string_view s) {
  put_u32(buf, static_cast<uint32_t>(s.size()));
  buf.append(s);
}

// ---- filesystem helpers ----

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open for read: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (!in.good() && !in.eof()) throw IoError("read failed: " + p.string());
  return ss.str();
}

inline void write_file(const fs::path& p, std::string_view data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + p.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed: " + p.string());
}

// Write-then-rename so concurrent readers never observe a partial file.
inline void write_file_atomic(const fs::path& p, std::string_view data) {
  fs::path tmp = p;
  tmp += ".tmp." + std::to_string(::getpid()) + "." +
         std::to_string(reinterpret_cast<uintptr_t>(&data) ^ static_cast<uintptr_t>(data.size()));
  write_file(tmp, data);
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("rename failed: " + p.string() + ": " + ec.message());
  }
}

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("mkdir failed: " + p.string() + ": " + ec.message());
}

inline bool is_power_of_two(uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

inline uint64_t ceil_div(uint64_t a, uint64_t b) { return b == 0 ? 0 : (a + b - 1) / b; }

}  // namespace coldboot

#endif  // COLDBOOT_UTIL_HPP_
