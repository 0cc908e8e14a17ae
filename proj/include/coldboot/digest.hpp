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

#ifndef COLDBOOT_DIGEST_HPP_
#define COLDBOOT_DIGEST_HPP_

#include <openssl/evp.h>

#include <array>
#include <compare>
#include <cstring>
#include <functional>
#include <string>
#include <string_view>

#include "coldboot/util.hpp"

namespace coldboot {

// 32-byte SHA-256 digest. Content identity for blocks, chunks and
// snapshot fingerprints.
struct Digest32 {
  std::array<uint8_t, 32> bytes{};

  auto operator<=>(const Digest32&) const = default;

  std::string hex() const { return to_hex(bytes.data(), bytes.size()); }

  static Digest32 parse_hex(std::string_view h) {
    if (h.size() != 64) throw Error("hex", "digest hex must be 64 chars");
    Digest32 d;
    auto raw = from_hex(h);
    std::memcpy(d.bytes.data(), raw.data(), 32);
    return d;
  }

  std::string raw() const { return std::string(reinterpret_cast<const char*>(bytes.data()), 32); }

  static Digest32 from_raw(std::string_view r) {
    if (r.size() != 32) throw Error("digest", "raw digest must be 32 bytes");
    Digest32 d;
    std::memcpy(d.bytes.data(), r.data(), 32);
    return d;
  }
};

struct Digest32Hash {
  size_t operator()(const Digest32& d) const {
    size_t h;
    std::memcpy(&h, d.bytes.data(), sizeof(h));
    return h;
  }
};

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      throw Error("digest", "EVP_DigestInit failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::string_view data) {
    if (EVP_DigestUpdate(ctx_, data.data(), data.size()) != 1)
      throw Error("digest", "EVP_DigestUpdate failed");
  }

  Digest32 finish() {
    Digest32 d;
    unsigned len = 0;
    if (EVP_DigestFinal_ex(ctx_, d.bytes.data(), &len) != 1 || len != 32)
      throw Error("digest", "EVP_DigestFinal failed");
    return d;
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline Digest32 sha256(std::string_view data) {
  Sha256 h;
  h.update(data);
  return h.finish();
}

}  // namespace coldboot

#endif  // COLDBOOT_DIGEST_HPP_
