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

#ifndef COLDBOOT_WIRE_HPP_
#define COLDBOOT_WIRE_HPP_

#include <string>
#include <vector>

#include "coldboot/digest.hpp"
#include "coldboot/util.hpp"

// Length-prefixed binary protocol shared by the tracker, peer block servers
// and the striped store service. Every frame is
//
//   u32 length | u8 kind-or-status | payload
//
// with all integers little-endian and all length fields 32-bit. Full layout
// per message kind is documented in docs/formats.md.

namespace coldboot {

enum class MsgKind : uint8_t {
  kAnnounce = 1,
  kLocate = 2,
  kGet = 3,
  kPutTrace = 4,
  kGetTrace = 5,
  kPutChunk = 6,
  kGetChunk = 7,
  kPutMap = 8,
  kGetMap = 9,
  kList = 10,
  kClaim = 11,
};

enum class WireStatus : uint8_t { kOk = 0, kErr = 1 };

constexpr uint32_t kMaxFrameBytes = 1u << 30;

// A holder entry returned by LOCATE. Tier orders source preference:
// peer (0) before cluster cache (1); the registry is not tracked here.
enum class HolderTier : uint8_t { kPeer = 0, kCache = 1 };

struct Holder {
  HolderTier tier = HolderTier::kPeer;
  uint32_t node_id = 0;
  std::string endpoint;  // "host:port"
};

inline void put_holder(std::string& buf, const Holder& h) {
  buf.push_back(static_cast<char>(h.tier));
  put_u32(buf, h.node_id);
  put_str(buf, h.endpoint);
}

inline Holder read_holder(ByteReader& r) {
  Holder h;
  h.tier = static_cast<HolderTier>(r.u8());
  h.node_id = r.u32();
  h.endpoint = r.str();
  return h;
}

struct WireResponse {
  WireStatus status = WireStatus::kOk;
  std::string payload;

  static WireResponse ok(std::string payload = {}) { return {WireStatus::kOk, std::move(payload)}; }
  static WireResponse err(const std::string& category, const std::string& message) {
    std::string p;
    put_str(p, category);
    put_str(p, message);
    return {WireStatus::kErr, std::move(p)};
  }
};

// Raises the error carried by an ERR response as the matching exception type.
inline void throw_wire_error(const std::string& payload) {
  ByteReader r(payload);
  std::string category = r.str();
  std::string message = r.str();
  if (category == "not_found") throw NotFoundError(message);
  if (category == "expired_cache") throw ExpiredCacheError(message);
  if (category == "build_error") throw BuildError(message);
  if (category == "range_error") throw RangeError(message);
  if (category == "trace_error") throw TraceError(message);
  if (category == "fetch_error") throw FetchError(message);
  if (category == "put_error") throw PutError(message);
  if (category == "get_error") throw GetError(message);
  if (category == "config_error") throw ConfigError(message);
  if (category == "wire_error") throw WireError(message);
  if (category == "io_error") throw IoError(message);
  throw Error(category, message);
}

// ---- request payload builders ----

inline std::string msg_announce(HolderTier tier, uint32_t node_id, const std::string& endpoint,
                                const Digest32& block) {
  std::string p;
  p.push_back(static_cast<char>(tier));
  put_u32(p, node_id);
  put_str(p, endpoint);
  p.append(block.raw());
  return p;
}

inline std::string msg_locate(const Digest32& block) { return block.raw(); }

inline std::string msg_get(const Digest32& block) { return block.raw(); }

inline std::string msg_put_trace(const std::string& image_id, std::string_view payload) {
  std::string p;
  put_str(p, image_id);
  p.append(payload);
  return p;
}

inline std::string msg_get_trace(const std::string& image_id) {
  std::string p;
  put_str(p, image_id);
  return p;
}

inline std::string msg_put_chunk(const std::string& file_id, uint64_t index, uint32_t group,
                                 const Digest32& digest, std::string_view payload) {
  std::string p;
  put_str(p, file_id);
  put_u64(p, index);
  put_u32(p, group);
  p.append(digest.raw());
  p.append(payload);
  return p;
}

inline std::string msg_get_chunk(const std::string& file_id, uint64_t index) {
  std::string p;
  put_str(p, file_id);
  put_u64(p, index);
  return p;
}

inline std::string msg_put_map(const std::string& name, std::string_view map_json) {
  std::string p;
  put_str(p, name);
  p.append(map_json);
  return p;
}

inline std::string msg_get_map(const std::string& name) {
  std::string p;
  put_str(p, name);
  return p;
}

inline std::string msg_list(const std::string& prefix) {
  std::string p;
  put_str(p, prefix);
  return p;
}

inline std::string msg_claim(const std::string& key, uint32_t node_id) {
  std::string p;
  put_str(p, key);
  put_u32(p, node_id);
  return p;
}

}  // namespace coldboot

#endif  // COLDBOOT_WIRE_HPP_
