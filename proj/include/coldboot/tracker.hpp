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

#ifndef COLDBOOT_TRACKER_HPP_
#define COLDBOOT_TRACKER_HPP_

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "coldboot/digest.hpp"
#include "coldboot/net.hpp"
#include "coldboot/wire.hpp"

namespace coldboot {

// Central metadata service: who holds which block, recorded access traces,
// and one-winner claims for setup election. All state is in memory; the
// tracker is cheap to restart because holders re-announce as they fetch.
class TrackerServer {
 public:
  explicit TrackerServer(const std::string& bind_host = "127.0.0.1")
      : server_(bind_host, [this](MsgKind k, std::string_view p) { return handle(k, p); }) {}

  const std::string& endpoint() const { return server_.endpoint(); }
  void stop() { server_.stop(); }

  size_t block_count() const {
    std::lock_guard<std::mutex> lk(mu_);
    return holders_.size();
  }

 private:
  WireResponse handle(MsgKind kind, std::string_view payload) {
    switch (kind) {
      case MsgKind::kAnnounce:
        return on_announce(payload);
      case MsgKind::kLocate:
        return on_locate(payload);
      case MsgKind::kPutTrace:
        return on_put_trace(payload);
      case MsgKind::kGetTrace:
        return on_get_trace(payload);
      case MsgKind::kClaim:
        return on_claim(payload);
      default:
        return WireResponse::err("wire_error", "tracker: unsupported message kind");
    }
  }

  WireResponse on_announce(std::string_view payload) {
    ByteReader r(payload);
    Holder h = read_holder(r);
    Digest32 block = Digest32::from_raw(r.bytes(32));
    r.expect_done();
    std::lock_guard<std::mutex> lk(mu_);
    auto& hs = holders_[block];
    for (const auto& old : hs)
      if (old.endpoint == h.endpoint) return WireResponse::ok();
    hs.push_back(std::move(h));
    return WireResponse::ok();
  }

  WireResponse on_locate(std::string_view payload) {
    ByteReader r(payload);
    Digest32 block = Digest32::from_raw(r.bytes(32));
    r.expect_done();
    std::lock_guard<std::mutex> lk(mu_);
    std::string out;
    auto it = holders_.find(block);
    const auto& hs = it == holders_.end() ? kNoHolders : it->second;
    put_u32(out, static_cast<uint32_t>(hs.size()));
    for (const auto& h : hs) put_holder(out, h);
    return WireResponse::ok(std::move(out));
  }

  WireResponse on_put_trace(std::string_view payload) {
    ByteReader r(payload);
    std::string image_id = r.str();
    std::string body = std::string(r.rest());
    std::lock_guard<std::mutex> lk(mu_);
    traces_[image_id] = std::move(body);  // last writer wins
    return WireResponse::ok();
  }

  WireResponse on_get_trace(std::string_view payload) {
    ByteReader r(payload);
    std::string image_id = r.str();
    r.expect_done();
    std::lock_guard<std::mutex> lk(mu_);
    auto it = traces_.find(image_id);
    if (it == traces_.end())
      return WireResponse::err("not_found", "no trace for image " + image_id);
    return WireResponse::ok(it->second);
  }

  WireResponse on_claim(std::string_view payload) {
    ByteReader r(payload);
    std::string key = r.str();
    uint32_t node_id = r.u32();
    r.expect_done();
    std::lock_guard<std::mutex> lk(mu_);
    auto [it, inserted] = claims_.try_emplace(key, node_id);
    std::string out;
    out.push_back(inserted ? 1 : 0);
    put_u32(out, it->second);
    return WireResponse::ok(std::move(out));
  }

  static inline const std::vector<Holder> kNoHolders{};

  mutable std::mutex mu_;
  std::unordered_map<Digest32, std::vector<Holder>, Digest32Hash> holders_;
  std::map<std::string, std::string> traces_;
  std::map<std::string, uint32_t> claims_;
  FramedServer server_;
};

struct ClaimResult {
  bool won = false;
  uint32_t winner = 0;
};

// Client side of the tracker protocol.
class TrackerClient {
 public:
  explicit TrackerClient(std::string endpoint) : client_(std::move(endpoint)) {}

  void announce(HolderTier tier, uint32_t node_id, const std::string& endpoint,
                const Digest32& block) {
    client_.request(MsgKind::kAnnounce, msg_announce(tier, node_id, endpoint, block));
  }

  std::vector<Holder> locate(const Digest32& block) {
    std::string resp = client_.request(MsgKind::kLocate, msg_locate(block));
    ByteReader r(resp);
    uint32_t n = r.u32();
    std::vector<Holder> out;
    out.reserve(n);
    for (uint32_t i = 0; i < n; ++i) out.push_back(read_holder(r));
    r.expect_done();
    return out;
  }

  void put_trace(const std::string& image_id, const std::string& payload) {
    client_.request(MsgKind::kPutTrace, msg_put_trace(image_id, payload));
  }

  std::string get_trace(const std::string& image_id) {
    return client_.request(MsgKind::kGetTrace, msg_get_trace(image_id));
  }

  std::optional<std::string> try_get_trace(const std::string& image_id) {
    try {
      return get_trace(image_id);
    } catch (const NotFoundError&) {
      return std::nullopt;
    }
  }

  ClaimResult claim(const std::string& key, uint32_t node_id) {
    std::string resp = client_.request(MsgKind::kClaim, msg_claim(key, node_id));
    ByteReader r(resp);
    ClaimResult out;
    out.won = r.u8() != 0;
    out.winner = r.u32();
    r.expect_done();
    return out;
  }

 private:
  FramedClient client_;
};

}  // namespace coldboot

#endif  // COLDBOOT_TRACKER_HPP_
