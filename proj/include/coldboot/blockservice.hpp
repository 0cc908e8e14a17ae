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

#ifndef COLDBOOT_BLOCKSERVICE_HPP_
#define COLDBOOT_BLOCKSERVICE_HPP_

#include <atomic>
#include <functional>
#include <optional>
#include <string>

#include "coldboot/blockstore.hpp"
#include "coldboot/net.hpp"

namespace coldboot {

// Serves GET over a pluggable lookup so the same server fronts a full
// registry store, a cluster cache or a node's local fetched-block cache.
class BlockServer {
 public:
  using Lookup = std::function<std::optional<std::string>(const BlockId&)>;

  BlockServer(const std::string& bind_host, Lookup lookup)
      : lookup_(std::move(lookup)),
        server_(bind_host, [this](MsgKind k, std::string_view p) { return handle(k, p); }) {}

  static Lookup store_lookup(BlockStore& store) {
    return [&store](const BlockId& id) -> std::optional<std::string> {
      if (!store.has_block(id)) return std::nullopt;
      return store.get_block(id);
    };
  }

  const std::string& endpoint() const { return server_.endpoint(); }
  void stop() { server_.stop(); }
  uint64_t gets_served() const { return gets_served_; }

 private:
  WireResponse handle(MsgKind kind, std::string_view payload) {
    if (kind != MsgKind::kGet)
      return WireResponse::err("wire_error", "block server: unsupported message kind");
    ByteReader r(payload);
    BlockId id = Digest32::from_raw(r.bytes(32));
    r.expect_done();
    auto data = lookup_(id);
    if (!data) return WireResponse::err("not_found", "block " + id.hex() + " not here");
    ++gets_served_;
    // response: digest(32) | bytes
    std::string out = id.raw();
    out.append(*data);
    return WireResponse::ok(std::move(out));
  }

  Lookup lookup_;
  std::atomic<uint64_t> gets_served_{0};
  FramedServer server_;
};

struct FetchedBlock {
  Digest32 digest;
  std::string bytes;
};

// Fetches single blocks from one remote block server. Verification against
// the requested id is the caller's job; the returned digest is the server's
// claim, not proof.
class RemoteBlocks {
 public:
  explicit RemoteBlocks(std::string endpoint) : client_(std::move(endpoint)) {}

  const std::string& endpoint() const { return client_.endpoint(); }

  FetchedBlock get(const BlockId& block) {
    std::string resp = client_.request(MsgKind::kGet, msg_get(block));
    ByteReader r(resp);
    FetchedBlock out;
    out.digest = Digest32::from_raw(r.bytes(32));
    out.bytes = std::string(r.rest());
    return out;
  }

 private:
  FramedClient client_;
};

}  // namespace coldboot

#endif  // COLDBOOT_BLOCKSERVICE_HPP_
