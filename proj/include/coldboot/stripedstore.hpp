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

#ifndef COLDBOOT_STRIPEDSTORE_HPP_
#define COLDBOOT_STRIPEDSTORE_HPP_

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <atomic>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "coldboot/digest.hpp"
#include "coldboot/util.hpp"

namespace coldboot {

constexpr uint64_t kDefaultChunkSize = 1024 * 1024;       // 1 MiB
constexpr uint64_t kDefaultStripeSize = 4 * 1024 * 1024;  // 4 MiB
constexpr uint32_t kDefaultGroups = 4;
constexpr size_t kDefaultReadWidth = 4;

struct StripeConfig {
  uint64_t chunk_size = kDefaultChunkSize;
  uint64_t stripe_size = kDefaultStripeSize;  // write-batching unit
  uint32_t groups = kDefaultGroups;
  uint32_t replicas = 1;

  void validate() const {
    if (chunk_size == 0) throw ConfigError("chunk_size must be positive");
    if (stripe_size == 0 || stripe_size % chunk_size != 0)
      throw ConfigError("stripe_size must be a positive multiple of chunk_size");
    if (groups < 1) throw ConfigError("groups must be >= 1");
    if (replicas < 1) throw ConfigError("replicas must be >= 1");
  }
};

// Round-robin stripe mapping: chunk i lives in group i mod G at
// within-group position floor(i / G).
inline uint32_t chunk_group(uint64_t index, uint32_t groups) {
  return static_cast<uint32_t>(index % groups);
}
inline uint64_t chunk_pos(uint64_t index, uint32_t groups) { return index / groups; }

struct ChunkEntry {
  uint64_t index = 0;
  uint32_t group = 0;
  uint64_t pos = 0;
  Digest32 digest;
};

struct ChunkMap {
  std::string file_id;
  uint64_t size = 0;
  uint64_t chunk_size = kDefaultChunkSize;
  uint32_t groups = kDefaultGroups;
  std::vector<ChunkEntry> chunks;  // dense, ordered by index

  uint64_t chunk_length(uint64_t index) const {
    uint64_t off = index * chunk_size;
    return std::min(chunk_size, size - off);
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["file_id"] = file_id;
    j["size"] = size;
    j["chunk_size"] = chunk_size;
    j["groups"] = groups;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : chunks) {
      nlohmann::ordered_json e;
      e["i"] = c.index;
      e["g"] = c.group;
      e["p"] = c.pos;
      e["digest"] = c.digest.hex();
      arr.push_back(std::move(e));
    }
    j["chunks"] = std::move(arr);
    return j;
  }

  std::string dump() const { return to_json().dump(2) + "\n"; }

  static ChunkMap from_json(const nlohmann::json& j) {
    ChunkMap m;
    m.file_id = j.at("file_id").get<std::string>();
    m.size = j.at("size").get<uint64_t>();
    m.chunk_size = j.at("chunk_size").get<uint64_t>();
    m.groups = j.at("groups").get<uint32_t>();
    if (m.chunk_size == 0 || m.groups == 0) throw GetError("corrupt chunk map: bad geometry");
    uint64_t want = ceil_div(m.size, m.chunk_size);
    const auto& arr = j.at("chunks");
    if (arr.size() != want) throw GetError("corrupt chunk map: chunk count mismatch");
    uint64_t i = 0;
    for (const auto& e : arr) {
      ChunkEntry c;
      c.index = e.at("i").get<uint64_t>();
      c.group = e.at("g").get<uint32_t>();
      c.pos = e.at("p").get<uint64_t>();
      c.digest = Digest32::parse_hex(e.at("digest").get<std::string>());
      if (c.index != i || c.group != chunk_group(i, m.groups) || c.pos != chunk_pos(i, m.groups))
        throw GetError("corrupt chunk map: mapping invariant violated at chunk " + std::to_string(i));
      m.chunks.push_back(std::move(c));
      ++i;
    }
    return m;
  }

  static ChunkMap parse(std::string_view payload) {
    nlohmann::json j = nlohmann::json::parse(payload, nullptr, false);
    if (j.is_discarded()) throw GetError("corrupt chunk map: invalid json");
    return from_json(j);
  }
};

inline void validate_file_id(const std::string& id) {
  if (id.empty() || id.front() == '/' || id.back() == '/')
    throw ConfigError("bad file id: " + id);
  size_t pos = 0;
  while (pos <= id.size()) {
    size_t slash = id.find('/', pos);
    if (slash == std::string::npos) slash = id.size();
    std::string_view part(id.data() + pos, slash - pos);
    if (part.empty() || part == "." || part == "..")
      throw ConfigError("bad file id: " + id);
    pos = slash + 1;
  }
}

// One append-only replica file of one group. Records from many logical
// files interleave; an in-memory index built by scanning on open locates
// (file id, chunk index) -> payload. A truncated trailing record from an
// interrupted append is ignored.
class GroupSegment {
 public:
  explicit GroupSegment(fs::path path) : path_(std::move(path)) {
    ensure_dir(path_.parent_path());
    fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_APPEND, 0644);
    if (fd_ < 0) throw IoError("cannot open segment " + path_.string());
    scan();
  }

  ~GroupSegment() {
    if (fd_ >= 0) ::close(fd_);
  }
  GroupSegment(const GroupSegment&) = delete;
  GroupSegment& operator=(const GroupSegment&) = delete;

  void append(const std::string& file_id, uint64_t index, const Digest32& digest,
              std::string_view payload) {
    std::string frame;
    put_str(frame, file_id);
    put_u64(frame, index);
    put_u32(frame, static_cast<uint32_t>(payload.size()));
    frame.append(digest.raw());
    uint64_t header = frame.size();
    frame.append(payload);

    std::lock_guard<std::mutex> lk(mu_);
    ssize_t n = ::write(fd_, frame.data(), frame.size());
    if (n < 0 || static_cast<size_t>(n) != frame.size())
      throw IoError("segment append failed: " + path_.string());
    index_[{file_id, index}] = Loc{end_ + header, static_cast<uint32_t>(payload.size())};
    digests_[{file_id, index}] = digest;
    end_ += frame.size();
  }

  bool has(const std::string& file_id, uint64_t index) const {
    std::lock_guard<std::mutex> lk(mu_);
    return index_.count({file_id, index}) != 0;
  }

  // Returns the frame digest and payload as written.
  std::pair<Digest32, std::string> read(const std::string& file_id, uint64_t index) const {
    Loc loc;
    Digest32 digest;
    {
      std::lock_guard<std::mutex> lk(mu_);
      auto it = index_.find({file_id, index});
      if (it == index_.end())
        throw NotFoundError("chunk " + file_id + "#" + std::to_string(index) + " not in segment");
      loc = it->second;
      digest = digests_.at({file_id, index});
    }
    std::string out(loc.length, '\0');
    if (!pread_exact(out.data(), loc.length, loc.offset))
      throw IoError("segment read failed: " + path_.string());
    return {digest, std::move(out)};
  }

 private:
  struct Loc {
    uint64_t offset = 0;
    uint32_t length = 0;
  };

  bool pread_exact(char* buf, size_t len, uint64_t offset) const {
    size_t got = 0;
    while (got < len) {
      ssize_t n = ::pread(fd_, buf + got, len - got, static_cast<off_t>(offset + got));
      if (n <= 0) return false;
      got += static_cast<size_t>(n);
    }
    return true;
  }

  void scan() {
    struct stat st{};
    if (::fstat(fd_, &st) != 0) throw IoError("fstat failed: " + path_.string());
    uint64_t size = static_cast<uint64_t>(st.st_size);
    uint64_t pos = 0;
    while (pos < size) {
      // fixed prefix: id length
      char lenbuf[4];
      if (pos + 4 > size || !pread_exact(lenbuf, 4, pos)) break;
      ByteReader lr(std::string_view(lenbuf, 4));
      uint32_t id_len = lr.u32();
      uint64_t header_len = 4ull + id_len + 8 + 4 + 32;
      if (pos + header_len > size) break;
      std::string header(header_len - 4, '\0');
      if (!pread_exact(header.data(), header.size(), pos + 4)) break;
      ByteReader hr(header);
      std::string file_id(hr.bytes(id_len));
      uint64_t index = hr.u64();
      uint32_t payload_len = hr.u32();
      Digest32 digest = Digest32::from_raw(hr.bytes(32));
      if (pos + header_len + payload_len > size) break;  // truncated tail
      index_[{file_id, index}] = Loc{pos + header_len, payload_len};
      digests_[{file_id, index}] = digest;
      pos += header_len + payload_len;
    }
    end_ = pos;
    // later appends land at the scanned end; drop any truncated tail
    if (pos < size && ::ftruncate(fd_, static_cast<off_t>(pos)) != 0)
      throw IoError("cannot drop truncated tail: " + path_.string());
  }

  fs::path path_;
  int fd_ = -1;
  mutable std::mutex mu_;
  std::map<std::pair<std::string, uint64_t>, Loc> index_;
  std::map<std::pair<std::string, uint64_t>, Digest32> digests_;
  uint64_t end_ = 0;
};

// Minimal logical-file interface shared by the local striped store and its
// network client; the env cache and the mount facade program against it.
class ObjectStore {
 public:
  virtual ~ObjectStore() = default;
  virtual void put(const std::string& id, std::string_view bytes) = 0;
  virtual std::string get(const std::string& id) = 0;
  virtual std::string read_range(const std::string& id, uint64_t offset, uint64_t len) = 0;
  virtual uint64_t size(const std::string& id) = 0;
  virtual bool exists(const std::string& id) = 0;
  virtual std::vector<std::string> list(const std::string& prefix) = 0;
};

// Read-only virtual-file facade over a logical name prefix, the library
// analogue of mounting the remote directory locally.
class MountView {
 public:
  MountView(ObjectStore& store, std::string prefix)
      : store_(&store), prefix_(std::move(prefix)) {}

  std::vector<std::string> list() const {
    std::vector<std::string> names;
    for (const auto& id : store_->list(prefix_)) names.push_back(id.substr(prefix_.size()));
    return names;
  }

  bool exists(const std::string& name) const { return store_->exists(prefix_ + name); }
  uint64_t size(const std::string& name) const { return store_->size(prefix_ + name); }
  std::string read(const std::string& name, uint64_t offset, uint64_t len) const {
    return store_->read_range(prefix_ + name, offset, len);
  }
  std::string read_all(const std::string& name) const { return store_->get(prefix_ + name); }

 private:
  ObjectStore* store_;
  std::string prefix_;
};

// Chunk-striped store over append-only group segments. Chunks of one file
// spread round-robin across groups; writes to distinct groups and reads up
// to a width run in parallel.
class StripedStore : public ObjectStore {
 public:
  explicit StripedStore(fs::path root, StripeConfig cfg = {}, size_t read_width = kDefaultReadWidth)
      : root_(std::move(root)), cfg_(cfg), read_width_(read_width ? read_width : 1) {
    cfg_.validate();
    ensure_dir(root_);
    ensure_dir(root_ / "maps");
    group_reads_ = std::vector<std::atomic<uint64_t>>(cfg_.groups);
  }

  const StripeConfig& config() const { return cfg_; }
  const fs::path& root() const { return root_; }

  // Fault hook for tests: runs before every group append attempt.
  void set_put_gate(std::function<void(uint32_t group, uint64_t index)> gate) {
    put_gate_ = std::move(gate);
  }

  uint64_t chunks_read() const { return chunks_read_; }
  uint64_t corrupt_chunks() const { return corrupt_chunks_; }
  std::vector<uint64_t> group_read_counts() const {
    std::vector<uint64_t> out;
    for (const auto& a : group_reads_) out.push_back(a.load());
    return out;
  }

  // Single chunk append with one retry; all replicas of the group receive
  // the record. Used by put_file and by the network service.
  void append_chunk(const std::string& file_id, uint64_t index, const Digest32& digest,
                    std::string_view payload) {
    uint32_t g = chunk_group(index, cfg_.groups);
    for (int attempt = 0;; ++attempt) {
      try {
        if (put_gate_) put_gate_(g, index);
        for (uint32_t r = 0; r < cfg_.replicas; ++r)
          segment(g, r).append(file_id, index, digest, payload);
        return;
      } catch (const std::exception& e) {
        if (attempt >= 1)
          throw PutError("group " + std::to_string(g) + " unavailable: " + e.what());
      }
    }
  }

  // Raw read used by the network service: returns the stored frame digest
  // and payload, failing over across replicas on frame digest mismatch.
  std::pair<Digest32, std::string> read_chunk_raw(const std::string& file_id, uint64_t index) {
    uint32_t g = chunk_group(index, cfg_.groups);
    bool found = false;
    for (uint32_t r = 0; r < cfg_.replicas; ++r) {
      try {
        auto [digest, payload] = segment(g, r).read(file_id, index);
        found = true;
        if (sha256(payload) != digest) {
          ++corrupt_chunks_;
          continue;
        }
        ++chunks_read_;
        ++group_reads_[g];
        return {digest, std::move(payload)};
      } catch (const NotFoundError&) {
        continue;
      }
    }
    if (found)
      throw GetError("chunk " + file_id + "#" + std::to_string(index) + " corrupt on all replicas");
    throw NotFoundError("chunk " + file_id + "#" + std::to_string(index) + " missing");
  }

  ChunkMap put_file(const std::string& file_id, std::string_view bytes) {
    validate_file_id(file_id);
    ChunkMap map;
    map.file_id = file_id;
    map.size = bytes.size();
    map.chunk_size = cfg_.chunk_size;
    map.groups = cfg_.groups;
    uint64_t nchunks = ceil_div(bytes.size(), cfg_.chunk_size);
    map.chunks.resize(nchunks);
    for (uint64_t i = 0; i < nchunks; ++i) {
      auto& c = map.chunks[i];
      c.index = i;
      c.group = chunk_group(i, cfg_.groups);
      c.pos = chunk_pos(i, cfg_.groups);
      c.digest = sha256(bytes.substr(i * cfg_.chunk_size, map.chunk_length(i)));
    }

    // one writer per group, appending that group's chunks in position order
    std::vector<std::thread> writers;
    std::vector<std::exception_ptr> errors(cfg_.groups);
    for (uint32_t g = 0; g < cfg_.groups; ++g) {
      writers.emplace_back([&, g] {
        try {
          for (uint64_t i = g; i < nchunks; i += cfg_.groups)
            append_chunk(file_id, i, map.chunks[i].digest,
                         bytes.substr(i * cfg_.chunk_size, map.chunk_length(i)));
        } catch (...) {
          errors[g] = std::current_exception();
        }
      });
    }
    for (auto& w : writers) w.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);  // no map is saved for a partial put

    save_map(map);
    return map;
  }

  std::string get_file(const ChunkMap& map, size_t parallel_width = 0) {
    return read_chunks(map, 0, map.chunks.size(), parallel_width);
  }

  std::string read_range(const ChunkMap& map, uint64_t offset, uint64_t len,
                         size_t parallel_width = 0) {
    if (offset > map.size || len > map.size - offset)
      throw RangeError("range beyond end of " + map.file_id);
    if (len == 0) return {};
    uint64_t first = offset / map.chunk_size;
    uint64_t last = (offset + len - 1) / map.chunk_size;
    std::string joined = read_chunks(map, first, last + 1, parallel_width);
    return joined.substr(offset - first * map.chunk_size, len);
  }

  void save_map(const ChunkMap& map) {
    validate_file_id(map.file_id);
    fs::path p = map_path(map.file_id);
    ensure_dir(p.parent_path());
    write_file_atomic(p, map.dump());
  }

  ChunkMap load_map(const std::string& file_id) {
    validate_file_id(file_id);
    fs::path p = map_path(file_id);
    if (!fs::exists(p)) throw NotFoundError("no such file: " + file_id);
    return ChunkMap::parse(read_file(p));
  }

  MountView mount_view(std::string prefix) { return MountView(*this, std::move(prefix)); }

  // ObjectStore interface
  void put(const std::string& id, std::string_view bytes) override { put_file(id, bytes); }
  std::string get(const std::string& id) override { return get_file(load_map(id)); }
  std::string read_range(const std::string& id, uint64_t offset, uint64_t len) override {
    return read_range(load_map(id), offset, len);
  }
  uint64_t size(const std::string& id) override { return load_map(id).size; }
  bool exists(const std::string& id) override {
    validate_file_id(id);
    return fs::exists(map_path(id));
  }
  std::vector<std::string> list(const std::string& prefix) override {
    std::vector<std::string> out;
    fs::path base = root_ / "maps";
    if (!fs::exists(base)) return out;
    for (auto it = fs::recursive_directory_iterator(base);
         it != fs::recursive_directory_iterator(); ++it) {
      if (!it->is_regular_file() || it->path().extension() != ".json") continue;
      std::string rel = it->path().lexically_relative(base).string();
      std::string id = rel.substr(0, rel.size() - 5);
      if (id.rfind(prefix, 0) == 0) out.push_back(std::move(id));
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  GroupSegment& segment(uint32_t group, uint32_t replica) {
    std::lock_guard<std::mutex> lk(segments_mu_);
    auto key = std::make_pair(group, replica);
    auto it = segments_.find(key);
    if (it == segments_.end()) {
      fs::path p = root_ / ("g" + std::to_string(group)) / ("r" + std::to_string(replica) + ".seg");
      it = segments_.emplace(key, std::make_unique<GroupSegment>(std::move(p))).first;
    }
    return *it->second;
  }

  fs::path map_path(const std::string& file_id) const {
    return root_ / "maps" / (file_id + ".json");
  }

  // Verified read of one chunk, failing over across replicas when the
  // payload does not hash to the map digest.
  std::string read_chunk(const ChunkMap& map, const ChunkEntry& entry) {
    bool found = false;
    for (uint32_t r = 0; r < cfg_.replicas; ++r) {
      std::string payload;
      try {
        payload = segment(entry.group, r).read(map.file_id, entry.index).second;
        found = true;
      } catch (const NotFoundError&) {
        continue;
      }
      if (sha256(payload) != entry.digest) {
        ++corrupt_chunks_;
        continue;
      }
      ++chunks_read_;
      ++group_reads_[entry.group];
      return payload;
    }
    if (found)
      throw GetError("chunk " + map.file_id + "#" + std::to_string(entry.index) +
                     " corrupt on all replicas");
    throw NotFoundError("chunk " + map.file_id + "#" + std::to_string(entry.index) + " missing");
  }

  // In-order chunk assembly with at most `width` reads in flight.
  std::string read_chunks(const ChunkMap& map, uint64_t begin, uint64_t end, size_t width) {
    if (width == 0) width = read_width_;
    std::string out;
    if (begin >= end) return out;
    out.reserve((end - begin) * map.chunk_size);
    std::deque<std::future<std::string>> window;
    uint64_t next = begin;
    uint64_t take = begin;
    while (take < end) {
      while (next < end && window.size() < width) {
        window.push_back(std::async(std::launch::async,
                                    [this, &map, i = next] { return read_chunk(map, map.chunks[i]); }));
        ++next;
      }
      out += window.front().get();
      window.pop_front();
      ++take;
    }
    return out;
  }

  fs::path root_;
  StripeConfig cfg_;
  size_t read_width_;
  std::mutex segments_mu_;
  std::map<std::pair<uint32_t, uint32_t>, std::unique_ptr<GroupSegment>> segments_;
  std::function<void(uint32_t, uint64_t)> put_gate_;
  std::atomic<uint64_t> chunks_read_{0};
  std::atomic<uint64_t> corrupt_chunks_{0};
  std::vector<std::atomic<uint64_t>> group_reads_;
};

}  // namespace coldboot

#endif  // COLDBOOT_STRIPEDSTORE_HPP_
