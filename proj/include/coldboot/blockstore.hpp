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

#ifndef COLDBOOT_BLOCKSTORE_HPP_
#define COLDBOOT_BLOCKSTORE_HPP_

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "coldboot/digest.hpp"
#include "coldboot/util.hpp"

namespace coldboot {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// Identity of a stored block: SHA-256 of the (zero-padded) block contents.
using BlockId = Digest32;

constexpr uint64_t kDefaultBlockSize = 512 * 1024;
constexpr uint64_t kMinBlockSize = 4 * 1024;

struct ManifestFile {
  std::string path;  // absolute, unique within the image
  uint64_t size = 0; // logical size; the last block is zero-padded on disk
  std::vector<BlockId> blocks;
};

struct BlockManifest {
  std::string image_id;
  std::string hash_algo = "sha256";
  uint64_t block_size = kDefaultBlockSize;
  std::vector<ManifestFile> files;  // sorted by path
  uint64_t total_blocks = 0;
  uint64_t unique_blocks = 0;

  const ManifestFile* find(const std::string& path) const {
    auto it = std::lower_bound(files.begin(), files.end(), path,
                               [](const ManifestFile& f, const std::string& p) { return f.path < p; });
    if (it == files.end() || it->path != path) return nullptr;
    return &*it;
  }

  // Distinct block ids in first-reference order.
  std::vector<BlockId> all_blocks() const {
    std::vector<BlockId> out;
    std::unordered_set<Digest32, Digest32Hash> seen;
    for (const auto& f : files)
      for (const auto& b : f.blocks)
        if (seen.insert(b).second) out.push_back(b);
    return out;
  }

  ordered_json to_json() const {
    ordered_json j;
    j["image_id"] = image_id;
    j["hash_algo"] = hash_algo;
    j["block_size"] = block_size;
    j["total_blocks"] = total_blocks;
    j["unique_blocks"] = unique_blocks;
    ordered_json files_j = ordered_json::array();
    for (const auto& f : files) {
      ordered_json fj;
      fj["path"] = f.path;
      fj["size"] = f.size;
      ordered_json blocks_j = ordered_json::array();
      for (const auto& b : f.blocks) blocks_j.push_back(b.hex());
      fj["blocks"] = std::move(blocks_j);
      files_j.push_back(std::move(fj));
    }
    j["files"] = std::move(files_j);
    return j;
  }

  std::string dump() const { return to_json().dump(2) + "\n"; }

  static BlockManifest from_json(const json& j) {
    BlockManifest m;
    m.image_id = j.at("image_id").get<std::string>();
    m.hash_algo = j.at("hash_algo").get<std::string>();
    m.block_size = j.at("block_size").get<uint64_t>();
    m.total_blocks = j.at("total_blocks").get<uint64_t>();
    m.unique_blocks = j.at("unique_blocks").get<uint64_t>();
    for (const auto& fj : j.at("files")) {
      ManifestFile f;
      f.path = fj.at("path").get<std::string>();
      f.size = fj.at("size").get<uint64_t>();
      for (const auto& bj : fj.at("blocks")) f.blocks.push_back(BlockId::parse_hex(bj.get<std::string>()));
      m.files.push_back(std::move(f));
    }
    return m;
  }

  static BlockManifest parse(std::string_view text) { return from_json(json::parse(text)); }
};

struct LayerSpec {
  fs::path dir;
  // Tombstones delete the named lower-layer path; a tombstone naming a
  // directory deletes everything under it.
  std::vector<std::string> tombstones;
};

struct LayeredImageSpec {
  std::string image_id;
  std::vector<LayerSpec> layers;  // lower -> upper

  static LayeredImageSpec from_json(const json& j) {
    LayeredImageSpec s;
    s.image_id = j.at("image_id").get<std::string>();
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.dir = lj.at("dir").get<std::string>();
      if (lj.contains("tombstones"))
        for (const auto& t : lj.at("tombstones")) l.tombstones.push_back(t.get<std::string>());
      s.layers.push_back(std::move(l));
    }
    return s;
  }

  ordered_json to_json() const {
    ordered_json j;
    j["image_id"] = image_id;
    ordered_json layers_j = ordered_json::array();
    for (const auto& l : layers) {
      ordered_json lj;
      lj["dir"] = l.dir.string();
      lj["tombstones"] = l.tombstones;
      layers_j.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers_j);
    return j;
  }
};

// Content-addressed block storage on a local directory:
//   <root>/blocks/<aa>/<bb>/<64-hex>   one file per unique block
//   <root>/manifests/<image_id>.json
// Blocks are written via temp+rename, so concurrent readers of other images
// never see partial blocks.
class BlockStore {
 public:
  explicit BlockStore(fs::path root) : root_(std::move(root)) {
    ensure_dir(root_ / "blocks");
    ensure_dir(root_ / "manifests");
  }

  const fs::path& root() const { return root_; }

  fs::path block_path(const BlockId& id) const {
    std::string hex = id.hex();
    return root_ / "blocks" / hex.substr(0, 2) / hex.substr(2, 2) / hex;
  }

  bool has_block(const BlockId& id) const { return fs::exists(block_path(id)); }

  std::string get_block(const BlockId& id) const {
    fs::path p = block_path(id);
    if (!fs::exists(p)) throw NotFoundError("block " + id.hex());
    return read_file(p);
  }

  void put_block(const BlockId& id, std::string_view padded) {
    fs::path p = block_path(id);
    if (fs::exists(p)) return;  // dedup
    ensure_dir(p.parent_path());
    write_file_atomic(p, padded);
  }

  uint64_t block_file_count() const {
    uint64_t n = 0;
    for (auto it = fs::recursive_directory_iterator(root_ / "blocks"); it != fs::recursive_directory_iterator(); ++it)
      if (it->is_regular_file()) ++n;
    return n;
  }

  BlockManifest build_image(const LayeredImageSpec& spec, uint64_t block_size = kDefaultBlockSize) {
    if (!is_power_of_two(block_size) || block_size < kMinBlockSize)
      throw BuildError("block_size must be a power of two >= 4096, got " + std::to_string(block_size));

    // Flatten: walk layers lower -> upper. A layer's tombstones apply to the
    // state below it; its own files then shadow on path collision.
    std::map<std::string, fs::path> merged;  // image path -> source file
    for (const auto& layer : spec.layers) {
      std::error_code ec;
      if (!fs::is_directory(layer.dir, ec))
        throw BuildError("layer directory unreadable: " + layer.dir.string());
      for (const auto& t : layer.tombstones) apply_tombstone(merged, t);
      for (auto it = fs::recursive_directory_iterator(layer.dir, ec); it != fs::recursive_directory_iterator();
           it.increment(ec)) {
        if (ec) throw BuildError("layer walk failed under " + layer.dir.string() + ": " + ec.message());
        if (!it->is_regular_file()) continue;
        std::string rel = it->path().lexically_relative(layer.dir).generic_string();
        merged["/" + rel] = it->path();
      }
      if (ec) throw BuildError("layer walk failed under " + layer.dir.string() + ": " + ec.message());
    }

    check_file_dir_collisions(merged);

    BlockManifest m;
    m.image_id = spec.image_id;
    m.block_size = block_size;
    std::unordered_set<Digest32, Digest32Hash> unique;
    for (const auto& [path, src] : merged) {
      ManifestFile f;
      f.path = path;
      std::string content = read_file_or(src);
      f.size = content.size();
      for (uint64_t off = 0; off < f.size; off += block_size) {
        std::string padded = content.substr(off, block_size);
        padded.resize(block_size, '\0');
        BlockId id = sha256(padded);
        put_block(id, padded);
        f.blocks.push_back(id);
        unique.insert(id);
      }
      m.total_blocks += f.blocks.size();
      m.files.push_back(std::move(f));
    }
    m.unique_blocks = unique.size();
    save_manifest(m);
    return m;
  }

  // Reassembles a byte range of a flattened file from its blocks.
  std::string read_file_range(const BlockManifest& m, const std::string& path, uint64_t offset,
                              uint64_t len) const {
    const ManifestFile* f = m.find(path);
    if (!f) throw NotFoundError("no such path in manifest: " + path);
    if (offset > f->size || len > f->size - offset)
      throw RangeError("read past end of " + path + " (offset " + std::to_string(offset) + " len " +
                       std::to_string(len) + " size " + std::to_string(f->size) + ")");
    std::string out;
    out.reserve(len);
    uint64_t pos = offset;
    while (out.size() < len) {
      uint64_t block_idx = pos / m.block_size;
      uint64_t in_block = pos % m.block_size;
      uint64_t take = std::min(len - out.size(), m.block_size - in_block);
      std::string block = get_block(f->blocks[block_idx]);
      out.append(block, in_block, take);
      pos += take;
    }
    return out;
  }

  void save_manifest(const BlockManifest& m) {
    write_file_atomic(root_ / "manifests" / (m.image_id + ".json"), m.dump());
  }

  BlockManifest load_manifest(const std::string& image_id) const {
    fs::path p = root_ / "manifests" / (image_id + ".json");
    if (!fs::exists(p)) throw NotFoundError("no manifest for image " + image_id);
    return BlockManifest::parse(read_file(p));
  }

 private:
  static std::string read_file_or(const fs::path& p) {
    try {
      return read_file(p);
    } catch (const IoError& e) {
      throw BuildError(e.what());
    }
  }

  static void apply_tombstone(std::map<std::string, fs::path>& merged, const std::string& t) {
    auto it = merged.lower_bound(t);
    while (it != merged.end()) {
      if (it->first == t || (it->first.size() > t.size() && it->first.compare(0, t.size(), t) == 0 &&
                             it->first[t.size()] == '/')) {
        it = merged.erase(it);
      } else if (it->first.compare(0, t.size(), t) == 0) {
        ++it;
      } else {
        break;
      }
    }
  }

  // A path that is both a file and a directory prefix of another file is a
  // layer conflict the flattener cannot represent.
  static void check_file_dir_collisions(const std::map<std::string, fs::path>& merged) {
    const std::string* prev = nullptr;
    for (const auto& [path, _] : merged) {
      if (prev && path.size() > prev->size() && path.compare(0, prev->size(), *prev) == 0 &&
          path[prev->size()] == '/')
        throw BuildError("path collision: " + *prev + " is both a file and a directory");
      prev = &path;
    }
  }

  fs::path root_;
};

}  // namespace coldboot

#endif  // COLDBOOT_BLOCKSTORE_HPP_
