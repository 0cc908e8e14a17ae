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

#ifndef COLDBOOT_ENVCACHE_HPP_
#define COLDBOOT_ENVCACHE_HPP_

#include <sys/stat.h>
#include <zlib.h>

#include <chrono>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "coldboot/digest.hpp"
#include "coldboot/stripedstore.hpp"
#include "coldboot/tracker.hpp"
#include "coldboot/util.hpp"

namespace coldboot {

// ---- job fingerprints ----

struct JobParams {
  std::string job_id;  // identifies the job, not part of the fingerprint
  std::string image_id;
  std::string hardware_class;
  std::string os_tag;
  std::map<std::string, std::string> deps;  // package -> version pin

  // Digest over the canonical sorted-key json of everything that makes a
  // cached environment reusable.
  Digest32 fingerprint() const {
    nlohmann::json j;  // plain json objects serialize with sorted keys
    j["image_id"] = image_id;
    j["hardware_class"] = hardware_class;
    j["os_tag"] = os_tag;
    j["deps"] = deps;
    return sha256(j.dump());
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["job_id"] = job_id;
    j["image_id"] = image_id;
    j["hardware_class"] = hardware_class;
    j["os_tag"] = os_tag;
    j["deps"] = deps;
    return j;
  }

  static JobParams from_json(const nlohmann::json& j) {
    JobParams p;
    p.job_id = j.at("job_id").get<std::string>();
    p.image_id = j.at("image_id").get<std::string>();
    p.hardware_class = j.at("hardware_class").get<std::string>();
    p.os_tag = j.at("os_tag").get<std::string>();
    if (j.contains("deps")) p.deps = j.at("deps").get<std::map<std::string, std::string>>();
    return p;
  }

  static JobParams parse(std::string_view payload) {
    nlohmann::json j = nlohmann::json::parse(payload, nullptr, false);
    if (j.is_discarded()) throw ConfigError("malformed job params json");
    try {
      return from_json(j);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed job params: ") + e.what());
    }
  }
};

// ---- directory scanning ----

enum class EntryKind : uint8_t { kFile = 0, kSymlink = 1 };

struct FileMeta {
  EntryKind kind = EntryKind::kFile;
  uint64_t size = 0;
  int64_t mtime_ns = 0;
  uint32_t mode = 0;  // permission bits
  Digest32 digest;    // content digest; for symlinks, digest of the target
  std::string link_target;

  bool same_content(const FileMeta& o) const {
    return kind == o.kind && digest == o.digest && mode == o.mode;
  }
};

struct DirScan {
  fs::path root;
  std::map<std::string, FileMeta> entries;  // relative path -> meta, path-ordered
};

// Complete inventory of regular files and symlinks below root. Directory
// symlinks are recorded as links, not followed.
inline DirScan scan(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw ScanError("scan root missing: " + root.string());
  DirScan out;
  out.root = root;
  for (auto it = fs::recursive_directory_iterator(root, ec);
       it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) throw ScanError("walk failed under " + root.string() + ": " + ec.message());
    const fs::path& p = it->path();
    // lexical, so a symlink is keyed by its own path and not its target's
    std::string rel = p.lexically_relative(root).generic_string();
    struct stat st{};
    if (::lstat(p.c_str(), &st) != 0) throw ScanError("cannot stat " + p.string());
    FileMeta meta;
    meta.mode = st.st_mode & 07777;
    meta.mtime_ns = static_cast<int64_t>(st.st_mtim.tv_sec) * 1000000000 + st.st_mtim.tv_nsec;
    if (S_ISLNK(st.st_mode)) {
      meta.kind = EntryKind::kSymlink;
      meta.link_target = fs::read_symlink(p, ec).generic_string();
      if (ec) throw ScanError("cannot read symlink " + p.string());
      meta.size = meta.link_target.size();
      meta.digest = sha256(meta.link_target);
    } else if (S_ISREG(st.st_mode)) {
      meta.kind = EntryKind::kFile;
      meta.size = static_cast<uint64_t>(st.st_size);
      try {
        meta.digest = sha256(read_file(p));
      } catch (const std::exception& e) {
        throw ScanError("cannot read " + p.string() + ": " + e.what());
      }
    } else {
      continue;  // directories and special files carry no snapshot content
    }
    out.entries.emplace(std::move(rel), std::move(meta));
  }
  return out;
}

// ---- snapshots ----

constexpr std::string_view kSnapshotMagic = "CBENV";
constexpr uint32_t kSnapshotVersion = 1;
constexpr std::string_view kSnapshotCodec = "deflate";

struct SnapshotFile {
  std::string path;
  EntryKind kind = EntryKind::kFile;
  uint32_t mode = 0644;
  std::string content;  // file bytes, or the link target for symlinks
};

inline std::string deflate_bytes(std::string_view raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::string out(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                Z_DEFAULT_COMPRESSION) != Z_OK)
    throw IoError("deflate failed");
  out.resize(bound);
  return out;
}

inline std::string inflate_bytes(std::string_view compressed, uint64_t raw_len) {
  std::string out(raw_len, '\0');
  uLongf got = static_cast<uLongf>(raw_len);
  if (uncompress(reinterpret_cast<Bytef*>(out.data()), &got,
                 reinterpret_cast<const Bytef*>(compressed.data()),
                 static_cast<uLong>(compressed.size())) != Z_OK ||
      got != raw_len)
    throw IoError("inflate failed");
  return out;
}

// Everything the first environment setup changed under the target
// directory: added and modified files plus deletion tombstones. Applying
// a snapshot to the pre-setup tree reproduces the post-setup tree.
struct EnvSnapshot {
  Digest32 fingerprint;
  int64_t created_at_ms = 0;
  std::vector<std::string> deleted;  // sorted paths
  std::vector<SnapshotFile> files;   // sorted by path

  uint64_t content_bytes() const {
    uint64_t n = 0;
    for (const auto& f : files) n += f.content.size();
    return n;
  }

  // header | entry table | deflate(concatenated contents)
  std::string serialize() const {
    std::string head;
    head.append(kSnapshotMagic);
    put_u32(head, kSnapshotVersion);
    head.append(fingerprint.raw());
    put_i64(head, created_at_ms);
    put_str(head, kSnapshotCodec);
    put_u32(head, static_cast<uint32_t>(deleted.size()));
    for (const auto& d : deleted) put_str(head, d);
    put_u32(head, static_cast<uint32_t>(files.size()));
    std::string raw;
    for (const auto& f : files) {
      put_str(head, f.path);
      head.push_back(static_cast<char>(f.kind));
      put_u32(head, f.mode);
      put_u64(head, f.content.size());
      raw += f.content;
    }
    put_u64(head, raw.size());
    return head + deflate_bytes(raw);
  }

  static EnvSnapshot parse(std::string_view payload) {
    ByteReader r(payload);
    if (r.bytes(kSnapshotMagic.size()) != kSnapshotMagic)
      throw GetError("not an environment snapshot");
    if (r.u32() != kSnapshotVersion) throw GetError("unsupported snapshot version");
    EnvSnapshot snap;
    snap.fingerprint = Digest32::from_raw(r.bytes(32));
    snap.created_at_ms = r.i64();
    if (r.str() != kSnapshotCodec) throw GetError("unsupported snapshot codec");
    uint32_t ndeleted = r.u32();
    for (uint32_t i = 0; i < ndeleted; ++i) snap.deleted.push_back(r.str());
    uint32_t nfiles = r.u32();
    std::vector<uint64_t> lengths;
    lengths.reserve(nfiles);
    for (uint32_t i = 0; i < nfiles; ++i) {
      SnapshotFile f;
      f.path = r.str();
      f.kind = static_cast<EntryKind>(r.u8());
      f.mode = r.u32();
      lengths.push_back(r.u64());
      snap.files.push_back(std::move(f));
    }
    uint64_t raw_len = r.u64();
    std::string raw = inflate_bytes(r.rest(), raw_len);
    size_t off = 0;
    for (uint32_t i = 0; i < nfiles; ++i) {
      if (off + lengths[i] > raw.size()) throw GetError("snapshot payload truncated");
      snap.files[i].content = raw.substr(off, lengths[i]);
      off += lengths[i];
    }
    if (off != raw.size()) throw GetError("snapshot payload has trailing bytes");
    return snap;
  }
};

inline EnvSnapshot diff(const DirScan& before, const DirScan& after,
                        const Digest32& fingerprint = {}) {
  if (before.root != after.root)
    throw DiffError("scans cover different roots: " + before.root.string() + " vs " +
                    after.root.string());
  EnvSnapshot snap;
  snap.fingerprint = fingerprint;
  snap.created_at_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::system_clock::now().time_since_epoch())
                           .count();
  for (const auto& [path, meta] : after.entries) {
    auto it = before.entries.find(path);
    if (it != before.entries.end() && it->second.same_content(meta)) continue;
    SnapshotFile f;
    f.path = path;
    f.kind = meta.kind;
    f.mode = meta.mode;
    f.content = meta.kind == EntryKind::kSymlink ? meta.link_target
                                                 : read_file(after.root / path);
    snap.files.push_back(std::move(f));
  }
  for (const auto& [path, meta] : before.entries)
    if (!after.entries.count(path)) snap.deleted.push_back(path);
  return snap;
}

// Applies a snapshot under root. The caller's current job fingerprint must
// match the recorded one; a changed parameter set means the cache no longer
// describes this job.
inline void restore(const EnvSnapshot& snap, const fs::path& root,
                    const Digest32& job_fingerprint) {
  if (snap.fingerprint != job_fingerprint)
    throw ExpiredCacheError("snapshot fingerprint " + snap.fingerprint.hex().substr(0, 12) +
                            " does not match job " + job_fingerprint.hex().substr(0, 12));
  for (const auto& d : snap.deleted) fs::remove(root / d);
  for (const auto& f : snap.files) {
    fs::path p = root / f.path;
    ensure_dir(p.parent_path());
    if (f.kind == EntryKind::kSymlink) {
      fs::remove(p);
      fs::create_symlink(f.content, p);
    } else {
      write_file_atomic(p, f.content);
      if (::chmod(p.c_str(), f.mode) != 0) throw IoError("chmod failed on " + p.string());
    }
  }
}

// ---- setup orchestration ----

struct SetupOutcome {
  enum class Kind : uint8_t {
    kCached = 0,    // snapshot found and restored; install skipped
    kRecorded = 1,  // this node ran the install and captured the snapshot
    kWaited = 2,    // another node recorded; this node restored its upload
    kFallback = 3,  // no cache and not the recorder; installed locally
  };
  Kind kind = Kind::kCached;
  Digest32 fingerprint;
  std::string snapshot_id;
  uint64_t compressed_size = 0;
  bool upload_warning = false;
};

struct SetupContext {
  ObjectStore* store = nullptr;       // snapshot storage, required
  TrackerClient* tracker = nullptr;   // recorder election; null means "record if missing"
  uint32_t node_id = 0;
  int64_t wait_timeout_ms = 30000;  // how long losers wait for the winner's upload
  int64_t poll_interval_ms = 10;
};

inline std::string snapshot_object_id(const Digest32& fingerprint) {
  return "env/" + fingerprint.hex();
}

// One node's view of Environment Setup: restore when a snapshot for this
// fingerprint exists, otherwise elect a recorder, run the install there,
// capture the tree diff and upload it while everyone else waits.
inline SetupOutcome run_setup(const JobParams& job, const fs::path& root,
                              const std::function<void(const fs::path&)>& install,
                              const SetupContext& ctx) {
  if (ctx.store == nullptr) throw ConfigError("run_setup needs a snapshot store");
  SetupOutcome out;
  out.fingerprint = job.fingerprint();
  out.snapshot_id = snapshot_object_id(out.fingerprint);

  auto try_restore = [&]() -> bool {
    std::string blob;
    try {
      blob = ctx.store->get(out.snapshot_id);
    } catch (const NotFoundError&) {
      return false;
    }
    EnvSnapshot snap = EnvSnapshot::parse(blob);
    restore(snap, root, out.fingerprint);
    out.compressed_size = blob.size();
    return true;
  };

  if (try_restore()) {
    out.kind = SetupOutcome::Kind::kCached;
    return out;
  }

  bool recorder = true;
  if (ctx.tracker != nullptr) {
    std::string key = "env-setup/" + job.job_id + "/" + out.fingerprint.hex();
    recorder = ctx.tracker->claim(key, ctx.node_id).won;
  }

  if (!recorder) {
    int64_t waited = 0;
    while (waited < ctx.wait_timeout_ms) {
      if (try_restore()) {
        out.kind = SetupOutcome::Kind::kWaited;
        return out;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(ctx.poll_interval_ms));
      waited += ctx.poll_interval_ms;
    }
    // the recorder went missing; set up locally and leave recording to it
    install(root);
    out.kind = SetupOutcome::Kind::kFallback;
    return out;
  }

  DirScan before = scan(root);
  install(root);
  DirScan after = scan(root);
  EnvSnapshot snap = diff(before, after, out.fingerprint);
  std::string blob = snap.serialize();
  out.compressed_size = blob.size();
  out.kind = SetupOutcome::Kind::kRecorded;
  try {
    ctx.store->put(out.snapshot_id, blob);
  } catch (const std::exception&) {
    out.upload_warning = true;  // proceed without a cache
  }
  return out;
}

}  // namespace coldboot

#endif  // COLDBOOT_ENVCACHE_HPP_
