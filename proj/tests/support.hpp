// Shared helpers for the test suites: scratch dirs, synthetic file trees,
// tree comparison.
#ifndef COLDBOOT_TESTS_SUPPORT_HPP_
#define COLDBOOT_TESTS_SUPPORT_HPP_

#include <atomic>
#include <map>
#include <string>
#include <vector>

#include "coldboot/rng.hpp"
#include "coldboot/util.hpp"

namespace cbtest {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "cb") {
    static std::atomic<uint64_t> counter{0};
    path_ = fs::temp_directory_path() /
            ("coldboot_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& sub) const { return path_ / sub; }

 private:
  fs::path path_;
};

// rel path -> content
using TreeSpec = std::map<std::string, std::string>;

inline void write_tree(const fs::path& root, const TreeSpec& tree) {
  for (const auto& [rel, content] : tree) {
    fs::path p = root / rel;
    fs::create_directories(p.parent_path());
    coldboot::write_file(p, content);
  }
}

inline std::string random_bytes(coldboot::Rng& rng, size_t n) {
  std::string s(n, '\0');
  for (size_t i = 0; i < n; ++i) s[i] = static_cast<char>(rng.below(256));
  return s;
}

// Small random tree: a few files with random sizes around the block size so
// short/exact/multi-block files all occur.
inline TreeSpec random_tree(coldboot::Rng& rng, size_t max_files, size_t block_size) {
  TreeSpec tree;
  size_t n = 1 + rng.below(max_files);
  for (size_t i = 0; i < n; ++i) {
    std::string name = "d" + std::to_string(rng.below(3)) + "/f" + std::to_string(i) + ".bin";
    uint64_t kind = rng.below(5);
    size_t size;
    switch (kind) {
      case 0: size = 0; break;
      case 1: size = rng.below(block_size); break;
      case 2: size = block_size; break;
      case 3: size = block_size + 1 + rng.below(block_size); break;
      default: size = rng.below(4 * block_size); break;
    }
    tree[name] = random_bytes(rng, size);
  }
  return tree;
}

// Reads every regular file under root into a map keyed by "/"-prefixed
// relative path.
inline TreeSpec snapshot_tree(const fs::path& root) {
  TreeSpec out;
  if (!fs::exists(root)) return out;
  for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
    if (!it->is_regular_file()) continue;
    std::string rel = it->path().lexically_relative(root).generic_string();
    out["/" + rel] = coldboot::read_file(it->path());
  }
  return out;
}

}  // namespace cbtest

#endif  // COLDBOOT_TESTS_SUPPORT_HPP_
