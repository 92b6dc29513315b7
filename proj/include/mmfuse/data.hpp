// SPDX-License-Identifier: Apache-2.0
#pragma once

// Post records, JSONL datasets and stratified splitting.
//
// One JSON object per line:
//   {"id": "...", "caption": "...", "ocr_text": "...", "hashtags": ["#a", ...],
//    "image": "relative/path.ppm" | null, "label": 0 | 1 | null, "date": "YYYY-MM-DD"}
// `id` and `caption` are required; `date` is optional. Image paths resolve
// against the directory holding the JSONL file.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

struct Post {
  std::string id;
  std::string caption;
  std::string ocr_text;
  std::vector<std::string> hashtags;
  std::string image_path;  // as written in the file; empty when absent
  std::shared_ptr<const Tensor<float>> image;
  std::optional<int> label;
  std::optional<std::string> date;
};

enum class SplitTag { unsplit, train, val, test };

const char* split_name(SplitTag tag);

struct Dataset {
  std::vector<Post> posts;
  SplitTag split = SplitTag::unsplit;

  std::size_t size() const { return posts.size(); }
  bool empty() const { return posts.empty(); }
  std::size_t count_label(int y) const;
  bool all_labeled() const;
};

struct LoadOptions {
  bool skip_bad = false;     // drop malformed lines instead of failing
  bool load_images = true;
  bool require_labels = false;
};

struct LoadReport {
  std::vector<std::string> errors;    // "line N: ..."
  std::vector<std::string> warnings;
};

/// Throws DataError listing every bad line unless skip_bad is set.
Dataset load_jsonl(const std::filesystem::path& path, const LoadOptions& opts = {}, LoadReport* report = nullptr);

/// Writes posts in order. Images are not written; only their paths.
void save_jsonl(const std::filesystem::path& path, const Dataset& data);
std::string post_to_json(const Post& post);

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Per-class seeded shuffles merged in proportion, then cut contiguously.
/// Sizes are floor(n * r_i / sum r) for val and test, the rest to train.
/// Warns (via `warning`) when n < 10.
Splits split(const Dataset& data, std::uint64_t seed, const std::vector<std::size_t>& ratios = {7, 1, 2},
             std::string* warning = nullptr);

}  // namespace mmfuse
