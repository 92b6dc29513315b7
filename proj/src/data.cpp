// SPDX-License-Identifier: Apache-2.0
#include "mmfuse/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_set>

#include <json.hpp>

#include "mmfuse/errors.hpp"
#include "mmfuse/tensor_io.hpp"

namespace mmfuse {

using json = nlohmann::ordered_json;

const char* split_name(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
    case SplitTag::unsplit: break;
  }
  return "unsplit";
}

std::size_t Dataset::count_label(int y) const {
  return static_cast<std::size_t>(
      std::count_if(posts.begin(), posts.end(), [y](const Post& p) { return p.label && *p.label == y; }));
}

bool Dataset::all_labeled() const {
  return std::all_of(posts.begin(), posts.end(), [](const Post& p) { return p.label.has_value(); });
}

namespace {

std::string get_string(const json& obj, const char* key, bool required) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    if (required) throw DataError(std::string("missing required field '") + key + "'");
    return {};
  }
  if (!it->is_string()) throw DataError(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

Post parse_post(const json& obj, const std::filesystem::path& base, const LoadOptions& opts) {
  if (!obj.is_object()) throw DataError("line is not a JSON object");
  Post p;
  p.id = get_string(obj, "id", true);
  if (p.id.empty()) throw DataError("field 'id' is empty");
  p.caption = get_string(obj, "caption", true);
  p.ocr_text = get_string(obj, "ocr_text", false);
  if (auto it = obj.find("hashtags"); it != obj.end() && !it->is_null()) {
    if (!it->is_array()) throw DataError("field 'hashtags' must be an array");
    for (const auto& h : *it) {
      if (!h.is_string()) throw DataError("hashtags must be strings");
      p.hashtags.push_back(h.get<std::string>());
    }
  }
  p.image_path = get_string(obj, "image", false);
  if (auto it = obj.find("label"); it != obj.end() && !it->is_null()) {
    if (!it->is_number_integer() || (it->get<int>() != 0 && it->get<int>() != 1)) {
      throw DataError("field 'label' must be 0, 1 or null");
    }
    p.label = it->get<int>();
  }
  if (opts.require_labels && !p.label) throw DataError("post '" + p.id + "' has no label");
  if (auto it = obj.find("date"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) throw DataError("field 'date' must be a string");
    p.date = it->get<std::string>();
  }
  if (!p.image_path.empty() && opts.load_images) {
    try {
      p.image = std::make_shared<const Tensor<float>>(load_image(base / p.image_path));
    } catch (const std::exception& e) {
      throw DataError("image '" + p.image_path + "': " + e.what());
    }
  }
  return p;
}

}  // namespace

Dataset load_jsonl(const std::filesystem::path& path, const LoadOptions& opts, LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  const std::filesystem::path base = path.parent_path();
  Dataset data;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      Post p = parse_post(json::parse(line), base, opts);
      if (!ids.insert(p.id).second) throw DataError("duplicate id '" + p.id + "'");
      data.posts.push_back(std::move(p));
    } catch (const json::exception& e) {
      rep.errors.push_back("line " + std::to_string(lineno) + ": invalid JSON: " + e.what());
    } catch (const DataError& e) {
      rep.errors.push_back("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!rep.errors.empty() && !opts.skip_bad) {
    std::string msg = path.string() + ": " + std::to_string(rep.errors.size()) + " bad line(s)";
    for (const auto& e : rep.errors) msg += "\n  " + e;
    throw DataError(msg);
  }
  if (data.empty()) rep.warnings.push_back(path.string() + ": dataset is empty");
  return data;
}

std::string post_to_json(const Post& p) {
  json obj;
  obj["id"] = p.id;
  obj["caption"] = p.caption;
  obj["ocr_text"] = p.ocr_text;
  obj["hashtags"] = p.hashtags;
  obj["image"] = p.image_path.empty() ? json(nullptr) : json(p.image_path);
  obj["label"] = p.label ? json(*p.label) : json(nullptr);
  if (p.date) obj["date"] = *p.date;
  return obj.dump();
}

void save_jsonl(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& p : data.posts) out << post_to_json(p) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

Splits split(const Dataset& data, std::uint64_t seed, const std::vector<std::size_t>& ratios, std::string* warning) {
  if (ratios.size() != 3 || std::any_of(ratios.begin(), ratios.end(), [](std::size_t r) { return r == 0; })) {
    throw ConfigError("split ratios must be three positive integers");
  }
  const std::size_t n = data.size();
  if (n < 10 && warning) *warning = "only " + std::to_string(n) + " posts; split is degenerate";
  const std::size_t total = ratios[0] + ratios[1] + ratios[2];
  const std::size_t n_val = n * ratios[1] / total;
  const std::size_t n_test = n * ratios[2] / total;

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) (data.posts[i].label.value_or(0) == 1 ? pos : neg).push_back(i);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::shuffle(pos.begin(), pos.end(), rng);

  // Merge so that every prefix holds the two classes in proportion.
  std::vector<std::size_t> order;
  order.reserve(n);
  std::size_t a = 0, b = 0;
  while (a < neg.size() || b < pos.size()) {
    const bool take_neg =
        b == pos.size() || (a < neg.size() && (2 * a + 1) * pos.size() <= (2 * b + 1) * neg.size());
    order.push_back(take_neg ? neg[a++] : pos[b++]);
  }

  Splits s;
  s.train.split = SplitTag::train;
  s.val.split = SplitTag::val;
  s.test.split = SplitTag::test;
  const std::size_t n_train = n - n_val - n_test;
  for (std::size_t k = 0; k < n; ++k) {
    Dataset& dst = k < n_train ? s.train : (k < n_train + n_val ? s.val : s.test);
    dst.posts.push_back(data.posts[order[k]]);
  }
  return s;
}

}  // namespace mmfuse
