// SPDX-License-Identifier: Apache-2.0
#include "mmfuse/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>

#include "mmfuse/embeddings.hpp"
#include "mmfuse/errors.hpp"
#include "mmfuse/tensor_io.hpp"

namespace mmfuse {

namespace {

using Rng64 = std::mt19937_64;

// Hashtag roles by position in synth_hashtags().
constexpr std::size_t kWeakPos = 0;  // 3 tags
constexpr std::size_t kWeakNeg = 3;  // 3 tags
constexpr std::size_t kNeutral = 6;  // 4 tags
constexpr std::size_t kGroup = 3;

std::size_t uniform_index(Rng64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

bool coin(Rng64& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

std::string filler(Rng64& rng, std::size_t lo, std::size_t hi) {
  const auto& words = synth_words();
  const std::size_t n = std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out.push_back(' ');
    out += words[1 + uniform_index(rng, words.size() - 1)];
  }
  return out;
}

std::string insert_word(Rng64& rng, const std::string& text, const std::string& word) {
  std::vector<std::string> toks;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t j = text.find(' ', i);
    if (j == std::string::npos) j = text.size();
    toks.push_back(text.substr(i, j - i));
    i = j + 1;
  }
  toks.insert(toks.begin() + static_cast<std::ptrdiff_t>(uniform_index(rng, toks.size() + 1)), word);
  std::string out;
  for (std::size_t k = 0; k < toks.size(); ++k) {
    if (k) out.push_back(' ');
    out += toks[k];
  }
  return out;
}

std::string tag_text(Rng64& rng, const std::string& tag) {
  std::string t = "#" + tag;
  if (coin(rng, 0.3)) t[1] = static_cast<char>(t[1] - 'a' + 'A');
  return t;
}

std::shared_ptr<const Tensor<float>> stripes(Rng64& rng, int vertical, const SynthOptions& opts) {
  const std::size_t s = opts.image_size;
  Tensor<float> img({s, s, 3});
  const std::size_t phase = uniform_index(rng, 4);
  std::normal_distribution<double> noise(0.0, opts.pixel_sigma);
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const std::size_t coord = vertical ? x : y;
      const double base = ((coord + phase) / 2) % 2 == 0 ? 1.0 : 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        img[(y * s + x) * 3 + c] = static_cast<float>(std::clamp(base + noise(rng), 0.0, 1.0));
      }
    }
  return std::make_shared<const Tensor<float>>(std::move(img));
}

std::string pick(Rng64& rng, std::size_t first) { return synth_hashtags()[first + uniform_index(rng, kGroup)]; }

void add_text(Rng64& rng, Post& p, int sentinel) {
  p.caption = filler(rng, 5, 12);
  p.ocr_text = coin(rng, 0.5) ? filler(rng, 1, 6) : "";
  if (!sentinel) return;
  std::string& field = coin(rng, 0.7) ? p.caption : p.ocr_text;
  field = insert_word(rng, field, kSentinelWord);
}

}  // namespace

SynthSpec parse_synth_spec(const std::string& name) {
  if (name == "uni") return SynthSpec::uni;
  if (name == "xor") return SynthSpec::xor_;
  throw ConfigError("unknown synthetic spec '" + name + "' (expected uni or xor)");
}

const std::vector<std::string>& synth_words() {
  static const std::vector<std::string> words{
      kSentinelWord, "health", "freedom", "public",  "parent",   "choice", "trust",  "science",
      "the",         "a",      "of",      "and",     "to",       "in",     "is",     "it",
      "for",         "on",     "with",    "this",    "my",       "our",    "your",   "we",
      "they",        "today",  "doctor",  "nurse",   "clinic",   "child",  "baby",   "school",
      "shot",        "dose",   "study",   "report",  "news",     "story",  "family", "friend",
      "morning",     "night",  "week",    "year",    "read",     "share",  "think",  "know",
      "feel",        "see",    "new",     "good",    "bad",      "big",    "small",  "true",
      "real",        "safe",   "risk",    "question", "answer",  "right",  "time",   "people"};
  return words;
}

const std::vector<std::string>& synth_hashtags() {
  static const std::vector<std::string> tags{
      "vaccinetruth",    "bigpharma",    "healthfreedom",                   // weak, label 1
      "vaccineswork",    "getvaccinated", "publichealth",                   // weak, label 0
      "mondaymood",      "familytime",    "sunset",       "coffee"};        // neutral
  return tags;
}

Dataset gen_synthetic(std::size_t n, std::uint64_t seed, SynthSpec spec, const SynthOptions& opts) {
  if (n % 2 != 0) throw ConfigError("synthetic size must be even, got " + std::to_string(n));
  if (n < 8) throw ConfigError("synthetic size must be at least 8, got " + std::to_string(n));
  if (opts.image_size < 4) throw ConfigError("synthetic image size must be at least 4");
  Rng64 rng(seed);
  std::vector<int> labels(n, 0);
  std::fill(labels.begin() + static_cast<std::ptrdiff_t>(n / 2), labels.end(), 1);
  std::shuffle(labels.begin(), labels.end(), rng);
  // Kinds in proportion 2 : 1 : 2 (image+text, image+hashtag, text+hashtag).

  Dataset data;
  data.posts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    Post p;
    char id[32];
    std::snprintf(id, sizeof id, "p%05zu", i);
    p.id = id;
    p.label = y;
    char date[16];
    std::snprintf(date, sizeof date, "2019-10-%02zu", i % 7 + 1);
    p.date = date;

    std::vector<std::string> tags;
    if (spec == SynthSpec::uni) {
      const int img = y ^ static_cast<int>(coin(rng, opts.noise));
      const int txt = y ^ static_cast<int>(coin(rng, opts.noise));
      const int tag = y ^ static_cast<int>(coin(rng, opts.noise));
      p.image = stripes(rng, img, opts);
      add_text(rng, p, txt);
      tags.push_back(pick(rng, tag ? kWeakPos : kWeakNeg));
    } else {
      const int img = static_cast<int>(coin(rng, 0.5));
      p.image = stripes(rng, img, opts);
      add_text(rng, p, y ^ img);
      const int weak = coin(rng, opts.weak_cue) ? y : 1 - y;
      tags.push_back(pick(rng, weak ? kWeakPos : kWeakNeg));
    }
    const std::size_t extra = uniform_index(rng, 3);
    for (std::size_t k = 0; k < extra; ++k) tags.push_back(synth_hashtags()[kNeutral + uniform_index(rng, 4)]);
    std::shuffle(tags.begin(), tags.end(), rng);
    for (const auto& t : tags) p.hashtags.push_back(tag_text(rng, t));
    if (p.image) p.image_path = "images/" + p.id + ".mmt";
    data.posts.push_back(std::move(p));
  }
  return data;
}

std::filesystem::path write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& p : data.posts) {
    if (p.image_path.empty() || !p.image) continue;
    const auto path = dir / p.image_path;
    std::filesystem::create_directories(path.parent_path());
    save_mmt1(path, *p.image);
  }
  const auto jsonl = dir / "data.jsonl";
  save_jsonl(jsonl, data);
  return jsonl;
}

XorCues xor_cues(const Post& post) {
  XorCues c{-1, -1, -1, post.label.value_or(-1)};
  if (post.image) {
    // Stripe orientation: vertical stripes vary along x, so row-wise
    // neighbours differ more than column-wise ones.
    const auto& img = *post.image;
    const std::size_t h = img.dim(0), w = img.dim(1);
    double dx = 0, dy = 0;
    for (std::size_t y = 0; y + 1 < h; ++y)
      for (std::size_t x = 0; x + 1 < w; ++x) {
        dx += std::abs(img[(y * w + x + 1) * 3] - img[(y * w + x) * 3]);
        dy += std::abs(img[((y + 1) * w + x) * 3] - img[(y * w + x) * 3]);
      }
    c.image = dx > dy ? 1 : 0;
  }
  const bool has_text = !post.caption.empty() || !post.ocr_text.empty();
  if (has_text) {
    c.text = 0;
    for (const auto* field : {&post.caption, &post.ocr_text})
      for (const auto& tok : tokenize(*field))
        if (tok == kSentinelWord) c.text = 1;
  }
  const auto& tags = synth_hashtags();
  for (const auto& raw : post.hashtags) {
    const std::string t = normalize_hashtag(raw);
    const auto pos = static_cast<std::size_t>(std::find(tags.begin(), tags.end(), t) - tags.begin());
    if (pos < kWeakNeg) c.weak = 1;
    else if (pos < kNeutral) c.weak = 0;
  }
  return c;
}

}  // namespace mmfuse
