// SPDX-License-Identifier: Apache-2.0
#include "mmfuse/embeddings.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>

#include "mmfuse/errors.hpp"
#include "mmfuse/simd.hpp"

namespace mmfuse {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_word_byte(unsigned char c) { return c >= 0x80 || std::isalnum(c) || c == '_'; }
char lower(unsigned char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c); }

// Byte length of the UTF-8 sequence starting at s[i]; malformed bytes count as one.
std::size_t utf8_len(std::string_view s, std::size_t i) {
  const unsigned char c = static_cast<unsigned char>(s[i]);
  std::size_t n = 1;
  if (c >= 0xF0 && c < 0xF8) n = 4;
  else if (c >= 0xE0) n = c < 0xF0 ? 3 : 1;
  else if (c >= 0xC0) n = 2;
  if (i + n > s.size()) return 1;
  for (std::size_t k = 1; k < n; ++k)
    if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return 1;
  return n;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t end = i;
    while (end < text.size() && !is_space(static_cast<unsigned char>(text[end]))) ++end;
    if (end == i) break;
    const std::string_view chunk = text.substr(i, end - i);
    i = end;
    if (chunk.front() == '#' || chunk.front() == '@') continue;
    std::string word;
    for (char ch : chunk) {
      const auto c = static_cast<unsigned char>(ch);
      if (is_word_byte(c)) {
        word.push_back(lower(c));
        continue;
      }
      if (!word.empty()) out.push_back(std::move(word));
      word.clear();
      out.emplace_back(1, ch);
    }
    if (!word.empty()) out.push_back(std::move(word));
  }
  return out;
}

std::string normalize_hashtag(std::string_view tag) {
  std::size_t start = 0;
  while (start < tag.size() && tag[start] == '#') ++start;
  std::string out;
  for (char ch : tag.substr(start)) {
    const auto c = static_cast<unsigned char>(ch);
    if (c >= 0x80 || std::isalnum(c)) out.push_back(lower(c));
  }
  if (out.empty()) throw InvalidHashtagError("hashtag '" + std::string(tag) + "' is empty after normalization");
  return out;
}

std::uint32_t fnv1a32(std::string_view bytes) {
  std::uint32_t h = 2166136261u;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 16777619u;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<std::string> char_ngrams(std::string_view word, int min_n, int max_n) {
  const std::string marked = "<" + std::string(word) + ">";
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < marked.size(); i += utf8_len(marked, i)) starts.push_back(i);
  starts.push_back(marked.size());
  const std::size_t cps = starts.size() - 1;
  std::vector<std::string> out;
  for (std::size_t s = 0; s < cps; ++s)
    for (int n = min_n; n <= max_n; ++n) {
      if (s + static_cast<std::size_t>(n) > cps) break;
      out.push_back(marked.substr(starts[s], starts[s + n] - starts[s]));
    }
  return out;
}

// --- Vocab ----------------------------------------------------------------

Vocab::Vocab() {
  add(kPadToken);
  add(kUnkToken);
  add(kOcrToken);
}

std::uint32_t Vocab::add(std::string_view w) {
  auto [it, inserted] = index_.emplace(std::string(w), static_cast<std::uint32_t>(words_.size()));
  if (inserted) words_.emplace_back(w);
  return it->second;
}

std::uint32_t Vocab::index(std::string_view w) const {
  auto it = index_.find(std::string(w));
  return it == index_.end() ? kUnkIndex : it->second;
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& corpus, std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : corpus)
    for (const auto& tok : doc) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (const auto& [w, c] : ranked) {
    if (v.size() >= max_size) break;
    v.add(w);
  }
  return v;
}

std::uint64_t Vocab::hash() const {
  std::string joined;
  for (const auto& w : words_) {
    joined += w;
    joined.push_back('\n');
  }
  return fnv1a64(joined);
}

void Vocab::save(std::ostream& out) const {
  for (std::size_t i = 2; i < words_.size(); ++i) out << words_[i] << '\n';
}

Vocab Vocab::load(std::istream& in) {
  Vocab v;
  v.words_.resize(2);
  v.index_.erase(std::string(kOcrToken));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw DataError("vocabulary line " + std::to_string(lineno) + " is empty");
    if (v.contains(line)) throw DataError("vocabulary line " + std::to_string(lineno) + " repeats '" + line + "'");
    v.add(line);
  }
  if (!v.contains(kOcrToken)) throw DataError("vocabulary lacks the OCR separator token");
  return v;
}

// --- EmbeddingTable --------------------------------------------------------

template <Real T>
EmbeddingTable<T> EmbeddingTable<T>::create(Vocab vocab, std::size_t dim, std::size_t num_buckets, Rng& rng,
                                            bool trainable) {
  if (dim == 0 || num_buckets == 0) throw ConfigError("embedding width and bucket count must be positive");
  EmbeddingTable t;
  const double a = std::sqrt(3.0 / static_cast<double>(dim));
  std::uniform_real_distribution<double> u(-a, a);
  t.vectors = Parameter<T>{"embed.vectors", Tensor<T>({vocab.size(), dim}), trainable};
  for (std::size_t i = dim; i < t.vectors.value.size(); ++i) t.vectors.value[i] = static_cast<T>(u(rng));
  t.buckets = Parameter<T>{"embed.buckets", Tensor<T>({num_buckets, dim}), trainable};
  for (auto& v : t.buckets.value.values()) v = static_cast<T>(u(rng));
  t.vocab = std::move(vocab);
  return t;
}

template <Real T>
WordRef EmbeddingTable<T>::lookup(std::string_view word) const {
  WordRef ref;
  if (word.empty() || word == kPadToken) return ref;
  if (vocab.contains(word)) {
    ref.row = vocab.index(word);
    return ref;
  }
  ref.row = kUnkIndex;
  for (const auto& g : char_ngrams(word, min_n, max_n))
    ref.buckets.push_back(fnv1a32(g) % static_cast<std::uint32_t>(num_buckets()));
  return ref;
}

template <Real T>
Tensor<T> EmbeddingTable<T>::embed(const WordRef& ref) const {
  const std::size_t d = dim();
  Tensor<T> out({d}, T{0});
  if (ref.buckets.empty()) {
    std::copy_n(vectors.value.data() + ref.row * d, d, out.data());
    return out;
  }
  // Accumulate in the same order as embed_refs so both paths agree bitwise.
  const auto& kern = simd::kernels<T>();
  const T w = T{1} / static_cast<T>(ref.buckets.size());
  for (std::uint32_t b : ref.buckets) kern.axpy(w, buckets.value.data() + b * d, out.data(), d);
  return out;
}

template <Real T>
Var<T> embed_refs(Tape<T>& tape, const EmbeddingTable<T>& table, std::span<const WordRef> refs) {
  if (refs.empty()) throw DimensionError("embed_refs: no words");
  const std::size_t d = table.dim();
  const std::size_t n = refs.size();
  Tensor<T> out({n, d}, T{0});
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<T> row = table.embed(refs[i]);
    std::copy_n(row.data(), d, out.data() + i * d);
  }
  Var<T> vec = tape.param(table.vectors);
  Var<T> buck = tape.param(table.buckets);
  std::vector<WordRef> saved(refs.begin(), refs.end());
  return tape.push("embed", std::move(out), {vec, buck},
                   [vec, buck, d, saved = std::move(saved)](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
                     auto* gv = t.grad_slot(vec);
                     auto* gb = t.grad_slot(buck);
                     const auto& kern = simd::kernels<T>();
                     for (std::size_t i = 0; i < saved.size(); ++i) {
                       const WordRef& r = saved[i];
                       const T* src = g.data() + i * d;
                       if (r.buckets.empty()) {
                         if (gv && r.row != kPadIndex) kern.axpy(T{1}, src, gv->data() + r.row * d, d);
                       } else if (gb) {
                         const T w = T{1} / static_cast<T>(r.buckets.size());
                         for (std::uint32_t b : r.buckets) kern.axpy(w, src, gb->data() + b * d, d);
                       }
                     }
                   });
}

template <Real T>
std::pair<Tensor<T>, Mask> embed_sequence(const std::vector<std::string>& tokens, const EmbeddingTable<T>& table,
                                          std::size_t max_len) {
  if (max_len < 1) throw ConfigError("embed_sequence: max_len must be >= 1");
  const std::size_t d = table.dim();
  Tensor<T> out({max_len, d}, T{0});
  Mask mask(max_len, false);
  const std::size_t n = std::min(tokens.size(), max_len);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<T> row = table.embed_word(tokens[i]);
    std::copy_n(row.data(), d, out.data() + i * d);
    mask[i] = true;
  }
  return {std::move(out), std::move(mask)};
}

template <Real T>
AnchorVector<T> build_anchor(const std::vector<std::string>& hashtags, const EmbeddingTable<T>& table,
                             const Tensor<T>& w, const Tensor<T>& b) {
  if (hashtags.empty()) throw ConfigError("anchor hashtag list is empty");
  if (w.rank() != 2 || w.dim(1) != table.dim() || b.shape() != Shape{w.dim(0)}) {
    throw DimensionError("anchor: hidden layer " + shape_str(w.shape()) + " / " + shape_str(b.shape()) +
                         " does not fit embedding width " + std::to_string(table.dim()));
  }
  const std::size_t h = w.dim(0), d = w.dim(1);
  const auto& kern = simd::kernels<T>();
  AnchorVector<T> anchor{Tensor<T>({h}, T{0}), {}};
  for (const auto& tag : hashtags) {
    std::string norm = normalize_hashtag(tag);
    Tensor<T> e = table.embed_word(norm);
    for (std::size_t j = 0; j < h; ++j) {
      anchor.value[j] += std::tanh(kern.dot(w.data() + j * d, e.data(), d) + b[j]);
    }
    anchor.source_hashtags.push_back(std::move(norm));
  }
  for (auto& v : anchor.value.values()) v /= static_cast<T>(hashtags.size());
  return anchor;
}

const std::vector<std::string>& default_anchor_hashtags() {
  static const std::vector<std::string> tags{"#vaccinetruth",    "#vaccineinjury", "#vaccinecauseautism",
                                             "#vaccineawareness", "#fascism",       "#whistleblower",
                                             "#bigpharma",        "#informedconsent"};
  return tags;
}

#define MMFUSE_INSTANTIATE(T)                                                                               \
  template struct EmbeddingTable<T>;                                                                        \
  template Var<T> embed_refs(Tape<T>&, const EmbeddingTable<T>&, std::span<const WordRef>);                 \
  template std::pair<Tensor<T>, Mask> embed_sequence(const std::vector<std::string>&, const EmbeddingTable<T>&, \
                                                     std::size_t);                                          \
  template AnchorVector<T> build_anchor(const std::vector<std::string>&, const EmbeddingTable<T>&,          \
                                        const Tensor<T>&, const Tensor<T>&);

MMFUSE_INSTANTIATE(float)
MMFUSE_INSTANTIATE(double)

}  // namespace mmfuse
