// SPDX-License-Identifier: Apache-2.0
#pragma once

// Tokenization, vocabulary and a word table with hashed character n-gram
// fallback for out-of-vocabulary words (hashtags are usually OOV).

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmfuse/autodiff.hpp"

namespace mmfuse {

inline constexpr std::uint32_t kPadIndex = 0;
inline constexpr std::uint32_t kUnkIndex = 1;
inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";
/// Separates caption tokens from OCR tokens in the text stream.
inline constexpr std::string_view kOcrToken = "<ocr>";

/// Lowercases, splits on whitespace and punctuation, drops #hashtags and
/// @mentions. Bytes >= 0x80 are kept as word characters.
std::vector<std::string> tokenize(std::string_view text);

/// "#VaccineInjury" -> "vaccineinjury". Throws InvalidHashtagError when
/// nothing is left.
std::string normalize_hashtag(std::string_view tag);

std::uint32_t fnv1a32(std::string_view bytes);
std::uint64_t fnv1a64(std::string_view bytes);

/// Character n-grams (counted in code points) of "<word>", n in [min_n, max_n],
/// in order of start position then length. Repeats are kept.
std::vector<std::string> char_ngrams(std::string_view word, int min_n = 3, int max_n = 6);

class Vocab {
 public:
  /// PAD, UNK and the OCR separator only.
  Vocab();

  /// Most frequent tokens first (ties alphabetical), capped at max_size
  /// entries including the reserved ones.
  static Vocab build(const std::vector<std::vector<std::string>>& corpus, std::size_t max_size);

  std::size_t size() const { return words_.size(); }
  bool contains(std::string_view w) const { return index_.count(std::string(w)) != 0; }
  /// kUnkIndex when absent.
  std::uint32_t index(std::string_view w) const;
  const std::string& word(std::size_t i) const { return words_.at(i); }
  /// Appends if new; returns the index either way.
  std::uint32_t add(std::string_view w);
  /// Stable across runs; used to pair checkpoints with their vocabulary.
  std::uint64_t hash() const;

  /// One token per line starting at index 2 (PAD and UNK are implicit).
  void save(std::ostream& out) const;
  static Vocab load(std::istream& in);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// Resolved lookup of one word: a vocabulary row, or the bucket list of its
/// n-grams when `buckets` is non-empty.
struct WordRef {
  std::uint32_t row = kPadIndex;
  std::vector<std::uint32_t> buckets;

  bool is_pad() const { return buckets.empty() && row == kPadIndex; }
};

template <Real T>
struct EmbeddingTable {
  Vocab vocab;
  Parameter<T> vectors;  // [V x d]
  Parameter<T> buckets;  // [B x d]
  int min_n = 3;
  int max_n = 6;

  static EmbeddingTable create(Vocab vocab, std::size_t dim, std::size_t num_buckets, Rng& rng,
                               bool trainable = false);

  std::size_t dim() const { return vectors.value.dim(1); }
  std::size_t num_buckets() const { return buckets.value.dim(0); }

  WordRef lookup(std::string_view word) const;
  Tensor<T> embed(const WordRef& ref) const;
  /// In-vocab row, or the mean of the word's n-gram bucket vectors.
  Tensor<T> embed_word(std::string_view word) const { return embed(lookup(word)); }

  std::vector<Parameter<T>*> parameters() { return {&vectors, &buckets}; }
};

/// Differentiable gather of `refs` into [n x d] (n >= 1). The PAD row
/// receives no gradient.
template <Real T>
Var<T> embed_refs(Tape<T>& tape, const EmbeddingTable<T>& table, std::span<const WordRef> refs);

/// Truncated/padded to max_len rows; mask is true on real tokens.
template <Real T>
std::pair<Tensor<T>, Mask> embed_sequence(const std::vector<std::string>& tokens, const EmbeddingTable<T>& table,
                                          std::size_t max_len);

/// Frozen mean of the hidden representations tanh(W e + b) of a list of
/// hashtags.
template <Real T>
struct AnchorVector {
  Tensor<T> value;
  std::vector<std::string> source_hashtags;
};

template <Real T>
AnchorVector<T> build_anchor(const std::vector<std::string>& hashtags, const EmbeddingTable<T>& table,
                             const Tensor<T>& w, const Tensor<T>& b);

/// Eight hashtags common in antivaccine posts.
const std::vector<std::string>& default_anchor_hashtags();

}  // namespace mmfuse
