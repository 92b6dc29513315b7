// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic multimodal posts with controlled per-modality label signal.
//
// uni: every post carries all three modalities; each holds its own copy of
//      the label (stripe orientation, sentinel word, cue hashtag), flipped
//      independently with probability `noise`.
// xor: y = stripe orientation XOR sentinel presence on every post, plus a
//      weak label hashtag that agrees with y 60% of the time. Image or text
//      alone carry no signal (0.5), hashtags alone 0.6, image and text
//      together determine y.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmfuse/data.hpp"

namespace mmfuse {

enum class SynthSpec { uni, xor_ };

SynthSpec parse_synth_spec(const std::string& name);

struct SynthOptions {
  double noise = 0.2;         // uni only
  double weak_cue = 0.6;      // xor: agreement of the weak label hashtag
  double pixel_sigma = 0.1;
  std::size_t image_size = 32;
};

/// The word every text cue is built on.
inline constexpr const char* kSentinelWord = "microchip";

const std::vector<std::string>& synth_words();
const std::vector<std::string>& synth_hashtags();

/// Pure function of (n, seed, spec, opts). Images are held in memory with
/// paths "images/<id>.mmt". Throws ConfigError for odd n or n < 8.
Dataset gen_synthetic(std::size_t n, std::uint64_t seed, SynthSpec spec, const SynthOptions& opts = {});

/// Writes <dir>/data.jsonl and the referenced MMT1 images; returns the JSONL path.
std::filesystem::path write_dataset(const Dataset& data, const std::filesystem::path& dir);

/// Generator-side cues of one post, for checking achievable accuracy.
struct XorCues {
  int image;  // stripe bit, -1 when absent
  int text;   // sentinel bit, -1 when absent
  int weak;   // label hashtag bit, -1 when absent
  int label;
};

/// Recovers the cues of a generated post from its content.
XorCues xor_cues(const Post& post);

}  // namespace mmfuse
