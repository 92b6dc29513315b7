// SPDX-License-Identifier: Apache-2.0
#include "mmfuse/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "mmfuse/errors.hpp"

namespace mmfuse {
namespace {

constexpr std::array<char, 4> kMagic{'M', 'M', 'T', '1'};
constexpr std::uint32_t kMaxRank = 16;

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw DataError("MMT1: truncated header");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

}  // namespace

void write_mmt1(std::ostream& out, const Tensor<float>& t) {
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw DataError("MMT1: write failed");
}

Tensor<float> read_mmt1(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kMagic) throw DataError("MMT1: bad magic");
  const std::uint32_t rank = get_u32(in);
  if (rank > kMaxRank) throw DataError("MMT1: rank " + std::to_string(rank) + " too large");
  Shape shape(rank);
  for (auto& e : shape) e = get_u32(in);
  const std::size_t n = shape_size(shape);
  std::vector<float> data(n);
  for (auto& v : data) v = std::bit_cast<float>(get_u32(in));
  return Tensor<float>(std::move(shape), std::move(data));
}

void save_mmt1(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_mmt1(out, t);
}

Tensor<float> load_mmt1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return read_mmt1(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Tensor<float> load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  auto next_token = [&]() {
    std::string tok;
    char c = 0;
    while (in.get(c)) {
      if (c == '#') {
        in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        tok += c;
        break;
      }
    }
    while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) tok += c;
    return tok;
  };
  if (next_token() != "P6") throw DataError(path.string() + ": not a binary PPM (P6)");
  const std::size_t w = std::stoul(next_token());
  const std::size_t h = std::stoul(next_token());
  const unsigned long maxval = std::stoul(next_token());
  if (maxval == 0 || maxval > 255) throw DataError(path.string() + ": only 8-bit PPM supported");
  std::vector<unsigned char> raw(h * w * 3);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw DataError(path.string() + ": truncated pixel data");
  }
  std::vector<float> data(raw.size());
  std::transform(raw.begin(), raw.end(), data.begin(),
                 [maxval](unsigned char v) { return static_cast<float>(v) / static_cast<float>(maxval); });
  return Tensor<float>({h, w, 3}, std::move(data));
}

void save_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw DimensionError("save_ppm expects HxWx3, got " + shape_str(image.shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "P6\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
  for (float v : image.values()) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0f))));
  }
}

Tensor<float> load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  std::array<char, 2> head{};
  in.read(head.data(), 2);
  in.close();
  if (head[0] == 'P' && head[1] == '6') return load_ppm(path);
  return load_mmt1(path);
}

}  // namespace mmfuse
