// SPDX-License-Identifier: Apache-2.0
#pragma once

// MMT1 raw tensor files: magic "MMT1", u32 LE rank, rank x u32 LE extents,
// then row-major f32 LE values. Used for images, parameters and feature maps.

#include <filesystem>
#include <iosfwd>
#include <string>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

void write_mmt1(std::ostream& out, const Tensor<float>& t);
Tensor<float> read_mmt1(std::istream& in);

void save_mmt1(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> load_mmt1(const std::filesystem::path& path);

/// Binary 8-bit PPM (P6) as an HxWx3 tensor scaled by 1/255.
Tensor<float> load_ppm(const std::filesystem::path& path);
void save_ppm(const std::filesystem::path& path, const Tensor<float>& image);

/// Dispatches on the file magic: "MMT1" or "P6".
Tensor<float> load_image(const std::filesystem::path& path);

}  // namespace mmfuse
