#pragma once

#include <filesystem>

#include "moes/tensor.hpp"

namespace moes {

// 8-bit binary netpbm. Reads P5 (-> [1,H,W]) or P6 (-> [3,H,W]) with
// maxval 255, values scaled to [0,1]. Throws FormatError with the byte
// offset of the first malformed field.
Tensor read_image_pgm(const std::filesystem::path& path);
// Writes [1,H,W] as P5 or [3,H,W] as P6. Values are clamped to [0,1] and
// rounded to the nearest of 256 levels.
void write_image_pgm(const std::filesystem::path& path, const Tensor& image);

// Grayscale PFM ("Pf"), little-endian (negative scale), rows stored bottom
// to top. Reads into [1,H,W]; a color "PF" file is a FormatError.
Tensor read_density_pfm(const std::filesystem::path& path);
void write_density_pfm(const std::filesystem::path& path, const Tensor& map);

// The value an 8-bit round trip produces for v.
double quantize_8bit(double v);

}  // namespace moes
