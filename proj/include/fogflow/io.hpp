#pragma once

#include <string>

#include "fogflow/grid.hpp"

namespace fogflow {

// Middlebury .flo: "PIEH" magic, little-endian int32 width/height, then
// row-major interleaved float32 (u, v). Values round through float32.
FlowField read_flo(const std::string& path);
void write_flo(const std::string& path, const FlowField& f);

// PFM: "Pf" (1 channel) or "PF" (3 channels), dimensions, a scale line whose
// sign encodes endianness (negative = little-endian), rows stored bottom-up.
ImageGrid read_pfm(const std::string& path);
void write_pfm(const std::string& path, const ImageGrid& g);

// Binary PPM (P6, maxval 255). Writing quantizes [0,1] to 8 bits; reading
// maps bytes back to [0,1]. Accepts 1- or 3-channel grids on write
// (single channel is replicated).
ImageGrid read_ppm(const std::string& path);
void write_ppm(const std::string& path, const ImageGrid& g);

}  // namespace fogflow
