#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "quanet/grid.hpp"

namespace quanet {

// 8-bit RGB image, row-major, channels interleaved.
struct ImageU8 {
    int height = 0, width = 0;
    std::vector<uint8_t> rgb;  // height * width * 3

    uint8_t& at(int y, int x, int c) {
        return rgb[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
    uint8_t at(int y, int x, int c) const {
        return rgb[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
};

void write_png_rgb8(const std::string& path, const ImageU8& img);
ImageU8 read_png_rgb8(const std::string& path);

// Density visualization: map scaled to the full 16-bit range.
void write_png_gray16(const std::string& path, const GridF& map);

// Exact float32 round-trip for density maps. 8-byte header: magic "QDM1",
// then height and width as little-endian uint16; payload is row-major
// little-endian float32.
void write_density(const std::string& path, const GridF& map);
GridF read_density(const std::string& path);

// Bilinear resize of an 8-bit RGB image (used by the dataset ingester).
ImageU8 resize_rgb8(const ImageU8& img, int out_h, int out_w);

// [0,255] u8 -> [0,1] float [H x W x 3]
GridF to_float(const ImageU8& img);
ImageU8 to_u8(const GridF& img);

}  // namespace quanet
