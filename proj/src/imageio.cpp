#include "quanet/imageio.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

namespace quanet {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_or_throw(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open '" + path + "'");
    return f;
}

}  // namespace

void write_png_rgb8(const std::string& path, const ImageU8& img) {
    require(img.height > 0 && img.width > 0 &&
                img.rgb.size() == static_cast<size_t>(img.height) * img.width * 3,
            "write_png_rgb8: inconsistent image buffer");
    FilePtr f = open_or_throw(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng failure while writing '" + path + "'");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = const_cast<png_bytep>(&img.rgb[static_cast<size_t>(y) * img.width * 3]);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ImageU8 read_png_rgb8(const std::string& path) {
    FilePtr f = open_or_throw(path, "rb");
    png_byte header[8];
    if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw IoError("'" + path + "' is not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng failure while reading '" + path + "'");
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    // normalize any colour type to 8-bit RGB
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (png_get_color_type(png, info) & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    ImageU8 img;
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.width = static_cast<int>(png_get_image_width(png, info));
    require(png_get_rowbytes(png, info) == static_cast<size_t>(img.width) * 3,
            "unexpected PNG row size in '" + path + "'");
    img.rgb.resize(static_cast<size_t>(img.height) * img.width * 3);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = &img.rgb[static_cast<size_t>(y) * img.width * 3];
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png_gray16(const std::string& path, const GridF& map) {
    require_shape(map.shape.rank() == 2, "write_png_gray16 expects a rank-2 map");
    const int H = map.shape[0], W = map.shape[1];
    float mx = 0.0f;
    for (float v : map.data) mx = std::max(mx, v);
    const float scale = mx > 0.0f ? 65535.0f / mx : 0.0f;

    FilePtr f = open_or_throw(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng failure while writing '" + path + "'");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, W, H, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<uint8_t> row(static_cast<size_t>(W) * 2);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            uint16_t v = static_cast<uint16_t>(
                std::lround(std::clamp(map.at(y, x) * scale, 0.0f, 65535.0f)));
            row[2 * x] = static_cast<uint8_t>(v >> 8);  // PNG is big-endian
            row[2 * x + 1] = static_cast<uint8_t>(v & 0xff);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

namespace {
constexpr char kDensityMagic[4] = {'Q', 'D', 'M', '1'};
}

void write_density(const std::string& path, const GridF& map) {
    require_shape(map.shape.rank() == 2, "write_density expects a rank-2 map");
    const int H = map.shape[0], W = map.shape[1];
    require(H > 0 && W > 0 && H <= 0xffff && W <= 0xffff,
            "density map sides must fit in uint16");
    FilePtr f = open_or_throw(path, "wb");
    uint8_t header[8];
    std::memcpy(header, kDensityMagic, 4);
    header[4] = static_cast<uint8_t>(H & 0xff);
    header[5] = static_cast<uint8_t>(H >> 8);
    header[6] = static_cast<uint8_t>(W & 0xff);
    header[7] = static_cast<uint8_t>(W >> 8);
    if (std::fwrite(header, 1, 8, f.get()) != 8)
        throw IoError("short write on '" + path + "'");
    static_assert(sizeof(float) == 4);
    if (std::fwrite(map.data.data(), 4, map.data.size(), f.get()) != map.data.size())
        throw IoError("short write on '" + path + "'");
}

GridF read_density(const std::string& path) {
    FilePtr f = open_or_throw(path, "rb");
    uint8_t header[8];
    if (std::fread(header, 1, 8, f.get()) != 8)
        throw IoError("'" + path + "': truncated header");
    if (std::memcmp(header, kDensityMagic, 4) != 0)
        throw IoError("'" + path + "': bad density-file magic");
    const int H = header[4] | (header[5] << 8);
    const int W = header[6] | (header[7] << 8);
    GridF map(Shape{H, W});
    if (std::fread(map.data.data(), 4, map.data.size(), f.get()) != map.data.size())
        throw IoError("'" + path + "': truncated payload");
    return map;
}

ImageU8 resize_rgb8(const ImageU8& img, int out_h, int out_w) {
    require(out_h > 0 && out_w > 0, "resize target must be positive");
    ImageU8 out;
    out.height = out_h;
    out.width = out_w;
    out.rgb.resize(static_cast<size_t>(out_h) * out_w * 3);
    const double sy = static_cast<double>(img.height) / out_h;
    const double sx = static_cast<double>(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, img.height - 1);
        int y1 = std::min(y0 + 1, img.height - 1);
        double wy = std::clamp(fy - y0, 0.0, 1.0);
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, img.width - 1);
            int x1 = std::min(x0 + 1, img.width - 1);
            double wx = std::clamp(fx - x0, 0.0, 1.0);
            for (int c = 0; c < 3; ++c) {
                double v = (1 - wy) * ((1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c)) +
                           wy * ((1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c));
                out.at(y, x, c) = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    }
    return out;
}

GridF to_float(const ImageU8& img) {
    GridF out(Shape{img.height, img.width, 3});
    for (size_t i = 0; i < img.rgb.size(); ++i)
        out.data[i] = static_cast<float>(img.rgb[i]) / 255.0f;
    return out;
}

ImageU8 to_u8(const GridF& img) {
    require_shape(img.shape.rank() == 3 && img.shape[2] == 3, "to_u8 expects [H x W x 3]");
    ImageU8 out;
    out.height = img.shape[0];
    out.width = img.shape[1];
    out.rgb.resize(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i)
        out.rgb[i] = static_cast<uint8_t>(
            std::lround(std::clamp(img.data[i], 0.0f, 1.0f) * 255.0f));
    return out;
}

}  // namespace quanet
