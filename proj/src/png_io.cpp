#include "fsad/png_io.hpp"

#include <cstdio>
#include <memory>

#include <png.h>

#include "fsad/error.hpp"

namespace fsad {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
    auto* err = static_cast<std::string*>(png_get_error_ptr(png));
    if (err) *err = msg;
    png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

} // namespace

Mask read_mask_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw Error("cannot open mask '" + path.string() + "'");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw Error(path.string() + ": not a PNG file");

    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("libpng initialisation failed");
    }
    Mask mask;
    std::vector<png_byte> buffer;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(path.string() + ": " + err);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_packing(png);
    png_read_update_info(png, info);
    const auto width = png_get_image_width(png, info);
    const auto height = png_get_image_height(png, info);
    const auto channels = png_get_channels(png, info);
    const auto rowbytes = png_get_rowbytes(png, info);
    buffer.resize(rowbytes * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    mask.height = height;
    mask.width = width;
    mask.values.assign(static_cast<std::size_t>(width) * height, 0);
    for (png_uint_32 y = 0; y < height; ++y)
        for (png_uint_32 x = 0; x < width; ++x) {
            bool any = false;
            // alpha channel is ignored when present
            const unsigned color = (channels == 2 || channels == 4) ? channels - 1 : channels;
            for (unsigned c = 0; c < color; ++c) any |= rows[y][x * channels + c] != 0;
            mask.values[static_cast<std::size_t>(y) * width + x] = any ? 1 : 0;
        }
    return mask;
}

namespace {

void write_png(const std::filesystem::path& path, std::size_t height, std::size_t width, int bit_depth,
               const std::vector<png_bytep>& rows) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw Error("cannot write '" + path.string() + "'");
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(path.string() + ": " + err);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
    std::vector<png_byte> buf(mask.values.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = mask.values[i] ? 255 : 0;
    std::vector<png_bytep> rows(mask.height);
    for (std::size_t y = 0; y < mask.height; ++y) rows[y] = buf.data() + y * mask.width;
    write_png(path, mask.height, mask.width, 8, rows);
}

void write_gray16_png(const std::filesystem::path& path, std::size_t height, std::size_t width,
                      const std::vector<std::uint16_t>& samples) {
    require(samples.size() == height * width, "PNG sample count mismatch");
    // PNG stores 16-bit samples big-endian
    std::vector<png_byte> buf(samples.size() * 2);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        buf[2 * i] = static_cast<png_byte>(samples[i] >> 8);
        buf[2 * i + 1] = static_cast<png_byte>(samples[i] & 0xFF);
    }
    std::vector<png_bytep> rows(height);
    for (std::size_t y = 0; y < height; ++y) rows[y] = buf.data() + y * width * 2;
    write_png(path, height, width, 16, rows);
}

} // namespace fsad
