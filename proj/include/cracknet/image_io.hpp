#pragma once

// 8-bit image decoding (PNG, baseline JPEG) into (H,W,3) float tensors in
// [0,1], and PNG encoding. Grayscale sources are replicated to 3 channels.

#include <png.h>
#include <jpeglib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "cracknet/errors.hpp"
#include "cracknet/tensor.hpp"

namespace cracknet {

inline std::string lower_extension(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

inline bool is_supported_image(const std::filesystem::path& p) {
    const std::string ext = lower_extension(p);
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

inline Tensor<float> image_from_bytes(const std::vector<std::uint8_t>& rgb, std::size_t h, std::size_t w) {
    Tensor<float> t(Shape{h, w, 3});
    for (std::size_t i = 0; i < rgb.size(); ++i) t[i] = static_cast<float>(rgb[i]) / 255.0f;
    return t;
}

inline std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline Tensor<float> read_png(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
        throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw IoError("cannot decode PNG " + path.string() + ": " + msg);
    }
    return image_from_bytes(buf, img.height, img.width);
}

namespace detail {

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

}  // namespace detail

inline Tensor<float> read_jpeg(const std::filesystem::path& path) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.string().c_str(), "rb"), &std::fclose);
    if (!file) throw IoError("cannot open " + path.string());

    jpeg_decompress_struct cinfo{};
    detail::JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = detail::jpeg_error_exit;
    // Everything with a destructor lives above setjmp.
    std::vector<std::uint8_t> rgb;
    std::vector<std::uint8_t> row;
    std::size_t h = 0, w = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError("cannot decode JPEG " + path.string() + ": " + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, file.get());
    jpeg_read_header(&cinfo, TRUE);
    jpeg_start_decompress(&cinfo);
    h = cinfo.output_height;
    w = cinfo.output_width;
    const std::size_t comps = static_cast<std::size_t>(cinfo.output_components);
    if (comps != 1 && comps != 3) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError("unsupported JPEG component count in " + path.string());
    }
    rgb.resize(h * w * 3);
    row.resize(w * comps);
    while (cinfo.output_scanline < cinfo.output_height) {
        const std::size_t y = cinfo.output_scanline;
        JSAMPROW rp = row.data();
        jpeg_read_scanlines(&cinfo, &rp, 1);
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) rgb[(y * w + x) * 3 + c] = row[x * comps + (comps == 3 ? c : 0)];
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return image_from_bytes(rgb, h, w);
}

inline Tensor<float> read_image(const std::filesystem::path& path) {
    const std::string ext = lower_extension(path);
    if (ext == ".png") return read_png(path);
    if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
    throw IoError("unsupported image format: " + path.string());
}

// Writes an (H,W,3) RGB or (H,W) / (H,W,1) grayscale tensor in [0,1].
inline void write_png(const std::filesystem::path& path, const Tensor<float>& image) {
    const bool gray = image.rank() == 2 || (image.rank() == 3 && image.dim(2) == 1);
    if (!gray && !(image.rank() == 3 && image.dim(2) == 3)) {
        throw ShapeError("write_png needs (H,W), (H,W,1) or (H,W,3), got " + shape_str(image.shape()));
    }
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.height = static_cast<png_uint_32>(image.dim(0));
    img.width = static_cast<png_uint_32>(image.dim(1));
    img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<std::uint8_t> bytes(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) bytes[i] = to_byte(image[i]);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
        throw IoError("cannot write PNG " + path.string() + ": " + img.message);
    }
}

// Lays equally shaped (H,W) or (H,W,C) images out in a grid, `cols` per row,
// separated by `gap` pixels of value 1.
inline Tensor<float> image_grid(const std::vector<Tensor<float>>& images, std::size_t cols, std::size_t gap = 2) {
    if (images.empty()) throw ShapeError("image_grid needs at least one image");
    const Shape& s0 = images.front().shape();
    if (s0.size() != 2 && s0.size() != 3) throw ShapeError("image_grid needs (H,W) or (H,W,C), got " + shape_str(s0));
    for (const auto& im : images)
        if (im.shape() != s0) throw ShapeError("image_grid images differ in shape");
    cols = std::max<std::size_t>(1, std::min(cols, images.size()));
    const std::size_t rows = (images.size() + cols - 1) / cols;
    const std::size_t h = s0[0], w = s0[1], c = s0.size() == 3 ? s0[2] : 1;
    const std::size_t gh = rows * h + (rows - 1) * gap, gw = cols * w + (cols - 1) * gap;
    Tensor<float> grid(s0.size() == 3 ? Shape{gh, gw, c} : Shape{gh, gw}, 1.0f);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const std::size_t oy = (i / cols) * (h + gap), ox = (i % cols) * (w + gap);
        for (std::size_t y = 0; y < h; ++y) {
            const float* src = images[i].raw() + y * w * c;
            std::copy(src, src + w * c, grid.raw() + ((oy + y) * gw + ox) * c);
        }
    }
    return grid;
}

}  // namespace cracknet
