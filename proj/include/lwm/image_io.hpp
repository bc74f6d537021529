#pragma once

#include "lwm/common.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

namespace lwm::image_io {

/// Encode an [H, W, 3] float image in [0,1] as an 8-bit RGB PNG.
inline std::vector<std::uint8_t> encode_png(const torch::Tensor& image) {
    LWM_REQUIRE(image.dim() == 3 && image.size(2) == 3, "encode_png: expected [H, W, 3], got ",
                detail::shape_str(image));
    auto bytes = (image.detach().to(torch::kFloat32).clamp(0.0, 1.0) * 255.0f)
                     .round()
                     .to(torch::kUInt8)
                     .contiguous();
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.size(1));
    img.height = static_cast<png_uint_32>(image.size(0));
    img.format = PNG_FORMAT_RGB;

    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, bytes.data_ptr<std::uint8_t>(), 0, nullptr))
        throw std::runtime_error(std::string("png size query failed: ") + img.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, bytes.data_ptr<std::uint8_t>(), 0, nullptr))
        throw std::runtime_error(std::string("png encode failed: ") + img.message);
    out.resize(size);
    return out;
}

/// Decode any PNG to an [H, W, 3] float image in [0,1].
inline torch::Tensor decode_png(const std::uint8_t* data, std::size_t size) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, data, size))
        throw InvalidArgument(std::string("png decode failed: ") + img.message);
    img.format = PNG_FORMAT_RGB;
    auto out = torch::empty({img.height, img.width, 3}, torch::kUInt8);
    if (!png_image_finish_read(&img, nullptr, out.data_ptr<std::uint8_t>(), 0, nullptr)) {
        png_image_free(&img);
        throw InvalidArgument(std::string("png decode failed: ") + img.message);
    }
    return out.to(torch::kFloat32) / 255.0f;
}

inline torch::Tensor decode_png(const std::vector<std::uint8_t>& bytes) {
    return decode_png(bytes.data(), bytes.size());
}

inline void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
    const auto bytes = encode_png(image);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline torch::Tensor read_png(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw NotFound("cannot read " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
    LWM_REQUIRE(text.size() % 4 == 0, "base64: length not a multiple of 4");
    std::vector<std::uint8_t> out(3 * text.size() / 4);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    LWM_REQUIRE(n >= 0, "base64: malformed input");
    // EVP_DecodeBlock keeps the bytes produced by '=' padding.
    std::size_t pad = 0;
    if (!text.empty() && text.back() == '=') ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

}  // namespace lwm::image_io
