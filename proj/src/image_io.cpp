#include "nsn/image_io.hpp"

#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "nsn/error.hpp"

namespace nsn {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) {
        if (mode[0] == 'r' && !fs::exists(path)) throw NotFoundError(path);
        throw IoError("cannot open " + path.string());
    }
    return f;
}

RasterImage from_interleaved(const std::vector<std::uint8_t>& data, int width, int height, int channels) {
    const int out_channels = channels >= 3 ? 3 : 1;
    RasterImage img(width, height, out_channels);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < out_channels; ++c)
                img.at(x, y, c) = data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    return img;
}

RasterImage decode_png(const fs::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw IoError("cannot decode png " + path.string() + ": " + image.message);
    const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
    image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError("cannot decode png " + path.string() + ": " + image.message);
    }
    return from_interleaved(buffer, static_cast<int>(image.width), static_cast<int>(image.height), gray ? 1 : 3);
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

RasterImage decode_jpeg(const fs::path& path) {
    FilePtr file = open_file(path, "rb");
    jpeg_decompress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    std::vector<std::uint8_t> buffer;
    int width = 0, height = 0, channels = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError("cannot decode jpeg " + path.string() + ": " + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, file.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);
    width = static_cast<int>(cinfo.output_width);
    height = static_cast<int>(cinfo.output_height);
    channels = cinfo.output_components;
    buffer.resize(static_cast<std::size_t>(width) * height * channels);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = buffer.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * channels;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return from_interleaved(buffer, width, height, channels);
}

}  // namespace

RasterImage read_image(const fs::path& path) {
    unsigned char sig[8] = {};
    {
        FilePtr f = open_file(path, "rb");
        if (std::fread(sig, 1, sizeof sig, f.get()) < 3) throw IoError("not an image: " + path.string());
    }
    if (png_sig_cmp(sig, 0, 8) == 0) return decode_png(path);
    if (sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) return decode_jpeg(path);
    throw IoError("unsupported image format: " + path.string());
}

RasterImage read_rgb(const fs::path& path) {
    RasterImage img = read_image(path);
    if (img.channels() == 1) img.planes = {img[0], img[0], img[0]};
    return img;
}

void write_png(const RasterImage& image, const fs::path& path) {
    if (image.channels() != 1 && image.channels() != 3) throw IoError("png output needs 1 or 3 channels");
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    const int w = image.width(), h = image.height(), ch = image.channels();
    std::vector<std::uint8_t> data(static_cast<std::size_t>(w) * h * ch);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) data[(static_cast<std::size_t>(y) * w + x) * ch + c] = image.at(x, y, c);

    FilePtr file = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png encode failed: " + path.string());
    }
    png_init_io(png, file.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 ch == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) png_write_row(png, data.data() + static_cast<std::size_t>(y) * w * ch);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

BinaryMask read_mask(const fs::path& path) {
    const RasterImage img = read_image(path);
    return img[0] > 0;
}

void write_mask(const BinaryMask& mask, const fs::path& path) {
    RasterImage img;
    img.planes.push_back(mask.select(Plane<std::uint8_t>::Constant(mask.rows(), mask.cols(), 255),
                                     Plane<std::uint8_t>::Zero(mask.rows(), mask.cols())));
    write_png(img, path);
}

}  // namespace nsn
