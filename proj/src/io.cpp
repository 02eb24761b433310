#include "sdistill/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sdistill {
namespace io {

namespace fs = std::filesystem;

std::string format_double(double v) {
    char buf[40];
    // %.17g round-trips any double; trim to the shortest form that still does.
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        double back = 0.0;
        std::sscanf(buf, "%lf", &back);
        if (back == v) {
            return buf;
        }
    }
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void atomic_write(const fs::path& path, const std::string& bytes) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot open for writing: " + tmp.string());
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw std::runtime_error("write failed: " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open for reading: " + path.string());
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

std::string encode_npy(const ArrayXd& data, std::optional<std::pair<int, int>> shape) {
    std::string header_dict = "{'descr': '<f8', 'fortran_order': False, 'shape': (";
    if (shape) {
        require(static_cast<Eigen::Index>(shape->first) * shape->second == data.size(),
                "encode_npy: shape does not match data size");
        header_dict += std::to_string(shape->first) + ", " + std::to_string(shape->second) + "), }";
    } else {
        header_dict += std::to_string(data.size()) + ",), }";
    }
    // Pad so magic + header is a multiple of 64, ending in newline.
    const std::size_t base = 10 + header_dict.size() + 1;
    const std::size_t padded = (base + 63) / 64 * 64;
    header_dict.append(padded - base, ' ');
    header_dict.push_back('\n');

    std::string out;
    out.reserve(padded + static_cast<std::size_t>(data.size()) * 8);
    out += "\x93NUMPY";
    out.push_back('\x01');
    out.push_back('\x00');
    const std::uint16_t hlen = static_cast<std::uint16_t>(header_dict.size());
    out.push_back(static_cast<char>(hlen & 0xFF));
    out.push_back(static_cast<char>(hlen >> 8));
    out += header_dict;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        double v = data[i];
        char raw[8];
        std::memcpy(raw, &v, 8);
        out.append(raw, 8);  // x86-64: already little-endian
    }
    return out;
}

namespace {

void png_append(png_structp png, png_bytep chunk, png_size_t len) {
    auto* sink = static_cast<std::string*>(png_get_io_ptr(png));
    sink->append(reinterpret_cast<const char*>(chunk), len);
}

void png_flush(png_structp) {}

}  // namespace

std::string encode_gray_png(const std::vector<unsigned char>& pixels, int width, int height) {
    require(width > 0 && height > 0, "encode_gray_png: empty image");
    require(pixels.size() == static_cast<std::size_t>(width) * static_cast<std::size_t>(height),
            "encode_gray_png: pixel count does not match dimensions");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) {
        throw std::runtime_error("png_create_write_struct failed");
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }

    std::string out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng write error");
    }
    png_set_write_fn(png, &out, png_append, png_flush);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y) {
        png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * width));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

std::vector<unsigned char> quantize_gray(const ArrayXd& values, double vmin, double vmax) {
    require(vmax > vmin, "quantize_gray: empty value range");
    std::vector<unsigned char> out(static_cast<std::size_t>(values.size()));
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        double f = (values[i] - vmin) / (vmax - vmin);
        f = std::clamp(f, 0.0, 1.0);
        out[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(f * 255.0));
    }
    return out;
}

std::string encode_grid_png(const std::vector<GridCell>& cells, int grid_rows, int grid_cols,
                            double vmin, double vmax, int upscale) {
    require(grid_rows >= 1 && grid_cols >= 1, "encode_grid_png: empty grid");
    require(upscale >= 1, "encode_grid_png: upscale must be >= 1");

    int cell_rows = 1;
    int cell_cols = 1;
    for (const auto& c : cells) {
        require(static_cast<Eigen::Index>(c.rows) * c.cols == c.image.size(),
                "encode_grid_png: cell shape does not match image size");
        cell_rows = std::max(cell_rows, c.rows);
        cell_cols = std::max(cell_cols, c.cols);
    }
    const int sep = 2;
    const int cw = cell_cols * upscale;
    const int ch = cell_rows * upscale;
    const int width = grid_cols * cw + (grid_cols + 1) * sep;
    const int height = grid_rows * ch + (grid_rows + 1) * sep;

    std::vector<unsigned char> canvas(static_cast<std::size_t>(width) * height, 64);  // border gray

    for (std::size_t k = 0; k < cells.size(); ++k) {
        const int gr = static_cast<int>(k) / grid_cols;
        const int gc = static_cast<int>(k) % grid_cols;
        if (gr >= grid_rows) {
            break;
        }
        const auto gray = quantize_gray(cells[k].image, vmin, vmax);
        const int ox = sep + gc * (cw + sep);
        const int oy = sep + gr * (ch + sep);
        for (int py = 0; py < cells[k].rows * upscale; ++py) {
            for (int px = 0; px < cells[k].cols * upscale; ++px) {
                const int sy = py / upscale;
                const int sx = px / upscale;
                canvas[static_cast<std::size_t>(oy + py) * width + (ox + px)] =
                    gray[static_cast<std::size_t>(sy) * cells[k].cols + sx];
            }
        }
    }
    return encode_gray_png(canvas, width, height);
}

}  // namespace io
}  // namespace sdistill
