#pragma once

#include "sdistill/common.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace sdistill {
namespace io {

// Shortest exact decimal for a double; round-trips bit-exactly.
std::string format_double(double v);

// Write-temp-then-rename so readers never observe partial files.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);

std::string read_file(const std::filesystem::path& path);

// NumPy .npy container, float64 little-endian, 1-D or 2-D shape.
std::string encode_npy(const ArrayXd& data, std::optional<std::pair<int, int>> shape);

// 8-bit grayscale PNG.
std::string encode_gray_png(const std::vector<unsigned char>& pixels, int width, int height);

// Linear map of values in [vmin, vmax] onto 0..255, clamped.
std::vector<unsigned char> quantize_gray(const ArrayXd& values, double vmin, double vmax);

struct GridCell {
    ArrayXd image;
    int rows = 1;
    int cols = 1;
};

// Tile per-run images into a rows x cols montage with cell upscaling and a
// 2px separator. Cells are laid out row-major; missing cells stay blank.
std::string encode_grid_png(const std::vector<GridCell>& cells, int grid_rows, int grid_cols,
                            double vmin, double vmax, int upscale = 32);

}  // namespace io
}  // namespace sdistill
