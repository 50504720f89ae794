#pragma once

#include "mmreg/image.hpp"

#include <filesystem>
#include <optional>
#include <span>

namespace mmreg::io {

// Binary PGM (P5), 8 or 16 bit.  Samples are scaled to [0,1] by 255 / 65535.
Image read_pgm(const std::filesystem::path &path);
void write_pgm(const Image &img, const std::filesystem::path &path,
               int bit_depth = 8);

// Grayscale PNG.  Colour inputs are reduced to luma, alpha is dropped.
Image read_png(const std::filesystem::path &path);
void write_png(const Image &img, const std::filesystem::path &path,
               int bit_depth = 8);

// Dispatches on extension (.pgm / .png) and attaches the sibling world file
// when one exists.
Image load_image(const std::filesystem::path &path);
// Writes the raster and, when the image carries a geotransform, its world file.
void save_image(const Image &img, const std::filesystem::path &path);

// World file: six lines a, d, b, e, c, f.
std::filesystem::path world_file_path(const std::filesystem::path &image_path);
std::optional<GeoTransform> read_world_file(const std::filesystem::path &path);
void write_world_file(const GeoTransform &geo,
                      const std::filesystem::path &path);

// Linear min/max rescale of arbitrary values to an 8-bit PGM; a constant
// field is written as zeros.
void write_heatmap_pgm(std::span<const double> values, int width, int height,
                       const std::filesystem::path &path);

// Whitespace-separated matrix, one row per line.
void write_matrix_text(std::span<const double> values, int width, int height,
                       const std::filesystem::path &path);

} // namespace mmreg::io
