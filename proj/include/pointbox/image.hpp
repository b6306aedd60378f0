#pragma once

#include <filesystem>

#include <Eigen/Core>

namespace pointbox {

/// Grayscale intensities in [0,1]; rows index y, columns index x.
using GrayImage = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Bilinear resample to (out_width, out_height) using pixel-center alignment,
/// so a point at continuous coordinate p maps to p * out/in.
GrayImage resize_bilinear(const GrayImage& src, int out_width, int out_height);

/// Copy of `src` placed at the origin of a zero canvas of the given size;
/// parts of `src` beyond the canvas are dropped.
GrayImage pad_to(const GrayImage& src, int width, int height);

/// Binary PGM (P5), maxval 255. Intensities are rounded to the nearest level.
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

/// Round every pixel to the nearest of the 256 PGM levels.
void quantize_to_u8(GrayImage& image);

/// Zero mean, unit variance; a constant image maps to all zeros.
GrayImage standardize(const GrayImage& image);

} // namespace pointbox
