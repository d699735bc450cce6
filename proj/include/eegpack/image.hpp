#pragma once
// 8-bit RGB images, PNG I/O, conversions to/from [-1,1] tensor batches and
// the deterministic shape renderer used by synthetic datasets.

#include <filesystem>
#include <vector>

#include "eegpack/common.hpp"
#include "eegpack/tensor.hpp"

namespace eegpack::img {

struct Image {
  int height = 0;
  int width = 0;
  std::vector<unsigned char> rgb;  // row-major, 3 bytes per pixel

  unsigned char& at(int y, int x, int c) { return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
  unsigned char at(int y, int x, int c) const { return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
};

Image load_png(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const Image& image);

// Batch layout: {B*H*W, 3} rows, row ((b*H + y)*W + x), values in [-1, 1].
nn::Tensor images_to_rows(const std::vector<Image>& images);
std::vector<Image> rows_to_images(const nn::Tensor& rows, long batch, long height, long width);

// Deterministic renderer: a class-keyed shape/colour layout with a small
// per-record jitter. Identical (class, jitter_seed, size) always produces
// identical pixels.
Image render_class_shape(int class_id, std::uint64_t jitter_seed, int size);

// Grid mosaic of equally sized images.
Image make_mosaic(const std::vector<Image>& tiles, int grid_cols);

}  // namespace eegpack::img
