#include "eegpack/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>

namespace eegpack::img {

namespace {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace

Image load_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw DataError("cannot open PNG: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("PNG decode failed: " + path.string());
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  // Normalize every input to 8-bit RGB.
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY &&
      png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  Image image;
  image.width = static_cast<int>(png_get_image_width(png, info));
  image.height = static_cast<int>(png_get_image_height(png, info));
  image.rgb.resize(static_cast<std::size_t>(image.width) * image.height * 3);

  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y)
    row_ptrs[static_cast<std::size_t>(y)] = image.rgb.data() + static_cast<std::size_t>(y) * image.width * 3;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void save_png(const std::filesystem::path& path, const Image& image) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw DataError("cannot write PNG: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encode failed: " + path.string());
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y)
    png_write_row(png, const_cast<png_bytep>(image.rgb.data() +
                                             static_cast<std::size_t>(y) * image.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

nn::Tensor images_to_rows(const std::vector<Image>& images) {
  if (images.empty()) throw DataError("images_to_rows: empty batch");
  const long H = images[0].height, W = images[0].width;
  nn::Tensor rows({static_cast<long>(images.size()) * H * W, 3});
  long r = 0;
  for (const auto& im : images) {
    if (im.height != H || im.width != W) throw DataError("images_to_rows: size mismatch");
    for (long i = 0; i < H * W; ++i, ++r)
      for (long c = 0; c < 3; ++c)
        rows.mat()(r, c) = static_cast<double>(im.rgb[static_cast<std::size_t>(i * 3 + c)]) / 127.5 - 1.0;
  }
  return rows;
}

std::vector<Image> rows_to_images(const nn::Tensor& rows, long batch, long height, long width) {
  if (rows.rows() != batch * height * width || rows.cols() != 3)
    throw DataError("rows_to_images: shape mismatch");
  std::vector<Image> out(static_cast<std::size_t>(batch));
  long r = 0;
  for (auto& im : out) {
    im.height = static_cast<int>(height);
    im.width = static_cast<int>(width);
    im.rgb.resize(static_cast<std::size_t>(height * width * 3));
    for (long i = 0; i < height * width; ++i, ++r)
      for (long c = 0; c < 3; ++c) {
        double v = std::clamp(rows.mat()(r, c), -1.0, 1.0);
        im.rgb[static_cast<std::size_t>(i * 3 + c)] =
            static_cast<unsigned char>(std::lround((v + 1.0) * 127.5));
      }
  }
  return out;
}

namespace {

struct Rgb {
  unsigned char r, g, b;
};

// Hue wheel keyed by index; avoids near-duplicate colours for small counts.
Rgb palette_color(int index) {
  const double golden = 0.61803398875;
  double h = std::fmod(0.13 + golden * index, 1.0) * 6.0;
  const double s = 0.85, v = 0.9;
  const int i = static_cast<int>(h);
  const double f = h - i;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r, g, b;
  switch (i % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  return {static_cast<unsigned char>(r * 255), static_cast<unsigned char>(g * 255),
          static_cast<unsigned char>(b * 255)};
}

void fill(Image& im, Rgb c) {
  for (int i = 0; i < im.height * im.width; ++i) {
    im.rgb[static_cast<std::size_t>(3 * i)] = c.r;
    im.rgb[static_cast<std::size_t>(3 * i + 1)] = c.g;
    im.rgb[static_cast<std::size_t>(3 * i + 2)] = c.b;
  }
}

void put(Image& im, int y, int x, Rgb c) {
  if (y < 0 || y >= im.height || x < 0 || x >= im.width) return;
  im.at(y, x, 0) = c.r;
  im.at(y, x, 1) = c.g;
  im.at(y, x, 2) = c.b;
}

}  // namespace

Image render_class_shape(int class_id, std::uint64_t jitter_seed, int size) {
  Image im;
  im.height = im.width = size;
  im.rgb.resize(static_cast<std::size_t>(size) * size * 3);

  Rng rng = make_rng(jitter_seed);
  const Rgb bg = palette_color(2 * class_id + 1);
  const Rgb fg = palette_color(2 * class_id);
  fill(im, bg);

  const double jx = rng.uniform(-0.08, 0.08) * size;
  const double jy = rng.uniform(-0.08, 0.08) * size;
  const double cx = size / 2.0 + jx;
  const double cy = size / 2.0 + jy;
  const double radius = size * rng.uniform(0.24, 0.30);
  const int shape = class_id % 5;

  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = x - cx, dy = y - cy;
      bool inside = false;
      switch (shape) {
        case 0:  // disc
          inside = dx * dx + dy * dy <= radius * radius;
          break;
        case 1:  // square
          inside = std::abs(dx) <= radius && std::abs(dy) <= radius;
          break;
        case 2:  // triangle (upward)
          inside = dy <= radius && dy >= -radius && std::abs(dx) <= (dy + radius) * 0.6;
          break;
        case 3:  // cross
          inside = (std::abs(dx) <= radius * 0.35 && std::abs(dy) <= radius) ||
                   (std::abs(dy) <= radius * 0.35 && std::abs(dx) <= radius);
          break;
        default:  // ring
          inside = dx * dx + dy * dy <= radius * radius &&
                   dx * dx + dy * dy >= 0.45 * radius * radius;
          break;
      }
      if (inside) put(im, y, x, fg);
    }
  return im;
}

Image make_mosaic(const std::vector<Image>& tiles, int grid_cols) {
  if (tiles.empty()) throw DataError("make_mosaic: no tiles");
  const int th = tiles[0].height, tw = tiles[0].width;
  const int rows = (static_cast<int>(tiles.size()) + grid_cols - 1) / grid_cols;
  Image out;
  out.height = rows * th;
  out.width = grid_cols * tw;
  out.rgb.assign(static_cast<std::size_t>(out.height) * out.width * 3, 0);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const int gy = static_cast<int>(i) / grid_cols;
    const int gx = static_cast<int>(i) % grid_cols;
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x)
        for (int c = 0; c < 3; ++c)
          out.at(gy * th + y, gx * tw + x, c) = tiles[i].at(y, x, c);
  }
  return out;
}

}  // namespace eegpack::img
