#include "mmreg/io.hpp"

#include "mmreg/error.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace mmreg::io {

namespace fs = std::filesystem;

namespace {

std::string lower_extension(const fs::path &p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext;
}

// Reads the next PNM header token, skipping whitespace and '#' comments.
std::string next_token(std::istream &in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty())
        break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

int header_int(std::istream &in, const fs::path &path, const char *what) {
  const std::string tok = next_token(in);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size())
      throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception &) {
    throw IoError(path.string() + ": malformed PGM header (" + what + ")");
  }
}

std::uint16_t quantize(double v, int maxval) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint16_t>(std::lround(c * maxval));
}

struct FileCloser {
  void operator()(std::FILE *f) const {
    if (f)
      std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

Image read_pgm(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  if (next_token(in) != "P5")
    throw IoError(path.string() + ": not a binary PGM (P5)");
  const int w = header_int(in, path, "width");
  const int h = header_int(in, path, "height");
  const int maxval = header_int(in, path, "maxval");
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
    throw IoError(path.string() + ": invalid PGM dimensions or maxval");

  const std::size_t n = static_cast<std::size_t>(w) * h;
  const bool wide = maxval > 255;
  std::vector<unsigned char> raw(n * (wide ? 2 : 1));
  in.read(reinterpret_cast<char *>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw IoError(path.string() + ": truncated PGM pixel data");

  std::vector<double> px(n);
  const double divisor = wide ? 65535.0 : 255.0;
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned v = wide ? (raw[2 * i] << 8) | raw[2 * i + 1] : raw[i];
    px[i] = v / divisor;
  }
  return Image(w, h, std::move(px));
}

void write_pgm(const Image &img, const fs::path &path, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16)
    throw ParameterError("PGM bit depth must be 8 or 16");
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write " + path.string());
  const int maxval = bit_depth == 8 ? 255 : 65535;
  out << "P5\n" << img.width() << " " << img.height() << "\n" << maxval << "\n";
  std::vector<unsigned char> raw;
  raw.reserve(img.size() * (bit_depth / 8));
  for (double v : img.pixels()) {
    const std::uint16_t q = quantize(v, maxval);
    if (bit_depth == 16)
      raw.push_back(static_cast<unsigned char>(q >> 8));
    raw.push_back(static_cast<unsigned char>(q & 0xff));
  }
  out.write(reinterpret_cast<const char *>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out)
    throw IoError("failed writing " + path.string());
}

Image read_png(const fs::path &path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw IoError(path.string() + ": " + image.message);
  const bool wide = (image.format & PNG_FORMAT_FLAG_LINEAR) != 0 ||
                    PNG_IMAGE_SAMPLE_COMPONENT_SIZE(image.format) == 2;
  image.format = wide ? PNG_FORMAT_LINEAR_Y : PNG_FORMAT_GRAY;
  const int w = static_cast<int>(image.width);
  const int h = static_cast<int>(image.height);
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<double> px(n);
  if (wide) {
    std::vector<png_uint_16> buf(n);
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr))
      throw IoError(path.string() + ": " + image.message);
    for (std::size_t i = 0; i < n; ++i)
      px[i] = buf[i] / 65535.0;
  } else {
    std::vector<png_byte> buf(n);
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr))
      throw IoError(path.string() + ": " + image.message);
    for (std::size_t i = 0; i < n; ++i)
      px[i] = buf[i] / 255.0;
  }
  return Image(w, h, std::move(px));
}

void write_png(const Image &img, const fs::path &path, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16)
    throw ParameterError("PNG bit depth must be 8 or 16");
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp)
    throw IoError("cannot write " + path.string());
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  const int bytes = bit_depth / 8;
  std::vector<png_byte> row(static_cast<std::size_t>(img.width()) * bytes);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width(), img.height(), bit_depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int maxval = bit_depth == 8 ? 255 : 65535;
  for (int y = 0; y < img.height(); ++y) {
    const auto src = img.row(y);
    for (int x = 0; x < img.width(); ++x) {
      const std::uint16_t q = quantize(src[x], maxval);
      if (bytes == 2) {
        row[2 * x] = static_cast<png_byte>(q >> 8);
        row[2 * x + 1] = static_cast<png_byte>(q & 0xff);
      } else {
        row[x] = static_cast<png_byte>(q);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

fs::path world_file_path(const fs::path &image_path) {
  fs::path p = image_path;
  p.replace_extension(".wld");
  return p;
}

std::optional<GeoTransform> read_world_file(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    return std::nullopt;
  double v[6];
  for (double &x : v)
    if (!(in >> x))
      throw IoError(path.string() + ": world file needs six numeric lines");
  GeoTransform g{v[0], v[2], v[4], v[1], v[3], v[5]};
  if (!g.invertible())
    throw IoError(path.string() + ": world file describes a singular transform");
  return g;
}

void write_world_file(const GeoTransform &geo, const fs::path &path) {
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write " + path.string());
  char buf[64];
  for (double v : {geo.a, geo.d, geo.b, geo.e, geo.c, geo.f}) {
    std::snprintf(buf, sizeof buf, "%.17g\n", v);
    out << buf;
  }
}

Image load_image(const fs::path &path) {
  const std::string ext = lower_extension(path);
  Image img;
  if (ext == ".pgm")
    img = read_pgm(path);
  else if (ext == ".png")
    img = read_png(path);
  else
    throw IoError(path.string() + ": unsupported raster format '" + ext +
                  "' (expected .pgm or .png)");
  img.set_geo(read_world_file(world_file_path(path)));
  return img;
}

void save_image(const Image &img, const fs::path &path) {
  const std::string ext = lower_extension(path);
  if (ext == ".pgm")
    write_pgm(img, path);
  else if (ext == ".png")
    write_png(img, path);
  else
    throw IoError(path.string() + ": unsupported raster format '" + ext + "'");
  if (img.geo())
    write_world_file(*img.geo(), world_file_path(path));
}

void write_heatmap_pgm(std::span<const double> values, int width, int height,
                       const fs::path &path) {
  if (values.size() != static_cast<std::size_t>(width) * height)
    throw ParameterError("heatmap size does not match dimensions");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  std::vector<double> scaled(values.size(), 0.0);
  if (range > 0.0)
    for (std::size_t i = 0; i < values.size(); ++i)
      scaled[i] = (values[i] - *lo) / range;
  write_pgm(Image(width, height, std::move(scaled)), path, 8);
}

void write_matrix_text(std::span<const double> values, int width, int height,
                       const fs::path &path) {
  if (values.size() != static_cast<std::size_t>(width) * height)
    throw ParameterError("matrix size does not match dimensions");
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write " + path.string());
  char buf[64];
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      std::snprintf(buf, sizeof buf, "%.10g", values[y * width + x]);
      out << (x ? " " : "") << buf;
    }
    out << "\n";
  }
}

} // namespace mmreg::io
