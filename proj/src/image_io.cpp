#include "tst/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "tst/error.hpp"
#include "tst/imaging.hpp"

namespace tst {
namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

ImageBuffer read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError("not a PNG file: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
    png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  pixels.resize(rowbytes * height);
  rows.resize(height);
  for (int y = 0; y < height; ++y) rows[y] = pixels.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (channels != 1 && channels != 3) throw IoError("unsupported PNG channel layout: " + path.string());
  ImageBuffer img(width, height, channels);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(x, y, c) = rows[y][x * channels + c] / 255.0;
  return img;
}

void write_png(const std::filesystem::path& path, int width, int height, int channels,
               const std::vector<std::uint8_t>& bytes) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * width * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Skips whitespace and '#' comments in a netpbm header.
int read_pnm_int(std::istream& in) {
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v = 0;
  if (!(in >> v)) throw IoError("malformed PNM header");
  return v;
}

ImageBuffer read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P5" && magic != "P2") throw IoError("not a PGM file: " + path.string());
  const int width = read_pnm_int(in);
  const int height = read_pnm_int(in);
  const int maxval = read_pnm_int(in);
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535)
    throw IoError("invalid PGM header: " + path.string());
  ImageBuffer img(width, height, 1);
  if (magic == "P2") {
    for (auto& v : img.data()) v = static_cast<double>(read_pnm_int(in)) / maxval;
    return img;
  }
  in.get();  // single whitespace after maxval
  const int bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IoError("truncated PGM: " + path.string());
  auto data = img.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int v = bytes_per == 2 ? (raw[2 * i] << 8) | raw[2 * i + 1] : raw[i];
    data[i] = static_cast<double>(v) / maxval;
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const ImageBuffer& img) {
  if (img.channels() != 1) throw IoError("PGM output requires a single-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  for (double v : img.data()) out.put(static_cast<char>(to_byte(v)));
  if (!out) throw IoError("failed writing " + path.string());
}

ImageBuffer read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  double scale = 0;
  int width = 0, height = 0;
  in >> magic >> width >> height >> scale;
  if ((magic != "Pf" && magic != "PF") || width <= 0 || height <= 0 || scale == 0)
    throw IoError("invalid PFM header: " + path.string());
  in.get();
  const int channels = magic == "PF" ? 3 : 1;
  const bool little = scale < 0;
  ImageBuffer img(width, height, channels);
  std::vector<std::uint32_t> raw(static_cast<std::size_t>(width) * height * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  if (!in) throw IoError("truncated PFM: " + path.string());
  const bool host_little = std::endian::native == std::endian::little;
  // Rows are stored bottom to top.
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c) {
        std::uint32_t bits = raw[(static_cast<std::size_t>(height - 1 - y) * width + x) * channels + c];
        if (little != host_little) bits = __builtin_bswap32(bits);
        img.at(x, y, c) = std::bit_cast<float>(bits);
      }
  return img;
}

void write_pfm(const std::filesystem::path& path, const ImageBuffer& img) {
  static_assert(std::endian::native == std::endian::little, "PFM writer assumes little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (img.channels() == 3 ? "PF" : "Pf") << '\n' << img.width() << ' ' << img.height() << "\n-1.0\n";
  for (int y = img.height() - 1; y >= 0; --y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) {
        const float v = static_cast<float>(img.at(x, y, c));
        out.write(reinterpret_cast<const char*>(&v), 4);
      }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

ImageBuffer read_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm") return read_pgm(path);
  if (ext == ".pfm") return read_pfm(path);
  throw IoError("unsupported image format: " + path.string());
}

void write_image(const std::filesystem::path& path, const ImageBuffer& img) {
  const std::string ext = lower_extension(path);
  if (ext == ".pgm") return write_pgm(path, img);
  if (ext == ".pfm") return write_pfm(path, img);
  if (ext != ".png") throw IoError("unsupported image format: " + path.string());
  std::vector<std::uint8_t> bytes(img.data().size());
  std::transform(img.data().begin(), img.data().end(), bytes.begin(), to_byte);
  write_png(path, img.width(), img.height(), img.channels(), bytes);
}

BinaryMask read_mask(const std::filesystem::path& path) {
  const ImageBuffer img = to_luminance(read_image(path));
  BinaryMask mask(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) mask.set(x, y, img.at(x, y) >= 0.5);
  return mask;
}

void write_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes(mask.pixel_count());
  std::transform(mask.bits().begin(), mask.bits().end(), bytes.begin(),
                 [](std::uint8_t b) { return static_cast<std::uint8_t>(b ? 255 : 0); });
  write_png(path, mask.width(), mask.height(), 1, bytes);
}

}  // namespace tst
