#include "ss3d/appearance/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "ss3d/common/error.hpp"

namespace ss3d {
namespace {

std::vector<unsigned char> to_bytes(const ad::Array& image) {
  require(image.rank() == 3 && image.shape()[2] == 3, "E_SHAPE", "image must be H x W x 3");
  std::vector<unsigned char> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::isfinite(image[i]) ? std::clamp(image[i], 0.0, 1.0) : 0.0;
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  return bytes;
}

ad::Array from_bytes(const unsigned char* bytes, std::size_t h, std::size_t w) {
  ad::Array image({h, w, 3});
  for (std::size_t i = 0; i < image.size(); ++i) image[i] = bytes[i] / 255.0;
  return image;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && std::equal(suffix.rbegin(), suffix.rend(), s.rbegin(),
                                                 [](char a, char b) { return std::tolower(a) == b; });
}

ad::Array read_ppm(std::istream& in, const std::string& path) {
  std::string magic;
  in >> magic;
  require(magic == "P6", "E_IO", path + ": only binary P6 PPM is supported");
  std::size_t fields[3];
  for (std::size_t& f : fields) {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    require(static_cast<bool>(in >> f), "E_IO", path + ": malformed PPM header");
  }
  require(fields[2] == 255, "E_IO", path + ": PPM maxval must be 255");
  require(fields[0] > 0 && fields[1] > 0, "E_IO", path + ": empty PPM");
  in.get();
  std::vector<unsigned char> bytes(fields[0] * fields[1] * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(in.gcount() == static_cast<std::streamsize>(bytes.size()), "E_IO", path + ": truncated PPM");
  return from_bytes(bytes.data(), fields[1], fields[0]);
}

}  // namespace

void write_png(const std::string& path, const ad::Array& image) {
  const std::vector<unsigned char> bytes = to_bytes(image);
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.shape()[1]);
  png.height = static_cast<png_uint_32>(image.shape()[0]);
  png.format = PNG_FORMAT_RGB;
  const int ok = png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr);
  const std::string message = png.message;
  png_image_free(&png);
  require(ok != 0, "E_IO", "cannot write " + path + ": " + message);
}

void write_ppm(const std::string& path, const ad::Array& image) {
  const std::vector<unsigned char> bytes = to_bytes(image);
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "E_IO", "cannot write " + path);
  out << "P6\n" << image.shape()[1] << ' ' << image.shape()[0] << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), "E_IO", "failed writing " + path);
}

void write_image(const std::string& path, const ad::Array& image) {
  if (ends_with(path, ".ppm")) {
    write_ppm(path, image);
  } else {
    require(ends_with(path, ".png"), "E_IO", path + ": image paths must end in .png or .ppm");
    write_png(path, image);
  }
}

ad::Array read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "E_IO", "cannot open " + path);
  unsigned char signature[8] = {};
  in.read(reinterpret_cast<char*>(signature), 8);
  require(in.gcount() >= 2, "E_IO", path + ": file too short");
  if (signature[0] == 'P' && signature[1] == '6') {
    in.clear();
    in.seekg(0);
    return read_ppm(in, path);
  }
  require(in.gcount() == 8 && png_sig_cmp(signature, 0, 8) == 0, "E_IO", path + ": not a PNG or PPM file");
  in.close();

  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&png, path.c_str()) == 0) {
    const std::string message = png.message;
    png_image_free(&png);
    fail("E_IO", path + ": " + message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> bytes(PNG_IMAGE_SIZE(png));
  const int ok = png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr);
  const std::string message = png.message;
  const std::size_t h = png.height;
  const std::size_t w = png.width;
  png_image_free(&png);
  require(ok != 0, "E_IO", path + ": " + message);
  return from_bytes(bytes.data(), h, w);
}

ad::Array tile_images(const std::vector<ad::Array>& images, std::size_t cols) {
  require(!images.empty() && cols > 0, "E_ARG", "nothing to tile");
  const ad::Shape& s = images[0].shape();
  require(s.size() == 3, "E_SHAPE", "tiles must be H x W x C");
  const std::size_t h = s[0], w = s[1], c = s[2];
  cols = std::min(cols, images.size());
  const std::size_t rows = (images.size() + cols - 1) / cols;
  ad::Array out({rows * h, cols * w, c});
  for (std::size_t n = 0; n < images.size(); ++n) {
    require(images[n].shape() == s, "E_SHAPE", "tiles must share one size");
    const std::size_t oy = (n / cols) * h;
    const std::size_t ox = (n % cols) * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t ch = 0; ch < c; ++ch) out[((oy + y) * cols * w + ox + x) * c + ch] = images[n][(y * w + x) * c + ch];
      }
    }
  }
  return out;
}

}  // namespace ss3d
