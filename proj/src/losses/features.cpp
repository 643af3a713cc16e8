#include "ss3d/losses/features.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "ss3d/common/error.hpp"

namespace ss3d {
namespace {

constexpr std::array<double, 3> kKernel{0.25, 0.5, 0.25};
constexpr char kMagic[4] = {'S', 'S', '3', 'F'};
constexpr std::uint32_t kMaxRank = 8;

static_assert(std::endian::native == std::endian::little, "feature files assume a little-endian host");

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  require(static_cast<bool>(in), "E_PARSE", "truncated feature file header");
  return v;
}

}  // namespace

FeatureBatch PixelExtractor::extract(ad::Var images) const {
  require(images.shape().size() == 4, "E_SHAPE", "images must be N x H x W x C");
  return {{images}};
}

PyramidExtractor::PyramidExtractor(std::size_t levels) : levels_(levels) {
  require(levels >= 1, "E_ARG", "pyramid needs at least one level");
}

FeatureBatch PyramidExtractor::extract(ad::Var images) const {
  require(images.shape().size() == 4, "E_SHAPE", "images must be N x H x W x C");
  FeatureBatch out{{images}};
  for (std::size_t l = 1; l < levels_; ++l) out.levels.push_back(blur_decimate(out.levels.back()));
  return out;
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& id, std::size_t levels) {
  if (id == "pixels") return std::make_unique<PixelExtractor>();
  if (id == "pyramid") return std::make_unique<PyramidExtractor>(levels);
  fail("E_ARG", "unknown feature extractor '" + id + "'");
}

ad::Var blur_decimate(ad::Var images) {
  require(images.shape().size() == 4, "E_SHAPE", "images must be N x H x W x C");
  const std::size_t n = images.shape()[0], h = images.shape()[1], w = images.shape()[2], c = images.shape()[3];
  require(h >= 2 && w >= 2, "E_SHAPE", "image too small to decimate");
  const std::size_t oh = (h + 1) / 2, ow = (w + 1) / 2;
  // Visits every (output, input, weight) triple of the linear map.
  auto apply = [n, h, w, c, oh, ow](auto&& visit) {
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          for (int di = -1; di <= 1; ++di) {
            const long yi = std::clamp(static_cast<long>(2 * i) + di, 0L, static_cast<long>(h) - 1);
            for (int dj = -1; dj <= 1; ++dj) {
              const long xj = std::clamp(static_cast<long>(2 * j) + dj, 0L, static_cast<long>(w) - 1);
              const double k = kKernel[std::size_t(di + 1)] * kKernel[std::size_t(dj + 1)];
              const std::size_t o = ((b * oh + i) * ow + j) * c;
              const std::size_t s = ((b * h + std::size_t(yi)) * w + std::size_t(xj)) * c;
              for (std::size_t ch = 0; ch < c; ++ch) visit(o + ch, s + ch, k);
            }
          }
        }
      }
    }
  };
  const ad::Array& x = images.value();
  ad::Array out({n, oh, ow, c});
  apply([&](std::size_t o, std::size_t s, double k) { out[o] += k * x[s]; });
  return images.tape()->record(std::move(out), {images}, [apply](const ad::Array&, const ad::Array& g, ad::ParentGrads pg) {
    ad::Array& gx = *pg[0];
    apply([&](std::size_t o, std::size_t s, double k) { gx[s] += k * g[o]; });
  });
}

void write_features(std::ostream& out, const ad::Array& features) {
  const ad::Shape& shape = features.shape();
  require(shape.size() <= kMaxRank, "E_ARG", "feature rank too large");
  out.write(kMagic, 4);
  write_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) {
    require(d <= 0xffffffffu, "E_ARG", "feature dimension too large");
    write_u32(out, static_cast<std::uint32_t>(d));
  }
  for (double v : features.data()) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
  }
  require(static_cast<bool>(out), "E_IO", "failed to write features");
}

ad::Array read_features(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  require(static_cast<bool>(in) && std::memcmp(magic, kMagic, 4) == 0, "E_PARSE", "not a feature file");
  const std::uint32_t rank = read_u32(in);
  require(rank <= kMaxRank, "E_PARSE", "feature rank too large");
  ad::Shape shape;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape.push_back(read_u32(in));
    count *= shape.back();
    require(count <= (std::size_t(1) << 32), "E_PARSE", "feature payload too large");
  }
  std::vector<float> payload(count);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(4 * count));
  require(static_cast<bool>(in), "E_PARSE", "truncated feature payload");
  return ad::Array(shape, std::vector<double>(payload.begin(), payload.end()));
}

void save_features(const ad::Array& features, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "E_IO", "cannot open " + path);
  write_features(out, features);
}

ad::Array load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "E_IO", "cannot open " + path);
  return read_features(in);
}

}  // namespace ss3d
