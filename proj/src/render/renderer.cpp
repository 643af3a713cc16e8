#include "ss3d/render/renderer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <span>

#include "ss3d/common/error.hpp"

namespace ss3d {
namespace {

// Faces farther than this (in units of sigma) outside a pixel are skipped;
// their coverage is below sigmoid(-30) ~ 1e-13.
constexpr double kCutoff = 30.0;

double softplus(double s) { return std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s))); }

double stable_sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

// (b - a) x (p - a)
double edge_fn(const Vec2& a, const Vec2& b, const Vec2& p) {
  return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
}

// Gradient of edge_fn w.r.t. a, b and p scaled by g.
void edge_fn_grad(const Vec2& a, const Vec2& b, const Vec2& p, double g, Vec2* ga, Vec2* gb, Vec2* gp) {
  if (ga) *ga += g * Vec2(b[1] - p[1], p[0] - b[0]);
  if (gb) *gb += g * Vec2(p[1] - a[1], a[0] - p[0]);
  if (gp) *gp += g * Vec2(a[1] - b[1], b[0] - a[0]);
}

struct SegmentPoint {
  double d2 = 0.0;
  double t = 0.0;
  Vec2 closest;
};

SegmentPoint closest_on_segment(const Vec2& a, const Vec2& b, const Vec2& p) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  SegmentPoint r;
  r.t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  r.closest = a + r.t * ab;
  r.d2 = (p - r.closest).squaredNorm();
  return r;
}

// Gradient of |p - closest(a, b)|^2 w.r.t. the segment ends; the closest
// point moves along the segment without changing the distance to first order.
void segment_d2_grad(const SegmentPoint& sp, const Vec2& p, double g, Vec2& ga, Vec2& gb) {
  const Vec2 diff = p - sp.closest;
  ga += g * -2.0 * diff * (1.0 - sp.t);
  gb += g * -2.0 * diff * sp.t;
}

struct Bins {
  std::vector<std::size_t> start;
  std::vector<std::uint32_t> items;

  std::span<const std::uint32_t> at(std::size_t pixel) const {
    return {items.data() + start[pixel], start[pixel + 1] - start[pixel]};
  }
};

// Pixel index range {x0, x1, y0, y1} whose centers j + 0.5 lie in the expanded box.
std::array<long, 4> pixel_range(double x0, double x1, double y0, double y1, double reach, std::size_t width,
                                std::size_t height) {
  return {std::max(0L, static_cast<long>(std::ceil(x0 - reach - 0.5))),
          std::min(static_cast<long>(width) - 1, static_cast<long>(std::floor(x1 + reach - 0.5))),
          std::max(0L, static_cast<long>(std::ceil(y0 - reach - 0.5))),
          std::min(static_cast<long>(height) - 1, static_cast<long>(std::floor(y1 + reach - 0.5)))};
}

Bins bin_ranges(const std::vector<std::array<long, 4>>& ranges, std::size_t width, std::size_t height) {
  Bins bins;
  bins.start.assign(width * height + 1, 0);
  for (const auto& r : ranges) {
    for (long y = r[2]; y <= r[3]; ++y) {
      for (long x = r[0]; x <= r[1]; ++x) ++bins.start[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x) + 1];
    }
  }
  for (std::size_t i = 0; i < width * height; ++i) bins.start[i + 1] += bins.start[i];
  bins.items.assign(bins.start.back(), 0);
  std::vector<std::size_t> fill(bins.start.begin(), bins.start.end() - 1);
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    const auto& r = ranges[i];
    for (long y = r[2]; y <= r[3]; ++y) {
      for (long x = r[0]; x <= r[1]; ++x) {
        bins.items[fill[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)]++] = static_cast<std::uint32_t>(i);
      }
    }
  }
  return bins;
}

struct Lerp {
  std::size_t i0 = 0;
  std::size_t i1 = 0;
  double t = 0.0;
  bool clamped = false;
};

// Same convention as ad::bilinear_sample: texel centers at +0.5, edge clamping.
Lerp lerp_axis(double coord, std::size_t size) {
  Lerp a;
  double c = coord - 0.5;
  const double hi = static_cast<double>(size - 1);
  if (size == 1) return {0, 0, 0.0, true};
  if (c <= 0.0) {
    a.clamped = c < 0.0;
    c = 0.0;
  } else if (c >= hi) {
    a.clamped = c > hi;
    c = hi;
  }
  std::size_t f = static_cast<std::size_t>(std::floor(c));
  if (f >= size - 1) f = size - 2;
  a.i0 = f;
  a.i1 = f + 1;
  a.t = c - static_cast<double>(f);
  return a;
}

struct FaceData {
  std::array<Vec2, 3> p;
  std::array<double, 3> q{};
  double area2 = 0.0;
  std::array<std::size_t, 3> v{};
};

// One face's contribution at one pixel.
struct Entry {
  std::size_t face = 0;
  std::array<double, 3> w{};
  std::array<double, 3> b{};
  double bsum = 1.0;
  double sign = 1.0;
  int edge = 0;  // nearest edge (k, k + 1)
  SegmentPoint nearest;
  double s = 0.0;      // signed d^2 / sigma
  double cover = 0.0;  // sigmoid(s)
  double q = 0.0;
  Vec2 uv;
  Vec3 texel = Vec3::Zero();
  Vec3 n = Vec3::Zero();
  double nnorm = 0.0;
  double ndotl = 0.0;
  double shade = 1.0;
  Vec3 color = Vec3::Zero();
};

struct ContourEdge {
  std::size_t v0 = 0;
  std::size_t v1 = 0;
  Vec2 a;
  Vec2 b;
};

struct RasterContext {
  RenderMesh mesh;
  std::size_t height = 0;
  std::size_t width = 0;
  double sigma = 1.0;
  double gamma = 1.0;
  const ad::Array* normals = nullptr;
  const ad::Array* texture = nullptr;
  const ad::Array* light = nullptr;
  std::vector<FaceData> faces;
  std::vector<ContourEdge> contour;
  Bins face_bins;
  Bins contour_bins;
};

bool covered(const RasterContext& ctx, const Vec2& p) {
  const long x = static_cast<long>(std::floor(p[0])), y = static_cast<long>(std::floor(p[1]));
  if (x < 0 || y < 0 || x >= static_cast<long>(ctx.width) || y >= static_cast<long>(ctx.height)) return false;
  for (std::uint32_t f : ctx.face_bins.at(static_cast<std::size_t>(y) * ctx.width + static_cast<std::size_t>(x))) {
    const FaceData& fd = ctx.faces[f];
    const double w0 = edge_fn(fd.p[1], fd.p[2], p) / fd.area2;
    const double w1 = edge_fn(fd.p[2], fd.p[0], p) / fd.area2;
    const double w2 = edge_fn(fd.p[0], fd.p[1], p) / fd.area2;
    if (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0) return true;
  }
  return false;
}

void build_context(RasterContext& ctx, const ad::Array& screen) {
  const RenderMesh& mesh = ctx.mesh;
  const double reach = std::sqrt(kCutoff * ctx.sigma);
  auto point = [&](std::size_t v) { return Vec2(screen[3 * v], screen[3 * v + 1]); };
  ctx.faces.clear();
  ctx.faces.reserve(mesh.faces.size());
  std::vector<std::array<long, 4>> ranges;
  for (const Face& f : mesh.faces) {
    FaceData fd;
    for (std::size_t k = 0; k < 3; ++k) {
      fd.v[k] = f[k];
      fd.p[k] = point(f[k]);
      fd.q[k] = screen[3 * f[k] + 2];
    }
    fd.area2 = edge_fn(fd.p[0], fd.p[1], fd.p[2]);
    ctx.faces.push_back(fd);
    std::array<long, 4> range{0, -1, 0, -1};
    if (std::abs(fd.area2) > 1e-12) {
      range = pixel_range(std::min({fd.p[0][0], fd.p[1][0], fd.p[2][0]}), std::max({fd.p[0][0], fd.p[1][0], fd.p[2][0]}),
                          std::min({fd.p[0][1], fd.p[1][1], fd.p[2][1]}), std::max({fd.p[0][1], fd.p[1][1], fd.p[2][1]}),
                          reach, ctx.width, ctx.height);
    }
    ranges.push_back(range);
  }
  ctx.face_bins = bin_ranges(ranges, ctx.width, ctx.height);

  ctx.contour.clear();
  ranges.clear();
  for (const auto& e : mesh.edges) {
    const std::size_t v0 = std::size_t(e[0]), v1 = std::size_t(e[1]);
    const Vec2 a = point(v0), b = point(v1);
    const double s0 = edge_fn(a, b, point(std::size_t(e[2])));
    if (s0 == 0.0) continue;
    if (e[3] >= 0 && edge_fn(a, b, point(std::size_t(e[3]))) * s0 < 0.0) continue;
    // Step off the midpoint away from the faces.
    const Vec2 ab = b - a;
    const double len = ab.norm();
    if (len == 0.0) continue;
    const Vec2 away = Vec2(ab[1], -ab[0]) / len * (s0 > 0.0 ? 1.0 : -1.0);
    if (covered(ctx, 0.5 * (a + b) + 1e-4 * away)) continue;
    ctx.contour.push_back({v0, v1, a, b});
    ranges.push_back(pixel_range(std::min(a[0], b[0]), std::max(a[0], b[0]), std::min(a[1], b[1]),
                                 std::max(a[1], b[1]), reach, ctx.width, ctx.height));
  }
  ctx.contour_bins = bin_ranges(ranges, ctx.width, ctx.height);
}

bool evaluate_geometry(const RasterContext& ctx, std::size_t face, const Vec2& pixel, Entry& e) {
  const FaceData& fd = ctx.faces[face];
  e.face = face;
  e.w[0] = edge_fn(fd.p[1], fd.p[2], pixel) / fd.area2;
  e.w[1] = edge_fn(fd.p[2], fd.p[0], pixel) / fd.area2;
  e.w[2] = edge_fn(fd.p[0], fd.p[1], pixel) / fd.area2;
  const bool inside = e.w[0] >= 0.0 && e.w[1] >= 0.0 && e.w[2] >= 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    const SegmentPoint sp = closest_on_segment(fd.p[std::size_t(k)], fd.p[std::size_t(k + 1) % 3], pixel);
    if (sp.d2 < best) {
      best = sp.d2;
      e.edge = k;
      e.nearest = sp;
    }
  }
  e.sign = inside ? 1.0 : -1.0;
  if (!inside && best / ctx.sigma > kCutoff) return false;
  e.s = e.sign * best / ctx.sigma;
  e.cover = stable_sigmoid(e.s);

  e.bsum = 0.0;
  for (int k = 0; k < 3; ++k) {
    e.b[static_cast<std::size_t>(k)] = std::clamp(e.w[static_cast<std::size_t>(k)], 0.0, 1.0);
    e.bsum += e.b[static_cast<std::size_t>(k)];
  }
  for (double& v : e.b) v /= e.bsum;
  e.q = e.b[0] * fd.q[0] + e.b[1] * fd.q[1] + e.b[2] * fd.q[2];
  return true;
}

void evaluate_appearance(const RasterContext& ctx, Entry& e) {
  const FaceData& fd = ctx.faces[e.face];
  const std::size_t face = e.face;
  if (!ctx.texture) return;
  const ad::Array& uv = ctx.mesh.uv;
  e.uv = Vec2::Zero();
  for (std::size_t k = 0; k < 3; ++k) e.uv += e.b[k] * Vec2(uv[(3 * face + k) * 2], uv[(3 * face + k) * 2 + 1]);
  const ad::Array& tex = *ctx.texture;
  const std::size_t th = tex.shape()[0], tw = tex.shape()[1];
  const Lerp lx = lerp_axis(e.uv[0], tw);
  const Lerp ly = lerp_axis(e.uv[1], th);
  for (std::size_t c = 0; c < 3; ++c) {
    const double v00 = tex[(ly.i0 * tw + lx.i0) * 3 + c];
    const double v01 = tex[(ly.i0 * tw + lx.i1) * 3 + c];
    const double v10 = tex[(ly.i1 * tw + lx.i0) * 3 + c];
    const double v11 = tex[(ly.i1 * tw + lx.i1) * 3 + c];
    e.texel[static_cast<int>(c)] = (1 - ly.t) * ((1 - lx.t) * v00 + lx.t * v01) + ly.t * ((1 - lx.t) * v10 + lx.t * v11);
  }
  e.shade = 1.0;
  if (ctx.light) {
    const ad::Array& nv = *ctx.normals;
    const ad::Array& l = *ctx.light;
    e.n = Vec3::Zero();
    for (std::size_t k = 0; k < 3; ++k) {
      const std::size_t v = fd.v[k];
      e.n += e.b[k] * Vec3(nv[3 * v], nv[3 * v + 1], nv[3 * v + 2]);
    }
    e.nnorm = e.n.norm();
    e.ndotl = e.nnorm > 0.0 ? e.n.dot(Vec3(l[2], l[3], l[4])) / e.nnorm : 0.0;
    e.shade = l[0] + l[1] * std::max(0.0, e.ndotl);
  }
  e.color = e.texel * e.shade;
}

struct PixelResult {
  double alpha = 0.0;
  bool inside = false;
  // Inside: index of the nearest contour edge, -1 when none is in reach.
  std::int64_t contour = -1;
  SegmentPoint edge_point;
  // Outside: the nearest face.
  Entry nearest;
  Vec3 color = Vec3::Zero();
  double weight_sum = 0.0;
  double qmax = 0.0;
  double log_weight_max = 0.0;
};

// Color blending weight relative to the pixel maximum, in log space.
double log_weight(const RasterContext& ctx, const Entry& e) { return -softplus(-e.s) + e.q / ctx.gamma; }

// Fills `entries` with the faces that contribute color at pixel (x, y).
PixelResult shade_pixel(const RasterContext& ctx, std::size_t x, std::size_t y, std::vector<Entry>& entries) {
  entries.clear();
  PixelResult r;
  const Vec2 pixel(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
  const std::size_t pix = y * ctx.width + x;
  Entry e;
  double nearest = -std::numeric_limits<double>::infinity();
  r.log_weight_max = -std::numeric_limits<double>::infinity();
  auto add = [&](std::uint32_t f) {
    if (!evaluate_geometry(ctx, f, pixel, e)) return;
    r.inside = r.inside || e.sign > 0.0;
    if (e.sign < 0.0 && e.s > nearest) {
      nearest = e.s;
      r.nearest = e;
    }
    r.log_weight_max = std::max(r.log_weight_max, log_weight(ctx, e));
    entries.push_back(e);
  };
  // Faces containing the pixel first; they bound which outside faces can matter.
  thread_local std::vector<std::pair<std::uint32_t, double>> outside;
  outside.clear();
  for (std::uint32_t f : ctx.face_bins.at(pix)) {
    const FaceData& fd = ctx.faces[f];
    double line2 = 0.0;  // squared distance to the farthest violated edge line
    for (std::size_t k = 0; k < 3; ++k) {
      const double ek = edge_fn(fd.p[(k + 1) % 3], fd.p[(k + 2) % 3], pixel) / fd.area2;
      if (ek >= 0.0) continue;
      const double line = ek * fd.area2;
      line2 = std::max(line2, line * line / (fd.p[(k + 2) % 3] - fd.p[(k + 1) % 3]).squaredNorm());
    }
    if (line2 == 0.0) {
      add(f);
    } else if (line2 <= kCutoff * ctx.sigma) {
      outside.emplace_back(f, line2);
    }
  }
  for (const auto& [f, line2] : outside) {
    if (r.inside) {
      if (!ctx.texture) break;
      const FaceData& fd = ctx.faces[f];
      const double qbound = std::max({fd.q[0], fd.q[1], fd.q[2]});
      if (qbound / ctx.gamma - line2 / ctx.sigma < r.log_weight_max - kCutoff) continue;
    }
    add(f);
  }
  if (entries.empty()) return r;

  if (r.inside) {
    r.alpha = 1.0;
    double best = kCutoff * ctx.sigma;
    for (std::uint32_t c : ctx.contour_bins.at(pix)) {
      const SegmentPoint sp = closest_on_segment(ctx.contour[c].a, ctx.contour[c].b, pixel);
      if (sp.d2 < best) {
        best = sp.d2;
        r.contour = c;
        r.edge_point = sp;
      }
    }
    if (r.contour >= 0) r.alpha = stable_sigmoid(best / ctx.sigma);
  } else {
    r.alpha = stable_sigmoid(nearest);
  }

  if (!ctx.texture) return r;
  // Entries far below the strongest weight change the color by less than exp(-kCutoff).
  std::size_t kept = 0;
  for (Entry& entry : entries) {
    if (log_weight(ctx, entry) < r.log_weight_max - kCutoff) continue;
    entries[kept++] = entry;
  }
  entries.resize(kept);
  r.qmax = -std::numeric_limits<double>::infinity();
  for (const Entry& entry : entries) r.qmax = std::max(r.qmax, entry.q);
  for (Entry& entry : entries) {
    evaluate_appearance(ctx, entry);
    const double weight = entry.cover * std::exp((entry.q - r.qmax) / ctx.gamma);
    r.weight_sum += weight;
    r.color += weight * entry.color;
  }
  if (r.weight_sum > 0.0) r.color /= r.weight_sum;
  return r;
}

struct Grads {
  ad::Array* screen = nullptr;
  ad::Array* normals = nullptr;
  ad::Array* texture = nullptr;
  ad::Array* light = nullptr;
};

void backward_entry(const RasterContext& ctx, const Entry& e, const Vec2& pixel, double g_s, double g_q,
                    const Vec3& g_color, const Grads& out) {
  const FaceData& fd = ctx.faces[e.face];
  std::array<double, 3> g_b{0.0, 0.0, 0.0};

  // Depth.
  for (std::size_t k = 0; k < 3; ++k) {
    if (out.screen) (*out.screen)[3 * fd.v[k] + 2] += g_q * e.b[k];
    g_b[k] += g_q * fd.q[k];
  }

  // Color = texel * shade.
  if (ctx.texture && g_color.squaredNorm() > 0.0) {
    const Vec3 g_texel = g_color * e.shade;
    const double g_shade = g_color.dot(e.texel);
    const ad::Array& tex = *ctx.texture;
    const std::size_t th = tex.shape()[0], tw = tex.shape()[1];
    const Lerp lx = lerp_axis(e.uv[0], tw);
    const Lerp ly = lerp_axis(e.uv[1], th);
    Vec2 g_uv = Vec2::Zero();
    for (std::size_t c = 0; c < 3; ++c) {
      const double gt = g_texel[static_cast<int>(c)];
      const std::size_t i00 = (ly.i0 * tw + lx.i0) * 3 + c;
      const std::size_t i01 = (ly.i0 * tw + lx.i1) * 3 + c;
      const std::size_t i10 = (ly.i1 * tw + lx.i0) * 3 + c;
      const std::size_t i11 = (ly.i1 * tw + lx.i1) * 3 + c;
      if (out.texture) {
        ad::Array& gt_arr = *out.texture;
        gt_arr[i00] += gt * (1 - ly.t) * (1 - lx.t);
        gt_arr[i01] += gt * (1 - ly.t) * lx.t;
        gt_arr[i10] += gt * ly.t * (1 - lx.t);
        gt_arr[i11] += gt * ly.t * lx.t;
      }
      if (!lx.clamped) g_uv[0] += gt * ((1 - ly.t) * (tex[i01] - tex[i00]) + ly.t * (tex[i11] - tex[i10]));
      if (!ly.clamped) g_uv[1] += gt * ((1 - lx.t) * (tex[i10] - tex[i00]) + lx.t * (tex[i11] - tex[i01]));
    }
    const ad::Array& uv = ctx.mesh.uv;
    for (std::size_t k = 0; k < 3; ++k) {
      g_b[k] += g_uv.dot(Vec2(uv[(3 * e.face + k) * 2], uv[(3 * e.face + k) * 2 + 1]));
    }
    if (ctx.light) {
      const ad::Array& l = *ctx.light;
      const Vec3 dir(l[2], l[3], l[4]);
      if (out.light) (*out.light)[0] += g_shade;
      if (e.ndotl > 0.0 && e.nnorm > 0.0) {
        const Vec3 nhat = e.n / e.nnorm;
        if (out.light) {
          ad::Array& gl = *out.light;
          gl[1] += g_shade * e.ndotl;
          for (int c = 0; c < 3; ++c) gl[static_cast<std::size_t>(2 + c)] += g_shade * l[1] * nhat[c];
        }
        const Vec3 g_nhat = g_shade * l[1] * dir;
        const Vec3 g_n = (g_nhat - nhat * nhat.dot(g_nhat)) / e.nnorm;
        const ad::Array& nv = *ctx.normals;
        for (std::size_t k = 0; k < 3; ++k) {
          const std::size_t v = fd.v[k];
          if (out.normals) {
            for (int c = 0; c < 3; ++c) (*out.normals)[3 * v + static_cast<std::size_t>(c)] += e.b[k] * g_n[c];
          }
          g_b[k] += g_n.dot(Vec3(nv[3 * v], nv[3 * v + 1], nv[3 * v + 2]));
        }
      }
    }
  }

  if (!out.screen) return;
  ad::Array& gs = *out.screen;
  std::array<Vec2, 3> g_p{Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};

  // Signed distance: s = sign * |pixel - closest|^2 / sigma, closest on edge (k, k + 1).
  if (g_s != 0.0) {
    const std::size_t ka = static_cast<std::size_t>(e.edge);
    segment_d2_grad(e.nearest, pixel, g_s * e.sign / ctx.sigma, g_p[ka], g_p[(ka + 1) % 3]);
  }

  // Renormalized clamped barycentrics b = clamp(w) / sum, w_k = E_k / area2.
  double gb_dot_b = 0.0;
  for (std::size_t k = 0; k < 3; ++k) gb_dot_b += g_b[k] * e.b[k];
  std::array<double, 3> g_w{0.0, 0.0, 0.0};
  bool any = false;
  for (std::size_t k = 0; k < 3; ++k) {
    if (e.w[k] > 0.0 && e.w[k] < 1.0) {
      g_w[k] = (g_b[k] - gb_dot_b) / e.bsum;
      any = any || g_w[k] != 0.0;
    }
  }
  if (any) {
    double g_area = 0.0;
    for (std::size_t k = 0; k < 3; ++k) g_area -= g_w[k] * e.w[k] / fd.area2;
    edge_fn_grad(fd.p[1], fd.p[2], pixel, g_w[0] / fd.area2, &g_p[1], &g_p[2], nullptr);
    edge_fn_grad(fd.p[2], fd.p[0], pixel, g_w[1] / fd.area2, &g_p[2], &g_p[0], nullptr);
    edge_fn_grad(fd.p[0], fd.p[1], pixel, g_w[2] / fd.area2, &g_p[0], &g_p[1], nullptr);
    edge_fn_grad(fd.p[0], fd.p[1], fd.p[2], g_area, &g_p[0], &g_p[1], &g_p[2]);
  }
  for (std::size_t k = 0; k < 3; ++k) {
    gs[3 * fd.v[k]] += g_p[k][0];
    gs[3 * fd.v[k] + 1] += g_p[k][1];
  }
}

ad::Var pool(ad::Var x, std::size_t factor) {
  if (factor == 1) return x;
  const ad::Shape& s = x.shape();
  const std::size_t c = s.size() == 3 ? s[2] : 1;
  ad::Var r = ad::reshape(x, {s[0] / factor, factor, s[1] / factor, factor, c});
  r = ad::mean_axis(ad::mean_axis(r, 3), 1);
  if (s.size() == 2) return ad::reshape(r, {s[0] / factor, s[1] / factor});
  return r;
}

}  // namespace

void RenderConfig::validate() const {
  require(height >= 8 && width >= 8, "E_CONFIG", "render size must be at least 8 x 8");
  require(std::isfinite(sigma) && sigma > 0.0, "E_CONFIG", "render sigma must be positive");
  require(std::isfinite(gamma_ratio) && gamma_ratio > 0.0, "E_CONFIG", "render gamma ratio must be positive");
  require(supersample >= 1, "E_CONFIG", "supersample must be at least 1");
  camera.validate();
}

ad::Array Lighting::to_array() const {
  return ad::Array({5}, {ambient, directional, direction[0], direction[1], direction[2]});
}

void Lighting::validate() const {
  require(ambient >= 0.0 && ambient <= 1.0 && directional >= 0.0 && directional <= 1.0, "E_CONFIG",
          "light intensities must be in [0, 1]");
  require(std::abs(direction.norm() - 1.0) < 1e-9, "E_CONFIG", "light direction must be a unit vector");
}

Lighting sample_light(Rng& rng, const LightRanges& ranges) {
  Lighting l;
  const double z = uniform(rng, 0.0, 1.0);
  const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  l.direction = Vec3(r * std::cos(phi), r * std::sin(phi), z).normalized();
  l.ambient = uniform(rng, ranges.ambient_lo, ranges.ambient_hi);
  l.directional = uniform(rng, ranges.directional_lo, ranges.directional_hi);
  return l;
}

RenderMesh RenderMesh::build(const TriangleMesh& mesh, const TextureAtlas& atlas) {
  RenderMesh rm = build(mesh);
  require(atlas.num_faces == mesh.num_faces(), "E_SHAPE", "atlas face count does not match mesh");
  rm.uv = atlas.corner_array();
  return rm;
}

RenderMesh RenderMesh::build(const TriangleMesh& mesh) {
  mesh.validate();
  RenderMesh rm;
  rm.faces = mesh.faces;
  rm.corners = face_corners(mesh.faces);
  rm.num_vertices = mesh.num_vertices();
  if (mesh.faces.empty()) return rm;
  auto third = [&](std::int64_t f, std::uint32_t a, std::uint32_t b) -> std::int64_t {
    if (f < 0) return -1;
    for (std::uint32_t v : mesh.faces[std::size_t(f)]) {
      if (v != a && v != b) return v;
    }
    return -1;
  };
  for (const MeshEdge& e : MeshTopology::build(mesh).edges) {
    rm.edges.push_back({e.v0, e.v1, third(e.face0, e.v0, e.v1), third(e.face1, e.v0, e.v1)});
  }
  return rm;
}

ScreenVertices project_vertices(ad::Var vertices, ad::Var pose, const RenderConfig& cfg) {
  cfg.validate();
  require(vertices.shape().size() == 2 && vertices.shape()[1] == 3, "E_SHAPE", "vertices must be N x 3");
  for (double v : vertices.value().values()) require(std::isfinite(v), "E_NONFINITE", "non-finite vertex position");
  ad::Tape& tape = *vertices.tape();
  const std::size_t n = vertices.shape()[0];
  ad::Var homog = ad::concat({vertices, tape.constant(ad::Array({n, 1}, 1.0))}, 1);
  ad::Var eye4 = ad::matmul(homog, ad::transpose(view_matrix(pose, cfg.camera)));
  ad::Var clip = ad::matmul(eye4, ad::transpose(projection_matrix(pose, cfg.camera)));
  ad::Var w = ad::slice(clip, 1, 3, 4);
  for (std::size_t i = 0; i < n; ++i) {
    require(w.value()[i] > cfg.camera.near_plane, "E_FRUSTUM", "vertex is not in front of the near plane");
  }
  const double width = static_cast<double>(cfg.width * cfg.supersample);
  const double height = static_cast<double>(cfg.height * cfg.supersample);
  ad::Var px = (ad::slice(clip, 1, 0, 1) / w + 1.0) * (0.5 * width);
  ad::Var py = (1.0 - ad::slice(clip, 1, 1, 2) / w) * (0.5 * height);
  const double near = cfg.camera.near_plane, far = cfg.camera.far_plane;
  ad::Var nearness = (far - w) / (far - near);
  return {ad::concat({px, py, nearness}, 1), ad::slice(eye4, 1, 0, 3)};
}

ad::Var vertex_normals(ad::Var eye, const FaceCorners& corners, std::size_t num_vertices) {
  ad::Var cross = face_cross_products(eye, corners);
  return ad::scatter_add(cross, corners.c0, num_vertices) + ad::scatter_add(cross, corners.c1, num_vertices) +
         ad::scatter_add(cross, corners.c2, num_vertices);
}

ad::Var soft_raster(const RenderMesh& mesh, ad::Var screen, std::optional<ad::Var> normals,
                    std::optional<ad::Var> texture, std::optional<ad::Var> light, std::size_t height,
                    std::size_t width, double sigma, double gamma) {
  require(screen.shape() == ad::Shape{mesh.num_vertices, 3}, "E_SHAPE", "screen vertices must be N x 3");
  require(normals.has_value() == light.has_value(), "E_ARG", "normals and light go together");
  require(!light || texture, "E_ARG", "lighting needs a texture");
  if (texture) {
    require(texture->shape().size() == 3 && texture->shape()[2] == 3, "E_SHAPE", "texture must be T x T x 3");
    require(mesh.uv.shape() == ad::Shape{mesh.faces.size(), 3, 2}, "E_SHAPE", "render mesh has no atlas coordinates");
  }
  if (light) require(light->size() == 5, "E_SHAPE", "light must have 5 entries");
  if (normals) require(normals->shape() == screen.shape(), "E_SHAPE", "normals must be N x 3");

  auto ctx = std::make_shared<RasterContext>();
  ctx->mesh = mesh;
  ctx->height = height;
  ctx->width = width;
  ctx->sigma = sigma;
  ctx->gamma = gamma;
  ctx->normals = normals ? &normals->value() : nullptr;
  ctx->texture = texture ? &texture->value() : nullptr;
  ctx->light = light ? &light->value() : nullptr;
  build_context(*ctx, screen.value());

  ad::Array out({height, width, 4});
  std::vector<Entry> entries;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const PixelResult r = shade_pixel(*ctx, x, y, entries);
      const std::size_t o = (y * width + x) * 4;
      out[o] = r.color[0];
      out[o + 1] = r.color[1];
      out[o + 2] = r.color[2];
      out[o + 3] = r.alpha;
    }
  }

  std::vector<ad::Var> parents{screen};
  if (normals) parents.push_back(*normals);
  if (texture) parents.push_back(*texture);
  if (light) parents.push_back(*light);
  const bool has_normals = normals.has_value();
  const bool has_texture = texture.has_value();
  return screen.tape()->record(std::move(out), parents,
                               [ctx, has_normals, has_texture](const ad::Array&, const ad::Array& g, ad::ParentGrads pg) {
    Grads grads;
    std::size_t slot = 0;
    grads.screen = pg[slot++];
    if (has_normals) grads.normals = pg[slot++];
    if (has_texture) grads.texture = pg[slot++];
    if (ctx->light) grads.light = pg[slot++];
    std::vector<Entry> entries;
    for (std::size_t y = 0; y < ctx->height; ++y) {
      for (std::size_t x = 0; x < ctx->width; ++x) {
        const std::size_t o = (y * ctx->width + x) * 4;
        const Vec3 g_color(g[o], g[o + 1], g[o + 2]);
        const double g_alpha = g[o + 3];
        if (g_color.squaredNorm() == 0.0 && g_alpha == 0.0) continue;
        const PixelResult r = shade_pixel(*ctx, x, y, entries);
        if (entries.empty()) continue;
        const Vec2 pixel(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
        const double g_cover = g_alpha * r.alpha * (1.0 - r.alpha);
        if (!r.inside && g_cover != 0.0) backward_entry(*ctx, r.nearest, pixel, g_cover, 0.0, Vec3::Zero(), grads);
        if (r.inside && r.contour >= 0 && grads.screen && g_cover != 0.0) {
          const ContourEdge& edge = ctx->contour[std::size_t(r.contour)];
          Vec2 ga = Vec2::Zero(), gb = Vec2::Zero();
          segment_d2_grad(r.edge_point, pixel, g_cover / ctx->sigma, ga, gb);
          ad::Array& gs = *grads.screen;
          gs[3 * edge.v0] += ga[0];
          gs[3 * edge.v0 + 1] += ga[1];
          gs[3 * edge.v1] += gb[0];
          gs[3 * edge.v1 + 1] += gb[1];
        }
        if (!ctx->texture) continue;
        for (const Entry& e : entries) {
          const double ratio = e.cover * std::exp((e.q - r.qmax) / ctx->gamma) / r.weight_sum;
          const double dot = g_color.dot(e.color - r.color);
          // d log(weight) / d s = 1 - cover.
          const double g_s = dot * ratio * (1.0 - e.cover);
          const double g_q = dot * ratio / ctx->gamma;
          backward_entry(*ctx, e, pixel, g_s, g_q, g_color * ratio, grads);
        }
      }
    }
  });
}

RenderOutput rasterize(const RenderMesh& mesh, ad::Var vertices, ad::Var texture, ad::Var pose,
                       std::optional<ad::Var> light, ad::Var background, const RenderConfig& cfg) {
  cfg.validate();
  require(background.shape() == ad::Shape{cfg.height, cfg.width, 3}, "E_SHAPE", "background must be H x W x 3");
  const std::size_t ss = cfg.supersample;
  const std::size_t h = cfg.height * ss, w = cfg.width * ss;
  ad::Var raster;
  if (mesh.faces.empty()) {
    raster = vertices.tape()->constant(ad::Array({h, w, 4}));
  } else {
    const ScreenVertices sv = project_vertices(vertices, pose, cfg);
    std::optional<ad::Var> normals;
    if (light) normals = vertex_normals(sv.eye, mesh.corners, mesh.num_vertices);
    raster = soft_raster(mesh, sv.screen, normals, texture, light, h, w, cfg.sigma * double(ss * ss), cfg.gamma());
  }
  ad::Var alpha = ad::slice(raster, 2, 3, 4);
  ad::Var premultiplied = pool(ad::slice(raster, 2, 0, 3) * alpha, ss);
  ad::Var coverage = pool(alpha, ss);
  ad::Var image = premultiplied + (1.0 - coverage) * background;
  return {image, ad::reshape(coverage, {cfg.height, cfg.width})};
}

ad::Var render_silhouette(const RenderMesh& mesh, ad::Var vertices, ad::Var pose, const RenderConfig& cfg) {
  cfg.validate();
  const std::size_t ss = cfg.supersample;
  if (mesh.faces.empty()) return vertices.tape()->constant(ad::Array({cfg.height, cfg.width}));
  const ScreenVertices sv = project_vertices(vertices, pose, cfg);
  ad::Var raster = soft_raster(mesh, sv.screen, std::nullopt, std::nullopt, std::nullopt, cfg.height * ss,
                               cfg.width * ss, cfg.sigma * double(ss * ss), cfg.gamma());
  return pool(ad::reshape(ad::slice(raster, 2, 3, 4), {cfg.height * ss, cfg.width * ss}), ss);
}

ad::Array hard_mask(const TriangleMesh& mesh, const PoseParams& pose, const RenderConfig& cfg, std::size_t samples) {
  require(samples >= 1, "E_ARG", "need at least one sample per pixel axis");
  RenderConfig hi = cfg;
  hi.supersample = samples;
  ad::Tape tape;
  const ad::Array screen =
      project_vertices(tape.constant(mesh.vertex_array()), tape.constant(pose.to_vector()), hi).screen.value();
  const std::size_t h = cfg.height * samples, w = cfg.width * samples;
  ad::Array mask({h, w});
  for (const Face& f : mesh.faces) {
    std::array<Vec2, 3> p;
    for (std::size_t k = 0; k < 3; ++k) p[k] = Vec2(screen[3 * f[k]], screen[3 * f[k] + 1]);
    const double area = edge_fn(p[0], p[1], p[2]);
    if (area == 0.0) continue;
    const double x0 = std::min({p[0][0], p[1][0], p[2][0]}), x1 = std::max({p[0][0], p[1][0], p[2][0]});
    const double y0 = std::min({p[0][1], p[1][1], p[2][1]}), y1 = std::max({p[0][1], p[1][1], p[2][1]});
    const long xa = std::max(0L, static_cast<long>(std::floor(x0))), xb = std::min(long(w) - 1, static_cast<long>(x1));
    const long ya = std::max(0L, static_cast<long>(std::floor(y0))), yb = std::min(long(h) - 1, static_cast<long>(y1));
    for (long y = ya; y <= yb; ++y) {
      for (long x = xa; x <= xb; ++x) {
        const Vec2 c(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
        const double e0 = edge_fn(p[1], p[2], c) / area, e1 = edge_fn(p[2], p[0], c) / area,
                     e2 = edge_fn(p[0], p[1], c) / area;
        if (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) mask[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = 1.0;
      }
    }
  }
  return mask;
}

double mask_iou(const ad::Array& a, const ad::Array& b) {
  require(a.shape() == b.shape(), "E_SHAPE", "masks must have equal shapes");
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] > 0.5, y = b[i] > 0.5;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0.0 ? 1.0 : inter / uni;
}

ad::Var crop_resize(ad::Var image, const CropBox& box, std::size_t out_h, std::size_t out_w) {
  require(image.shape().size() == 3, "E_SHAPE", "crop_resize needs an H x W x C image");
  const double h = static_cast<double>(image.shape()[0]), w = static_cast<double>(image.shape()[1]);
  require(box.x1 > box.x0 && box.y1 > box.y0 && out_h > 0 && out_w > 0, "E_ARG", "empty crop box");
  require(box.x0 >= 0.0 && box.y0 >= 0.0 && box.x1 <= w && box.y1 <= h, "E_ARG", "crop box leaves the image");
  ad::Array positions({out_h * out_w, 2});
  for (std::size_t i = 0; i < out_h; ++i) {
    for (std::size_t j = 0; j < out_w; ++j) {
      positions[2 * (i * out_w + j)] = box.x0 + (static_cast<double>(j) + 0.5) * (box.x1 - box.x0) / double(out_w);
      positions[2 * (i * out_w + j) + 1] = box.y0 + (static_cast<double>(i) + 0.5) * (box.y1 - box.y0) / double(out_h);
    }
  }
  ad::Var samples = ad::bilinear_sample(image, image.tape()->constant(positions));
  return ad::reshape(samples, {out_h, out_w, image.shape()[2]});
}

}  // namespace ss3d
