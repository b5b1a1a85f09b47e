#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vdiff/random.hpp"
#include "vdiff/tensor.hpp"

namespace vdiff::data {

// ---------------------------------------------------------------------------
// 8-bit RGB PNG IO (libpng), fixed settings so identical pixels give
// identical bytes.
// ---------------------------------------------------------------------------

inline void write_png_rgb8(const std::string& path, int width, int height,
                           const std::vector<unsigned char>& rgb) {
  if (static_cast<std::size_t>(width) * height * 3 != rgb.size())
    throw std::invalid_argument("write_png: buffer size does not match extents");
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("write_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("write_png: encode failed for " + path);
  }
  png_init_io(png, fp);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * width * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline std::vector<unsigned char> read_png_rgb8(const std::string& path, int& width, int& height) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("read_png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("read_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("read_png: decode failed for " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  // Normalize anything reasonable to 8-bit RGB.
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  std::vector<unsigned char> rgb(static_cast<std::size_t>(width) * height * 3);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[static_cast<std::size_t>(y)] = rgb.data() + static_cast<std::size_t>(y) * width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return rgb;
}

// ---------------------------------------------------------------------------
// Video <-> 8-bit conversion. Internal math lives in [0,1] doubles.
// ---------------------------------------------------------------------------

inline unsigned char quantize8(double v) {
  const double c = std::max(0.0, std::min(1.0, v));
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

/// [T,3,H,W] in [0,1] -> per-frame interleaved RGB bytes.
inline std::vector<unsigned char> frame_to_rgb8(const Tensor& video, int frame) {
  const int H = video.extent(2), W = video.extent(3);
  std::vector<unsigned char> rgb(static_cast<std::size_t>(H) * W * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        rgb[(static_cast<std::size_t>(y) * W + x) * 3 + static_cast<std::size_t>(c)] =
            quantize8(video.at4(frame, c, y, x));
  return rgb;
}

/// Quantizes a whole video to the 8-bit grid (what a PNG round trip yields).
inline Tensor quantize_video(const Tensor& video) {
  Tensor out = video;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = quantize8(out[i]) / 255.0;
  return out;
}

struct Clip {
  std::string name;
  Tensor blur, gt;  // [T,3,H,W] in [0,1]
  int frames() const { return blur.extent(0); }
};

// ---------------------------------------------------------------------------
// Synthetic blur videos: a textured pattern under linear drift, rendered at
// L-fold temporal super-resolution; ground truth is the centre sub-frame and
// the blurry frame is the mean of the L sub-frames.
// ---------------------------------------------------------------------------

struct BlurDatasetSpec {
  int clips = 8;
  int frames = 4;
  int height = 32;
  int width = 32;
  double velocity_min = 2.0;  // px/frame
  double velocity_max = 5.0;
  int blur_window = 5;  // L
  double eval_fraction = 0.25;
  std::uint64_t seed = 0;

  void validate() const {
    if (height < 8 || width < 8)
      throw std::invalid_argument("dataset spec: resolution below 8x8 rejected");
    if (clips < 1 || frames < 1) throw std::invalid_argument("dataset spec: need clips and frames");
    if (blur_window < 1) throw std::invalid_argument("dataset spec: blur window must be >= 1");
    if (velocity_min < 0.0 || velocity_max < velocity_min)
      throw std::invalid_argument("dataset spec: bad velocity range");
    if (eval_fraction < 0.0 || eval_fraction >= 1.0)
      throw std::invalid_argument("dataset spec: eval fraction must be in [0,1)");
  }
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t s = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  s ^= s >> 30;
  s *= 0xBF58476D1CE4E5B9ull;
  s ^= s >> 27;
  s *= 0x94D049BB133111EBull;
  s ^= s >> 31;
  return s;
}

/// Periodic band-limited value noise: a few octaves of bilinearly
/// interpolated random grids. Values stay in [0,1]; the finest octave keeps
/// genuine high-frequency content in every clip.
struct ValueNoise {
  std::vector<std::vector<double>> grids;  // one per octave, g*g values
  std::vector<int> sizes;
  std::vector<double> amps;

  static ValueNoise make(RandomSource& rng, int base, int octaves) {
    ValueNoise n;
    int g = base;
    double amp = 1.0;
    for (int o = 0; o < octaves; ++o) {
      std::vector<double> grid(static_cast<std::size_t>(g) * g);
      for (auto& v : grid) v = rng.uniform();
      n.grids.push_back(std::move(grid));
      n.sizes.push_back(g);
      n.amps.push_back(amp);
      g *= 2;
      amp *= 0.6;  // slow falloff keeps real energy in the finest octave
    }
    return n;
  }

  double sample(double u, double v) const {
    double total = 0.0, norm = 0.0;
    for (std::size_t o = 0; o < grids.size(); ++o) {
      const int g = sizes[o];
      double gu = u * g, gv = v * g;
      gu -= std::floor(gu / g) * g;
      gv -= std::floor(gv / g) * g;
      const int x0 = static_cast<int>(gu) % g, y0 = static_cast<int>(gv) % g;
      const int x1 = (x0 + 1) % g, y1 = (y0 + 1) % g;
      const double fx = gu - std::floor(gu), fy = gv - std::floor(gv);
      const auto& grid = grids[o];
      const double v00 = grid[static_cast<std::size_t>(y0) * g + x0];
      const double v01 = grid[static_cast<std::size_t>(y0) * g + x1];
      const double v10 = grid[static_cast<std::size_t>(y1) * g + x0];
      const double v11 = grid[static_cast<std::size_t>(y1) * g + x1];
      total += amps[o] * ((1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11));
      norm += amps[o];
    }
    return total / norm;
  }
};

}  // namespace detail

/// Renders one clip; identical (spec, clip_index) pairs give bit-identical
/// output, and the scene (texture + trajectory) does not depend on L.
inline std::pair<Tensor, Tensor> synthesize_clip(const BlurDatasetSpec& spec, int clip_index) {
  spec.validate();
  RandomSource rng(detail::mix_seed(spec.seed, static_cast<std::uint64_t>(clip_index)));
  const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double speed = rng.uniform(spec.velocity_min, spec.velocity_max);
  const double vx = speed * std::cos(angle), vy = speed * std::sin(angle);
  const int base = std::max(2, std::min(spec.height, spec.width) / 8);
  detail::ValueNoise noise[3] = {detail::ValueNoise::make(rng, base, 4),
                                 detail::ValueNoise::make(rng, base, 4),
                                 detail::ValueNoise::make(rng, base, 4)};
  const int T = spec.frames, H = spec.height, W = spec.width, L = spec.blur_window;
  Tensor blur({T, 3, H, W}), gt({T, 3, H, W});
  auto scene = [&](int c, int x, int y, double tau) {
    // The pattern drifts by (vx, vy) px per frame; sampling is periodic.
    const double u = (x - vx * tau) / W;
    const double v = (y - vy * tau) / H;
    return noise[c].sample(u, v);
  };
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double centre = scene(c, x, y, static_cast<double>(t));
          gt.at4(t, c, y, x) = centre;
          // Mean of the L sub-frames, accumulated as deviations from the
          // centre sample so a static scene (or L = 1) blurs to exactly gt.
          double dev = 0.0;
          for (int j = 0; j < L; ++j) {
            const double tau = t + (j - (L - 1) * 0.5) / L;
            dev += scene(c, x, y, tau) - centre;
          }
          blur.at4(t, c, y, x) = centre + dev / L;
        }
  return {std::move(blur), std::move(gt)};
}

// ---------------------------------------------------------------------------
// Frame-directory dataset: root/<clip>/{blur,gt}/%05d.png plus a manifest
// recording the train/eval split.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string name;
  int frames = 0;
  std::string split;  // "train" | "eval"
};

inline void write_manifest(const std::string& root, const std::vector<ManifestEntry>& entries) {
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& e : entries)
    clips.push_back({{"frames", e.frames}, {"name", e.name}, {"split", e.split}});
  nlohmann::json doc{{"clips", clips}};
  std::ofstream out(std::filesystem::path(root) / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("manifest: cannot write under " + root);
  out << doc.dump(2) << "\n";
}

inline std::vector<ManifestEntry> read_manifest(const std::string& root) {
  std::ifstream in(std::filesystem::path(root) / "manifest.json");
  if (!in) throw std::runtime_error("manifest: missing manifest.json under " + root);
  nlohmann::json doc = nlohmann::json::parse(in);
  std::vector<ManifestEntry> entries;
  for (const auto& c : doc.at("clips"))
    entries.push_back({c.at("name").get<std::string>(), c.at("frames").get<int>(),
                       c.at("split").get<std::string>()});
  return entries;
}

inline void save_clip(const Clip& clip, const std::string& root) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(root) / clip.name;
  fs::create_directories(base / "blur");
  fs::create_directories(base / "gt");
  const int H = clip.blur.extent(2), W = clip.blur.extent(3);
  char name[16];
  for (int t = 0; t < clip.frames(); ++t) {
    std::snprintf(name, sizeof(name), "%05d.png", t);
    write_png_rgb8((base / "blur" / name).string(), W, H, frame_to_rgb8(clip.blur, t));
    write_png_rgb8((base / "gt" / name).string(), W, H, frame_to_rgb8(clip.gt, t));
  }
}

namespace detail {

inline Tensor load_frame_dir(const std::filesystem::path& dir, const std::string& clip_name) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw std::runtime_error("dataset: clip '" + clip_name + "' is missing directory " +
                             dir.filename().string());
  std::vector<std::pair<long, fs::path>> frames;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".png") continue;
    frames.emplace_back(std::stol(e.path().stem().string()), e.path());
  }
  if (frames.empty())
    throw std::runtime_error("dataset: clip '" + clip_name + "' has no frames in " +
                             dir.filename().string());
  std::sort(frames.begin(), frames.end());
  int W = 0, H = 0;
  Tensor video;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    int w = 0, h = 0;
    const auto rgb = read_png_rgb8(frames[t].second.string(), w, h);
    if (t == 0) {
      W = w;
      H = h;
      video = Tensor({static_cast<int>(frames.size()), 3, H, W});
    } else if (w != W || h != H) {
      throw std::runtime_error("dataset: clip '" + clip_name + "' has inconsistent frame sizes");
    }
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c)
          video.at4(static_cast<int>(t), c, y, x) =
              rgb[(static_cast<std::size_t>(y) * W + x) * 3 + static_cast<std::size_t>(c)] / 255.0;
  }
  return video;
}

}  // namespace detail

inline Clip load_clip(const std::string& root, const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(root) / name;
  Clip clip;
  clip.name = name;
  clip.blur = detail::load_frame_dir(base / "blur", name);
  clip.gt = detail::load_frame_dir(base / "gt", name);
  if (!clip.blur.same_shape(clip.gt))
    throw std::runtime_error("dataset: clip '" + name + "' has mismatched blur/gt frame counts");
  return clip;
}

struct Dataset {
  std::vector<Clip> train, eval;
};

/// Loads every clip listed in the manifest; clips come back sorted
/// lexicographically within each split.
inline Dataset load_dataset(const std::string& root) {
  auto entries = read_manifest(root);
  std::sort(entries.begin(), entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.name < b.name; });
  Dataset ds;
  for (const auto& e : entries) {
    Clip clip = load_clip(root, e.name);
    if (clip.frames() != e.frames)
      throw std::runtime_error("dataset: clip '" + e.name + "' frame count disagrees with manifest");
    (e.split == "eval" ? ds.eval : ds.train).push_back(std::move(clip));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Augmentation: horizontal / vertical flips.
// ---------------------------------------------------------------------------

inline Tensor flip_video(const Tensor& video, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return video;
  const int T = video.extent(0), C = video.extent(1), H = video.extent(2), W = video.extent(3);
  Tensor out(video.shape());
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          out.at4(t, c, y, x) = video.at4(t, c, vertical ? H - 1 - y : y, horizontal ? W - 1 - x : x);
  return out;
}

/// Contiguous frame window [start, start+len).
inline Tensor window_frames(const Tensor& video, int start, int len) {
  const int C = video.extent(1), H = video.extent(2), W = video.extent(3);
  if (start < 0 || len < 1 || start + len > video.extent(0))
    throw std::invalid_argument("window_frames: bad window");
  Tensor out({len, C, H, W});
  const std::int64_t frame_elems = static_cast<std::int64_t>(C) * H * W;
  for (int t = 0; t < len; ++t)
    for (std::int64_t i = 0; i < frame_elems; ++i)
      out[t * frame_elems + i] = video[(start + t) * frame_elems + i];
  return out;
}

}  // namespace vdiff::data
