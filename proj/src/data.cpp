#include "graftnet/data.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include "graftnet/error.hpp"

namespace graftnet {

namespace fs = std::filesystem;

Sample load_sample(const std::string& image_path, const std::string& mask_path, const std::string& id) {
  Sample s;
  s.id = id.empty() ? fs::path(image_path).stem().string() : id;
  s.image = gray_to_rgb(read_pnm(image_path));
  const Image mask = read_pnm(mask_path);
  if (mask.channels != 1) throw IoError(mask_path + ": mask must be a P5 greymap");
  if (mask.height != s.image.height || mask.width != s.image.width) {
    throw IoError(mask_path + ": mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                  " but image " + image_path + " is " + std::to_string(s.image.width) + "x" +
                  std::to_string(s.image.height));
  }
  s.mask = GrayMap(mask.height, mask.width);
  // Scaled back to 8-bit levels so masks with other maxvals binarise alike.
  for (std::size_t i = 0; i < s.mask.size(); ++i) s.mask.values[i] = mask.values[i] * 255.0 >= 127.5 ? 1.0 : 0.0;
  s.original_height = s.image.height;
  s.original_width = s.image.width;
  return s;
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open manifest");
  DatasetManifest m;
  const fs::path dir = fs::path(path).parent_path();
  m.root = dir.string();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != 3 || fields[0].empty()) {
      throw IoError(path + ":" + std::to_string(line_no) + ": expected id<TAB>image<TAB>mask");
    }
    auto resolve = [&](const std::string& p) {
      fs::path fp(p);
      if (fp.is_relative()) fp = dir / fp;
      if (!fs::exists(fp)) throw IoError(path + ":" + std::to_string(line_no) + ": missing file " + fp.string());
      return fp.lexically_normal().string();
    };
    m.entries.push_back({fields[0], resolve(fields[1]), resolve(fields[2])});
  }
  std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < m.entries.size(); ++i) {
    if (m.entries[i].id == m.entries[i - 1].id) throw IoError(path + ": duplicate id " + m.entries[i].id);
  }
  return m;
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  const fs::path dir = fs::absolute(fs::path(path).parent_path());
  auto rel = [&](const std::string& p) {
    const fs::path abs = fs::absolute(p);
    const auto r = abs.lexically_relative(dir);
    return (!r.empty() && *r.begin() != "..") ? r.string() : abs.string();
  };
  for (const auto& e : manifest.entries) out << e.id << '\t' << rel(e.image) << '\t' << rel(e.mask) << '\n';
  if (!out) throw IoError(path + ": write failed");
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the
// exception of the lowest failing index.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::vector<Sample> load_samples(const DatasetManifest& manifest, std::size_t threads) {
  std::vector<Sample> out(manifest.entries.size());
  parallel_for(out.size(), threads, [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    out[i] = load_sample(e.image, e.mask, e.id);
  });
  return out;
}

Difficulty parse_difficulty(const std::string& s) {
  if (s == "blob") return Difficulty::blob;
  if (s == "thin") return Difficulty::thin;
  if (s == "mixed") return Difficulty::mixed;
  throw ConfigError("unknown difficulty '" + s + "' (blob, thin, mixed)");
}

namespace {

struct Rgb {
  double r, g, b;
};

Rgb random_color(SplitMix64& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

double color_distance(const Rgb& a, const Rgb& b) {
  return std::sqrt((a.r - b.r) * (a.r - b.r) + (a.g - b.g) * (a.g - b.g) + (a.b - b.b) * (a.b - b.b));
}

// Membership test of a shape at pixel centre (y, x).
struct Shape2D {
  enum Kind { ellipse, polygon, stroke } kind;
  double cy = 0, cx = 0, ry = 0, rx = 0, angle = 0;  // ellipse
  std::vector<std::array<double, 2>> points;         // polygon vertices or stroke polyline
  double half_width = 0;                             // stroke

  bool contains(double y, double x) const {
    switch (kind) {
      case ellipse: {
        const double dy = y - cy, dx = x - cx;
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = (dx * c + dy * s) / rx, v = (-dx * s + dy * c) / ry;
        return u * u + v * v <= 1.0;
      }
      case polygon: {
        bool inside = false;
        for (std::size_t i = 0, j = points.size() - 1; i < points.size(); j = i++) {
          const auto& a = points[i];
          const auto& b = points[j];
          if ((a[0] > y) != (b[0] > y) && x < (b[1] - a[1]) * (y - a[0]) / (b[0] - a[0]) + a[1]) inside = !inside;
        }
        return inside;
      }
      case stroke: {
        for (std::size_t i = 0; i + 1 < points.size(); ++i) {
          const auto& a = points[i];
          const auto& b = points[i + 1];
          const double vy = b[0] - a[0], vx = b[1] - a[1];
          const double len2 = vy * vy + vx * vx;
          double t = len2 > 0 ? ((y - a[0]) * vy + (x - a[1]) * vx) / len2 : 0.0;
          t = std::clamp(t, 0.0, 1.0);
          const double py = a[0] + t * vy - y, px = a[1] + t * vx - x;
          if (py * py + px * px <= half_width * half_width) return true;
        }
        return false;
      }
    }
    return false;
  }
};

Shape2D make_blob(SplitMix64& rng, double hw) {
  Shape2D s{};
  const double cy = rng.uniform(0.3, 0.7) * hw, cx = rng.uniform(0.3, 0.7) * hw;
  if (rng.coin(0.5)) {
    s.kind = Shape2D::ellipse;
    s.cy = cy;
    s.cx = cx;
    s.ry = rng.uniform(0.12, 0.3) * hw;
    s.rx = rng.uniform(0.12, 0.3) * hw;
    s.angle = rng.uniform(0, std::numbers::pi);
  } else {
    s.kind = Shape2D::polygon;
    const std::size_t k = 3 + rng.below(5);
    std::vector<double> angles(k);
    for (auto& a : angles) a = rng.uniform(0, 2 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    for (double a : angles) {
      const double r = rng.uniform(0.15, 0.32) * hw;
      s.points.push_back({cy + r * std::sin(a), cx + r * std::cos(a)});
    }
  }
  return s;
}

// Elongated bent stroke, one to three pixels wide at 64x64.
Shape2D make_thin(SplitMix64& rng, double hw) {
  Shape2D s{};
  s.kind = Shape2D::stroke;
  s.half_width = rng.uniform(0.012, 0.03) * hw + 0.5;
  double y = rng.uniform(0.15, 0.85) * hw, x = rng.uniform(0.15, 0.85) * hw;
  double heading = rng.uniform(0, 2 * std::numbers::pi);
  const std::size_t segments = 2 + rng.below(3);
  s.points.push_back({y, x});
  for (std::size_t i = 0; i < segments; ++i) {
    const double len = rng.uniform(0.15, 0.3) * hw;
    heading += rng.uniform(-0.8, 0.8);
    y = std::clamp(y + len * std::sin(heading), 1.0, hw - 2.0);
    x = std::clamp(x + len * std::cos(heading), 1.0, hw - 2.0);
    s.points.push_back({y, x});
  }
  return s;
}

// Smooth value noise: a coarse random grid, bilinearly upsampled.
std::vector<double> value_noise(SplitMix64& rng, std::size_t hw, std::size_t grid) {
  std::vector<double> g((grid + 1) * (grid + 1));
  for (auto& v : g) v = rng.uniform(-1, 1);
  std::vector<double> out(hw * hw);
  for (std::size_t y = 0; y < hw; ++y)
    for (std::size_t x = 0; x < hw; ++x) {
      const double fy = double(y) / double(hw) * grid, fx = double(x) / double(hw) * grid;
      const std::size_t y0 = std::size_t(fy), x0 = std::size_t(fx);
      const double ty = fy - y0, tx = fx - x0;
      auto at = [&](std::size_t a, std::size_t b) { return g[a * (grid + 1) + b]; };
      out[y * hw + x] = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1)) +
                        ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
    }
  return out;
}

double quantize(double v) { return std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

Sample synth_sample(std::size_t index, std::size_t hw, std::uint64_t seed, Difficulty difficulty) {
  if (hw < 8) throw ConfigError("synthetic images need hw >= 8");
  SplitMix64 rng = SplitMix64(seed).fork(index);
  const double side = double(hw);

  const Rgb bg = random_color(rng, 0.2, 0.8);
  Rgb fg = random_color(rng, 0.0, 1.0);
  for (int tries = 0; tries < 64 && color_distance(fg, bg) < 0.45; ++tries) fg = random_color(rng, 0.0, 1.0);

  std::vector<Shape2D> shapes;
  Difficulty kind = difficulty;
  if (kind == Difficulty::mixed) kind = rng.coin(0.5) ? Difficulty::blob : Difficulty::thin;
  if (kind == Difficulty::blob) {
    const std::size_t count = 1 + rng.below(2);
    for (std::size_t i = 0; i < count; ++i) shapes.push_back(make_blob(rng, side));
    if (difficulty == Difficulty::mixed && rng.coin(0.5)) shapes.push_back(make_thin(rng, side));
  } else {
    const std::size_t count = 2 + rng.below(3);
    for (std::size_t i = 0; i < count; ++i) shapes.push_back(make_thin(rng, side));
  }
  // Faint clutter in the background colour family, never part of the mask.
  std::vector<Shape2D> clutter;
  const std::size_t clutter_count = rng.below(3);
  for (std::size_t i = 0; i < clutter_count; ++i) clutter.push_back(make_blob(rng, side));
  const Rgb clutter_shift = random_color(rng, -0.12, 0.12);

  const auto noise_bg = value_noise(rng, hw, 4);
  const auto noise_fg = value_noise(rng, hw, 8);

  Sample s;
  s.id = "synth_" + std::string(6 - std::min<std::size_t>(6, std::to_string(index).size()), '0') +
         std::to_string(index);
  s.image = Image(hw, hw, 3);
  s.mask = GrayMap(hw, hw);
  s.original_height = s.original_width = hw;
  for (std::size_t y = 0; y < hw; ++y)
    for (std::size_t x = 0; x < hw; ++x) {
      const double py = double(y) + 0.5, px = double(x) + 0.5;
      bool in_fg = false;
      for (const auto& sh : shapes) in_fg = in_fg || sh.contains(py, px);
      bool in_clutter = false;
      for (const auto& sh : clutter) in_clutter = in_clutter || sh.contains(py, px);
      const std::size_t i = y * hw + x;
      Rgb c = in_fg ? fg : bg;
      const double tex = in_fg ? 0.06 * noise_fg[i] : 0.15 * noise_bg[i];
      if (!in_fg && in_clutter) {
        c.r += clutter_shift.r;
        c.g += clutter_shift.g;
        c.b += clutter_shift.b;
      }
      const double grain = 0.03;
      s.image.at(y, x, 0) = quantize(c.r + tex + rng.uniform(-grain, grain));
      s.image.at(y, x, 1) = quantize(c.g + tex + rng.uniform(-grain, grain));
      s.image.at(y, x, 2) = quantize(c.b + tex + rng.uniform(-grain, grain));
      s.mask.values[i] = in_fg ? 1.0 : 0.0;
    }
  return s;
}

DatasetManifest synth_generate(std::size_t n, std::size_t hw, std::uint64_t seed, Difficulty difficulty,
                               const std::string& out_dir) {
  const fs::path root(out_dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  DatasetManifest m;
  m.root = root.string();
  m.split = "synthetic";
  for (std::size_t i = 0; i < n; ++i) {
    const Sample s = synth_sample(i, hw, seed, difficulty);
    const auto img = (root / "images" / (s.id + ".ppm")).string();
    const auto msk = (root / "masks" / (s.id + ".pgm")).string();
    write_pnm(img, s.image);
    write_pgm(msk, s.mask);
    m.entries.push_back({s.id, img, msk});
  }
  write_manifest((root / "manifest.tsv").string(), m);
  return m;
}

std::size_t jitter_size(std::size_t target, std::size_t quantum, SplitMix64& rng) {
  static constexpr double kScales[] = {0.75, 1.0, 1.25};
  const double want = kScales[rng.below(3)] * double(target) / double(quantum);
  const double lo = std::floor(want), hi = std::ceil(want);
  const double t = double(target) / double(quantum);
  double k;
  if (want - lo < hi - want)
    k = lo;
  else if (hi - want < want - lo)
    k = hi;
  else
    k = std::abs(lo - t) <= std::abs(hi - t) ? lo : hi;
  return std::max<std::size_t>(1, std::size_t(k)) * quantum;
}

namespace {

Sample crop(const Sample& s, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  Sample out;
  out.id = s.id;
  out.original_height = s.original_height;
  out.original_width = s.original_width;
  out.image = Image(h, w, s.image.channels);
  out.mask = GrayMap(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < s.image.channels; ++c) out.image.at(y, x, c) = s.image.at(y0 + y, x0 + x, c);
      out.mask.at(y, x) = s.mask.at(y0 + y, x0 + x);
    }
  return out;
}

}  // namespace

Sample fit(const Sample& sample, std::size_t hw) {
  Sample out = sample;
  out.image = resize_image(sample.image, hw, hw);
  out.mask = resize_map(sample.mask, hw, hw);
  for (auto& v : out.mask.values) v = v >= 0.5 ? 1.0 : 0.0;
  return out;
}

Sample augment(const Sample& sample, SplitMix64& rng, std::size_t out_hw) {
  Sample s = sample;
  if (rng.coin(0.5)) {
    for (std::size_t y = 0; y < s.image.height; ++y)
      for (std::size_t x = 0; x < s.image.width / 2; ++x) {
        const std::size_t mx = s.image.width - 1 - x;
        for (std::size_t c = 0; c < s.image.channels; ++c) std::swap(s.image.at(y, x, c), s.image.at(y, mx, c));
        std::swap(s.mask.at(y, x), s.mask.at(y, mx));
      }
  }
  const double area = rng.uniform(0.7, 1.0);
  const double scale = std::sqrt(area);
  const std::size_t h = s.image.height, w = s.image.width;
  const std::size_t ch = std::min(h, std::size_t(std::ceil(scale * double(h))));
  const std::size_t cw = std::min(w, std::size_t(std::ceil(scale * double(w))));
  const std::size_t y0 = rng.below(h - ch + 1), x0 = rng.below(w - cw + 1);
  return fit(crop(s, y0, x0, ch, cw), out_hw);
}

SampleStats sample_stats(const Sample& sample) {
  return {sample.id, boundary_pixels(sample.mask).size(),
          std::hypot(double(sample.original_height), double(sample.original_width))};
}

std::vector<SampleStats> dataset_stats(const DatasetManifest& manifest, std::size_t threads) {
  std::vector<SampleStats> out(manifest.entries.size());
  parallel_for(out.size(), threads, [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    out[i] = sample_stats(load_sample(e.image, e.mask, e.id));
  });
  return out;
}

namespace {
double log_edges(std::size_t edges) { return edges == 0 ? 0.0 : std::log10(double(edges)); }
}  // namespace

void write_stats_csv(const std::string& path, const std::vector<SampleStats>& stats) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << "id,edge_pixels,log10_edge_pixels,diag\n";
  char buf[128];
  for (const auto& s : stats) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.4f", s.edge_pixels, log_edges(s.edge_pixels), s.diagonal);
    out << s.id << ',' << buf << '\n';
  }
}

void write_stats_histogram(const std::string& path, const std::vector<SampleStats>& stats, std::size_t bins) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << "bin_lo,bin_hi,count\n";
  if (stats.empty() || bins == 0) return;
  double lo = 1e300, hi = -1e300;
  for (const auto& s : stats) {
    lo = std::min(lo, log_edges(s.edge_pixels));
    hi = std::max(hi, log_edges(s.edge_pixels));
  }
  if (hi <= lo) hi = lo + 1.0;
  std::vector<std::size_t> counts(bins, 0);
  for (const auto& s : stats) {
    const auto b = std::size_t((log_edges(s.edge_pixels) - lo) / (hi - lo) * double(bins));
    counts[std::min(b, bins - 1)]++;
  }
  char buf[96];
  for (std::size_t b = 0; b < bins; ++b) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%zu", lo + (hi - lo) * double(b) / double(bins),
                  lo + (hi - lo) * double(b + 1) / double(bins), counts[b]);
    out << buf << '\n';
  }
}

std::size_t worker_threads() {
  const char* env = std::getenv("GRAFTNET_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("GRAFTNET_THREADS must be a positive integer");
  return std::size_t(v);
}

}  // namespace graftnet
