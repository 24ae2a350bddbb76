#include "cbamnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

namespace cbamnet {

namespace fs = std::filesystem;

Image Image::blank(std::size_t h, std::size_t w, float value, std::size_t c) {
  Image img;
  img.channels = c;
  img.height = h;
  img.width = w;
  img.values.assign(c * h * w, value);
  return img;
}

// ---------------------------------------------------------------------------
// PPM

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > (1u << 24)) throw FormatError(std::string("ppm: ") + what + " too large");
      ++pos_;
      ++digits;
    }
    if (digits == 0) throw FormatError(std::string("ppm: missing ") + what);
    return value;
  }

  std::size_t pos_ = 0;
  std::string_view bytes_;
};

}  // namespace

Image decode_ppm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw FormatError("ppm: bad magic (expected P6)");
  }
  HeaderReader r(bytes.substr(2));
  if (r.bytes_.empty() || (!is_space(r.bytes_[0]) && r.bytes_[0] != '#')) {
    throw FormatError("ppm: bad magic (expected P6)");
  }
  const std::size_t w = r.number("width");
  const std::size_t h = r.number("height");
  const std::size_t maxval = r.number("maxval");
  if (w == 0 || h == 0) throw FormatError("ppm: zero extent");
  if (maxval != 255) throw FormatError("ppm: maxval " + std::to_string(maxval) + " (only 255 supported)");
  if (r.pos_ >= r.bytes_.size() || !is_space(r.bytes_[r.pos_])) {
    throw FormatError("ppm: truncated header");
  }
  const std::size_t start = 2 + r.pos_ + 1;
  const std::size_t need = 3 * w * h;
  if (bytes.size() < start + need) {
    throw FormatError("ppm: truncated payload (" + std::to_string(bytes.size() - start) + " of " +
                      std::to_string(need) + " bytes)");
  }
  Image img = Image::blank(h, w);
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + start);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(c, y, x) = static_cast<float>(px[(y * w + x) * 3 + c]) / 255.0f;
      }
    }
  }
  return img;
}

std::string encode_ppm(const Image& img) {
  if (img.channels != 3) throw FormatError("ppm: need 3 channels");
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + 3 * img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        const auto q = static_cast<unsigned char>(std::lround(v * 255.0f));
        out[header + (y * img.width + x) * 3 + c] = static_cast<char>(q);
      }
    }
  }
  return out;
}

Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return decode_ppm(buf.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_ppm(const fs::path& path, const Image& img) {
  const std::string bytes = encode_ppm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Geometry

Image resize_bilinear(const Image& img, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw std::invalid_argument("resize: target must be >= 1");
  if (height == img.height && width == img.width) return img;
  Image out = Image::blank(height, width, 0.0f, img.channels);
  const double sy = static_cast<double>(img.height) / static_cast<double>(height);
  const double sx = static_cast<double>(img.width) / static_cast<double>(width);
  const double max_y = static_cast<double>(img.height - 1);
  const double max_x = static_cast<double>(img.width - 1);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double top = img.at(c, y0, x0) * (1 - wx) + img.at(c, y0, x1) * wx;
        const double bot = img.at(c, y1, x0) * (1 - wx) + img.at(c, y1, x1) * wx;
        out.at(c, y, x) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

void Normalization::validate() const {
  for (double s : std) {
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("normalization std must be > 0");
  }
}

Image normalize(const Image& img, const Normalization& norm) {
  norm.validate();
  Image out = img;
  const std::size_t plane = img.height * img.width;
  for (std::size_t c = 0; c < img.channels; ++c) {
    const double m = norm.mean[c % 3], s = norm.std[c % 3];
    for (std::size_t i = 0; i < plane; ++i) {
      float& v = out.values[c * plane + i];
      v = static_cast<float>((v - m) / s);
    }
  }
  return out;
}

Image denormalize(const Image& img, const Normalization& norm) {
  norm.validate();
  Image out = img;
  const std::size_t plane = img.height * img.width;
  for (std::size_t c = 0; c < img.channels; ++c) {
    const double m = norm.mean[c % 3], s = norm.std[c % 3];
    for (std::size_t i = 0; i < plane; ++i) {
      float& v = out.values[c * plane + i];
      v = static_cast<float>(v * s + m);
    }
  }
  return out;
}

Image flip_horizontal(const Image& img) {
  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    }
  }
  return out;
}

Image flip_vertical(const Image& img) {
  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, img.height - 1 - y, x);
    }
  }
  return out;
}

Image rotate(const Image& img, double degrees) {
  if (degrees == 0.0) return img;
  Image out = Image::blank(img.height, img.width, 0.0f, img.channels);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cy = (static_cast<double>(img.height) - 1) / 2;
  const double cx = (static_cast<double>(img.width) - 1) / 2;
  const auto h = static_cast<long long>(img.height), w = static_cast<long long>(img.width);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      // Inverse map: output pixel -> source location.
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double sx = cs * dx - sn * dy + cx;
      const double sy = sn * dx + cs * dy + cy;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const auto x0 = static_cast<long long>(fx), y0 = static_cast<long long>(fy);
      const double wx = sx - fx, wy = sy - fy;
      for (std::size_t c = 0; c < img.channels; ++c) {
        auto tap = [&](long long yy, long long xx) -> double {
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
          return img.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
        };
        const double v = (tap(y0, x0) * (1 - wx) + tap(y0, x0 + 1) * wx) * (1 - wy) +
                         (tap(y0 + 1, x0) * (1 - wx) + tap(y0 + 1, x0 + 1) * wx) * wy;
        out.at(c, y, x) = static_cast<float>(v);
      }
    }
  }
  return out;
}

AugmentParams draw_augment(Rng& rng, const AugmentOptions& options) {
  AugmentParams p;
  const bool h = rng.bernoulli(0.5);
  const bool v = rng.bernoulli(0.5);
  const double angle = rng.uniform(-options.max_degrees, options.max_degrees);
  p.hflip = options.hflip && h;
  p.vflip = options.vflip && v;
  p.degrees = options.rotate ? angle : 0.0;
  return p;
}

Image apply_augment(const Image& img, const AugmentParams& params) {
  Image out = params.hflip ? flip_horizontal(img) : img;
  if (params.vflip) out = flip_vertical(out);
  return rotate(out, params.degrees);
}

Image augment(const Image& img, Rng& rng, const AugmentOptions& options) {
  return apply_augment(img, draw_augment(rng, options));
}

// ---------------------------------------------------------------------------
// Datasets

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(classes.size(), 0);
  for (const auto& s : samples) {
    if (s.label >= counts.size()) throw std::out_of_range("sample label out of range");
    ++counts[s.label];
  }
  return counts;
}

void Dataset::validate() const { (void)class_counts(); }

std::string CleaningReport::to_text() const {
  std::string out;
  for (const auto& s : skipped) out += s.path + "\t" + s.reason + "\n";
  return out;
}

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : (e.is_regular_file() && e.path().extension() == ".ppm")) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  return out;
}

}  // namespace

Dataset scan_directory(const fs::path& root, bool lenient, CleaningReport* report) {
  if (!fs::is_directory(root)) throw std::runtime_error("not a directory: " + root.string());
  Dataset ds;
  for (const auto& dir : sorted_entries(root, true)) {
    const std::size_t label = ds.classes.size();
    std::size_t kept = 0;
    for (const auto& file : sorted_entries(dir, false)) {
      try {
        auto img = std::make_shared<const Image>(read_ppm(file));
        ds.samples.push_back({file.string(), label, std::move(img)});
        ++kept;
      } catch (const FormatError& e) {
        if (!lenient) throw;
        if (report) report->skipped.push_back({file.string(), e.what()});
      }
    }
    if (kept == 0) throw std::runtime_error("empty class directory: " + dir.string());
    ds.classes.push_back(dir.filename().string());
  }
  if (ds.classes.empty()) throw std::runtime_error("no class directories under " + root.string());
  return ds;
}

namespace {

std::size_t train_count(std::size_t n, double ratio) {
  // The epsilon keeps exact products such as 0.8 * 500 from flooring to 399.
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

SplitResult stratified(const Dataset& ds, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must be in (0,1)");
  std::vector<std::vector<std::size_t>> members(ds.classes.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) members.at(ds.samples[i].label).push_back(i);
  std::vector<char> to_first(ds.samples.size(), 0);
  for (std::size_t c = 0; c < members.size(); ++c) {
    auto& m = members[c];
    if (m.size() < 2) {
      throw std::invalid_argument("class '" + ds.classes[c] + "' has " + std::to_string(m.size()) +
                                  " members; a split needs at least 2");
    }
    Rng rng(mix_seed(seed, c));
    for (std::size_t i = m.size() - 1; i > 0; --i) std::swap(m[i], m[rng.below(i + 1)]);
    const std::size_t k = train_count(m.size(), ratio);
    for (std::size_t i = 0; i < k; ++i) to_first[m[i]] = 1;
  }
  SplitResult out;
  out.first.classes = out.second.classes = ds.classes;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    (to_first[i] ? out.first : out.second).samples.push_back(ds.samples[i]);
  }
  return out;
}

}  // namespace

SplitResult split_dataset(const Dataset& ds, double ratio, std::uint64_t seed) {
  return stratified(ds, ratio, seed);
}

SplitResult validation_split(const Dataset& train, double fraction, std::uint64_t seed) {
  return stratified(train, 1.0 - fraction, mix_seed(seed, 0x76616c));
}

Dataset exclude_small_classes(const Dataset& ds, double ratio, std::size_t threshold) {
  const auto counts = ds.class_counts();
  std::vector<std::size_t> remap(counts.size(), SIZE_MAX);
  Dataset out;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] - train_count(counts[c], ratio) > threshold) {
      remap[c] = out.classes.size();
      out.classes.push_back(ds.classes[c]);
    }
  }
  if (out.classes.empty()) throw std::invalid_argument("every class falls under the exclusion threshold");
  for (const auto& s : ds.samples) {
    if (remap[s.label] == SIZE_MAX) continue;
    Sample copy = s;
    copy.label = remap[s.label];
    out.samples.push_back(std::move(copy));
  }
  return out;
}

Normalization channel_stats(const Dataset& ds, std::size_t height, std::size_t width) {
  if (ds.samples.empty()) throw std::invalid_argument("channel_stats of an empty dataset");
  std::array<double, 3> sum{}, sq{};
  double count = 0;
  for (const auto& s : ds.samples) {
    const Image img = resize_bilinear(s.image ? *s.image : read_ppm(s.path), height, width);
    const std::size_t plane = height * width;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = img.values[c * plane + i];
        sum[c] += v;
        sq[c] += v * v;
      }
    }
    count += static_cast<double>(plane);
  }
  Normalization n;
  for (std::size_t c = 0; c < 3; ++c) {
    n.mean[c] = sum[c] / count;
    n.std[c] = std::sqrt(std::max(sq[c] / count - n.mean[c] * n.mean[c], 1e-12));
  }
  return n;
}

// ---------------------------------------------------------------------------
// Synthetic ships

const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names{"bulk_carrier", "cargo", "container", "oil_tanker"};
  return names;
}

namespace {

using Rgb = std::array<double, 3>;

struct Hull {
  double length, beam;
  Rgb deck;
};

// Returns the deck colour at ship-local (u along the hull from stern to bow,
// v across), or false when the point is water.
using Painter = bool (*)(double u, double v, const Hull& hull, const std::vector<Rgb>& cells, Rgb& out);

bool inside_hull(double u, double v, const Hull& h) {
  const double half_l = h.length / 2, half_b = h.beam / 2;
  if (u < -half_l || u > half_l) return false;
  const double bow = 0.9 * h.beam;
  const double taper = std::min(1.0, (half_l - u) / bow);
  return std::abs(v) <= half_b * std::sqrt(std::max(taper, 0.0));
}

bool in_box(double u, double v, double u0, double u1, double half_v) {
  return u >= u0 && u <= u1 && std::abs(v) <= half_v;
}

const Rgb kWhite{0.92, 0.92, 0.90};
const Rgb kDark{0.12, 0.12, 0.11};

bool paint_bulk(double u, double v, const Hull& h, const std::vector<Rgb>&, Rgb& out) {
  if (!inside_hull(u, v, h)) return false;
  const double L = h.length, B = h.beam;
  out = h.deck;
  if (in_box(u, v, -0.5 * L, -0.38 * L, 0.42 * B)) out = kWhite;
  const double start = -0.32 * L, pitch = 0.11 * L;
  for (int i = 0; i < 6; ++i) {
    const double u0 = start + i * pitch;
    if (in_box(u, v, u0, u0 + 0.075 * L, 0.3 * B)) out = kDark;
  }
  return true;
}

bool paint_cargo(double u, double v, const Hull& h, const std::vector<Rgb>&, Rgb& out) {
  if (!inside_hull(u, v, h)) return false;
  const double L = h.length, B = h.beam;
  out = h.deck;
  if (in_box(u, v, -0.12 * L, 0.12 * L, 0.46 * B)) out = kWhite;
  if (in_box(u, v, -0.04 * L, 0.04 * L, 0.2 * B)) out = Rgb{0.55, 0.58, 0.62};
  for (double uc : {-0.3 * L, 0.3 * L}) {
    if (in_box(u, v, uc - 0.012 * L, uc + 0.012 * L, 0.5 * B)) out = Rgb{0.85, 0.7, 0.1};
  }
  return true;
}

bool paint_container(double u, double v, const Hull& h, const std::vector<Rgb>& cells, Rgb& out) {
  if (!inside_hull(u, v, h)) return false;
  const double L = h.length, B = h.beam;
  out = h.deck;
  if (in_box(u, v, -0.5 * L, -0.4 * L, 0.42 * B)) out = kWhite;
  const double u0 = -0.36 * L, u1 = 0.34 * L, half_v = 0.38 * B;
  if (u >= u0 && u < u1 && std::abs(v) < half_v) {
    const double cu = (u - u0) / (u1 - u0) * 8, cv = (v + half_v) / (2 * half_v) * 3;
    const auto iu = static_cast<std::size_t>(cu), iv = static_cast<std::size_t>(cv);
    const bool gap = cu - static_cast<double>(iu) > 0.85 || cv - static_cast<double>(iv) > 0.85;
    if (!gap) out = cells[(iu * 3 + iv) % cells.size()];
  }
  return true;
}

bool paint_tanker(double u, double v, const Hull& h, const std::vector<Rgb>&, Rgb& out) {
  if (!inside_hull(u, v, h)) return false;
  const double L = h.length, B = h.beam;
  out = h.deck;
  if (in_box(u, v, -0.5 * L, -0.4 * L, 0.42 * B)) out = kWhite;
  const Rgb pipe{0.78, 0.78, 0.62};
  if (in_box(u, v, -0.36 * L, 0.4 * L, 0.07 * B)) out = pipe;
  if (in_box(u, v, -0.015 * L, 0.015 * L, 0.45 * B)) out = pipe;
  for (double uc : {-0.2 * L, 0.2 * L}) {
    if ((u - uc) * (u - uc) + v * v < (0.12 * B) * (0.12 * B)) out = pipe;
  }
  return true;
}

struct Family {
  double length, beam;
  Rgb deck;
  Painter paint;
};

const Family& family(std::size_t cls) {
  static const Family families[] = {
      {0.70, 0.16, {0.42, 0.30, 0.20}, paint_bulk},
      {0.55, 0.19, {0.36, 0.40, 0.45}, paint_cargo},
      {0.72, 0.17, {0.22, 0.22, 0.26}, paint_container},
      {0.75, 0.20, {0.58, 0.22, 0.18}, paint_tanker},
  };
  return families[cls % 4];
}

}  // namespace

Image render_ship(std::size_t cls, std::size_t size, std::uint64_t seed, std::size_t index) {
  if (size < 32) throw std::invalid_argument("synthetic image size must be >= 32");
  Rng rng(mix_seed(seed, cls + 1, index));
  const Family& fam = family(cls);
  const double S = static_cast<double>(size);
  const double scale = rng.uniform(0.8, 1.2);
  const double angle = rng.uniform(0.0, 2 * std::numbers::pi);
  const double cx = rng.uniform(0.35, 0.65) * S, cy = rng.uniform(0.35, 0.65) * S;
  const double brightness = rng.uniform(0.8, 1.2);
  const double wave_k = rng.uniform(0.2, 0.5), wave_dir = rng.uniform(0.0, 2 * std::numbers::pi);
  const double wave_phase = rng.uniform(0.0, 2 * std::numbers::pi);
  const Rgb water{rng.uniform(0.06, 0.12), rng.uniform(0.18, 0.28), rng.uniform(0.30, 0.42)};
  Hull hull{fam.length * S * scale, fam.beam * S * scale, fam.deck};
  for (double& d : hull.deck) d = std::clamp(d + rng.uniform(-0.04, 0.04), 0.0, 1.0);
  static const Rgb palette[] = {{0.75, 0.15, 0.12}, {0.15, 0.35, 0.75}, {0.2, 0.6, 0.25},
                                {0.9, 0.55, 0.1},   {0.85, 0.85, 0.85}, {0.5, 0.2, 0.55}};
  std::vector<Rgb> cells(24);
  for (auto& c : cells) c = palette[rng.below(6)];

  const double cs = std::cos(angle), sn = std::sin(angle);
  const double kx = wave_k * std::cos(wave_dir), ky = wave_k * std::sin(wave_dir);
  Image img = Image::blank(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      Rgb acc{0, 0, 0};
      // 2x2 supersampling for smooth silhouette edges.
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const double px = static_cast<double>(x) + 0.25 + 0.5 * sx;
          const double py = static_cast<double>(y) + 0.25 + 0.5 * sy;
          const double dx = px - cx, dy = py - cy;
          const double u = cs * dx + sn * dy, v = -sn * dx + cs * dy;
          Rgb colour;
          if (!fam.paint(u, v, hull, cells, colour)) {
            const double wave = 0.03 * std::sin(kx * px + ky * py + wave_phase);
            colour = Rgb{water[0] + wave, water[1] + wave, water[2] + wave};
          }
          for (int c = 0; c < 3; ++c) acc[c] += colour[c] / 4;
        }
      }
      const double noise = 0.02 * rng.normal();
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(c, y, x) = static_cast<float>(std::clamp((acc[c] + noise) * brightness, 0.0, 1.0));
      }
    }
  }
  return img;
}

Dataset generate_synthetic(const SynthSpec& spec, const fs::path& out) {
  if (spec.classes == 0 || spec.classes > synthetic_class_names().size()) {
    throw std::invalid_argument("synthetic generator supports 1 to 4 classes");
  }
  if (spec.size < 32) throw std::invalid_argument("synthetic image size must be >= 32");
  Dataset ds;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    const std::string& name = synthetic_class_names()[c];
    ds.classes.push_back(name);
    const fs::path dir = out / name;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      char file[32];
      std::snprintf(file, sizeof file, "img_%04zu.ppm", i);
      // Store the quantized pixels so the in-memory copy matches a rescan.
      auto img = std::make_shared<const Image>(decode_ppm(encode_ppm(render_ship(c, spec.size, spec.seed, i))));
      write_ppm(dir / file, *img);
      ds.samples.push_back({(dir / file).string(), c, std::move(img)});
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Batches

namespace {

template <class T>
void write_input(const Image& img, const Normalization& norm, T* dst) {
  const std::size_t plane = img.height * img.width;
  for (std::size_t c = 0; c < 3; ++c) {
    const double m = norm.mean[c], s = norm.std[c];
    for (std::size_t i = 0; i < plane; ++i) {
      dst[c * plane + i] = static_cast<T>((static_cast<double>(img.values[c * plane + i]) - m) / s);
    }
  }
}

Image load(const Sample& s) { return s.image ? *s.image : read_ppm(s.path); }

}  // namespace

template <class T>
Tensor<T> image_to_input(const Image& img, const BatchOptions& options) {
  options.norm.validate();
  if (img.channels != 3) throw ShapeError("model input needs 3 channels");
  const Image sized = resize_bilinear(img, options.height, options.width);
  Tensor<T> out = Tensor<T>::zeros({1, 3, options.height, options.width});
  write_input(sized, options.norm, out.data().data());
  return out;
}

template <class T>
Batch<T> assemble_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                        const BatchOptions& options, std::uint64_t seed) {
  options.norm.validate();
  Batch<T> batch;
  const std::size_t n = indices.size(), per = 3 * options.height * options.width;
  batch.images = Tensor<T>::zeros({n, 3, options.height, options.width});
  batch.labels.resize(n);
  T* dst = batch.images.data().data();
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const Sample& s = ds.samples.at(indices[k]);
      Image img = resize_bilinear(load(s), options.height, options.width);
      if (options.augment) {
        Rng rng(mix_seed(seed, indices[k]));
        img = augment(img, rng, options.augment_options);
      }
      write_input(img, options.norm, dst + k * per);
      batch.labels[k] = s.label;
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, n));
  if (workers == 1) {
    work(0, n);
  } else {
    // Every sample lands in its own slot, so scheduling cannot change the batch.
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t b = w * chunk, e = std::min(n, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& t : pool) t.join();
  }
  return batch;
}

template Tensor<float> image_to_input(const Image&, const BatchOptions&);
template Tensor<double> image_to_input(const Image&, const BatchOptions&);
template Batch<float> assemble_batch(const Dataset&, const std::vector<std::size_t>&, const BatchOptions&,
                                     std::uint64_t);
template Batch<double> assemble_batch(const Dataset&, const std::vector<std::size_t>&,
                                      const BatchOptions&, std::uint64_t);

}  // namespace cbamnet
