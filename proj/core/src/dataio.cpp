#include "ilnet/dataio.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ilnet/rng.hpp"

namespace ilnet::data {

namespace {

void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open file: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return buf;
}

}  // namespace

GrayImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open image: " + path);
  std::string magic;
  is >> magic;
  if (magic != "P5") fail(path + ": not a binary PGM (P5) file");
  auto next_int = [&]() {
    // skip whitespace and '#' comments between header fields
    for (;;) {
      int c = is.peek();
      if (c == '#') {
        std::string line;
        std::getline(is, line);
      } else if (std::isspace(c)) {
        is.get();
      } else {
        break;
      }
    }
    int v;
    is >> v;
    if (!is) fail(path + ": malformed PGM header");
    return v;
  };
  GrayImage img;
  img.width = next_int();
  img.height = next_int();
  const int maxval = next_int();
  if (maxval != 255) fail(path + ": unsupported bit depth (maxval " + std::to_string(maxval) + ")");
  is.get();  // single whitespace after header
  img.px.resize(static_cast<size_t>(img.width) * img.height);
  is.read(reinterpret_cast<char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
  if (!is) fail(path + ": truncated PGM payload");
  return img;
}

void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("cannot open for writing: " + path);
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
  if (!os) fail("write failed: " + path);
}

namespace {

uint32_t be32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

std::vector<uint8_t> zlib_inflate(const std::vector<uint8_t>& in, size_t expect) {
  std::vector<uint8_t> out(expect);
  z_stream zs;
  std::memset(&zs, 0, sizeof(zs));
  if (inflateInit(&zs) != Z_OK) fail("zlib init failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.avail_out != 0) fail("PNG: corrupt or truncated compressed data");
  return out;
}

uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
  if (pb <= pc) return static_cast<uint8_t>(b);
  return static_cast<uint8_t>(c);
}

}  // namespace

GrayImage read_png(const std::string& path) {
  const auto buf = read_file(path);
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0) fail(path + ": not a PNG file");

  int width = 0, height = 0, bit_depth = 0, color_type = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  while (pos + 8 <= buf.size()) {
    const uint32_t len = be32(&buf[pos]);
    if (pos + 12 + len > buf.size()) fail(path + ": truncated PNG chunk");
    const char* type = reinterpret_cast<const char*>(&buf[pos + 4]);
    const uint8_t* payload = &buf[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      width = static_cast<int>(be32(payload));
      height = static_cast<int>(be32(payload + 4));
      bit_depth = payload[8];
      color_type = payload[9];
      if (payload[12] != 0) fail(path + ": interlaced PNG not supported");
      if (bit_depth != 8) fail(path + ": unsupported bit depth " + std::to_string(bit_depth));
      if (color_type == 3) fail(path + ": palette PNG not supported");
      if (color_type != 0 && color_type != 2 && color_type != 4 && color_type != 6) {
        fail(path + ": unsupported color type " + std::to_string(color_type));
      }
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0) fail(path + ": missing IHDR");
  const int channels = color_type == 0 ? 1 : color_type == 2 ? 3 : color_type == 4 ? 2 : 4;
  const size_t stride = static_cast<size_t>(width) * channels;
  auto raw = zlib_inflate(idat, (stride + 1) * static_cast<size_t>(height));

  // per-row filters
  std::vector<uint8_t> img(stride * static_cast<size_t>(height));
  for (int y = 0; y < height; ++y) {
    const uint8_t filter = raw[(stride + 1) * static_cast<size_t>(y)];
    const uint8_t* src = &raw[(stride + 1) * static_cast<size_t>(y) + 1];
    uint8_t* dst = &img[stride * static_cast<size_t>(y)];
    const uint8_t* prev = y > 0 ? &img[stride * static_cast<size_t>(y - 1)] : nullptr;
    for (size_t x = 0; x < stride; ++x) {
      const int a = x >= static_cast<size_t>(channels) ? dst[x - channels] : 0;
      const int b = prev ? prev[x] : 0;
      const int c = (prev && x >= static_cast<size_t>(channels)) ? prev[x - channels] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: fail(path + ": bad PNG filter " + std::to_string(filter));
      }
      dst[x] = static_cast<uint8_t>(v);
    }
  }

  GrayImage out;
  out.width = width;
  out.height = height;
  out.px.resize(static_cast<size_t>(width) * height);
  for (int64_t i = 0; i < static_cast<int64_t>(out.px.size()); ++i) {
    const uint8_t* p = &img[static_cast<size_t>(i) * channels];
    if (channels <= 2) {
      out.px[static_cast<size_t>(i)] = p[0];
    } else {
      // Rec.601 luminance
      const double y = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
      out.px[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(std::min(255.0, y)));
    }
  }
  return out;
}

GrayImage read_gray_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open image: " + path);
  char head[2] = {0, 0};
  is.read(head, 2);
  is.close();
  if (head[0] == 'P' && head[1] == '5') return read_pgm(path);
  if (static_cast<uint8_t>(head[0]) == 0x89 && head[1] == 'P') return read_png(path);
  fail(path + ": unrecognized image format (expected PGM P5 or PNG)");
  return {};
}

Tensor load_image(const std::string& path) {
  const GrayImage img = read_gray_image(path);
  std::vector<float> v(static_cast<size_t>(3) * img.px.size());
  const size_t plane = img.px.size();
  for (size_t i = 0; i < plane; ++i) {
    const float g = static_cast<float>(img.px[i]) / 255.0f;
    v[i] = g;
    v[plane + i] = g;
    v[2 * plane + i] = g;
  }
  return Tensor::from({3, img.height, img.width}, std::move(v));
}

metrics::BinaryMask load_mask(const std::string& path) {
  const GrayImage img = read_gray_image(path);
  metrics::BinaryMask m(img.width, img.height);
  for (size_t i = 0; i < img.px.size(); ++i) m.fg[i] = img.px[i] > 127 ? 1 : 0;
  return m;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail("cannot open manifest: " + path);
  DatasetManifest m;
  std::string line;
  const auto dir = std::filesystem::path(path).parent_path();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key;
      hs >> key;
      if (key == "size") {
        hs >> m.target_h >> m.target_w;
        if (!hs) fail(path + ": malformed #size header");
      }
      continue;
    }
    ManifestEntry e;
    std::istringstream ls(line);
    if (!std::getline(ls, e.id, '\t') || !std::getline(ls, e.image_path, '\t') ||
        !std::getline(ls, e.mask_path, '\t')) {
      fail(path + ": manifest line needs id<TAB>image<TAB>mask: '" + line + "'");
    }
    // relative paths resolve against the manifest location
    for (std::string* p : {&e.image_path, &e.mask_path}) {
      if (!p->empty() && !std::filesystem::path(*p).is_absolute()) {
        *p = (dir / *p).string();
      }
      if (!std::filesystem::exists(*p)) fail("manifest references missing file: " + *p);
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("cannot write manifest: " + path);
  os << "#size " << manifest.target_h << " " << manifest.target_w << "\n";
  const auto dir = std::filesystem::path(path).parent_path();
  for (const auto& e : manifest.entries) {
    auto rel = [&](const std::string& p) {
      std::error_code ec;
      auto r = std::filesystem::relative(p, dir, ec);
      return ec ? p : r.string();
    };
    os << e.id << '\t' << rel(e.image_path) << '\t' << rel(e.mask_path) << "\n";
  }
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, bool resize) {
  std::vector<Sample> out;
  for (const auto& e : manifest.entries) {
    Sample s;
    s.id = e.id;
    s.image = load_image(e.image_path);
    s.mask = load_mask(e.mask_path);
    if (s.image.dim(1) != s.mask.height || s.image.dim(2) != s.mask.width) {
      fail("sample '" + e.id + "': image is " + std::to_string(s.image.dim(2)) + "x" +
           std::to_string(s.image.dim(1)) + " but mask is " + std::to_string(s.mask.width) + "x" +
           std::to_string(s.mask.height));
    }
    if (resize && manifest.target_h > 0) {
      s = prepare(s, manifest.target_h, manifest.target_w);
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

// plain resampling on raw planes; gradients never flow through data prep
void resize_bilinear_plane(const float* src, int sh, int sw, float* dst, int dh, int dw) {
  for (int y = 0; y < dh; ++y) {
    const float sy = (static_cast<float>(y) + 0.5f) * static_cast<float>(sh) / static_cast<float>(dh) - 0.5f;
    const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, sh - 1);
    const int y1 = std::min(y0 + 1, sh - 1);
    const float wy = std::clamp(sy - std::floor(sy), 0.0f, 1.0f);
    for (int x = 0; x < dw; ++x) {
      const float sx = (static_cast<float>(x) + 0.5f) * static_cast<float>(sw) / static_cast<float>(dw) - 0.5f;
      const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, sw - 1);
      const int x1 = std::min(x0 + 1, sw - 1);
      const float wx = std::clamp(sx - std::floor(sx), 0.0f, 1.0f);
      const float v0 = src[y0 * sw + x0] * (1.0f - wx) + src[y0 * sw + x1] * wx;
      const float v1 = src[y1 * sw + x0] * (1.0f - wx) + src[y1 * sw + x1] * wx;
      dst[y * dw + x] = v0 * (1.0f - wy) + v1 * wy;
    }
  }
}

}  // namespace

Sample prepare(const Sample& sample, int target_h, int target_w) {
  if (target_h < 16 || target_w < 16 || target_h % 16 || target_w % 16) {
    fail("prepare: target size must be a positive multiple of 16");
  }
  const int sh = sample.image.dim(1), sw = sample.image.dim(2);
  if (sh == target_h && sw == target_w) return sample;

  Sample out;
  out.id = sample.id;
  std::vector<float> v(static_cast<size_t>(3) * target_h * target_w);
  for (int c = 0; c < 3; ++c) {
    resize_bilinear_plane(sample.image.values().data() + static_cast<int64_t>(c) * sh * sw, sh, sw,
                          v.data() + static_cast<int64_t>(c) * target_h * target_w, target_h,
                          target_w);
  }
  out.image = Tensor::from({3, target_h, target_w}, std::move(v));

  out.mask = metrics::BinaryMask(target_w, target_h);
  for (int y = 0; y < target_h; ++y) {
    const int sy = std::clamp(
        static_cast<int>(std::floor((static_cast<float>(y) + 0.5f) * static_cast<float>(sh) /
                                    static_cast<float>(target_h))),
        0, sh - 1);
    for (int x = 0; x < target_w; ++x) {
      const int sx = std::clamp(
          static_cast<int>(std::floor((static_cast<float>(x) + 0.5f) * static_cast<float>(sw) /
                                      static_cast<float>(target_w))),
          0, sw - 1);
      out.mask.set(x, y, sample.mask.at(sx, sy));
    }
  }
  return out;
}

namespace {

// multi-octave value noise normalized to [0,1]
std::vector<float> value_noise(int h, int w, RandomSource& rng, float fine_amp) {
  std::vector<float> acc(static_cast<size_t>(h) * w, 0.0f);
  float amp = 1.0f;
  const int octaves = fine_amp > 0.0f ? 5 : 4;
  for (int octave = 0; octave < octaves; ++octave) {
    if (octave == 4) amp = fine_amp;
    const int step = std::max(2, 32 >> octave);
    const int gh = h / step + 2, gw = w / step + 2;
    std::vector<float> grid(static_cast<size_t>(gh) * gw);
    for (auto& g : grid) g = rng.uniform();
    for (int y = 0; y < h; ++y) {
      const float fy = static_cast<float>(y) / static_cast<float>(step);
      const int y0 = static_cast<int>(fy);
      const float ty = fy - static_cast<float>(y0);
      for (int x = 0; x < w; ++x) {
        const float fx = static_cast<float>(x) / static_cast<float>(step);
        const int x0 = static_cast<int>(fx);
        const float tx = fx - static_cast<float>(x0);
        const float v00 = grid[static_cast<size_t>(y0) * gw + x0];
        const float v01 = grid[static_cast<size_t>(y0) * gw + x0 + 1];
        const float v10 = grid[static_cast<size_t>(y0 + 1) * gw + x0];
        const float v11 = grid[static_cast<size_t>(y0 + 1) * gw + x0 + 1];
        acc[static_cast<size_t>(y) * w + x] +=
            amp * ((1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11));
      }
    }
    amp *= 0.5f;
  }
  float lo = acc[0], hi = acc[0];
  for (float v : acc) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float span = hi - lo > 1e-9f ? hi - lo : 1.0f;
  for (auto& v : acc) v = (v - lo) / span;
  return acc;
}

struct Blob {
  float cx, cy, peak;
  // inverse covariance of the rotated anisotropic Gaussian
  float ixx, ixy, iyy;
};

}  // namespace

std::vector<Sample> synth_dataset(const SynthOptions& opts) {
  if (opts.count < 1) fail("synth_dataset: count must be >= 1");
  if (opts.height < 32 || opts.width < 32) fail("synth_dataset: image must be at least 32x32");
  if (opts.min_targets < 1 || opts.max_targets < opts.min_targets) {
    fail("synth_dataset: bad target range");
  }
  constexpr int kMargin = 8;        // keeps the 15x15 support box inside bounds
  constexpr int kClip = 7;          // support half-width
  RandomSource root(opts.seed);

  std::vector<Sample> out;
  for (int si = 0; si < opts.count; ++si) {
    RandomSource rng = root.fork(static_cast<uint64_t>(si));
    const int h = opts.height, w = opts.width;
    std::vector<float> img = value_noise(h, w, rng, opts.fine_clutter);
    for (auto& v : img) v *= opts.background_level;

    const int want = rng.range_int(opts.min_targets, opts.max_targets);
    std::vector<Blob> blobs;
    for (int bi = 0; bi < want; ++bi) {
      float cx = 0, cy = 0;
      bool placed = false;
      for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
        cx = rng.uniform(static_cast<float>(kMargin), static_cast<float>(w - kMargin));
        cy = rng.uniform(static_cast<float>(kMargin), static_cast<float>(h - kMargin));
        placed = true;
        for (const Blob& b : blobs) {
          const float dx = cx - b.cx, dy = cy - b.cy;
          if (dx * dx + dy * dy < 16.0f * 16.0f) {  // components must stay separate
            placed = false;
            break;
          }
        }
      }
      if (!placed) continue;
      const float sig_a = rng.uniform(1.2f, 2.5f);
      const float sig_b = rng.uniform(0.9f, sig_a);
      const float theta = rng.uniform(0.0f, 3.14159265f);
      const float ct = std::cos(theta), st = std::sin(theta);
      Blob b;
      b.cx = cx;
      b.cy = cy;
      b.peak = rng.uniform(0.6f, 1.0f);
      const float ia = 1.0f / (sig_a * sig_a), ib = 1.0f / (sig_b * sig_b);
      b.ixx = ct * ct * ia + st * st * ib;
      b.iyy = st * st * ia + ct * ct * ib;
      b.ixy = ct * st * (ia - ib);
      blobs.push_back(b);
    }

    metrics::BinaryMask mask(w, h);
    for (const Blob& b : blobs) {
      const int px = static_cast<int>(std::lround(b.cx));
      const int py = static_cast<int>(std::lround(b.cy));
      for (int y = std::max(0, py - kClip); y <= std::min(h - 1, py + kClip); ++y) {
        for (int x = std::max(0, px - kClip); x <= std::min(w - 1, px + kClip); ++x) {
          const float dx = static_cast<float>(x) - b.cx;
          const float dy = static_cast<float>(y) - b.cy;
          const float q = b.ixx * dx * dx + 2.0f * b.ixy * dx * dy + b.iyy * dy * dy;
          const float contrib = b.peak * std::exp(-0.5f * q);
          img[static_cast<size_t>(y) * w + x] += contrib;
          if (contrib > 0.25f * b.peak) mask.set(x, y, true);
        }
      }
    }

    // quantize exactly as the PGM writer would, so in-memory and on-disk
    // datasets train identically
    std::vector<float> chan(static_cast<size_t>(h) * w);
    for (size_t i = 0; i < chan.size(); ++i) {
      const float c = std::clamp(img[i], 0.0f, 1.0f);
      chan[i] = static_cast<float>(std::lround(c * 255.0f)) / 255.0f;
    }
    std::vector<float> rgb(chan.size() * 3);
    std::copy(chan.begin(), chan.end(), rgb.begin());
    std::copy(chan.begin(), chan.end(), rgb.begin() + static_cast<int64_t>(chan.size()));
    std::copy(chan.begin(), chan.end(), rgb.begin() + 2 * static_cast<int64_t>(chan.size()));

    Sample s;
    char id[32];
    std::snprintf(id, sizeof(id), "synth%04d", si);
    s.id = id;
    s.image = Tensor::from({3, h, w}, std::move(rgb));
    s.mask = std::move(mask);
    out.push_back(std::move(s));
  }
  return out;
}

DatasetManifest write_dataset(const std::vector<Sample>& samples, const std::string& dir,
                              int target_h, int target_w) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  DatasetManifest m;
  m.target_h = target_h;
  m.target_w = target_w;
  for (const Sample& s : samples) {
    const int h = s.image.dim(1), w = s.image.dim(2);
    GrayImage img;
    img.width = w;
    img.height = h;
    img.px.resize(static_cast<size_t>(w) * h);
    const float* v = s.image.values().data();  // first channel
    for (size_t i = 0; i < img.px.size(); ++i) {
      img.px[i] = static_cast<uint8_t>(std::lround(std::clamp(v[i], 0.0f, 1.0f) * 255.0f));
    }
    GrayImage msk;
    msk.width = w;
    msk.height = h;
    msk.px.resize(img.px.size());
    for (size_t i = 0; i < msk.px.size(); ++i) msk.px[i] = s.mask.fg[i] ? 255 : 0;

    ManifestEntry e;
    e.id = s.id;
    e.image_path = (fs::path(dir) / "images" / (s.id + ".pgm")).string();
    e.mask_path = (fs::path(dir) / "masks" / (s.id + ".pgm")).string();
    write_pgm(img, e.image_path);
    write_pgm(msk, e.mask_path);
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, (fs::path(dir) / "manifest.tsv").string());
  return m;
}

}  // namespace ilnet::data
