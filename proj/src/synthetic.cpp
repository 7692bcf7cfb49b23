#include "glgait/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"

#include "glgait/rng.hpp"
#include "glgait/serialize.hpp"

namespace glgait {

namespace {

using json = nlohmann::json;

constexpr std::size_t kCanvasH = 2 * kFrameHeight;
constexpr std::size_t kCanvasW = 2 * kFrameWidth;
constexpr double kGround = 124.0;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Canvas {
  std::vector<std::uint8_t> px = std::vector<std::uint8_t>(kCanvasH * kCanvasW, 0);

  // Filled capsule: every pixel centre within r of segment a-b.
  void capsule(double ax, double ay, double bx, double by, double r) {
    const long y0 = std::max(0L, long(std::floor(std::min(ay, by) - r)));
    const long y1 = std::min(long(kCanvasH) - 1, long(std::ceil(std::max(ay, by) + r)));
    const long x0 = std::max(0L, long(std::floor(std::min(ax, bx) - r)));
    const long x1 = std::min(long(kCanvasW) - 1, long(std::ceil(std::max(ax, bx) + r)));
    const double dx = bx - ax, dy = by - ay, len2 = dx * dx + dy * dy;
    for (long y = y0; y <= y1; ++y)
      for (long x = x0; x <= x1; ++x) {
        const double px_ = double(x) + 0.5, py = double(y) + 0.5;
        double t = len2 > 0.0 ? ((px_ - ax) * dx + (py - ay) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double ex = px_ - (ax + t * dx), ey = py - (ay + t * dy);
        if (ex * ex + ey * ey <= r * r) px[std::size_t(y) * kCanvasW + std::size_t(x)] = 1;
      }
  }
};

// Pose at gait phase phi; the far-side limbs sit behind the body and are
// thinner, so swapping the legs changes the silhouette.
void draw_figure(Canvas& c, const IdentityParams& p, double phi) {
  const double cx = double(kCanvasW) / 2.0 + p.x_offset;
  const double hip_y = kGround - (p.thigh + p.shin) + p.bob * std::cos(2.0 * phi);
  const double top = hip_y - p.torso_height;
  const double half = p.torso_width / 2.0;
  c.capsule(cx, top + half, cx, hip_y - half, half);
  c.capsule(cx, top - p.head_radius - 1.0, cx, top - p.head_radius - 1.0, p.head_radius);
  for (int side = 0; side < 2; ++side) {
    const double psi = phi + side * std::numbers::pi;
    const double hx = cx + (side == 0 ? 2.5 : -2.5);
    const double r = (side == 0 ? 0.5 : 0.42) * p.limb_width;
    const double a1 = p.swing * std::sin(psi);
    const double kx = hx + p.thigh * std::sin(a1), ky = hip_y + p.thigh * std::cos(a1);
    const double a2 = a1 - p.knee_bend * 0.5 * (1.0 - std::cos(psi));
    const double fx = kx + p.shin * std::sin(a2), fy = ky + p.shin * std::cos(a2);
    c.capsule(hx, hip_y, kx, ky, r);
    c.capsule(kx, ky, fx, fy, r);
    const double sy = top + 4.0;
    const double a3 = -0.8 * p.swing * std::sin(psi);
    c.capsule(cx, sy, cx + p.arm * std::sin(a3), sy + p.arm * std::cos(a3), 0.8 * r);
  }
}

// 2x2 blocks with at least two set pixels become foreground.
void downsample(const Canvas& c, std::uint8_t* out) {
  for (std::size_t y = 0; y < kFrameHeight; ++y)
    for (std::size_t x = 0; x < kFrameWidth; ++x) {
      const std::uint8_t* a = c.px.data() + 2 * y * kCanvasW + 2 * x;
      out[y * kFrameWidth + x] = (a[0] + a[1] + a[kCanvasW] + a[kCanvasW + 1]) >= 2 ? 1 : 0;
    }
}

SilhouetteSequence empty_sequence(std::size_t identity, std::size_t frames, std::size_t period) {
  SilhouetteSequence s;
  s.identity = identity;
  s.frames = frames;
  s.period = period;
  s.pixels.assign(frames * kFrameHeight * kFrameWidth, 0);
  return s;
}

void render(SilhouetteSequence& s, const IdentityParams& p, const std::vector<double>& phases) {
  for (std::size_t t = 0; t < s.frames; ++t) {
    Canvas c;
    draw_figure(c, p, phases[t]);
    downsample(c, s.pixels.data() + t * kFrameHeight * kFrameWidth);
  }
}

json meta_to_json(const SilhouetteSequence& s) {
  json occ = json::array();
  for (const auto& o : s.meta.occlusions) occ.push_back({o.frame, o.y0, o.x0, o.y1, o.x1});
  return json{{"period", s.period},
              {"pace_drift", s.meta.pace_drift},
              {"noise_rate", s.meta.noise_rate},
              {"seed", s.meta.seed},
              {"occlusions", occ}};
}

void meta_from_json(const std::string& text, SilhouetteSequence& s) {
  try {
    const json j = json::parse(text);
    s.period = j.at("period").get<std::size_t>();
    s.meta.pace_drift = j.at("pace_drift").get<double>();
    s.meta.noise_rate = j.at("noise_rate").get<double>();
    s.meta.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& o : j.at("occlusions")) {
      const auto v = o.get<std::vector<std::size_t>>();
      if (v.size() != 5) throw FormatError("occlusion entries need 5 values");
      s.meta.occlusions.push_back({v[0], v[1], v[2], v[3], v[4]});
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid sequence meta: ") + e.what());
  }
}

constexpr char kDatasetMagic[4] = {'G', 'L', 'S', 'D'};
constexpr std::uint32_t kDatasetVersion = 1;

void fnv(std::uint64_t& h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xFF;
    h *= 1099511628211ull;
  }
}

}  // namespace

void IdentityParams::validate() const {
  for (double v : {head_radius, torso_height, torso_width, thigh, shin, arm, limb_width})
    if (!(v > 0.0) || !std::isfinite(v)) throw ValueError("identity proportions must be positive and finite");
  if (period < 2) throw ValueError("gait period must be at least 2 frames");
  const double head_top = kGround - (thigh + shin) - bob - torso_height - 2.0 * head_radius - 1.0;
  if (head_top < 1.0) throw ValueError("figure does not fit the frame (head top at " + std::to_string(head_top) + ")");
  if (std::abs(x_offset) + torso_width / 2.0 >= double(kCanvasW) / 2.0)
    throw ValueError("figure does not fit the frame horizontally");
}

Tensor SilhouetteSequence::to_tensor(DType dtype) const {
  std::vector<double> v(pixels.begin(), pixels.end());
  return Tensor({frames, height, width}, std::move(v), dtype);
}

IdentityParams identity_params(std::uint64_t corpus_seed, std::size_t identity) {
  Rng rng(derive_seed(corpus_seed, identity));
  IdentityParams p;
  p.head_radius = rng.uniform(5.0, 8.0);
  p.torso_height = rng.uniform(28.0, 40.0);
  p.torso_width = rng.uniform(11.0, 20.0);
  p.thigh = rng.uniform(21.0, 28.0);
  p.shin = rng.uniform(21.0, 28.0);
  p.arm = rng.uniform(24.0, 34.0);
  p.limb_width = rng.uniform(4.5, 8.0);
  p.swing = rng.uniform(0.3, 0.65);
  p.knee_bend = rng.uniform(0.3, 0.9);
  p.bob = rng.uniform(0.5, 3.0);
  p.x_offset = rng.uniform(-5.0, 5.0);
  p.period = 8 + rng.below(7);
  p.validate();
  return p;
}

SilhouetteSequence generate_sequence(const IdentityParams& params, const WildParams& wild, std::size_t frames,
                                     std::uint64_t seed, std::size_t identity) {
  params.validate();
  if (frames == 0) throw ValueError("a sequence needs at least one frame");
  if (wild.pace_drift < 0.0 || wild.pace_drift >= 1.0) throw ValueError("pace_drift must be in [0, 1)");
  if (wild.occlusion_rate < 0.0 || wild.occlusion_rate > 1.0 || wild.noise_rate < 0.0 || wild.noise_rate > 1.0)
    throw ValueError("occlusion and noise rates must be probabilities");
  Rng rng(seed);
  const double start = rng.uniform();  // phase offset in cycles
  const double drift_phase = kTwoPi * rng.uniform();
  const double P = double(params.period);
  const std::size_t start_frame = rng.below(params.period);
  std::vector<double> phases(frames);
  double cycles = start;
  for (std::size_t t = 0; t < frames; ++t) {
    if (wild.pace_drift == 0.0) {
      // Exact periodicity: the phase depends on t only through t mod period.
      phases[t] = kTwoPi * double((t + start_frame) % params.period) / P;
    } else {
      phases[t] = kTwoPi * cycles;
      const double p = P * (1.0 + wild.pace_drift * std::sin(kTwoPi * double(t) / (2.7 * P) + drift_phase));
      cycles += 1.0 / p;
    }
  }
  SilhouetteSequence s = empty_sequence(identity, frames, params.period);
  s.meta.pace_drift = wild.pace_drift;
  s.meta.noise_rate = wild.noise_rate;
  s.meta.seed = seed;
  render(s, params, phases);
  const std::size_t plane = kFrameHeight * kFrameWidth;
  for (std::size_t t = 0; t < frames; ++t) {
    if (wild.occlusion_rate > 0.0 && rng.uniform() < wild.occlusion_rate) {
      const std::size_t h = 8 + rng.below(17), w = 8 + rng.below(15);
      const std::size_t y0 = rng.below(kFrameHeight - h + 1), x0 = rng.below(kFrameWidth - w + 1);
      s.meta.occlusions.push_back({t, y0, x0, y0 + h, x0 + w});
      for (std::size_t y = y0; y < y0 + h; ++y)
        for (std::size_t x = x0; x < x0 + w; ++x) s.pixels[t * plane + y * kFrameWidth + x] = 0;
    }
    if (wild.noise_rate > 0.0)
      for (std::size_t i = 0; i < plane; ++i)
        if (rng.uniform() < wild.noise_rate) s.pixels[t * plane + i] = 1;
  }
  return s;
}

SilhouetteSequence generate_probe_sequence(const IdentityParams& params, std::size_t frames, std::size_t start,
                                           std::size_t length) {
  params.validate();
  if (frames == 0) throw ValueError("a sequence needs at least one frame");
  if (start + length > frames) throw ValueError("dynamic segment exceeds the sequence");
  std::vector<double> phases(frames, 0.0);
  for (std::size_t t = start; t < start + length; ++t)
    phases[t] = kTwoPi * double((t - start) % params.period) / double(params.period);
  SilhouetteSequence s = empty_sequence(0, frames, params.period);
  render(s, params, phases);
  return s;
}

std::vector<std::size_t> sample_indices(std::size_t frames, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ValueError("sample length must be positive");
  if (frames == 0) throw ValueError("cannot sample from an empty sequence");
  std::vector<std::size_t> idx;
  if (frames >= n) {
    std::vector<std::size_t> all(frames);
    for (std::size_t i = 0; i < frames; ++i) all[i] = i;
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) std::swap(all[i], all[i + rng.below(frames - i)]);
    idx.assign(all.begin(), all.begin() + std::ptrdiff_t(n));
  } else {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i % frames);
  }
  std::sort(idx.begin(), idx.end());
  return idx;
}

SilhouetteSequence sample_fixed_length(const SilhouetteSequence& seq, std::size_t n, std::uint64_t seed) {
  const auto idx = sample_indices(seq.frames, n, seed);
  SilhouetteSequence out = seq;
  out.frames = n;
  const std::size_t plane = seq.height * seq.width;
  out.pixels.resize(n * plane);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(seq.pixels.begin() + std::ptrdiff_t(idx[i] * plane), plane, out.pixels.begin() + std::ptrdiff_t(i * plane));
  out.meta.occlusions.clear();
  for (const auto& o : seq.meta.occlusions)
    for (std::size_t i = 0; i < n; ++i)
      if (idx[i] == o.frame) out.meta.occlusions.push_back({i, o.y0, o.x0, o.y1, o.x1});
  return out;
}

std::size_t measured_period(const SilhouetteSequence& seq) {
  if (seq.frames < 4) return 0;
  const std::size_t plane = seq.height * seq.width;
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t lag = 2; lag <= seq.frames / 2; ++lag) {
    std::size_t agree = 0;
    for (std::size_t t = 0; t + lag < seq.frames; ++t)
      for (std::size_t i = 0; i < plane; ++i) agree += seq.pixels[t * plane + i] == seq.pixels[(t + lag) * plane + i];
    const double score = double(agree) / double((seq.frames - lag) * plane);
    if (score > best_score) {
      best_score = score;
      best = lag;
    }
  }
  return best;
}

std::vector<std::size_t> SyntheticDataset::sequences_of(std::size_t identity) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < sequences.size(); ++i)
    if (sequences[i].identity == identity) out.push_back(i);
  return out;
}

SyntheticDataset generate_dataset(const DatasetConfig& cfg) {
  if (cfg.sequences_per_identity == 0 || cfg.frames == 0) throw ValueError("dataset extents must be positive");
  SyntheticDataset ds;
  const std::size_t total = cfg.train_identities + cfg.test_identities;
  for (std::size_t id = 0; id < total; ++id) {
    (id < cfg.train_identities ? ds.train_identities : ds.test_identities).push_back(id);
    const IdentityParams p = identity_params(cfg.seed, id);
    const std::uint64_t id_seed = derive_seed(cfg.seed, 0x5EC0000ull + id);
    for (std::size_t j = 0; j < cfg.sequences_per_identity; ++j)
      ds.sequences.push_back(generate_sequence(p, cfg.wild, cfg.frames, derive_seed(id_seed, j), id));
  }
  return ds;
}

void save_dataset(const SyntheticDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out.write(kDatasetMagic, 4);
  le::put_u32(out, kDatasetVersion);
  for (const auto* ids : {&ds.train_identities, &ds.test_identities}) {
    le::put_u64(out, ids->size());
    for (auto id : *ids) le::put_u64(out, id);
  }
  le::put_u64(out, ds.sequences.size());
  for (const auto& s : ds.sequences) {
    le::put_u64(out, s.identity);
    le::put_u64(out, s.frames);
    le::put_u32(out, std::uint32_t(s.height));
    le::put_u32(out, std::uint32_t(s.width));
    const std::string meta = meta_to_json(s).dump();
    le::put_u64(out, meta.size());
    le::put_bytes(out, meta);
    std::string bits((s.pixels.size() + 7) / 8, '\0');
    for (std::size_t i = 0; i < s.pixels.size(); ++i)
      if (s.pixels[i]) bits[i / 8] = char(std::uint8_t(bits[i / 8]) | (1u << (i % 8)));
    le::put_bytes(out, bits);
  }
  if (!out) throw FormatError("failed writing '" + path + "'");
}

SyntheticDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset '" + path + "'");
  const std::string magic = le::get_bytes(in, 4);
  if (magic != std::string(kDatasetMagic, 4)) throw FormatError("'" + path + "' is not a dataset file (bad magic)");
  const std::uint32_t version = le::get_u32(in);
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version));
  SyntheticDataset ds;
  for (auto* ids : {&ds.train_identities, &ds.test_identities}) {
    const std::uint64_t n = le::get_u64(in);
    if (n > (1u << 24)) throw FormatError("implausible identity count");
    for (std::uint64_t i = 0; i < n; ++i) ids->push_back(le::get_u64(in));
  }
  const std::uint64_t count = le::get_u64(in);
  if (count > (1u << 24)) throw FormatError("implausible sequence count");
  for (std::uint64_t k = 0; k < count; ++k) {
    SilhouetteSequence s;
    s.identity = le::get_u64(in);
    s.frames = le::get_u64(in);
    s.height = le::get_u32(in);
    s.width = le::get_u32(in);
    if (s.frames == 0 || s.height == 0 || s.width == 0 || s.frames > (1u << 20) || s.height * s.width > (1u << 20))
      throw FormatError("corrupt sequence header");
    const std::uint64_t meta_len = le::get_u64(in);
    if (meta_len > (1u << 26)) throw FormatError("corrupt sequence meta length");
    meta_from_json(le::get_bytes(in, meta_len), s);
    const std::size_t n = s.frames * s.height * s.width;
    const std::string bits = le::get_bytes(in, (n + 7) / 8);
    s.pixels.resize(n);
    for (std::size_t i = 0; i < n; ++i) s.pixels[i] = (std::uint8_t(bits[i / 8]) >> (i % 8)) & 1u;
    ds.sequences.push_back(std::move(s));
  }
  return ds;
}

std::uint64_t dataset_checksum(const SyntheticDataset& ds) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& s : ds.sequences) {
    fnv(h, s.identity);
    fnv(h, s.frames);
    fnv(h, s.height);
    fnv(h, s.width);
    for (auto p : s.pixels) {
      h ^= p;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace glgait
