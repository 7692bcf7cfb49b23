#include "glgait/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "glgait/flops.hpp"
#include "glgait/rng.hpp"
#include "json.hpp"

namespace glgait {

using json = nlohmann::json;

namespace {

AttentionConfig make_config(std::size_t C, std::size_t D, std::size_t P, std::size_t Pl, std::size_t heads) {
  AttentionConfig cfg;
  cfg.heads = heads;
  cfg.head_dim = D;
  cfg.patch_temporal = P;
  cfg.patch_spatial = Pl;
  cfg.channels = C;
  return cfg;
}

void check_patches(std::size_t P, std::size_t Pl, std::size_t heads) {
  if (P == 0 || Pl == 0) throw ValueError("patch sizes must be positive");
  if (heads == 0) throw ValueError("heads must be positive");
}

Tensor random_input(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return Tensor(shape, std::move(v));
}

}  // namespace

ComplexityReport analytic_attention_cost(AttentionVariant variant, std::size_t L, std::size_t T, std::size_t C,
                                         std::size_t D, std::size_t P, std::size_t Pl, std::size_t heads) {
  check_patches(P, Pl, heads);
  if (L != 0 && T != 0) validate_geometry(variant, make_config(C, D, P, Pl, heads), L, T);
  ComplexityReport r;
  r.variant = variant_name(variant);
  r.L = L, r.T = T, r.C = C, r.D = D, r.P = P, r.Pl = Pl, r.heads = heads;
  const std::uint64_t l = L, t = T, c = C, d = D, p = P, pl = Pl;
  std::uint64_t groups = 0, tokens = 0;
  switch (variant) {
    case AttentionVariant::pgta:
      r.token_size = C;
      groups = l * p, tokens = t / p;
      r.mem_form = "O(CD)";
      r.com_form = "O(L T^2 D / P_t)";
      r.information_loss_form = "O(C - D)";
      break;
    case AttentionVariant::factorised:
      r.token_size = P * C;
      groups = l, tokens = t / p;
      r.mem_form = "O(P_t C D)";
      r.com_form = "O(L T^2 D / P_t^2)";
      r.information_loss_form = "O(P_t C - D)";
      break;
    case AttentionVariant::mhsa:
      r.token_size = Pl * P * C;
      groups = 1, tokens = l * t / (pl * p);
      r.mem_form = "O(P_l P_t C D)";
      r.com_form = "O(L^2 T^2 D / (P_l^2 P_t^2))";
      r.information_loss_form = "O(P_l P_t C - D)";
      break;
    case AttentionVariant::mobilevit:
      r.token_size = C;
      groups = pl * p, tokens = l * t / (pl * p);
      r.mem_form = "O(CD)";
      r.com_form = "O(L^2 T^2 D / (P_l P_t))";
      r.information_loss_form = "O(C - D)";
      break;
  }
  r.mem_analytic = std::uint64_t(r.token_size) * d;
  r.activation_memory = groups * tokens * tokens;
  r.com_analytic = r.activation_memory * d;
  r.projection_analytic = l * t * c * d;
  r.information_loss = std::int64_t(r.token_size) - std::int64_t(D);
  return r;
}

std::uint64_t empirical_flop_count(AttentionVariant variant, std::size_t L, std::size_t T, std::size_t C,
                                   std::size_t D, std::size_t P, std::size_t Pl, std::size_t heads,
                                   std::uint64_t seed) {
  check_patches(P, Pl, heads);
  const AttentionConfig cfg = make_config(C, D, P, Pl, heads);
  if (L == 0 || T == 0 || C == 0) return 0;
  validate_geometry(variant, cfg, L, T);
  const auto weights = init_projection(variant, cfg, derive_seed(seed, 1));
  const Tensor x = random_input({L, T, C}, derive_seed(seed, 2));
  MultiplyCounter counter;
  attention_forward(variant, x, cfg, weights);
  return counter.count();
}

ComplexityReport measure_attention(AttentionVariant variant, std::size_t L, std::size_t T, std::size_t C,
                                   std::size_t D, std::size_t P, std::size_t Pl, std::size_t heads,
                                   std::uint64_t seed) {
  ComplexityReport r = analytic_attention_cost(variant, L, T, C, D, P, Pl, heads);
  r.mults_empirical = empirical_flop_count(variant, L, T, C, D, P, Pl, heads, seed);
  return r;
}

std::size_t lossless_head_dim(AttentionVariant variant, std::size_t C, std::size_t P, std::size_t Pl) {
  switch (variant) {
    case AttentionVariant::mhsa: return Pl * P * C;
    case AttentionVariant::pgta:
    case AttentionVariant::factorised: return P * C;
    case AttentionVariant::mobilevit: return C;
  }
  return C;
}

std::string complexity_csv(const std::vector<ComplexityReport>& rows) {
  std::ostringstream out;
  out << "variant,L,T,C,D,P,Pl,mem_analytic,com_analytic,mults_empirical,heads,token_size,mults_analytic,"
         "projection_analytic,activation_memory,information_loss,mem_form,com_form,information_loss_form\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << r.L << ',' << r.T << ',' << r.C << ',' << r.D << ',' << r.P << ',' << r.Pl << ','
        << r.mem_analytic << ',' << r.com_analytic << ',';
    if (r.mults_empirical) out << *r.mults_empirical;
    out << ',' << r.heads << ',' << r.token_size << ',' << r.mults_analytic() << ',' << r.projection_analytic << ','
        << r.activation_memory << ',' << r.information_loss << ',' << r.mem_form << ',' << r.com_form << ','
        << r.information_loss_form << '\n';
  }
  return out.str();
}

std::string complexity_json(const std::vector<ComplexityReport>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    json j;
    j["variant"] = r.variant;
    j["L"] = r.L;
    j["T"] = r.T;
    j["C"] = r.C;
    j["D"] = r.D;
    j["P"] = r.P;
    j["Pl"] = r.Pl;
    j["mem_analytic"] = r.mem_analytic;
    j["com_analytic"] = r.com_analytic;
    j["mults_empirical"] = r.mults_empirical ? json(*r.mults_empirical) : json(nullptr);
    j["heads"] = r.heads;
    j["token_size"] = r.token_size;
    j["mults_analytic"] = r.mults_analytic();
    j["projection_analytic"] = r.projection_analytic;
    j["activation_memory"] = r.activation_memory;
    j["information_loss"] = r.information_loss;
    j["mem_form"] = r.mem_form;
    j["com_form"] = r.com_form;
    j["information_loss_form"] = r.information_loss_form;
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

void ArchDescriptor::validate() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.kind == TemporalLayer::Kind::global) continue;
    const std::string where = "layer " + std::to_string(i);
    if (l.kernel == 0) throw ValueError(where + ": kernel must be positive");
    if (l.kind == TemporalLayer::Kind::conv && l.kernel % 2 == 0)
      throw ValueError(where + ": temporal conv kernel must be odd, got " + std::to_string(l.kernel));
    if (l.stride == 0) throw ValueError(where + ": stride must be at least 1");
  }
}

std::string ArchDescriptor::to_json() const {
  json arr = json::array();
  for (const auto& l : layers) {
    switch (l.kind) {
      case TemporalLayer::Kind::conv: arr.push_back({{"type", "conv"}, {"k", l.kernel}, {"s", l.stride}}); break;
      case TemporalLayer::Kind::pool: arr.push_back({{"type", "pool"}, {"k", l.kernel}, {"s", l.stride}}); break;
      case TemporalLayer::Kind::global: arr.push_back({{"type", "global"}}); break;
    }
  }
  return json{{"layers", arr}}.dump(2);
}

ArchDescriptor ArchDescriptor::from_json(const std::string& text) {
  ArchDescriptor arch;
  try {
    const json j = json::parse(text);
    for (const auto& l : j.at("layers")) {
      TemporalLayer layer;
      const std::string type = l.at("type").get<std::string>();
      if (type == "conv") {
        layer.kind = TemporalLayer::Kind::conv;
      } else if (type == "pool") {
        layer.kind = TemporalLayer::Kind::pool;
      } else if (type == "global") {
        layer.kind = TemporalLayer::Kind::global;
      } else {
        throw ValueError("unknown layer type '" + type + "'");
      }
      if (layer.kind != TemporalLayer::Kind::global) {
        layer.kernel = l.at("k").get<std::size_t>();
        layer.stride = l.value("s", std::size_t{1});
      }
      arch.layers.push_back(layer);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid architecture JSON: ") + e.what());
  }
  arch.validate();
  return arch;
}

std::size_t trf_analytic(const ArchDescriptor& arch) {
  arch.validate();
  std::size_t r = 1, jump = 1;
  for (const auto& l : arch.layers) {
    if (l.kind == TemporalLayer::Kind::global) return kUnboundedTrf;
    r += (l.kernel - 1) * jump;
    jump *= l.stride;
  }
  return r;
}

namespace {

using Signal = std::vector<std::vector<double>>;  // [channel][frame]

struct RandomStack {
  const ArchDescriptor& arch;
  std::vector<std::vector<double>> weights;  // per layer

  RandomStack(const ArchDescriptor& a, std::size_t channels, std::uint64_t seed) : arch(a) {
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
      Rng rng(derive_seed(seed, i));
      const auto& l = arch.layers[i];
      std::size_t n = channels * channels;
      if (l.kind == TemporalLayer::Kind::conv) n *= l.kernel;
      std::vector<double> w(n);
      for (auto& v : w) v = rng.normal();
      weights.push_back(std::move(w));
    }
  }

  Signal run(Signal x) const {
    const std::size_t ch = x.size();
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
      const auto& l = arch.layers[i];
      const auto& w = weights[i];
      const std::size_t T = x[0].size();
      Signal y(ch);
      if (l.kind == TemporalLayer::Kind::global) {
        for (std::size_t o = 0; o < ch; ++o) {
          y[o] = x[o];
          for (std::size_t c = 0; c < ch; ++c) {
            double m = 0.0;
            for (double v : x[c]) m += v;
            m /= double(T);
            for (auto& v : y[o]) v += w[o * ch + c] * m;
          }
        }
      } else {
        const std::size_t k = l.kernel, pad = k / 2;
        if (T + 2 * pad < k) throw ValueError("sequence too short for a kernel of " + std::to_string(k));
        const std::size_t out = (T + 2 * pad - k) / l.stride + 1;
        for (std::size_t o = 0; o < ch; ++o) {
          y[o].assign(out, 0.0);
          for (std::size_t t = 0; t < out; ++t)
            for (std::size_t j = 0; j < k; ++j) {
              const std::size_t src = t * l.stride + j;
              if (src < pad || src - pad >= T) continue;
              if (l.kind == TemporalLayer::Kind::conv) {
                for (std::size_t c = 0; c < ch; ++c) y[o][t] += w[(o * ch + c) * k + j] * x[c][src - pad];
              } else {
                y[o][t] += x[o][src - pad] / double(k);
              }
            }
        }
      }
      x = std::move(y);
    }
    return x;
  }
};

}  // namespace

std::size_t trf_empirical(const ArchDescriptor& arch, std::size_t T, std::uint64_t seed, std::size_t channels) {
  arch.validate();
  if (T == 0 || channels == 0) throw ValueError("trf_empirical needs T > 0 and channels > 0");
  const RandomStack stack(arch, channels, seed);
  Rng rng(derive_seed(seed, 0xF00D));
  Signal x(channels, std::vector<double>(T));
  for (auto& row : x)
    for (auto& v : row) v = rng.normal();
  const Signal base = stack.run(x);
  const std::size_t out_frames = base[0].size();
  if (out_frames == 0) throw ValueError("stack leaves no output frames; use a larger T");
  const std::size_t centre = out_frames / 2;
  std::size_t first = T, last = 0, count = 0;
  for (std::size_t t = 0; t < T; ++t) {
    Signal p = x;
    for (auto& row : p) row[t] += 1.0;
    const Signal y = stack.run(p);
    bool changed = false;
    for (std::size_t c = 0; c < channels; ++c) changed |= std::abs(y[c][centre] - base[c][centre]) > 1e-9;
    if (!changed) continue;
    first = std::min(first, t);
    last = std::max(last, t);
    ++count;
  }
  if (count == 0) return 0;
  const bool has_global = std::any_of(arch.layers.begin(), arch.layers.end(),
                                      [](const TemporalLayer& l) { return l.kind == TemporalLayer::Kind::global; });
  if (count == T && has_global) return T;
  if (first == 0 || last == T - 1)
    throw ValueError("receptive field reaches the sequence boundary at T=" + std::to_string(T) +
                     "; use a larger T");
  return last - first + 1;
}

ArchDescriptor arch_from_backbone(const BackboneConfig& cfg) {
  ArchDescriptor arch;
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t b = 0; b < cfg.blocks[s]; ++b) {
      if (cfg.global_stage[s]) arch.layers.push_back({TemporalLayer::Kind::global, 0, 1});
      arch.layers.push_back({TemporalLayer::Kind::conv, 3, 1});
    }
  return arch;
}

InfluenceMatrix temporal_influence(const Model& model, std::size_t T, std::uint64_t seed,
                                   const std::vector<std::size_t>& input_frames) {
  const auto& cfg = model.config();
  if (T == 0) throw ValueError("temporal_influence needs T > 0");
  Rng rng(seed);
  std::vector<double> pixels(T * cfg.height * cfg.width);
  for (auto& v : pixels) v = rng.uniform();
  const Shape shape{1, T, cfg.height, cfg.width};
  auto features = [&](const std::vector<double>& data) {
    Scope scope(model.params(), Mode::eval, cfg.batchnorm, false);
    return model.backbone(scope, constant(model.prepare_input(Tensor(shape, data)))).value();
  };
  const Tensor base = features(pixels);
  const Shape& fs = base.shape();  // [C, 1, T, h, w]
  const std::size_t C = fs[0], plane = fs[3] * fs[4];
  InfluenceMatrix result;
  for (std::size_t t : input_frames) {
    if (t >= T) throw ValueError("perturbed frame " + std::to_string(t) + " is outside the sequence");
    std::vector<double> p = pixels;
    const std::size_t frame = cfg.height * cfg.width;
    for (std::size_t i = 0; i < frame; ++i) p[t * frame + i] += 1.0;
    const Tensor y = features(p);
    std::vector<bool> row(T, false);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t o = 0; o < T; ++o) {
        if (row[o]) continue;
        const std::size_t off = (c * T + o) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          if (std::abs(y[off + i] - base[off + i]) > 1e-9) {
            row[o] = true;
            break;
          }
      }
    result.push_back(std::move(row));
  }
  return result;
}

std::size_t trf_empirical(const Model& model, std::size_t T, std::uint64_t seed) {
  const auto row = temporal_influence(model, T, seed, {T / 2}).front();
  const std::size_t count = std::size_t(std::count(row.begin(), row.end(), true));
  if (count == T) return T;
  if (count == 0) return 0;
  const std::size_t first = std::size_t(std::find(row.begin(), row.end(), true) - row.begin());
  const std::size_t last = T - 1 - std::size_t(std::find(row.rbegin(), row.rend(), true) - row.rbegin());
  if (first == 0 || last == T - 1)
    throw ValueError("receptive field reaches the sequence boundary at T=" + std::to_string(T) +
                     "; use a larger T");
  return last - first + 1;
}

bool full_temporal_connectivity(const Model& model, std::size_t T, std::uint64_t seed) {
  std::vector<std::size_t> frames(T);
  for (std::size_t t = 0; t < T; ++t) frames[t] = t;
  for (const auto& row : temporal_influence(model, T, seed, frames))
    if (std::find(row.begin(), row.end(), false) != row.end()) return false;
  return true;
}

}  // namespace glgait
