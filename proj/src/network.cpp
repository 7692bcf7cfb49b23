#include "glgait/network.hpp"

#include <cmath>
#include <numeric>

#include "json.hpp"

#include "glgait/rng.hpp"

namespace glgait {

namespace {

using json = nlohmann::json;

std::uint64_t name_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return derive_seed(seed, h);
}

Tensor gaussian(const Shape& shape, double std, std::uint64_t seed, const std::string& name) {
  Rng rng(name_seed(seed, name));
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = std * rng.normal();
  return Tensor(shape, std::move(data));
}

void add_conv2d(ParamStore& store, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                std::uint64_t seed) {
  store.add(name, gaussian({cout, cin, k, k}, std::sqrt(2.0 / double(cin * k * k)), seed, name));
}

void add_conv1d(ParamStore& store, const std::string& name, std::size_t cin, std::size_t cout, std::uint64_t seed) {
  store.add(name, gaussian({cout, cin, 3}, std::sqrt(2.0 / double(cin * 3)), seed, name));
}

void add_bn(ParamStore& store, const std::string& prefix, const Shape& shape) {
  store.add(prefix + ".gamma", Tensor::full(shape, 1.0));
  store.add(prefix + ".beta", Tensor::zeros(shape));
  store.add_running(prefix, shape);
}

void add_shortcut(ParamStore& store, const std::string& prefix, std::size_t cin, std::size_t cout,
                  std::size_t stride, bool batchnorm, std::uint64_t seed) {
  if (cin == cout && stride == 1) return;
  add_conv2d(store, prefix + ".proj", cin, cout, 1, seed);
  if (batchnorm) add_bn(store, prefix + ".bn_proj", {cout});
}

std::string stage_prefix(std::size_t stage, std::size_t block) {
  return "stage" + std::to_string(stage + 1) + ".block" + std::to_string(block + 1);
}

std::size_t stage_stride(std::size_t stage, std::size_t block) {
  return block == 0 && (stage == 1 || stage == 2) ? 2 : 1;
}

std::size_t conv_out(std::size_t n, std::size_t stride) { return (n + 2 - 3) / stride + 1; }

}  // namespace

// ---------------------------------------------------------------------------
// Config

BackboneConfig BackboneConfig::for_capacity(const std::string& capacity) {
  BackboneConfig cfg;
  if (capacity == "B") {
    cfg.base_channels = 32;
  } else if (capacity == "L") {
    cfg.base_channels = 64;
  } else if (capacity == "H") {
    cfg.base_channels = 128;
  } else {
    throw ValueError("unknown capacity '" + capacity + "' (expected B, L or H)");
  }
  cfg.capacity = capacity;
  cfg.head_dim = cfg.base_channels;
  return cfg;
}

BackboneConfig BackboneConfig::tiny() {
  BackboneConfig cfg;
  cfg.capacity = "tiny";
  cfg.base_channels = 4;
  cfg.blocks = {1, 1, 1, 1};
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.parts = 4;
  cfg.embed_dim = 16;
  cfg.input_pool = 4;
  return cfg;
}

std::array<std::size_t, 4> BackboneConfig::stage_channels() const {
  const std::size_t c = base_channels;
  return {c, 2 * c, 4 * c, 8 * c};
}

std::string BackboneConfig::to_json() const {
  json j;
  j["capacity"] = capacity;
  j["base_channels"] = base_channels;
  j["blocks"] = blocks;
  j["global_stage"] = global_stage;
  j["P"] = patch_temporal;
  j["k"] = heads;
  j["D"] = head_dim;
  j["D_mid"] = mlp_dim;
  j["parts"] = parts;
  j["d"] = embed_dim;
  j["num_classes"] = num_classes;
  j["batchnorm"] = batchnorm;
  j["input_pool"] = input_pool;
  j["height"] = height;
  j["width"] = width;
  return j.dump();
}

BackboneConfig BackboneConfig::from_json(const std::string& text) {
  BackboneConfig cfg;
  try {
    const json j = json::parse(text);
    cfg.capacity = j.at("capacity").get<std::string>();
    cfg.base_channels = j.at("base_channels").get<std::size_t>();
    cfg.blocks = j.at("blocks").get<std::array<std::size_t, 4>>();
    cfg.global_stage = j.at("global_stage").get<std::array<bool, 4>>();
    cfg.patch_temporal = j.at("P").get<std::size_t>();
    cfg.heads = j.at("k").get<std::size_t>();
    cfg.head_dim = j.at("D").get<std::size_t>();
    cfg.mlp_dim = j.at("D_mid").get<std::size_t>();
    cfg.parts = j.at("parts").get<std::size_t>();
    cfg.embed_dim = j.at("d").get<std::size_t>();
    cfg.num_classes = j.at("num_classes").get<std::size_t>();
    cfg.batchnorm = j.at("batchnorm").get<bool>();
    cfg.input_pool = j.at("input_pool").get<std::size_t>();
    cfg.height = j.at("height").get<std::size_t>();
    cfg.width = j.at("width").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void BackboneConfig::validate() const {
  if (base_channels == 0 || patch_temporal == 0 || heads == 0 || head_dim == 0 || parts == 0 || embed_dim == 0 ||
      num_classes == 0 || input_pool == 0 || height == 0 || width == 0)
    throw ValueError("backbone config extents must be positive");
  for (auto b : blocks)
    if (b == 0) throw ValueError("every stage needs at least one block");
  if (height % input_pool != 0 || width % input_pool != 0)
    throw ValueError("input_pool must divide the silhouette size");
  std::size_t h = height / input_pool;
  h = conv_out(conv_out(h, 2), 2);
  if (h % parts != 0)
    throw ValueError("parts=" + std::to_string(parts) + " does not divide the feature height " + std::to_string(h));
}

// ---------------------------------------------------------------------------
// ParamStore

void ParamStore::add(const std::string& name, Tensor value) {
  if (values_.count(name)) throw ValueError("duplicate parameter '" + name + "'");
  names_.push_back(name);
  values_.emplace(name, std::move(value));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw ValueError("no parameter named '" + name + "'");
  return it->second;
}

void ParamStore::set(const std::string& name, Tensor value) {
  auto it = values_.find(name);
  if (it == values_.end()) throw ValueError("no parameter named '" + name + "'");
  if (it->second.shape() != value.shape())
    throw DimensionError("parameter '" + name + "' has shape " + to_string(it->second.shape()) + ", got " +
                         to_string(value.shape()));
  it->second = std::move(value);
}

void ParamStore::add_running(const std::string& prefix, const Shape& shape) {
  running_[prefix] = BatchStats{Tensor::zeros(shape), Tensor::full(shape, 1.0)};
}

const BatchStats& ParamStore::running(const std::string& prefix) const {
  auto it = running_.find(prefix);
  if (it == running_.end()) throw ValueError("no running statistics for '" + prefix + "'");
  return it->second;
}

void ParamStore::set_running(const std::string& prefix, BatchStats stats) {
  auto it = running_.find(prefix);
  if (it == running_.end()) throw ValueError("no running statistics for '" + prefix + "'");
  if (stats.mean.numel() != it->second.mean.numel() || stats.var.numel() != it->second.var.numel())
    throw DimensionError("running statistics for '" + prefix + "' have the wrong size");
  it->second = BatchStats{stats.mean.reshape(it->second.mean.shape()), stats.var.reshape(it->second.var.shape())};
}

// ---------------------------------------------------------------------------
// Scope

Scope::Scope(const ParamStore& store, Mode mode, bool batchnorm, bool requires_grad)
    : store_(store), mode_(mode), batchnorm_(batchnorm) {
  for (const auto& name : store.names())
    vars_.emplace(name, requires_grad ? parameter(store.get(name)) : constant(store.get(name)));
}

const Var& Scope::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ValueError("no parameter named '" + name + "'");
  return it->second;
}

void Scope::bind(const std::string& name, Var value) {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ValueError("no parameter named '" + name + "'");
  if (it->second.shape() != value.shape())
    throw DimensionError("parameter '" + name + "' has shape " + to_string(it->second.shape()) + ", got " +
                         to_string(value.shape()));
  it->second = std::move(value);
}

Var Scope::batchnorm(const Var& x, const std::string& prefix) {
  if (!batchnorm_) return x;
  const Var& gamma = (*this)[prefix + ".gamma"];
  const Var& beta = (*this)[prefix + ".beta"];
  std::vector<std::size_t> axes;
  if (gamma.shape().size() == 2) {
    axes = {1};  // [parts, B, d] with per-(part, dim) statistics
  } else {
    for (std::size_t a = 1; a < x.shape().size(); ++a) axes.push_back(a);
  }
  if (mode_ == Mode::eval) return batchnorm_eval(x, gamma, beta, axes, store_.running(prefix));
  BatchStats stats;
  Var y = batchnorm_train(x, gamma, beta, axes, 1e-5, &stats);
  stats_[prefix] = std::move(stats);
  return y;
}

void Scope::record(const std::string& label, const Shape& shape) { trace_.emplace_back(label, shape); }

// ---------------------------------------------------------------------------
// Blocks

void add_p3d_params(ParamStore& store, const std::string& prefix, std::size_t cin, std::size_t cout,
                    std::size_t stride, bool batchnorm, std::uint64_t seed) {
  add_conv2d(store, prefix + ".conv1", cin, cout, 3, seed);
  if (batchnorm) add_bn(store, prefix + ".bn1", {cout});
  add_conv1d(store, prefix + ".conv_t", cout, cout, seed);
  if (batchnorm) add_bn(store, prefix + ".bn2", {cout});
  add_conv2d(store, prefix + ".conv2", cout, cout, 3, seed);
  if (batchnorm) add_bn(store, prefix + ".bn3", {cout});
  add_shortcut(store, prefix, cin, cout, stride, batchnorm, seed);
}

void add_gltm_params(ParamStore& store, const std::string& prefix, std::size_t channels, std::size_t heads,
                     std::size_t head_dim, std::size_t mlp_dim, std::uint64_t seed) {
  const std::size_t dmid = mlp_dim == 0 ? channels : mlp_dim;
  for (std::size_t i = 0; i < heads; ++i) {
    const std::string name = prefix + ".head" + std::to_string(i) + ".Uqkv";
    store.add(name, gaussian({channels, 3 * head_dim}, 1.0 / std::sqrt(double(channels)), seed, name));
  }
  store.add(prefix + ".Umsa",
            gaussian({heads * head_dim, channels}, 1.0 / std::sqrt(double(heads * head_dim)), seed, prefix + ".Umsa"));
  add_conv1d(store, prefix + ".conv_t", channels, dmid, seed);
  store.add(prefix + ".mlp", gaussian({dmid, channels}, 1.0 / std::sqrt(double(dmid)), seed, prefix + ".mlp"));
}

void add_gl3d_params(ParamStore& store, const std::string& prefix, std::size_t cin, std::size_t cout,
                     std::size_t stride, std::size_t heads, std::size_t head_dim, std::size_t mlp_dim, bool batchnorm,
                     std::uint64_t seed) {
  add_conv2d(store, prefix + ".conv1", cin, cout, 3, seed);
  if (batchnorm) add_bn(store, prefix + ".bn1", {cout});
  add_gltm_params(store, prefix + ".gltm", cout, heads, head_dim, mlp_dim, seed);
  add_conv2d(store, prefix + ".conv2", cout, cout, 3, seed);
  if (batchnorm) add_bn(store, prefix + ".bn2", {cout});
  add_shortcut(store, prefix, cin, cout, stride, batchnorm, seed);
}

Var shortcut(Scope& scope, const std::string& prefix, const Var& x, std::size_t stride) {
  const auto& vars = scope.vars();
  if (!vars.count(prefix + ".proj")) {
    if (stride != 1) throw DimensionError(prefix + ": strided block without a projection shortcut");
    return x;
  }
  return scope.batchnorm(conv2d_spatial(x, scope[prefix + ".proj"], stride, 0), prefix + ".bn_proj");
}

Var p3d_block(Scope& scope, const std::string& prefix, const Var& x, std::size_t stride) {
  if (x.shape().size() < 4) throw DimensionError("P3D block input must be [C, ..., T, H, W], got " + to_string(x.shape()));
  const std::size_t time_axis = x.shape().size() - 3;
  const Var x1 = relu(scope.batchnorm(conv2d_spatial(x, scope[prefix + ".conv1"], stride, 1), prefix + ".bn1"));
  const Var x2 = scope.batchnorm(conv1d_temporal(x1, scope[prefix + ".conv_t"], time_axis), prefix + ".bn2");
  const Var x3 =
      scope.batchnorm(conv2d_spatial(relu(add(x1, x2)), scope[prefix + ".conv2"], 1, 1), prefix + ".bn3");
  return relu(add(shortcut(scope, prefix, x, stride), x3));
}

Var gltm(Scope& scope, const std::string& prefix, const Var& x, const AttentionConfig& cfg) {
  if (x.shape().size() != 3) throw DimensionError("GLTM input must be [L, T, C], got " + to_string(x.shape()));
  std::vector<Var> uqkv;
  for (std::size_t i = 0; i < cfg.heads; ++i) uqkv.push_back(scope[prefix + ".head" + std::to_string(i) + ".Uqkv"]);
  const Var xg = attention_forward(AttentionVariant::pgta, x, cfg, uqkv, scope[prefix + ".Umsa"]);
  // C1d over T with channels first: [L, T, C] -> [C, L, T]
  const Var s = permute(add(xg, x), {2, 0, 1});
  const Var xl = permute(relu(conv1d_temporal(s, scope[prefix + ".conv_t"], 2)), {1, 2, 0});
  return add(matmul(xl, scope[prefix + ".mlp"]), xg);
}

Var gl3d_block(Scope& scope, const std::string& prefix, const Var& x, std::size_t stride,
               const AttentionConfig& cfg) {
  if (x.shape().size() < 4) throw DimensionError("GL-3D block input must be [C, ..., T, H, W], got " + to_string(x.shape()));
  const Var y1 = relu(scope.batchnorm(conv2d_spatial(x, scope[prefix + ".conv1"], stride, 1), prefix + ".bn1"));
  const Shape s = y1.shape();
  const std::size_t r = s.size();
  const std::size_t C = s[0], T = s[r - 3], H = s[r - 2], W = s[r - 1];
  const std::size_t B = y1.value().numel() / (C * T * H * W);
  // [C, B, T, H, W] -> [B, H, W, T, C] -> [L, T, C]
  const Var seq = reshape(permute(reshape(y1, {C, B, T, H, W}), {1, 3, 4, 2, 0}), {B * H * W, T, C});
  const Var g = gltm(scope, prefix + ".gltm", seq, cfg);
  const Var back = reshape(permute(reshape(g, {B, H, W, T, C}), {4, 0, 3, 1, 2}), s);
  const Var x3 = scope.batchnorm(conv2d_spatial(back, scope[prefix + ".conv2"], 1, 1), prefix + ".bn2");
  return relu(add(shortcut(scope, prefix, x, stride), x3));
}

// ---------------------------------------------------------------------------
// Model

Model::Model(const BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const auto ch = cfg_.stage_channels();
  add_conv2d(store_, "stem.conv", 1, ch[0], 3, seed);
  if (cfg_.batchnorm) add_bn(store_, "stem.bn", {ch[0]});
  std::size_t cin = ch[0];
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t b = 0; b < cfg_.blocks[s]; ++b) {
      const std::string prefix = stage_prefix(s, b);
      const std::size_t stride = stage_stride(s, b);
      if (cfg_.global_stage[s])
        add_gl3d_params(store_, prefix, cin, ch[s], stride, cfg_.heads, cfg_.head_dim, cfg_.mlp_dim, cfg_.batchnorm,
                        seed);
      else
        add_p3d_params(store_, prefix, cin, ch[s], stride, cfg_.batchnorm, seed);
      cin = ch[s];
    }
  const std::size_t parts = cfg_.parts, d = cfg_.embed_dim;
  store_.add("head.fc", gaussian({parts, cin, d}, 1.0 / std::sqrt(double(cin)), seed, "head.fc"));
  if (cfg_.batchnorm) {
    store_.add("head.bnneck.gamma", Tensor::full({parts, d}, 1.0));
    store_.add("head.bnneck.beta", Tensor::zeros({parts, d}));
    store_.add_running("head.bnneck", {parts, d});
  }
  store_.add("head.classifier",
             gaussian({parts, cfg_.num_classes, d}, 1.0 / std::sqrt(double(d)), seed, "head.classifier"));
}

AttentionConfig Model::attention_config(std::size_t channels) const {
  AttentionConfig a;
  a.heads = cfg_.heads;
  a.head_dim = cfg_.head_dim;
  a.patch_temporal = cfg_.patch_temporal;
  a.patch_spatial = 1;
  a.channels = channels;
  return a;
}

Tensor Model::prepare_input(const Tensor& silhouettes) const {
  if (silhouettes.rank() != 4)
    throw DimensionError("silhouettes must be [B, T, H, W], got " + to_string(silhouettes.shape()));
  const std::size_t B = silhouettes.dim(0), T = silhouettes.dim(1), H = silhouettes.dim(2), W = silhouettes.dim(3);
  if (H != cfg_.height || W != cfg_.width)
    throw DimensionError("silhouettes must be " + std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width) +
                         ", got " + to_string(silhouettes.shape()));
  const std::size_t f = cfg_.input_pool;
  if (f == 1) return silhouettes.reshape({1, B, T, H, W});
  const std::size_t h = H / f, w = W / f;
  std::vector<double> out(B * T * h * w, 0.0);
  const double* src = silhouettes.ptr();
  const double inv = 1.0 / double(f * f);
  for (std::size_t m = 0; m < B * T; ++m)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < f; ++dy)
          for (std::size_t dx = 0; dx < f; ++dx) acc += src[(m * H + y * f + dy) * W + x * f + dx];
        out[(m * h + y) * w + x] = acc * inv;
      }
  return Tensor({1, B, T, h, w}, std::move(out), silhouettes.dtype());
}

Var Model::backbone(Scope& scope, const Var& input) const {
  const auto ch = cfg_.stage_channels();
  Var x = relu(scope.batchnorm(conv2d_spatial(input, scope["stem.conv"], 1, 1), "stem.bn"));
  scope.record("stem", x.shape());
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < cfg_.blocks[s]; ++b) {
      const std::string prefix = stage_prefix(s, b);
      const std::size_t stride = stage_stride(s, b);
      x = cfg_.global_stage[s] ? gl3d_block(scope, prefix, x, stride, attention_config(ch[s]))
                               : p3d_block(scope, prefix, x, stride);
    }
    scope.record("stage" + std::to_string(s + 1), x.shape());
  }
  return x;
}

ForwardOutput Model::head(Scope& scope, const Var& features) const {
  const Shape& s = features.shape();
  if (s.size() != 5) throw DimensionError("head input must be [C, B, T, H, W], got " + to_string(s));
  const std::size_t C = s[0], B = s[1], H = s[3], W = s[4], parts = cfg_.parts;
  if (H % parts != 0)
    throw DimensionError("feature height " + std::to_string(H) + " is not divisible by parts=" + std::to_string(parts));
  const Var tp = max_axis(features, 2);  // [C, B, H, W]
  const Var strips = reshape(tp, {C, B, parts, (H / parts) * W});
  const Var hp = permute(add(max_axis(strips, 3), mean_axis(strips, 3)), {2, 1, 0});  // [parts, B, C]
  const Var emb = matmul(hp, scope["head.fc"]);                                       // [parts, B, d]
  const Var bn = scope.batchnorm(emb, "head.bnneck");
  const Var logits = matmul(bn, scope["head.classifier"], false, true);  // [parts, B, classes]
  ForwardOutput out;
  out.features = features;
  out.embeddings = permute(emb, {1, 0, 2});
  out.bn_embeddings = permute(bn, {1, 0, 2});
  out.logits = permute(logits, {1, 0, 2});
  out.centers = permute(scope["head.classifier"], {1, 0, 2});
  return out;
}

ForwardOutput Model::forward(Scope& scope, const Tensor& silhouettes) const {
  return head(scope, backbone(scope, constant(prepare_input(silhouettes))));
}

void Model::update_running(const Scope& scope, double momentum) {
  for (const auto& [prefix, stats] : scope.batch_stats()) {
    const BatchStats& old = store_.running(prefix);
    std::vector<double> mean(old.mean.numel()), var(old.var.numel());
    for (std::size_t i = 0; i < mean.size(); ++i) {
      mean[i] = (1.0 - momentum) * old.mean[i] + momentum * stats.mean[i];
      var[i] = (1.0 - momentum) * old.var[i] + momentum * stats.var[i];
    }
    store_.set_running(prefix, BatchStats{Tensor(old.mean.shape(), std::move(mean)), Tensor(old.var.shape(), std::move(var))});
  }
}

std::size_t count_param_values(const Model& model, bool include_head) {
  std::size_t n = 0;
  for (const auto& name : model.params().names())
    if (include_head || name.rfind("head.", 0) != 0) n += model.params().get(name).numel();
  return n;
}

double count_params(const Model& model, bool include_head) {
  return static_cast<double>(count_param_values(model, include_head)) / 1e6;
}

std::vector<double> silhouette_scores(const Model& model, const Tensor& sequence) {
  if (sequence.rank() != 3) throw DimensionError("sequence must be [T, H, W], got " + to_string(sequence.shape()));
  const std::size_t T = sequence.dim(0);
  if (T == 1) return {1.0};
  Scope scope(model.params(), Mode::eval, model.config().batchnorm, false);
  const Tensor input = model.prepare_input(sequence.reshape({1, T, sequence.dim(1), sequence.dim(2)}));
  const Tensor f = model.backbone(scope, constant(input)).value();  // [C, 1, T, h, w]
  const std::size_t C = f.dim(0), plane = f.dim(3) * f.dim(4);
  const std::size_t cells = C * plane;
  std::vector<double> scores(T, 0.0);
  std::vector<std::size_t> ties;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      const double* col = f.ptr() + c * T * plane + p;
      double mx = col[0];
      for (std::size_t t = 1; t < T; ++t) mx = std::max(mx, col[t * plane]);
      ties.clear();
      for (std::size_t t = 0; t < T; ++t)
        if (col[t * plane] == mx) ties.push_back(t);
      const double share = 1.0 / (double(ties.size()) * double(cells));
      for (auto t : ties) scores[t] += share;
    }
  return scores;
}

TensorContainer to_container(const Model& model) {
  TensorContainer c;
  for (const auto& name : model.params().names()) c.tensors.emplace_back(name, model.params().get(name));
  for (const auto& [prefix, stats] : model.params().all_running()) {
    c.tensors.emplace_back(prefix + ".running_mean", stats.mean);
    c.tensors.emplace_back(prefix + ".running_var", stats.var);
  }
  c.manifest["config"] = model.config().to_json();
  return c;
}

Model from_container(const TensorContainer& container) {
  auto it = container.manifest.find("config");
  if (it == container.manifest.end()) throw FormatError("checkpoint has no config manifest entry");
  Model model(BackboneConfig::from_json(it->second), 0);
  std::size_t expected = model.params().names().size() + 2 * model.params().all_running().size();
  if (container.tensors.size() != expected)
    throw FormatError("checkpoint holds " + std::to_string(container.tensors.size()) + " tensors, config implies " +
                      std::to_string(expected));
  auto& store = model.params();
  for (const auto& name : std::vector<std::string>(store.names())) {
    const Tensor& t = container.get(name);
    if (t.shape() != store.get(name).shape())
      throw FormatError("checkpoint tensor '" + name + "' has shape " + to_string(t.shape()) + ", config implies " +
                        to_string(store.get(name).shape()));
    store.set(name, t);
  }
  for (const auto& entry : std::map<std::string, BatchStats>(store.all_running())) {
    const Tensor& mean = container.get(entry.first + ".running_mean");
    const Tensor& var = container.get(entry.first + ".running_var");
    if (mean.shape() != entry.second.mean.shape() || var.shape() != entry.second.var.shape())
      throw FormatError("checkpoint running statistics for '" + entry.first + "' have the wrong shape");
    store.set_running(entry.first, BatchStats{mean, var});
  }
  return model;
}

void save_checkpoint(const Model& model, const std::string& path) { save_container(path, to_container(model)); }

Model load_checkpoint(const std::string& path) { return from_container(load_container(path)); }

}  // namespace glgait
