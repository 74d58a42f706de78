#include "sqac/model/quality_model.hpp"

#include <cmath>
#include <map>
#include <random>
#include <utility>

#include "sqac/audio/features.hpp"
#include "sqac/error.hpp"
#include "sqac/ops.hpp"

namespace sqac::model {
namespace {

constexpr float kLeakySlope = 0.1f;

void fill_normal(Tensor& t, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<float> g(0.0f, static_cast<float>(stddev));
  for (float& v : t.data()) v = g(rng);
}

void fill_xavier(Tensor& t, std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out) {
  const float limit = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
  std::uniform_real_distribution<float> u(-limit, limit);
  for (float& v : t.data()) v = u(rng);
}

std::string layer_prefix(std::size_t i) { return "head.layer" + std::to_string(i) + "."; }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return ops::add(ops::matmul(x, w), b); }

// Tables are read-only once built; clip lengths repeat, so most lookups hit.
const Tensor& cached_positions(std::size_t frames, std::size_t dim) {
  thread_local std::map<std::pair<std::size_t, std::size_t>, Tensor> cache;
  auto [it, fresh] = cache.try_emplace({frames, dim});
  if (fresh) it->second = sinusoidal_positions(frames, dim);
  return it->second;
}

}  // namespace

Tensor sinusoidal_positions(std::size_t frames, std::size_t dim) {
  Tensor pe({frames, dim});
  auto d = pe.data();
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(t) * rate;
      d[t * dim + i] = static_cast<float>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

Tensor& QualityModel::add_param(const std::string& name, Shape shape, bool prunable, bool decay) {
  Parameter prm{name, Tensor(std::move(shape)), {}, prunable, decay};
  prm.value.set_requires_grad();
  params_.push_back(std::move(prm));
  return params_.back().value;
}

void QualityModel::init_head(const HeadConfig& h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t d = h.dim, ff = h.ff_mult * h.dim;
  for (std::size_t l = 0; l < h.layers; ++l) {
    const std::string p = layer_prefix(l);
    for (float& v : add_param(p + "ln1.gamma", {d}, false, false).data()) v = 1.0f;
    add_param(p + "ln1.beta", {d}, false, false);
    for (const char* m : {"q", "k", "v", "o"}) {
      fill_xavier(add_param(p + "attn.w" + m, {d, d}, false, true), rng, d, d);
      add_param(p + "attn.b" + m, {d}, false, false);
    }
    for (float& v : add_param(p + "ln2.gamma", {d}, false, false).data()) v = 1.0f;
    add_param(p + "ln2.beta", {d}, false, false);
    fill_xavier(add_param(p + "ff.w1", {d, ff}, false, true), rng, d, ff);
    add_param(p + "ff.b1", {ff}, false, false);
    fill_xavier(add_param(p + "ff.w2", {ff, d}, false, true), rng, ff, d);
    add_param(p + "ff.b2", {d}, false, false);
  }
  // A zero query starts pooling as a plain mean over frames.
  add_param("head.pool.query", {1, d}, false, false);
  fill_xavier(add_param("head.out.weight", {d, 1}, false, true), rng, d, 1);
  add_param("head.out.bias", {1}, false, false);
}

QualityModel QualityModel::student(const StudentConfig& config, std::uint64_t seed) {
  config.validate();
  QualityModel m;
  m.arch_ = Architecture::of(config);
  std::mt19937_64 rng(seed);
  const auto plan = conv_plan(config);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& l = plan[i];
    const std::string p = "embed.conv" + std::to_string(i) + ".";
    const double fan_in = static_cast<double>(l.in_channels * 9);
    // He initialization for a leaky rectifier.
    fill_normal(m.add_param(p + "weight", {l.out_channels, l.in_channels, 3, 3}, true, true), rng,
                std::sqrt(2.0 / ((1.0 + kLeakySlope * kLeakySlope) * fan_in)));
    m.add_param(p + "bias", {l.out_channels}, false, false);
  }
  const std::size_t flat = plan.back().out_channels * frequency_extent(config);
  fill_xavier(m.add_param("embed.proj.weight", {flat, config.transformer_dim}, true, true), rng, flat,
              config.transformer_dim);
  m.add_param("embed.proj.bias", {config.transformer_dim}, false, false);
  m.init_head(config.head(), seed ^ 0x5eedULL);
  return m;
}

QualityModel QualityModel::head_only(const HeadConfig& config, std::uint64_t seed) {
  config.validate();
  QualityModel m;
  m.arch_ = Architecture::of(config);
  m.init_head(config, seed);
  return m;
}

QualityModel QualityModel::from_architecture(const Architecture& arch, std::uint64_t seed) {
  return arch.kind == Architecture::Kind::kStudent ? student(arch.student, seed) : head_only(arch.head, seed);
}

Parameter& QualityModel::parameter(const std::string& name) {
  for (auto& prm : params_)
    if (prm.name == name) return prm;
  throw Error("model has no parameter '" + name + "'");
}

const Parameter& QualityModel::parameter(const std::string& name) const {
  return const_cast<QualityModel*>(this)->parameter(name);
}

const Tensor& QualityModel::p(const std::string& name) const { return parameter(name).value; }

Tensor QualityModel::embed(const Tensor& x) const {
  const StudentConfig& c = arch_.student;
  if (x.rank() != 3 || x.dim(0) != 2 || x.dim(1) != audio::kBins)
    throw ShapeError("student_forward: expected features (2, 161, T), got " + shape_str(x.shape()));
  if (x.dim(2) < kMinFrames)
    throw ShapeError("student_forward: " + std::to_string(x.dim(2)) + " frames is too short; need at least " +
                     std::to_string(kMinFrames) + " frames (" + std::to_string(min_clip_samples()) +
                     " samples at 16 kHz)");
  const auto plan = conv_plan(c);
  Tensor h = x;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const std::string pre = "embed.conv" + std::to_string(i) + ".";
    h = ops::conv2d(h, p(pre + "weight"), p(pre + "bias"), {plan[i].stride_h, plan[i].stride_w, 1, 1});
    h = ops::leaky_relu(h, kLeakySlope);
  }
  const std::size_t channels = h.dim(0), freq = h.dim(1), frames = h.dim(2);
  Tensor seq = ops::transpose(ops::reshape(h, {channels * freq, frames}));
  return linear(seq, p("embed.proj.weight"), p("embed.proj.bias"));
}

Tensor QualityModel::run_head(const Tensor& frames) const {
  const HeadConfig& h = arch_.head;
  if (frames.rank() != 2 || frames.dim(0) == 0)
    throw ShapeError("head_forward: expected a non-empty (T, " + std::to_string(h.dim) + ") sequence, got " +
                     shape_str(frames.shape()));
  if (frames.dim(1) != h.dim)
    throw ShapeError("head_forward: input dim " + std::to_string(frames.dim(1)) + " does not match head dim " +
                     std::to_string(h.dim));
  Tensor x = frames;
  if (h.positional_encoding) x = ops::add(x, cached_positions(frames.dim(0), h.dim));
  for (std::size_t l = 0; l < h.layers; ++l) {
    const std::string pre = layer_prefix(l);
    Tensor n1 = ops::layer_norm(x, p(pre + "ln1.gamma"), p(pre + "ln1.beta"));
    Tensor q = linear(n1, p(pre + "attn.wq"), p(pre + "attn.bq"));
    Tensor k = linear(n1, p(pre + "attn.wk"), p(pre + "attn.bk"));
    Tensor v = linear(n1, p(pre + "attn.wv"), p(pre + "attn.bv"));
    Tensor a = ops::scaled_dot_product_attention(q, k, v, h.heads);
    x = ops::add(x, linear(a, p(pre + "attn.wo"), p(pre + "attn.bo")));
    Tensor n2 = ops::layer_norm(x, p(pre + "ln2.gamma"), p(pre + "ln2.beta"));
    Tensor f = ops::leaky_relu(linear(n2, p(pre + "ff.w1"), p(pre + "ff.b1")), kLeakySlope);
    x = ops::add(x, linear(f, p(pre + "ff.w2"), p(pre + "ff.b2")));
  }
  Tensor pooled = ops::scaled_dot_product_attention(p("head.pool.query"), x, x, 1);
  return ops::reshape(linear(pooled, p("head.out.weight"), p("head.out.bias")), {1});
}

Tensor QualityModel::forward(const Tensor& input) const {
  if (params_.empty()) throw Error("forward on an uninitialized model");
  if (arch_.kind == Architecture::Kind::kStudent) return run_head(embed(input));
  return run_head(input);
}

Tensor QualityModel::predict_mos(const Tensor& input, const std::optional<std::string>& dataset_id) {
  return bias_.render(forward(input), dataset_id);
}

std::vector<ParamSlot> QualityModel::optimizer_slots() {
  std::vector<ParamSlot> slots;
  for (auto& prm : params_) slots.push_back({prm.name, prm.value, prm.mask.empty() ? nullptr : &prm.mask, prm.decay});
  for (auto& [id, e] : bias_.entries()) {
    slots.push_back({"bias." + id + ".scale", e.scale, nullptr, false});
    slots.push_back({"bias." + id + ".shift", e.shift, nullptr, false});
  }
  return slots;
}

void QualityModel::zero_grad() {
  for (auto& prm : params_) prm.value.zero_grad();
  for (const auto& [id, e] : bias_.entries()) {
    Tensor s = e.scale, b = e.shift;
    s.zero_grad();
    b.zero_grad();
  }
}

void QualityModel::apply_masks() {
  for (auto& prm : params_) {
    if (prm.mask.empty()) continue;
    if (prm.mask.size() != prm.value.numel()) throw Error("mask size mismatch for " + prm.name);
    auto d = prm.value.data();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (!prm.mask[i]) d[i] = 0.0f;
  }
}

QualityModel QualityModel::clone() const {
  QualityModel m;
  m.arch_ = arch_;
  for (const auto& prm : params_) {
    Parameter c{prm.name, prm.value.clone(), prm.mask, prm.prunable, prm.decay};
    c.value.set_requires_grad();
    m.params_.push_back(std::move(c));
  }
  m.bias_ = bias_.clone();
  return m;
}

double sparse_cost(std::size_t dense, std::size_t surviving) {
  return std::min(static_cast<double>(dense), 1.5 * static_cast<double>(surviving));
}

double count_parameters(const QualityModel& model, bool sparse_accounting) {
  double total = 0.0;
  for (const auto& prm : model.parameters()) {
    const std::size_t dense = prm.value.numel();
    if (!sparse_accounting || prm.mask.empty()) {
      total += static_cast<double>(dense);
      continue;
    }
    std::size_t kept = 0;
    for (auto m : prm.mask) kept += m != 0;
    total += sparse_cost(dense, kept);
  }
  return total;
}

}  // namespace sqac::model
