#include "sqac/prune/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>
#include <tuple>

#include "sqac/adamw.hpp"
#include "sqac/error.hpp"
#include "sqac/log.hpp"
#include "sqac/model/checkpoint.hpp"

namespace sqac::prune {
namespace {

// ceil(rate * n) without letting 0.005 * 10000 round up to 51.
std::size_t prune_count(double rate, std::size_t n) {
  const double exact = rate * static_cast<double>(n);
  auto k = static_cast<std::size_t>(std::ceil(exact - 1e-9 * std::max(1.0, exact)));
  return std::clamp<std::size_t>(k, 1, n);
}

std::size_t kept(const std::vector<std::uint8_t>& mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

}  // namespace

std::vector<std::string> prunable_names(const model::QualityModel& m) {
  std::vector<std::string> names;
  for (const auto& p : m.parameters())
    if (p.prunable) names.push_back(p.name);
  std::sort(names.begin(), names.end());
  return names;
}

void ensure_masks(model::QualityModel& m) {
  for (auto& p : m.parameters())
    if (p.prunable && p.mask.empty()) p.mask.assign(p.value.numel(), 1);
}

std::size_t unmasked_prunable(const model::QualityModel& m) {
  std::size_t n = 0;
  for (const auto& p : m.parameters())
    if (p.prunable) n += p.mask.empty() ? p.value.numel() : kept(p.mask);
  return n;
}

std::size_t total_prunable(const model::QualityModel& m) {
  std::size_t n = 0;
  for (const auto& p : m.parameters())
    if (p.prunable) n += p.value.numel();
  return n;
}

ImportanceMap importance_from_gradients(const model::QualityModel& m) {
  ImportanceMap out;
  for (const auto& p : m.parameters()) {
    if (!p.prunable) continue;
    std::vector<double> score(p.value.numel(), 0.0);
    if (p.value.has_grad()) {
      const auto w = p.value.data();
      const auto g = p.value.grad();
      for (std::size_t i = 0; i < score.size(); ++i) {
        if (!std::isfinite(g[i])) throw NumericalError("taylor_importance: non-finite gradient in '" + p.name + "'");
        if (!p.mask.empty() && p.mask[i] == 0) continue;
        score[i] = taylor_score(g[i], w[i]);
      }
    }
    out.emplace(p.name, std::move(score));
  }
  return out;
}

ImportanceMap taylor_importance(model::QualityModel& m, const std::vector<train::Example>& batch) {
  Tape tape;
  {
    TapeScope scope(tape);
    const Tensor loss = train::batch_loss(m, batch);
    m.zero_grad();
    try {
      tape.backward(loss);
    } catch (const NumericalError&) {
      // Name the offending tensor when it is a prunable one.
      importance_from_gradients(m);
      throw;
    }
  }
  return importance_from_gradients(m);
}

double exact_importance(model::QualityModel& m, const std::vector<train::Example>& batch, const std::string& name,
                        std::size_t index) {
  auto& p = m.parameter(name);
  if (index >= p.value.numel()) throw Error("exact_importance: index out of range for '" + name + "'");
  float& w = p.value.data()[index];
  if (w == 0.0f) return 0.0;
  const double full = train::batch_loss(m, batch).item();
  const float saved = w;
  w = 0.0f;
  double zeroed = 0.0;
  try {
    zeroed = train::batch_loss(m, batch).item();
  } catch (...) {
    w = saved;
    throw;
  }
  w = saved;
  return (full - zeroed) * (full - zeroed);
}

void PruneOptions::validate() const {
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ConfigError("prune smoothing must lie in [0, 1)");
  if (!(rate > 0.0 && rate < 1.0)) throw ConfigError("prune rate must lie in (0, 1)");
  if (!(learning_rate > 0.0)) throw ConfigError("prune learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("prune batch_size must be positive");
  if (sampling_cap == 0) throw ConfigError("prune sampling_cap must be positive");
}

void PruneState::update_scores(const ImportanceMap& raw) {
  if (updates_ == 0) {
    scores_ = raw;
    ++updates_;
    return;
  }
  if (raw.size() != scores_.size()) throw ShapeError("update_scores: importance map covers different tensors");
  const double a = options_.smoothing, b = 1.0 - options_.smoothing;
  for (const auto& [name, values] : raw) {
    auto it = scores_.find(name);
    if (it == scores_.end() || it->second.size() != values.size())
      throw ShapeError("update_scores: shape mismatch for '" + name + "'");
    auto& s = it->second;
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = a * s[i] + b * values[i];
  }
  ++updates_;
}

std::size_t prune_step(model::QualityModel& m, const PruneState& state) {
  ensure_masks(m);
  const auto names = prunable_names(m);
  // (score, tensor rank in name order, flat index) gives a strict total order.
  std::vector<std::tuple<double, std::size_t, std::size_t>> live;
  for (std::size_t t = 0; t < names.size(); ++t) {
    const auto& p = m.parameter(names[t]);
    auto it = state.scores().find(names[t]);
    if (it == state.scores().end() || it->second.size() != p.value.numel())
      throw Error("prune_step: no importance scores for '" + names[t] + "'");
    for (std::size_t i = 0; i < p.mask.size(); ++i)
      if (p.mask[i]) live.emplace_back(it->second[i], t, i);
  }
  if (live.empty()) throw ScheduleExhausted("prune_step: every prunable weight is already masked");
  const std::size_t k = prune_count(state.options().rate, live.size());
  std::nth_element(live.begin(), live.begin() + static_cast<long>(k - 1), live.end());
  for (std::size_t j = 0; j < k; ++j) {
    const auto& [score, t, i] = live[j];
    auto& p = m.parameter(names[t]);
    p.mask[i] = 0;
    p.value.data()[i] = 0.0f;
  }
  return k;
}

std::size_t magnitude_prune_step(model::QualityModel& m, PruneState& state) {
  const double rate = state.options().rate;
  if (!(rate > 0.0 && rate < 1.0)) throw ConfigError("prune rate must lie in (0, 1)");
  ensure_masks(m);
  std::size_t masked = 0;
  bool any_live = false;
  for (const auto& name : prunable_names(m)) {
    auto& p = m.parameter(name);
    const auto w = p.value.data();
    // Conv kernels (out, in, kh, kw) are pruned as whole kh x kw slices.
    const std::size_t unit = p.value.rank() == 4 ? p.value.dim(2) * p.value.dim(3) : 1;
    const std::size_t units = p.value.numel() / unit;
    std::vector<std::pair<double, std::size_t>> live;
    for (std::size_t u = 0; u < units; ++u) {
      double l1 = 0.0;
      bool alive = false;
      for (std::size_t e = u * unit; e < (u + 1) * unit; ++e) {
        l1 += std::abs(static_cast<double>(w[e]));
        alive = alive || p.mask[e] != 0;
      }
      if (alive) live.emplace_back(l1, u);
    }
    if (live.empty()) continue;
    any_live = true;
    double& carry = state.magnitude_carry()[name];
    const double due = carry + rate * static_cast<double>(live.size());
    // The guard keeps 0.25 * 4 from flooring to 0.
    const auto whole = static_cast<std::size_t>(std::floor(due + 1e-9 * std::max(1.0, due)));
    const std::size_t k = std::min(whole, live.size());
    carry = std::max(0.0, due - static_cast<double>(k));
    if (k == 0) continue;
    std::nth_element(live.begin(), live.begin() + static_cast<long>(k - 1), live.end());
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t e = live[j].second * unit; e < (live[j].second + 1) * unit; ++e) {
        masked += p.mask[e];
        p.mask[e] = 0;
        w[e] = 0.0f;
      }
  }
  if (!any_live) throw ScheduleExhausted("magnitude_prune_step: every prunable weight is already masked");
  return masked;
}

const char* criterion_name(Criterion c) { return c == Criterion::kTaylor ? "taylor" : "magnitude"; }

double remaining_fraction(const model::QualityModel& m, FractionBasis basis, double initial_effective) {
  if (basis == FractionBasis::kUnmaskedWeights)
    return static_cast<double>(unmasked_prunable(m)) / static_cast<double>(total_prunable(m));
  return model::count_parameters(m, true) / initial_effective;
}

std::vector<TrajectoryPoint> run_prune_schedule(model::QualityModel m, const PruneData& data,
                                                const ScheduleConfig& config) {
  const PruneOptions& opt = config.options;
  opt.validate();
  if (config.targets.empty()) throw ConfigError("prune schedule has no targets");
  for (double t : config.targets)
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("prune targets must lie in (0, 1)");
  if (data.train == nullptr || data.val == nullptr || data.features == nullptr)
    throw Error("run_prune_schedule: training data, validation data and feature store are required");
  if (total_prunable(m) == 0) throw ConfigError("model has no prunable tensors");

  std::vector<synth::ManifestEntry> labeled;
  for (const auto& e : *data.train)
    if (e.mos) labeled.push_back(e);
  const train::DatasetSampler sampler(labeled, opt.sampling_cap);
  if (data.teacher == nullptr)
    for (const auto& id : sampler.dataset_ids()) m.bias().ensure(id);

  std::vector<double> targets = config.targets;
  std::sort(targets.begin(), targets.end(), std::greater<>());
  const double initial = model::count_parameters(m, true);
  ensure_masks(m);

  PruneState state(opt);
  AdamW adam({static_cast<float>(opt.learning_rate), 0.9f, 0.999f, 1e-8f, static_cast<float>(opt.weight_decay)});
  std::mt19937_64 rng(opt.seed);
  auto& features = *data.features;
  if (!config.out_dir.empty()) std::filesystem::create_directories(config.out_dir);

  std::vector<TrajectoryPoint> out;
  std::size_t steps = 0;
  std::size_t next = 0;
  while (next < targets.size()) {
    const double frac = remaining_fraction(m, config.basis, initial);
    if (frac <= targets[next]) {
      TrajectoryPoint pt;
      pt.effective_params = model::count_parameters(m, true);
      pt.remaining_fraction = frac;
      pt.target = targets[next];
      pt.prune_steps = steps;
      pt.val_mse = train::validation_mse(m, *data.val, features, opt.weighted_validation, data.teacher);
      pt.model = m.clone();
      if (!config.out_dir.empty()) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%03d", static_cast<int>(std::lround(targets[next] * 100.0)));
        pt.checkpoint_path = config.out_dir / (config.tag + "_" + criterion_name(config.criterion) + "_" + buf + ".sqac");
        model::save_checkpoint(m, pt.checkpoint_path);
      }
      log::info(std::string(criterion_name(config.criterion)) + " pruning reached " + std::to_string(frac) +
                " after " + std::to_string(steps) + " steps (target " + std::to_string(targets[next]) +
                "), val mse " + std::to_string(pt.val_mse));
      out.push_back(std::move(pt));
      ++next;
      continue;
    }

    for (std::size_t s = 0; s < opt.fine_tune_steps; ++s) {
      std::vector<train::Example> batch;
      for (const auto& e : train::sample_batch(sampler, opt.batch_size, rng)) {
        if (data.teacher != nullptr)
          batch.push_back({&features.features(e.clip_path), train::teacher_domain_target(*data.teacher, *e.mos, e.dataset_id),
                           std::nullopt, e.clip_path});
        else
          batch.push_back({&features.features(e.clip_path), *e.mos, e.dataset_id, e.clip_path});
      }
      Tape tape;
      {
        TapeScope scope(tape);
        const Tensor loss = train::batch_loss(m, batch);
        m.zero_grad();
        tape.backward(loss);
      }
      if (config.criterion == Criterion::kTaylor) state.update_scores(importance_from_gradients(m));
      adam.step(m.optimizer_slots());
      m.bias().clamp_scales();
    }
    if (config.criterion == Criterion::kTaylor) {
      if (!state.has_scores()) state.update_scores(importance_from_gradients(m));
      prune_step(m, state);
    } else {
      magnitude_prune_step(m, state);
    }
    ++steps;
  }
  return out;
}

void write_trajectory(const std::filesystem::path& path, const std::vector<TrajectoryPoint>& points) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trajectory " + path.string());
  out.precision(9);
  out << "checkpoint_path,effective_params,remaining_fraction,val_mse\n";
  for (const auto& p : points)
    out << p.checkpoint_path.string() << ',' << p.effective_params << ',' << p.remaining_fraction << ',' << p.val_mse
        << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace sqac::prune
