#include "sqac/train/trainer.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "sqac/adamw.hpp"
#include "sqac/error.hpp"
#include "sqac/log.hpp"
#include "sqac/ops.hpp"

namespace sqac::train {
namespace {

// One optimizer update on the mean squared MOS error of `items`.
double train_step(model::QualityModel& m, AdamW& opt, const std::vector<Example>& items, std::size_t step) {
  Tape tape;
  Tensor loss;
  try {
    TapeScope scope(tape);
    loss = batch_loss(m, items);
    m.zero_grad();
    tape.backward(loss);
    opt.step(m.optimizer_slots());
  } catch (const NumericalError& e) {
    std::ostringstream msg;
    msg << "non-finite training loss at step " << step << " (" << e.what() << "); batch:";
    for (const Example& it : items) msg << ' ' << it.clip;
    throw NumericalError(msg.str());
  }
  m.bias().clamp_scales();
  return loss.item();
}

struct Loop {
  const TrainConfig& config;
  const std::vector<synth::ManifestEntry>& val;
  FeatureStore& features;
  const Teacher* teacher;
  TrainResult result;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;

  void validate(const model::QualityModel& m, std::size_t step) {
    const double v = validation_mse(m, val, features, config.weighted_validation, teacher);
    const double train = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
    result.history.push_back({step, train, v});
    loss_sum = 0.0;
    loss_count = 0;
    if (result.history.size() == 1 || v < result.best_val_mse) {
      result.best = m.clone();
      result.best_val_mse = v;
      result.best_step = step;
    }
    log::info("step " + std::to_string(step) + ": train mse " + std::to_string(train) + ", val mse " +
              std::to_string(v) + (result.best_step == step ? " (best)" : ""));
  }

  bool due(std::size_t step) const {
    return step % config.validate_every == 0 || step == config.total_steps;
  }
};

}  // namespace

Tensor batch_loss(model::QualityModel& m, const std::vector<Example>& batch) {
  if (batch.empty()) throw Error("batch_loss: empty batch");
  Tensor total;
  for (const Example& it : batch) {
    const Tensor pred = m.predict_mos(*it.features, it.render_id);
    const Tensor diff = ops::affine(pred, 1.0f, static_cast<float>(-it.target));
    const Tensor sq = ops::mul(diff, diff);
    total = total.defined() ? ops::add(total, sq) : sq;
  }
  return ops::affine(total, 1.0f / static_cast<float>(batch.size()), 0.0f);
}

double teacher_domain_target(const Teacher& teacher, double mos, const std::string& dataset_id) {
  const auto [ad, bd] = teacher.dataset_transform(dataset_id);
  const auto [au, bu] = teacher.universal_transform();
  return model::to_mos(model::inverse_to_logit(mos, ad, bd, au, bu), 1.0, 0.0);
}

TrainConfig TrainConfig::defaults(Mode mode) {
  TrainConfig c;
  c.mode = mode;
  if (mode == Mode::kDistill) {
    c.learning_rate = 2e-5;
    c.total_steps = 250000;
  }
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (validate_every == 0) throw ConfigError("validate_every must be positive");
  if (!(mix_in_p >= 0.0 && mix_in_p <= 1.0)) throw ConfigError("mix_in_p must lie in [0, 1]");
  if (sampling_cap == 0) throw ConfigError("sampling_cap must be positive");
}

std::vector<bool> draw_mix_in(std::size_t batch_size, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution pick(p);
  std::vector<bool> out(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) out[i] = pick(rng);
  return out;
}

double validation_mse(const model::QualityModel& m, const std::vector<synth::ManifestEntry>& val,
                      FeatureStore& features, bool weighted, const Teacher* teacher) {
  std::map<std::string, std::pair<double, std::size_t>> per_dataset;
  for (const auto& e : val) {
    if (!e.mos) continue;
    const double logit = m.forward(features.features(e.clip_path)).item();
    double pred, target;
    if (teacher != nullptr) {
      const auto [a, b] = m.bias().universal();
      pred = model::to_mos(logit, a, b);
      target = teacher_domain_target(*teacher, *e.mos, e.dataset_id);
    } else {
      const auto [a, b] = m.bias().params(e.dataset_id);
      pred = model::to_mos(logit, a, b);
      target = *e.mos;
    }
    auto& acc = per_dataset[e.dataset_id];
    acc.first += (pred - target) * (pred - target);
    acc.second += 1;
  }
  if (per_dataset.empty()) throw Error("validation set has no labeled clips");
  double sum = 0.0, count = 0.0;
  for (const auto& [id, acc] : per_dataset) {
    if (weighted) {
      sum += acc.first;
      count += static_cast<double>(acc.second);
    } else {
      sum += acc.first / static_cast<double>(acc.second);
      count += 1.0;
    }
  }
  return sum / count;
}

TrainResult train_labeled(model::QualityModel m, const std::vector<synth::ManifestEntry>& train,
                          const std::vector<synth::ManifestEntry>& val, const TrainConfig& config,
                          FeatureStore& features) {
  config.validate();
  std::vector<synth::ManifestEntry> labeled;
  for (const auto& e : train)
    if (e.mos) labeled.push_back(e);
  if (config.total_steps == 0) return {m.clone(), 0, 0.0, {}, 0, 0, 0, 0};
  const DatasetSampler sampler(labeled, config.sampling_cap);
  for (const auto& id : sampler.dataset_ids()) m.bias().ensure(id);

  AdamW opt({static_cast<float>(config.learning_rate), 0.9f, 0.999f, 1e-8f,
             static_cast<float>(config.weight_decay)});
  std::mt19937_64 rng(config.seed);
  Loop loop{config, val, features, nullptr, {}};
  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    std::vector<Example> items;
    for (const auto& e : sample_batch(sampler, config.batch_size, rng))
      items.push_back({&features.features(e.clip_path), *e.mos, e.dataset_id, e.clip_path});
    loop.loss_sum += train_step(m, opt, items, step);
    ++loop.loss_count;
    loop.result.total_items += items.size();
    loop.result.labeled_items += items.size();
    if (loop.due(step)) loop.validate(m, step);
  }

  // Universal pair for unseen datasets, fitted on validation logits.
  TrainResult& r = loop.result;
  std::vector<double> logits, labels;
  for (const auto& e : val) {
    if (!e.mos) continue;
    logits.push_back(r.best.forward(features.features(e.clip_path)).item());
    labels.push_back(*e.mos);
  }
  const auto [a, b] = model::fit_universal_bias(logits, labels);
  r.best.bias().set_universal(static_cast<float>(a), static_cast<float>(b));
  return std::move(r);
}

TrainResult distill(model::QualityModel student, Teacher& teacher,
                    const std::vector<synth::ManifestEntry>& unlabeled,
                    const std::vector<synth::ManifestEntry>& labeled,
                    const std::vector<synth::ManifestEntry>& val, const TrainConfig& config,
                    FeatureStore& features) {
  config.validate();
  if (config.total_steps == 0) return {student.clone(), 0, 0.0, {}, 0, 0, 0, 0};
  std::vector<synth::ManifestEntry> with_labels;
  for (const auto& e : labeled)
    if (e.mos) with_labels.push_back(e);
  if (config.mix_in_p > 0.0 && with_labels.empty())
    throw ConfigError("distill: mix_in_p > 0 needs labeled training clips");
  if (config.mix_in_p < 1.0 && unlabeled.empty()) throw ConfigError("distill: no unlabeled clips for the teacher");
  std::optional<DatasetSampler> pool, mix;
  if (!unlabeled.empty()) pool.emplace(unlabeled, config.sampling_cap);
  if (!with_labels.empty()) mix.emplace(with_labels, config.sampling_cap);

  AdamW opt({static_cast<float>(config.learning_rate), 0.9f, 0.999f, 1e-8f,
             static_cast<float>(config.weight_decay)});
  std::mt19937_64 rng(config.seed);
  std::map<std::string, double> pseudo;  // teacher scores are pure, so cache them
  Loop loop{config, val, features, &teacher, {}};
  TrainResult& r = loop.result;
  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    std::vector<Example> items;
    for (bool take_labeled : draw_mix_in(config.batch_size, config.mix_in_p, rng)) {
      ++r.total_items;
      if (take_labeled) {
        const auto& e = mix->draw(rng);
        items.push_back({&features.features(e.clip_path), teacher_domain_target(teacher, *e.mos, e.dataset_id),
                         std::nullopt, e.clip_path});
        ++r.labeled_items;
        continue;
      }
      const auto& e = pool->draw(rng);
      auto cached = pseudo.find(e.clip_path);
      if (cached == pseudo.end()) {
        ++r.teacher_calls;
        try {
          cached = pseudo.emplace(e.clip_path, teacher.score(e)).first;
        } catch (const Error& err) {
          ++r.teacher_skips;
          log::warn(std::string("teacher failed, skipping clip: ") + err.what());
          if (r.teacher_calls >= 100 && r.teacher_skips * 100 > r.teacher_calls)
            throw MissingPrerequisite("distill: teacher failed on " + std::to_string(r.teacher_skips) + " of " +
                                      std::to_string(r.teacher_calls) + " clips (more than 1%)");
          continue;
        }
      }
      items.push_back({&features.features(e.clip_path), cached->second, std::nullopt, e.clip_path});
    }
    if (!items.empty()) {
      loop.loss_sum += train_step(student, opt, items, step);
      ++loop.loss_count;
    }
    if (loop.due(step)) loop.validate(student, step);
  }
  return std::move(r);
}

void write_history(const std::filesystem::path& path, const std::vector<HistoryRow>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write history " + path.string());
  out.precision(9);
  out << "step,train_mse,val_mse_weighted\n";
  for (const auto& h : history) out << h.step << ',' << h.train_mse << ',' << h.val_mse << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace sqac::train
