#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sqac/model/quality_model.hpp"
#include "sqac/synth/corpus.hpp"
#include "sqac/train/data.hpp"
#include "sqac/train/teacher.hpp"

namespace sqac::train {

enum class Mode { kLabeledOnly, kDistill };

struct TrainConfig {
  Mode mode = Mode::kLabeledOnly;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  std::size_t batch_size = 20;
  std::size_t total_steps = 72000;
  std::size_t validate_every = 5000;
  double mix_in_p = 0.2;  // distill only
  std::size_t sampling_cap = kDefaultSamplingCap;
  std::uint64_t seed = 0;
  // Clip-count weighting of validation MSE; false averages per-dataset MSEs.
  bool weighted_validation = true;

  // Mode defaults: lr 1e-4 and 72 000 steps for labeled training, lr 2e-5
  // and 250 000 steps for distillation.
  static TrainConfig defaults(Mode mode);
  void validate() const;  // throws ConfigError
};

struct HistoryRow {
  std::size_t step = 0;
  double train_mse = 0.0;  // mean batch loss since the previous row
  double val_mse = 0.0;
};

struct TrainResult {
  model::QualityModel best;  // lowest validation MSE seen
  std::size_t best_step = 0;
  double best_val_mse = 0.0;
  std::vector<HistoryRow> history;
  std::size_t teacher_calls = 0;
  std::size_t teacher_skips = 0;
  std::size_t labeled_items = 0;  // mix-in items used (distill)
  std::size_t total_items = 0;
};

// One supervised item: features, target MOS and the transform used to
// render the prediction (empty selects the universal pair).
struct Example {
  const Tensor* features = nullptr;
  double target = 0.0;
  std::optional<std::string> render_id;
  std::string clip;
};

// Mean squared error between rendered MOS and targets, recorded on the active
// tape when there is one.
Tensor batch_loss(model::QualityModel& model, const std::vector<Example>& batch);

// Ground-truth MOS re-expressed in the teacher's universal domain:
// 1 + 4 sigmoid(inverse_to_logit(mos, teacher transforms)).
double teacher_domain_target(const Teacher& teacher, double mos, const std::string& dataset_id);

// Per-item mix-in choice: true takes a labeled clip.
std::vector<bool> draw_mix_in(std::size_t batch_size, double p, std::mt19937_64& rng);

// Supervised training on labeled clips. Predictions are rendered through the
// clip's per-dataset transform (created on demand); after training the
// universal pair of the best model is grid-fitted on the validation set.
// Non-finite loss throws NumericalError naming the step and batch clips.
TrainResult train_labeled(model::QualityModel model, const std::vector<synth::ManifestEntry>& train,
                          const std::vector<synth::ManifestEntry>& val, const TrainConfig& config,
                          FeatureStore& features);

// Distillation in the teacher's universal domain: each batch item is, with
// probability mix_in_p, a labeled clip whose label goes through
// inverse_to_logit with the teacher's transforms, otherwise an unlabeled clip
// scored by the teacher. Predictions use the student's universal pair.
// Teacher failures skip the item with a warning; once at least 100 calls
// were made, a skip rate above 1% aborts with MissingPrerequisite.
TrainResult distill(model::QualityModel student, Teacher& teacher,
                    const std::vector<synth::ManifestEntry>& unlabeled,
                    const std::vector<synth::ManifestEntry>& labeled,
                    const std::vector<synth::ManifestEntry>& val, const TrainConfig& config,
                    FeatureStore& features);

// Validation MSE of rendered MOS against labels. With a teacher the labels
// are first mapped into its universal domain and predictions use the
// universal pair; without one, each clip renders through its dataset pair.
double validation_mse(const model::QualityModel& model, const std::vector<synth::ManifestEntry>& val,
                      FeatureStore& features, bool weighted, const Teacher* teacher = nullptr);

// CSV with header step,train_mse,val_mse_weighted.
void write_history(const std::filesystem::path& path, const std::vector<HistoryRow>& history);

}  // namespace sqac::train
