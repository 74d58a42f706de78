#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sqac/model/quality_model.hpp"
#include "sqac/synth/corpus.hpp"
#include "sqac/train/data.hpp"
#include "sqac/train/teacher.hpp"
#include "sqac/train/trainer.hpp"

namespace sqac::prune {

// Per-weight scores for every prunable tensor, keyed by parameter name.
using ImportanceMap = std::map<std::string, std::vector<double>>;

// Names of the prunable tensors (embedder matrices and conv kernels).
std::vector<std::string> prunable_names(const model::QualityModel& model);

// Gives every prunable tensor an all-ones mask if it has none yet.
void ensure_masks(model::QualityModel& model);

// First-order estimate of (L - L_{w=0})^2: (dL/dw * w)^2.
inline double taylor_score(double grad, double weight) {
  const double t = grad * weight;
  return t * t;
}

// Raw importances from the gradients currently stored on the model:
// I_w = (dL/dw * w)^2, zero for masked weights. Throws NumericalError naming
// the tensor if a gradient is not finite.
ImportanceMap importance_from_gradients(const model::QualityModel& model);

// One backward pass of batch_loss, then importance_from_gradients.
ImportanceMap taylor_importance(model::QualityModel& model, const std::vector<train::Example>& batch);

// (L - L_{w=0})^2 for one weight, evaluated by zeroing and restoring it.
double exact_importance(model::QualityModel& model, const std::vector<train::Example>& batch,
                        const std::string& name, std::size_t index);

struct PruneOptions {
  double smoothing = 0.9;
  double rate = 0.005;
  std::size_t fine_tune_steps = 30;
  double learning_rate = 2e-5;
  double weight_decay = 0.01;
  std::size_t batch_size = 20;
  std::size_t sampling_cap = train::kDefaultSamplingCap;
  std::uint64_t seed = 0;
  bool weighted_validation = true;

  void validate() const;  // throws ConfigError
};

class PruneState {
 public:
  explicit PruneState(PruneOptions options = {}) : options_(options) {}

  // Exponential smoothing; the first update copies `raw`. Throws ShapeError
  // if `raw` does not match earlier updates.
  void update_scores(const ImportanceMap& raw);

  const ImportanceMap& scores() const { return scores_; }
  bool has_scores() const { return !scores_.empty(); }
  const PruneOptions& options() const { return options_; }
  std::size_t updates() const { return updates_; }

  // Fractional magnitude-pruning units owed per tensor, carried between steps.
  std::map<std::string, double>& magnitude_carry() { return magnitude_carry_; }

 private:
  PruneOptions options_;
  ImportanceMap scores_;
  std::size_t updates_ = 0;
  std::map<std::string, double> magnitude_carry_;
};

// Masks the ceil(rate * unmasked) lowest-scored unmasked prunable weights,
// ranked globally by smoothed score; ties go to the lexicographically first
// (name, flat index). Returns the number of newly masked weights. Throws
// ScheduleExhausted when nothing is left and Error when scores are missing.
std::size_t prune_step(model::QualityModel& model, const PruneState& state);

// Per tensor, masks the smallest units: single entries ranked by |w| for
// matrices, whole (out, in) 3x3 kernels ranked by L1 norm for conv weights.
// Ties go to the lower index. A tensor owes rate * unmasked units per step;
// whole units are pruned and the fraction carries over in `state`, so small
// tensors shrink at the same rate as large ones instead of one unit per step.
// Throws ScheduleExhausted when nothing is left.
std::size_t magnitude_prune_step(model::QualityModel& model, PruneState& state);

std::size_t unmasked_prunable(const model::QualityModel& model);
std::size_t total_prunable(const model::QualityModel& model);

enum class Criterion { kTaylor, kMagnitude };
const char* criterion_name(Criterion c);

// What a schedule target refers to: the sparse effective size of the whole
// model relative to its starting size, or the share of prunable weights
// still unmasked.
enum class FractionBasis { kEffectiveSize, kUnmaskedWeights };

struct ScheduleConfig {
  Criterion criterion = Criterion::kTaylor;
  std::vector<double> targets = {0.75, 0.5, 0.29};
  FractionBasis basis = FractionBasis::kEffectiveSize;
  PruneOptions options;
  std::filesystem::path out_dir;  // checkpoints are written here when non-empty
  std::string tag = "pruned";     // checkpoint file prefix
};

struct TrajectoryPoint {
  std::filesystem::path checkpoint_path;
  double effective_params = 0.0;
  double remaining_fraction = 0.0;
  double val_mse = 0.0;
  double target = 0.0;
  std::size_t prune_steps = 0;
  model::QualityModel model;
};

struct PruneData {
  const std::vector<synth::ManifestEntry>* train = nullptr;  // labeled clips
  const std::vector<synth::ManifestEntry>* val = nullptr;
  train::FeatureStore* features = nullptr;
  // When set, labels are mapped into the teacher's universal domain and the
  // model renders through its universal pair, matching distillation.
  const train::Teacher* teacher = nullptr;
};

// Repeats {fine-tune (scores accumulate per step in Taylor mode); prune} until
// the smallest target is reached. A checkpoint is emitted the first time the
// remaining fraction falls to or below each target.
std::vector<TrajectoryPoint> run_prune_schedule(model::QualityModel model, const PruneData& data,
                                                const ScheduleConfig& config);

double remaining_fraction(const model::QualityModel& model, FractionBasis basis, double initial_effective);

// CSV with header checkpoint_path,effective_params,remaining_fraction,val_mse.
void write_trajectory(const std::filesystem::path& path, const std::vector<TrajectoryPoint>& points);

}  // namespace sqac::prune
