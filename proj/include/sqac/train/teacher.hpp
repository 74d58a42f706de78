#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>

#include "sqac/model/quality_model.hpp"
#include "sqac/synth/corpus.hpp"
#include "sqac/train/data.hpp"

namespace sqac::train {

// Pseudo-label source. score() returns a MOS in [1, 5] in the teacher's
// universal domain and is a pure function of the clip. The per-dataset and
// universal transforms map ground-truth labels into that domain.
class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual double score(const synth::ManifestEntry& clip) = 0;
  // (a_d, b_d); the universal pair for datasets the teacher never saw.
  virtual std::pair<double, double> dataset_transform(const std::string& dataset_id) const = 0;
  virtual std::pair<double, double> universal_transform() const = 0;
  virtual std::string describe() const = 0;
};

// Scores from the clip's degradation sidecar: oracle_mos with identity
// dataset bias, plus Gaussian rater noise seeded by (seed, clip file name),
// clamped to [1, 5]. Throws IoError when the sidecar is missing.
class OracleTeacher : public Teacher {
 public:
  OracleTeacher(std::map<std::string, synth::OracleParams> dataset_bias, double noise_std = 0.1,
                std::uint64_t seed = 0);
  // Dataset biases from a corpus.json written by build_corpus.
  static OracleTeacher from_corpus(const std::filesystem::path& corpus_json, double noise_std = 0.1,
                                   std::uint64_t seed = 0);

  double score(const synth::ManifestEntry& clip) override;
  std::pair<double, double> dataset_transform(const std::string& dataset_id) const override;
  std::pair<double, double> universal_transform() const override { return {1.0, 0.0}; }
  std::string describe() const override;

 private:
  std::map<std::string, synth::OracleParams> bias_;
  double noise_std_;
  std::uint64_t seed_;
};

// Plain inference with a trained model rendered through its universal pair.
class ModelTeacher : public Teacher {
 public:
  ModelTeacher(model::QualityModel model, FeatureStore& features);
  static std::unique_ptr<ModelTeacher> load(const std::filesystem::path& checkpoint, FeatureStore& features);

  double score(const synth::ManifestEntry& clip) override;
  double score_features(const Tensor& features) const;
  std::pair<double, double> dataset_transform(const std::string& dataset_id) const override;
  std::pair<double, double> universal_transform() const override;
  std::string describe() const override;

 private:
  model::QualityModel model_;
  FeatureStore& features_;
};

}  // namespace sqac::train
