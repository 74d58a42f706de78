#include "sqac/train/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "sqac/error.hpp"
#include "sqac/model/checkpoint.hpp"

namespace sqac::train {
namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

OracleTeacher::OracleTeacher(std::map<std::string, synth::OracleParams> dataset_bias, double noise_std,
                             std::uint64_t seed)
    : bias_(std::move(dataset_bias)), noise_std_(noise_std), seed_(seed) {
  if (!(noise_std_ >= 0.0) || !std::isfinite(noise_std_)) throw ConfigError("teacher noise std must be >= 0");
  for (const auto& [id, p] : bias_)
    if (!(p.scale > 0.0)) throw ConfigError("oracle scale for dataset '" + id + "' must be positive");
}

OracleTeacher OracleTeacher::from_corpus(const std::filesystem::path& corpus_json, double noise_std,
                                         std::uint64_t seed) {
  std::map<std::string, synth::OracleParams> bias;
  for (auto& [id, p] : synth::read_corpus_oracles(corpus_json)) bias.emplace(id, p);
  return OracleTeacher(std::move(bias), noise_std, seed);
}

double OracleTeacher::score(const synth::ManifestEntry& clip) {
  const auto sidecar = synth::sidecar_path(clip.clip_path);
  if (!std::filesystem::exists(sidecar))
    throw IoError("oracle teacher: no degradation sidecar for " + clip.clip_path);
  const double clean = synth::oracle_mos(synth::read_sidecar(sidecar));
  if (noise_std_ == 0.0) return clean;
  // Keyed on the file name so relocating a corpus keeps its labels.
  const std::uint64_t key = fnv1a(std::filesystem::path(clip.clip_path).filename().string());
  std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                    static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
  std::mt19937_64 rng(seq);
  return std::clamp(clean + std::normal_distribution<double>(0.0, noise_std_)(rng), 1.0, 5.0);
}

std::pair<double, double> OracleTeacher::dataset_transform(const std::string& dataset_id) const {
  auto it = bias_.find(dataset_id);
  if (it == bias_.end()) return universal_transform();
  return {it->second.scale, it->second.shift};
}

std::string OracleTeacher::describe() const {
  std::ostringstream s;
  s << "oracle teacher (noise std " << noise_std_ << ", " << bias_.size() << " dataset transforms)";
  return s.str();
}

ModelTeacher::ModelTeacher(model::QualityModel model, FeatureStore& features)
    : model_(std::move(model)), features_(features) {}

std::unique_ptr<ModelTeacher> ModelTeacher::load(const std::filesystem::path& checkpoint, FeatureStore& features) {
  return std::make_unique<ModelTeacher>(model::load_checkpoint(checkpoint), features);
}

double ModelTeacher::score_features(const Tensor& features) const {
  const auto [a, b] = model_.bias().universal();
  return model::to_mos(model_.forward(features).item(), a, b);
}

double ModelTeacher::score(const synth::ManifestEntry& clip) { return score_features(features_.features(clip.clip_path)); }

std::pair<double, double> ModelTeacher::dataset_transform(const std::string& dataset_id) const {
  return model_.bias().params(dataset_id);
}

std::pair<double, double> ModelTeacher::universal_transform() const {
  const auto [a, b] = model_.bias().universal();
  return {a, b};
}

std::string ModelTeacher::describe() const { return "model teacher (" + model_.architecture().to_string() + ")"; }

}  // namespace sqac::train
