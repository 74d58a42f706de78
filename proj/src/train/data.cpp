#include "sqac/train/data.hpp"

#include <algorithm>

#include "sqac/audio/features.hpp"
#include "sqac/audio/wav.hpp"
#include "sqac/error.hpp"

namespace sqac::train {

DatasetSampler::DatasetSampler(std::vector<synth::ManifestEntry> entries, std::size_t cap)
    : entries_(std::move(entries)) {
  if (entries_.empty()) throw Error("sample_batch: no training clips (all datasets empty)");
  if (cap == 0) throw ConfigError("sampling cap must be positive");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < entries_.size(); ++i) groups[entries_[i].dataset_id].push_back(i);
  for (auto& [id, members] : groups) {
    ids_.push_back(id);
    weights_.push_back(static_cast<double>(std::min(members.size(), cap)));
    members_.push_back(std::move(members));
  }
}

const synth::ManifestEntry& DatasetSampler::draw(std::mt19937_64& rng) const {
  std::size_t d = 0;
  if (ids_.size() > 1) d = std::discrete_distribution<std::size_t>(weights_.begin(), weights_.end())(rng);
  const auto& members = members_[d];
  const std::size_t k = std::uniform_int_distribution<std::size_t>(0, members.size() - 1)(rng);
  return entries_[members[k]];
}

std::vector<double> DatasetSampler::dataset_probabilities() const {
  double total = 0.0;
  for (double w : weights_) total += w;
  std::vector<double> p;
  for (double w : weights_) p.push_back(w / total);
  return p;
}

std::vector<synth::ManifestEntry> sample_batch(const DatasetSampler& sampler, std::size_t batch_size,
                                               std::mt19937_64& rng) {
  std::vector<synth::ManifestEntry> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(sampler.draw(rng));
  return batch;
}

const Tensor& FeatureStore::features(const std::string& clip_path) {
  auto it = cache_.find(clip_path);
  if (it != cache_.end()) return it->second;
  const audio::AudioClip clip = audio::load_wav(clip_path);
  return cache_.emplace(clip_path, audio::extract_features(clip.samples)).first->second;
}

}  // namespace sqac::train
