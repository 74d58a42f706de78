#pragma once

#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "sqac/synth/corpus.hpp"
#include "sqac/tensor.hpp"

namespace sqac::train {

inline constexpr std::size_t kDefaultSamplingCap = 7000;

// Dataset-capped clip sampler. A dataset d is picked with probability
// proportional to min(|d|, cap), then a clip uniformly within d. Datasets are
// ordered by id so draws depend only on the rng state.
class DatasetSampler {
 public:
  // Throws Error when `entries` is empty or cap is 0.
  DatasetSampler(std::vector<synth::ManifestEntry> entries, std::size_t cap = kDefaultSamplingCap);

  const synth::ManifestEntry& draw(std::mt19937_64& rng) const;

  const std::vector<std::string>& dataset_ids() const { return ids_; }
  // Selection probability of each dataset, aligned with dataset_ids().
  std::vector<double> dataset_probabilities() const;
  const std::vector<synth::ManifestEntry>& entries() const { return entries_; }

 private:
  std::vector<synth::ManifestEntry> entries_;
  std::vector<std::string> ids_;
  std::vector<std::vector<std::size_t>> members_;  // entry indices per dataset
  std::vector<double> weights_;
};

std::vector<synth::ManifestEntry> sample_batch(const DatasetSampler& sampler, std::size_t batch_size,
                                               std::mt19937_64& rng);

// Loads clips once and keeps their (2, 161, T) features in memory, keyed by
// clip path.
class FeatureStore {
 public:
  const Tensor& features(const std::string& clip_path);
  std::size_t size() const { return cache_.size(); }

 private:
  std::map<std::string, Tensor> cache_;
};

}  // namespace sqac::train
