#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sqac/model/config.hpp"
#include "sqac/prune/pruning.hpp"
#include "sqac/synth/corpus.hpp"
#include "sqac/train/trainer.hpp"

namespace sqac::cli {

// Environment variables named SQAC_<SECTION>__<KEY> override config keys.
// Section dots become underscores: SQAC_DATASET_LAB_A__TRAIN sets
// [dataset.lab_a] train.
inline constexpr const char* kEnvPrefix = "SQAC_";

// A sectioned key-value experiment definition. Every key has a schema entry
// and a default; unknown sections and keys are rejected with ConfigError
// naming them. Dataset sections are [dataset.<id>].
class ExperimentConfig {
 public:
  // Defaults only.
  ExperimentConfig();
  // Parses an INI file, then applies `env` (name -> value, already filtered
  // to the override prefix). An empty path skips the file.
  static ExperimentConfig load(const std::filesystem::path& file,
                               const std::vector<std::pair<std::string, std::string>>& env = {});

  // Sets one key, checked against the schema.
  void set(const std::string& section, const std::string& key, const std::string& value);
  const std::string& get(const std::string& section, const std::string& key) const;

  // Every section with all defaults materialized, in schema order.
  std::string resolved_text() const;

  std::uint64_t seed() const;
  std::filesystem::path out_dir() const;  // empty when unset

  synth::CorpusConfig corpus() const;
  model::StudentConfig student() const;
  train::TrainConfig train(train::Mode mode) const;
  std::vector<prune::Criterion> prune_criteria() const;
  prune::ScheduleConfig prune(prune::Criterion criterion) const;

  // Typed access; ConfigError names "section.key" on a bad value.
  double real(const std::string& section, const std::string& key) const;
  std::size_t count(const std::string& section, const std::string& key) const;
  bool flag(const std::string& section, const std::string& key) const;

 private:
  using Section = std::map<std::string, std::string>;
  void add_dataset(const std::string& id);
  bool is_set(const std::string& section, const std::string& key) const;
  std::map<std::string, Section> values_;
  std::map<std::string, std::vector<std::string>> explicit_;  // keys given by file or env
};

}  // namespace sqac::cli
