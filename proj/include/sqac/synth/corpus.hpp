#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sqac/synth/degradation.hpp"

namespace sqac::synth {

enum class Split { kTrain, kVal, kTest };

const char* split_name(Split s);
Split parse_split(const std::string& name);  // throws FormatError

struct ManifestEntry {
  std::string clip_path;   // absolute after read_manifest
  std::optional<double> mos;  // empty for unlabeled clips
  std::string dataset_id;
  Split split = Split::kTrain;
};

struct DatasetConfig {
  std::string id;
  bool labeled = true;
  std::size_t train = 0, val = 0, test = 0;
  OracleParams oracle;  // dataset rating bias
  // Share of clips drawn from the flat-prosody, undegraded population; the
  // rest are natural voices passed through sample_degradation.
  double generated_fraction = 0.0;
};

struct CorpusConfig {
  std::vector<DatasetConfig> datasets;
  double duration_s = 1.0;
  DegradationSampler sampler;
  std::uint64_t seed = 0;
};

struct CorpusSummary {
  std::size_t clips = 0;
  std::size_t rows[3] = {0, 0, 0};  // per split
};

// Writes <out>/wav/<dataset>/<split>/<id>.wav with a <id>.json degradation
// sidecar, manifest_{train,val,test}.csv and corpus.json. Every clip is a pure
// function of (config, dataset id, split, index), so output is reproducible.
// Throws IoError naming the path on write failures.
CorpusSummary build_corpus(const CorpusConfig& config, const std::filesystem::path& out_dir);

// Parses a manifest with header clip_path,mos,dataset_id,split. Relative paths
// resolve against the manifest directory. Throws FormatError with the line
// number, IoError when unreadable or when check_paths finds a missing clip.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path, bool check_paths = true);

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& rows);

DegradationSpec read_sidecar(const std::filesystem::path& path);
void write_sidecar(const std::filesystem::path& path, const DegradationSpec& spec);

// <clip>.wav -> <clip>.json
std::filesystem::path sidecar_path(const std::filesystem::path& clip_path);

// Per-dataset oracle parameters recorded in corpus.json.
std::vector<std::pair<std::string, OracleParams>> read_corpus_oracles(const std::filesystem::path& corpus_json);

// Stable 64-bit seed for one clip.
std::uint64_t clip_seed(std::uint64_t corpus_seed, const std::string& dataset, Split split, std::size_t index);

}  // namespace sqac::synth
