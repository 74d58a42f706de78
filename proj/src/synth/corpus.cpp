#include "sqac/synth/corpus.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "sqac/audio/wav.hpp"
#include "sqac/error.hpp"
#include "sqac/synth/clean.hpp"

namespace sqac::synth {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kManifestHeader = "clip_path,mos,dataset_id,split";

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) return out;
    start = comma + 1;
  }
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_field(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw FormatError("unknown split '" + name + "' (expected train, val or test)");
}

std::uint64_t clip_seed(std::uint64_t corpus_seed, const std::string& dataset, Split split, std::size_t index) {
  // FNV-1a over the identifying tuple, then a splitmix64 finalizer.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  const auto split_id = static_cast<std::uint8_t>(split);
  const auto idx = static_cast<std::uint64_t>(index);
  mix(&corpus_seed, sizeof corpus_seed);
  mix(dataset.data(), dataset.size());
  mix(&split_id, 1);
  mix(&idx, sizeof idx);
  h += 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

fs::path sidecar_path(const fs::path& clip_path) {
  fs::path p = clip_path;
  return p.replace_extension(".json");
}

void write_sidecar(const fs::path& path, const DegradationSpec& spec) {
  json j;
  j["snr_db"] = optional_json(spec.snr_db);
  j["bandwidth_hz"] = optional_json(spec.bandwidth_hz);
  j["clip_threshold"] = optional_json(spec.clip_threshold);
  j["dropout"] = optional_json(spec.dropout);
  j["seed"] = spec.seed;
  auto out = open_out(path);
  out << j.dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

DegradationSpec read_sidecar(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read sidecar " + path.string());
  try {
    const json j = json::parse(in);
    DegradationSpec spec;
    spec.snr_db = optional_field(j, "snr_db");
    spec.bandwidth_hz = optional_field(j, "bandwidth_hz");
    spec.clip_threshold = optional_field(j, "clip_threshold");
    spec.dropout = optional_field(j, "dropout");
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw FormatError("malformed sidecar " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("invalid sidecar " + path.string() + ": " + e.what());
  }
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& rows) {
  auto out = open_out(path);
  out << kManifestHeader << '\n';
  for (const auto& r : rows) {
    if (r.clip_path.find_first_of(",\n\"") != std::string::npos)
      throw IoError("clip path cannot be stored in a manifest: " + r.clip_path);
    out << r.clip_path << ',' << (r.mos ? format_double(*r.mos) : "") << ',' << r.dataset_id << ','
        << split_name(r.split) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<ManifestEntry> read_manifest(const fs::path& path, bool check_paths) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read manifest " + path.string());
  const fs::path base = fs::absolute(path).parent_path();
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  if (!std::getline(in, line)) {
    line_no = 1;
    fail("empty manifest");
  }
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) fail("expected header '" + std::string(kManifestHeader) + "'");

  std::vector<ManifestEntry> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 4) fail("expected 4 fields, got " + std::to_string(f.size()));
    ManifestEntry e;
    if (f[0].empty()) fail("empty clip_path");
    fs::path clip(f[0]);
    e.clip_path = (clip.is_absolute() ? clip : base / clip).lexically_normal().string();
    if (!f[1].empty()) {
      double mos = 0.0;
      auto res = std::from_chars(f[1].data(), f[1].data() + f[1].size(), mos);
      if (res.ec != std::errc() || res.ptr != f[1].data() + f[1].size()) fail("mos is not a number: " + f[1]);
      if (!(mos >= 1.0 && mos <= 5.0)) fail("mos " + f[1] + " outside [1, 5]");
      e.mos = mos;
    }
    if (f[2].empty()) fail("empty dataset_id");
    e.dataset_id = f[2];
    try {
      e.split = parse_split(f[3]);
    } catch (const FormatError& err) {
      fail(err.what());
    }
    if (check_paths && !fs::exists(e.clip_path)) throw IoError("clip listed in " + path.string() +
                                                               " not found: " + e.clip_path);
    rows.push_back(std::move(e));
  }
  return rows;
}

CorpusSummary build_corpus(const CorpusConfig& config, const fs::path& out_dir) {
  if (config.datasets.empty()) throw ConfigError("corpus: no datasets configured");
  for (const auto& d : config.datasets) {
    if (d.id.empty() || d.id.find_first_of(",/\\ ") != std::string::npos)
      throw ConfigError("corpus: invalid dataset id '" + d.id + "'");
    if (!(d.generated_fraction >= 0.0 && d.generated_fraction <= 1.0))
      throw ConfigError("corpus: generated_fraction of " + d.id + " must lie in [0, 1]");
  }
  ensure_dir(out_dir);

  CorpusSummary summary;
  std::vector<ManifestEntry> manifests[3];
  json corpus_json;
  corpus_json["seed"] = config.seed;
  corpus_json["duration_s"] = config.duration_s;
  corpus_json["datasets"] = json::array();

  for (const auto& d : config.datasets) {
    corpus_json["datasets"].push_back({{"id", d.id},
                                       {"labeled", d.labeled},
                                       {"scale", d.oracle.scale},
                                       {"shift", d.oracle.shift},
                                       {"generated_fraction", d.generated_fraction}});
    const std::size_t counts[3] = {d.train, d.val, d.test};
    for (int s = 0; s < 3; ++s) {
      const auto split = static_cast<Split>(s);
      const fs::path rel_dir = fs::path("wav") / d.id / split_name(split);
      ensure_dir(out_dir / rel_dir);
      for (std::size_t i = 0; i < counts[s]; ++i) {
        std::mt19937_64 rng(clip_seed(config.seed, d.id, split, i));
        const bool generated = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < d.generated_fraction;
        DegradationSpec spec;
        if (generated)
          spec.seed = rng();
        else
          spec = sample_degradation(rng, config.sampler);
        const std::uint64_t voice_seed = rng();
        const auto clean =
            synth_clean(voice_seed, config.duration_s, generated ? VoiceStyle::kGenerated : VoiceStyle::kNatural);

        char name[64];
        std::snprintf(name, sizeof name, "%s_%s_%05zu.wav", d.id.c_str(), split_name(split), i);
        const fs::path rel = rel_dir / name;
        audio::write_wav(out_dir / rel, apply_degradation(clean, spec));
        write_sidecar(sidecar_path(out_dir / rel), spec);

        ManifestEntry e{rel.generic_string(), std::nullopt, d.id, split};
        if (d.labeled) e.mos = oracle_mos(spec, d.oracle);
        manifests[s].push_back(std::move(e));
        ++summary.clips;
        ++summary.rows[s];
      }
    }
  }

  for (int s = 0; s < 3; ++s)
    write_manifest(out_dir / (std::string("manifest_") + split_name(static_cast<Split>(s)) + ".csv"), manifests[s]);
  auto out = open_out(out_dir / "corpus.json");
  out << corpus_json.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + (out_dir / "corpus.json").string());
  return summary;
}

std::vector<std::pair<std::string, OracleParams>> read_corpus_oracles(const fs::path& corpus_json) {
  std::ifstream in(corpus_json);
  if (!in) throw IoError("cannot read " + corpus_json.string());
  try {
    const json j = json::parse(in);
    std::vector<std::pair<std::string, OracleParams>> out;
    for (const auto& d : j.at("datasets"))
      out.emplace_back(d.at("id").get<std::string>(),
                       OracleParams{d.at("scale").get<double>(), d.at("shift").get<double>()});
    return out;
  } catch (const json::exception& e) {
    throw FormatError("malformed corpus description " + corpus_json.string() + ": " + e.what());
  }
}

}  // namespace sqac::synth
