#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "sqac/error.hpp"

namespace sqac::cli {
namespace {

enum class Type { kReal, kCount, kFlag, kText };

struct KeySpec {
  const char* key;
  Type type;
  const char* fallback;
  std::vector<std::string> choices = {};  // non-empty restricts kText values
};

struct SectionSpec {
  const char* name;
  std::vector<KeySpec> keys;
};

// Defaults follow the published training recipe; configs/desk.ini scales
// them down.
const std::vector<SectionSpec>& schema() {
  static const std::vector<SectionSpec> s = {
      {"experiment", {{"seed", Type::kCount, "0"}, {"out_dir", Type::kText, ""}}},
      {"corpus",
       {{"duration_s", Type::kReal, "1"},
        {"noise_probability", Type::kReal, "0.67"},
        {"snr_mean_db", Type::kReal, "10"},
        {"snr_variance_db2", Type::kReal, "10"},
        {"bandwidth_probability", Type::kReal, "0.5"},
        {"clip_probability", Type::kReal, "0.25"},
        {"dropout_probability", Type::kReal, "0.25"}}},
      {"teacher",
       {{"kind", Type::kText, "oracle", {"oracle", "checkpoint"}},
        {"checkpoint", Type::kText, ""},
        {"noise_std", Type::kReal, "0.1"}}},
      {"student",
       {{"variant", Type::kCount, "7"},
        {"base_channels", Type::kCount, "64"},
        {"max_channels", Type::kCount, "512"},
        {"num_conv_layers", Type::kCount, "6"},
        {"transformer_dim", Type::kCount, "64"},
        {"transformer_layers", Type::kCount, "2"},
        {"attention_heads", Type::kCount, "4"},
        {"ff_mult", Type::kCount, "4"}}},
      {"train",
       {{"learning_rate", Type::kReal, "0.0001"},
        {"weight_decay", Type::kReal, "0.01"},
        {"batch_size", Type::kCount, "20"},
        {"total_steps", Type::kCount, "72000"},
        {"validate_every", Type::kCount, "5000"},
        {"sampling_cap", Type::kCount, "7000"},
        {"weighted_validation", Type::kFlag, "true"}}},
      {"distill",
       {{"learning_rate", Type::kReal, "2e-05"},
        {"weight_decay", Type::kReal, "0.01"},
        {"batch_size", Type::kCount, "20"},
        {"total_steps", Type::kCount, "250000"},
        {"validate_every", Type::kCount, "5000"},
        {"mix_in_p", Type::kReal, "0.2"},
        {"sampling_cap", Type::kCount, "7000"},
        {"weighted_validation", Type::kFlag, "true"}}},
      {"prune",
       {{"source", Type::kText, "distilled", {"distilled", "baseline"}},
        {"criteria", Type::kText, "taylor,magnitude"},
        {"targets", Type::kText, "0.75,0.5,0.29"},
        {"basis", Type::kText, "effective", {"effective", "unmasked"}},
        {"label_domain", Type::kText, "teacher", {"teacher", "dataset"}},
        {"smoothing", Type::kReal, "0.9"},
        {"rate", Type::kReal, "0.005"},
        {"fine_tune_steps", Type::kCount, "30"},
        {"learning_rate", Type::kReal, "2e-05"},
        {"weight_decay", Type::kReal, "0.01"},
        {"batch_size", Type::kCount, "20"},
        {"sampling_cap", Type::kCount, "7000"},
        {"weighted_validation", Type::kFlag, "true"}}},
      {"eval",
       {{"bias_mode", Type::kText, "universal", {"universal", "per_dataset"}},
        {"include_teacher", Type::kFlag, "true"}}},
  };
  return s;
}

const std::vector<KeySpec> kDatasetKeys = {
    {"labeled", Type::kFlag, "true"},     {"train", Type::kCount, "0"},          {"val", Type::kCount, "0"},
    {"test", Type::kCount, "0"},          {"oracle_scale", Type::kReal, "1"},    {"oracle_shift", Type::kReal, "0"},
    {"generated_fraction", Type::kReal, "0"},
};

constexpr const char* kDatasetPrefix = "dataset.";

bool is_dataset(const std::string& section) { return section.rfind(kDatasetPrefix, 0) == 0; }

const KeySpec* find_key(const std::string& section, const std::string& key) {
  const std::vector<KeySpec>* keys = nullptr;
  if (is_dataset(section)) {
    keys = &kDatasetKeys;
  } else {
    for (const auto& s : schema())
      if (section == s.name) keys = &s.keys;
  }
  if (keys == nullptr) return nullptr;
  for (const auto& k : *keys)
    if (key == k.key) return &k;
  return nullptr;
}

std::string trim(std::string s) {
  const auto space = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), space));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), space).base(), s.end());
  return s;
}

std::string upper(std::string s) {
  for (char& c : s) c = c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

double parse_real(const std::string& where, const std::string& v) {
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError("config key " + where + ": expected a number, got '" + v + "'");
  return out;
}

std::size_t parse_count(const std::string& where, const std::string& v) {
  std::size_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size() || v.empty())
    throw ConfigError("config key " + where + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

bool parse_flag(const std::string& where, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key " + where + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

void check_value(const std::string& where, const KeySpec& k, const std::string& v) {
  switch (k.type) {
    case Type::kReal:
      parse_real(where, v);
      break;
    case Type::kCount:
      parse_count(where, v);
      break;
    case Type::kFlag:
      parse_flag(where, v);
      break;
    case Type::kText:
      if (!k.choices.empty() && std::find(k.choices.begin(), k.choices.end(), v) == k.choices.end()) {
        std::string allowed;
        for (const auto& c : k.choices) allowed += (allowed.empty() ? "" : ", ") + c;
        throw ConfigError("config key " + where + ": '" + v + "' is not one of " + allowed);
      }
      break;
  }
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  for (const auto& s : schema())
    for (const auto& k : s.keys) values_[s.name][k.key] = k.fallback;
}

void ExperimentConfig::add_dataset(const std::string& id) {
  if (id.empty() || id.find_first_of(",/\\ \t") != std::string::npos)
    throw ConfigError("config section [dataset." + id + "]: invalid dataset id");
  auto& sec = values_[kDatasetPrefix + id];
  for (const auto& k : kDatasetKeys) sec.emplace(k.key, k.fallback);
}

void ExperimentConfig::set(const std::string& section, const std::string& key, const std::string& value) {
  if (is_dataset(section)) add_dataset(section.substr(std::string(kDatasetPrefix).size()));
  if (!values_.count(section)) throw ConfigError("config: unknown section [" + section + "]");
  const KeySpec* spec = find_key(section, key);
  if (spec == nullptr) throw ConfigError("config: unknown key " + section + "." + key);
  const std::string v = trim(value);
  check_value(section + "." + key, *spec, v);
  values_[section][key] = v;
  auto& given = explicit_[section];
  if (std::find(given.begin(), given.end(), key) == given.end()) given.push_back(key);
}

const std::string& ExperimentConfig::get(const std::string& section, const std::string& key) const {
  const auto s = values_.find(section);
  if (s == values_.end()) throw ConfigError("config: unknown section [" + section + "]");
  const auto k = s->second.find(key);
  if (k == s->second.end()) throw ConfigError("config: unknown key " + section + "." + key);
  return k->second;
}

bool ExperimentConfig::is_set(const std::string& section, const std::string& key) const {
  const auto it = explicit_.find(section);
  return it != explicit_.end() && std::find(it->second.begin(), it->second.end(), key) != it->second.end();
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& file,
                                        const std::vector<std::pair<std::string, std::string>>& env) {
  namespace pt = boost::property_tree;
  ExperimentConfig cfg;
  if (!file.empty()) {
    if (!std::filesystem::exists(file)) throw MissingPrerequisite("config file " + file.string() + " does not exist");
    pt::ptree tree;
    try {
      pt::read_ini(file.string(), tree);
    } catch (const pt::ini_parser_error& e) {
      throw ConfigError("cannot parse config " + file.string() + ": " + e.what());
    }
    for (const auto& [section, body] : tree) {
      if (body.empty() && !body.data().empty())
        throw ConfigError("config: key '" + section + "' must sit inside a [section]");
      if (!is_dataset(section) && !cfg.values_.count(section))
        throw ConfigError("config: unknown section [" + section + "]");
      if (is_dataset(section)) cfg.add_dataset(section.substr(std::string(kDatasetPrefix).size()));
      for (const auto& [key, node] : body) cfg.set(section, key, node.data());
    }
  }
  for (const auto& [name, value] : env) {
    const std::string prefix = kEnvPrefix;
    const auto sep = name.find("__");
    if (name.rfind(prefix, 0) != 0 || sep == std::string::npos) continue;
    const std::string sec_part = name.substr(prefix.size(), sep - prefix.size());
    const std::string key_part = name.substr(sep + 2);
    std::string section;
    for (const auto& [s, body] : cfg.values_)
      if (upper(s) == sec_part) section = s;
    if (section.empty()) throw ConfigError("environment override " + name + ": no config section matches");
    std::string key = key_part;
    for (char& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    cfg.set(section, key, value);
  }
  // Range and cross-key checks up front, so a bad run fails before any work.
  cfg.student();
  cfg.train(train::Mode::kLabeledOnly);
  cfg.train(train::Mode::kDistill);
  for (const auto c : cfg.prune_criteria()) cfg.prune(c);
  return cfg;
}

std::string ExperimentConfig::resolved_text() const {
  std::ostringstream out;
  auto emit = [&](const std::string& name, const std::vector<KeySpec>& keys) {
    out << '[' << name << "]\n";
    for (const auto& k : keys) out << k.key << " = " << values_.at(name).at(k.key) << '\n';
    out << '\n';
  };
  for (const auto& s : schema()) {
    if (std::string(s.name) == "student") {
      // Grid variants print their resolved shape.
      const auto st = student();
      out << "[student]\nvariant = " << st.variant_id << "\nbase_channels = " << st.base_channels
          << "\nmax_channels = " << st.max_channels << "\nnum_conv_layers = " << st.num_conv_layers
          << "\ntransformer_dim = " << st.transformer_dim << "\ntransformer_layers = " << st.transformer_layers
          << "\nattention_heads = " << st.attention_heads << "\nff_mult = " << st.ff_mult << "\n\n";
      continue;
    }
    emit(s.name, s.keys);
    if (std::string(s.name) == "corpus")
      for (const auto& [name, body] : values_)
        if (is_dataset(name)) emit(name, kDatasetKeys);
  }
  return out.str();
}

double ExperimentConfig::real(const std::string& section, const std::string& key) const {
  return parse_real(section + "." + key, get(section, key));
}

std::size_t ExperimentConfig::count(const std::string& section, const std::string& key) const {
  return parse_count(section + "." + key, get(section, key));
}

bool ExperimentConfig::flag(const std::string& section, const std::string& key) const {
  return parse_flag(section + "." + key, get(section, key));
}

std::uint64_t ExperimentConfig::seed() const { return count("experiment", "seed"); }

std::filesystem::path ExperimentConfig::out_dir() const { return get("experiment", "out_dir"); }

synth::CorpusConfig ExperimentConfig::corpus() const {
  synth::CorpusConfig c;
  c.seed = seed();
  c.duration_s = real("corpus", "duration_s");
  c.sampler.noise_probability = real("corpus", "noise_probability");
  c.sampler.snr_mean_db = real("corpus", "snr_mean_db");
  const double var = real("corpus", "snr_variance_db2");
  if (var < 0.0) throw ConfigError("config key corpus.snr_variance_db2 must be >= 0");
  c.sampler.snr_std_db = std::sqrt(var);
  c.sampler.bandwidth_probability = real("corpus", "bandwidth_probability");
  c.sampler.clip_probability = real("corpus", "clip_probability");
  c.sampler.dropout_probability = real("corpus", "dropout_probability");
  for (const auto& [name, body] : values_) {
    if (!is_dataset(name)) continue;
    synth::DatasetConfig d;
    d.id = name.substr(std::string(kDatasetPrefix).size());
    d.labeled = flag(name, "labeled");
    d.train = count(name, "train");
    d.val = count(name, "val");
    d.test = count(name, "test");
    d.oracle = {real(name, "oracle_scale"), real(name, "oracle_shift")};
    d.generated_fraction = real(name, "generated_fraction");
    c.datasets.push_back(d);
  }
  if (c.datasets.empty()) throw ConfigError("config: the corpus needs at least one [dataset.<id>] section");
  return c;
}

model::StudentConfig ExperimentConfig::student() const {
  const std::size_t variant = count("student", "variant");
  if (variant != 0) {
    for (const char* key : {"base_channels", "max_channels", "num_conv_layers", "transformer_dim",
                            "transformer_layers", "attention_heads", "ff_mult"})
      if (is_set("student", key))
        throw ConfigError(std::string("config key student.") + key + " conflicts with student.variant = " +
                          std::to_string(variant) + "; set variant = 0 for a custom student");
    if (variant > model::variant_grid().size())
      throw ConfigError("config key student.variant: no variant " + std::to_string(variant));
    return model::variant(static_cast<int>(variant));
  }
  model::StudentConfig s;
  s.variant_id = 0;
  s.base_channels = count("student", "base_channels");
  s.max_channels = count("student", "max_channels");
  s.num_conv_layers = count("student", "num_conv_layers");
  s.transformer_dim = count("student", "transformer_dim");
  s.transformer_layers = count("student", "transformer_layers");
  s.attention_heads = count("student", "attention_heads");
  s.ff_mult = count("student", "ff_mult");
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config section [student]: ") + e.what());
  }
  return s;
}

train::TrainConfig ExperimentConfig::train(train::Mode mode) const {
  const std::string sec = mode == train::Mode::kDistill ? "distill" : "train";
  train::TrainConfig c = train::TrainConfig::defaults(mode);
  c.learning_rate = real(sec, "learning_rate");
  c.weight_decay = real(sec, "weight_decay");
  c.batch_size = count(sec, "batch_size");
  c.total_steps = count(sec, "total_steps");
  c.validate_every = count(sec, "validate_every");
  c.sampling_cap = count(sec, "sampling_cap");
  c.weighted_validation = flag(sec, "weighted_validation");
  if (mode == train::Mode::kDistill) c.mix_in_p = real(sec, "mix_in_p");
  // Stage seeds differ so the two runs do not share batch draws.
  c.seed = seed() + (mode == train::Mode::kDistill ? 2 : 1);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("config section [" + sec + "]: " + e.what());
  }
  return c;
}

std::vector<prune::Criterion> ExperimentConfig::prune_criteria() const {
  std::vector<prune::Criterion> out;
  for (const auto& name : split_list(get("prune", "criteria"))) {
    if (name == "taylor") out.push_back(prune::Criterion::kTaylor);
    else if (name == "magnitude") out.push_back(prune::Criterion::kMagnitude);
    else throw ConfigError("config key prune.criteria: unknown criterion '" + name + "'");
  }
  if (out.empty()) throw ConfigError("config key prune.criteria: no criterion given");
  return out;
}

prune::ScheduleConfig ExperimentConfig::prune(prune::Criterion criterion) const {
  prune::ScheduleConfig c;
  c.criterion = criterion;
  c.targets.clear();
  for (const auto& t : split_list(get("prune", "targets"))) c.targets.push_back(parse_real("prune.targets", t));
  if (c.targets.empty()) throw ConfigError("config key prune.targets: no target given");
  c.basis = get("prune", "basis") == "unmasked" ? prune::FractionBasis::kUnmaskedWeights
                                                : prune::FractionBasis::kEffectiveSize;
  auto& o = c.options;
  o.smoothing = real("prune", "smoothing");
  o.rate = real("prune", "rate");
  o.fine_tune_steps = count("prune", "fine_tune_steps");
  o.learning_rate = real("prune", "learning_rate");
  o.weight_decay = real("prune", "weight_decay");
  o.batch_size = count("prune", "batch_size");
  o.sampling_cap = count("prune", "sampling_cap");
  o.weighted_validation = flag("prune", "weighted_validation");
  o.seed = seed() + 3;
  try {
    o.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config section [prune]: ") + e.what());
  }
  for (double t : c.targets)
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("config key prune.targets: " + std::to_string(t) + " is outside (0, 1)");
  return c;
}

}  // namespace sqac::cli
