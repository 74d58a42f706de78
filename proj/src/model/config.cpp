#include "sqac/model/config.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "sqac/audio/features.hpp"
#include "sqac/error.hpp"
#include "sqac/ops.hpp"

namespace sqac::model {
namespace {

bool power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::size_t transformer_layer_count(std::size_t d, std::size_t ff_mult) {
  const std::size_t ff = ff_mult * d;
  const std::size_t attention = 4 * d * d + 4 * d;
  const std::size_t feed_forward = d * ff + ff + ff * d + d;
  const std::size_t norms = 4 * d;
  return attention + feed_forward + norms;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != value.size() || value.empty() || value[0] == '-')
    throw ConfigError("'" + key + "' must be a non-negative integer, got '" + value + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace

void HeadConfig::validate() const {
  if (dim == 0 || layers == 0 || heads == 0 || ff_mult == 0)
    throw ConfigError("head: dim, layers, heads and ff_mult must be positive");
  if (dim % heads != 0)
    throw ConfigError("head: dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
}

void StudentConfig::validate() const {
  if (base_channels == 0 || max_channels < base_channels)
    throw ConfigError("student: need 0 < base_channels <= max_channels");
  if (max_channels % base_channels != 0 || !power_of_two(max_channels / base_channels))
    throw ConfigError("student: max_channels " + std::to_string(max_channels) +
                      " is not base_channels times a power of two");
  if (num_conv_layers < 3) throw ConfigError("student: num_conv_layers must be at least 3");
  if (transformer_dim == 0 || attention_heads == 0 || transformer_dim % attention_heads != 0)
    throw ConfigError("student: transformer_dim must be a positive multiple of attention_heads");
  if (transformer_layers == 0 || ff_mult == 0)
    throw ConfigError("student: transformer_layers and ff_mult must be positive");
}

HeadConfig StudentConfig::head() const {
  return HeadConfig{transformer_dim, transformer_layers, attention_heads, ff_mult, true};
}

std::vector<ConvLayerPlan> conv_plan(const StudentConfig& c) {
  c.validate();
  std::vector<ConvLayerPlan> plan;
  std::size_t in = 2, ch = c.base_channels;
  for (std::size_t i = 0; i < c.num_conv_layers; ++i) {
    std::size_t sh = 1, sw = 1;
    if (i >= 2) {
      ch = std::min(ch * 2, c.max_channels);
      sh = 2;
    }
    if (i + 1 == c.num_conv_layers) sw = 2;
    plan.push_back({in, ch, sh, sw});
    in = ch;
  }
  return plan;
}

std::size_t frequency_extent(const StudentConfig& c) {
  std::size_t f = audio::kBins;
  for (const auto& l : conv_plan(c)) f = ops::conv_out_extent(f, 3, l.stride_h, 1);
  return f;
}

std::size_t min_clip_samples() { return audio::kFftSize + (kMinFrames - 1) * audio::kHop; }

std::size_t head_parameter_count(const HeadConfig& h) {
  h.validate();
  return h.layers * transformer_layer_count(h.dim, h.ff_mult) + h.dim /* pooling query */ + h.dim + 1;
}

std::size_t student_parameter_count(const StudentConfig& c) {
  std::size_t n = 0;
  for (const auto& l : conv_plan(c)) n += l.out_channels * l.in_channels * 9 + l.out_channels;
  const std::size_t flat = conv_plan(c).back().out_channels * frequency_extent(c);
  n += flat * c.transformer_dim + c.transformer_dim;
  return n + head_parameter_count(c.head());
}

const std::vector<StudentConfig>& variant_grid() {
  // (max_channels, conv layers, transformer dim, transformer layers); sizes
  // run from about 0.68 M to 14.4 M parameters with v7 near 4.4 M. Mirrors
  // configs/variants.ini.
  static const std::vector<StudentConfig> grid = [] {
    const std::size_t rows[10][4] = {{128, 5, 64, 2},  {128, 5, 128, 2}, {256, 5, 64, 2},  {256, 5, 128, 2},
                                     {512, 5, 128, 2}, {512, 5, 128, 4}, {512, 6, 64, 2},  {512, 6, 128, 4},
                                     {512, 6, 256, 4}, {512, 9, 256, 4}};
    std::vector<StudentConfig> g;
    for (int i = 0; i < 10; ++i) {
      StudentConfig c;
      c.variant_id = i + 1;
      c.max_channels = rows[i][0];
      c.num_conv_layers = rows[i][1];
      c.transformer_dim = rows[i][2];
      c.transformer_layers = rows[i][3];
      g.push_back(c);
    }
    return g;
  }();
  return grid;
}

StudentConfig variant(int id) {
  if (id < 1 || id > 10) throw ConfigError("student variant must lie in 1..10, got " + std::to_string(id));
  return variant_grid()[static_cast<std::size_t>(id - 1)];
}

std::vector<StudentConfig> load_variant_grid(const std::filesystem::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("cannot parse variant grid " + path.string() + ": " + e.what());
  }
  std::vector<StudentConfig> out;
  for (const auto& [section, body] : tree) {
    if (section.size() < 2 || section[0] != 'v') throw ConfigError("variant grid: unexpected section [" + section + "]");
    StudentConfig c;
    c.variant_id = static_cast<int>(parse_size("section", section.substr(1)));
    for (const auto& [key, node] : body) {
      const std::size_t v = parse_size(section + "." + key, node.data());
      if (key == "max_channels") c.max_channels = v;
      else if (key == "num_conv_layers") c.num_conv_layers = v;
      else if (key == "transformer_dim") c.transformer_dim = v;
      else if (key == "transformer_layers") c.transformer_layers = v;
      else if (key == "attention_heads") c.attention_heads = v;
      else if (key == "base_channels") c.base_channels = v;
      else if (key == "ff_mult") c.ff_mult = v;
      else throw ConfigError("variant grid: unknown key " + section + "." + key);
    }
    c.validate();
    out.push_back(c);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.variant_id < b.variant_id; });
  return out;
}

std::string Architecture::to_string() const {
  std::ostringstream s;
  if (kind == Kind::kStudent) {
    s << "student base=" << student.base_channels << " max=" << student.max_channels
      << " conv=" << student.num_conv_layers << " dim=" << student.transformer_dim
      << " layers=" << student.transformer_layers << " heads=" << student.attention_heads
      << " ff=" << student.ff_mult << " variant=" << student.variant_id;
  } else {
    s << "head dim=" << head.dim << " layers=" << head.layers << " heads=" << head.heads << " ff=" << head.ff_mult
      << " pe=" << (head.positional_encoding ? 1 : 0);
  }
  return s.str();
}

Architecture Architecture::parse(const std::string& text) {
  std::istringstream in(text);
  std::string kind;
  in >> kind;
  std::map<std::string, std::size_t> kv;
  std::string tok;
  try {
    while (in >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw FormatError("malformed architecture token '" + tok + "'");
      kv[tok.substr(0, eq)] = parse_size(tok.substr(0, eq), tok.substr(eq + 1));
    }
  } catch (const ConfigError& e) {
    throw FormatError(std::string("architecture descriptor: ") + e.what());
  }
  auto need = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("architecture descriptor '" + text + "' lacks '" + key + "'");
    return it->second;
  };
  Architecture a;
  try {
    if (kind == "student") {
      a.kind = Kind::kStudent;
      a.student.base_channels = need("base");
      a.student.max_channels = need("max");
      a.student.num_conv_layers = need("conv");
      a.student.transformer_dim = need("dim");
      a.student.transformer_layers = need("layers");
      a.student.attention_heads = need("heads");
      a.student.ff_mult = need("ff");
      a.student.variant_id = static_cast<int>(need("variant"));
      a.student.validate();
      a.head = a.student.head();
    } else if (kind == "head") {
      a.kind = Kind::kHead;
      a.head.dim = need("dim");
      a.head.layers = need("layers");
      a.head.heads = need("heads");
      a.head.ff_mult = need("ff");
      a.head.positional_encoding = need("pe") != 0;
      a.head.validate();
    } else {
      throw FormatError("unknown architecture kind '" + kind + "'");
    }
  } catch (const ConfigError& e) {
    throw FormatError(std::string("architecture descriptor: ") + e.what());
  }
  return a;
}

}  // namespace sqac::model
