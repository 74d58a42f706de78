#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace sqac::model {

// Transformer encoder + attention pooling + scalar output. Input frames must
// already have `dim` features.
struct HeadConfig {
  std::size_t dim = 32;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t ff_mult = 4;
  bool positional_encoding = true;

  void validate() const;  // throws ConfigError
  bool operator==(const HeadConfig&) const = default;
};

// Convolutional-transformer student. Layers 0 and 1 keep base_channels at
// stride (1,1); each later layer uses stride (2,1) and doubles the channel
// count up to max_channels; the last layer uses stride (2,2). All kernels are
// 3x3 with padding 1 and are followed by LeakyReLU(0.1).
struct StudentConfig {
  int variant_id = 0;  // 0 for configurations outside the shipped grid
  std::size_t base_channels = 64;
  std::size_t max_channels = 512;
  std::size_t num_conv_layers = 6;
  std::size_t transformer_dim = 64;
  std::size_t transformer_layers = 2;
  std::size_t attention_heads = 4;
  std::size_t ff_mult = 4;

  void validate() const;  // throws ConfigError
  HeadConfig head() const;
  bool operator==(const StudentConfig&) const = default;
};

struct ConvLayerPlan {
  std::size_t in_channels, out_channels, stride_h, stride_w;
};

std::vector<ConvLayerPlan> conv_plan(const StudentConfig& config);

// Frequency extent after the conv stack for a 161-bin input.
std::size_t frequency_extent(const StudentConfig& config);

// Smallest frame count a student accepts, and the matching clip length in
// samples at 16 kHz.
inline constexpr std::size_t kMinFrames = 4;
std::size_t min_clip_samples();

// Analytic dense parameter count, from layer shapes alone.
std::size_t student_parameter_count(const StudentConfig& config);
std::size_t head_parameter_count(const HeadConfig& config);

// The shipped ten-variant grid, ordered by size.
const std::vector<StudentConfig>& variant_grid();
StudentConfig variant(int id);  // throws ConfigError outside 1..10

// Reads a grid file: one [vN] section per variant with keys max_channels,
// num_conv_layers, transformer_dim, transformer_layers and optionally
// attention_heads, base_channels, ff_mult.
std::vector<StudentConfig> load_variant_grid(const std::filesystem::path& path);

// Serialized architecture descriptor stored in checkpoints, e.g.
// "student base=64 max=512 conv=6 dim=64 layers=2 heads=4 ff=4 variant=7".
struct Architecture {
  enum class Kind { kStudent, kHead } kind = Kind::kStudent;
  StudentConfig student;
  HeadConfig head;

  static Architecture of(const StudentConfig& s) { return {Kind::kStudent, s, s.head()}; }
  static Architecture of(const HeadConfig& h) { return {Kind::kHead, {}, h}; }

  std::string to_string() const;
  static Architecture parse(const std::string& text);  // throws FormatError
};

}  // namespace sqac::model
