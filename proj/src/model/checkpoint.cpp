#include "sqac/model/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "sqac/error.hpp"

namespace sqac::model {
namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) {
    // Host order equals file order on the little-endian targets we build for.
    static_assert(std::endian::native == std::endian::little);
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b, std::size_t end) : bytes_(b), end_(end) {}
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  float f32() { return get<float>(); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  template <class T>
  T get() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> serialize(const QualityModel& model) {
  Writer w;
  w.raw("SQAC", 4);
  w.u32(kCheckpointVersion);
  w.str(model.architecture().to_string());

  const auto& params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t e : p.value.shape()) w.u64(e);
    w.raw(p.value.data().data(), p.value.numel() * sizeof(float));
  }

  std::uint32_t masks = 0;
  for (const auto& p : params) masks += !p.mask.empty();
  w.u32(masks);
  for (const auto& p : params) {
    if (p.mask.empty()) continue;
    w.str(p.name);
    w.u64(p.mask.size());
    std::vector<std::uint8_t> packed((p.mask.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < p.mask.size(); ++i)
      if (p.mask[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    w.raw(packed.data(), packed.size());
  }

  const auto [ua, ub] = model.bias().universal();
  w.f32(ua);
  w.f32(ub);
  const auto& entries = model.bias().entries();
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [id, e] : entries) {
    w.str(id);
    w.f32(e.scale.item());
    w.f32(e.shift.item());
  }
  w.u32(crc32_of(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

QualityModel deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "SQAC", 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body, 4);
  if (crc32_of(bytes.data(), body) != stored_crc) throw FormatError("checkpoint CRC mismatch (corrupt file)");

  Reader r(bytes, body);
  char magic[4];
  r.raw(magic, 4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  QualityModel model = QualityModel::from_architecture(Architecture::parse(r.str()));

  const std::uint32_t count = r.u32();
  if (count != model.parameters().size())
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, architecture expects " +
                      std::to_string(model.parameters().size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    Parameter* prm = nullptr;
    try {
      prm = &model.parameter(name);
    } catch (const Error&) {
      throw FormatError("checkpoint tensor '" + name + "' is not part of the architecture");
    }
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    if (shape != prm->value.shape())
      throw FormatError("tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                        shape_str(prm->value.shape()));
    r.raw(prm->value.data().data(), prm->value.numel() * sizeof(float));
    check_finite(prm->value.data(), "checkpoint tensor '" + name + "'");
  }

  const std::uint32_t masks = r.u32();
  for (std::uint32_t i = 0; i < masks; ++i) {
    const std::string name = r.str();
    Parameter* prm = nullptr;
    try {
      prm = &model.parameter(name);
    } catch (const Error&) {
      throw FormatError("mask for unknown tensor '" + name + "'");
    }
    const std::uint64_t bits = r.u64();
    if (bits != prm->value.numel()) throw FormatError("mask for '" + name + "' has the wrong length");
    std::vector<std::uint8_t> packed((bits + 7) / 8);
    r.raw(packed.data(), packed.size());
    prm->mask.assign(bits, 0);
    for (std::size_t k = 0; k < bits; ++k) prm->mask[k] = (packed[k / 8] >> (k % 8)) & 1u;
  }

  const float ua = r.f32(), ub = r.f32();
  if (!(ua > 0.0f) || !std::isfinite(ub)) throw FormatError("invalid universal bias transform");
  model.bias().set_universal(ua, ub);
  const std::uint32_t entries = r.u32();
  for (std::uint32_t i = 0; i < entries; ++i) {
    const std::string id = r.str();
    auto& e = model.bias().ensure(id);
    e.scale.data()[0] = r.f32();
    e.shift.data()[0] = r.f32();
  }
  if (r.pos() != body) throw FormatError("trailing bytes after bias table");
  model.apply_masks();
  return model;
}

void save_checkpoint(const QualityModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize(model);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

QualityModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return deserialize(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const NumericalError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace sqac::model
