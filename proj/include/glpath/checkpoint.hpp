// Binary checkpoint format.
//
//   "GLPC"                       magic
//   u32 version                  currently 1
//   u32 n, n bytes               UTF-8 metadata, one key=value per line
//   u32 count                    number of tensors
//   per tensor:
//     u32 n, n bytes             name
//     u32 rank, rank x u32       dims
//     u32 dtype                  0 = float32
//     prod(dims) x f32           values
//
// All integers and floats are little-endian.
#ifndef GLPATH_CHECKPOINT_HPP
#define GLPATH_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "glpath/data.hpp"
#include "glpath/error.hpp"
#include "glpath/model.hpp"

namespace glpath {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'G', 'L', 'P', 'C'};
inline constexpr std::uint32_t kDtypeFloat32 = 0;

struct TrainingMetadata {
  std::uint64_t seed = 0;
  /// Cross-validation fold, or -1 for a model trained on a single split.
  std::int64_t fold = -1;
  std::uint64_t epochs_run = 0;
  double best_val_loss = 0;
  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ArchitectureConfig architecture;
  ModelParams<float> params;
  NormalizationStats norm;
  bool assume_bgr = false;
  std::vector<std::string> classes{kClassNames.begin(), kClassNames.end()};
  TrainingMetadata training;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointErrorKind::Truncated,
                            std::string("checkpoint truncated while reading ") + what);
    }
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32(const char* what) {
    const auto b = take(4, what);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    const auto b = take(n, what);
    return std::string(b.begin(), b.end());
  }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

template <typename Int>
std::string join_numbers(const std::vector<Int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

inline std::string join_doubles(std::span<const double> v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

inline std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto end = s.find(sep, start);
    out.push_back(s.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

[[noreturn]] inline void metadata_error(const std::string& what) {
  throw CheckpointError(CheckpointErrorKind::Metadata, "checkpoint metadata: " + what);
}

inline std::uint64_t meta_uint(const std::string& key, std::string_view v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) metadata_error(key + " is not an integer");
  return out;
}

inline std::int64_t meta_int(const std::string& key, std::string_view v) {
  std::int64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) metadata_error(key + " is not an integer");
  return out;
}

inline double meta_double(const std::string& key, std::string_view v) {
  const auto d = parse_double(v);
  if (!d) metadata_error(key + " is not a number");
  return *d;
}

inline bool meta_bool(const std::string& key, std::string_view v) {
  if (v == "1") return true;
  if (v == "0") return false;
  metadata_error(key + " must be 0 or 1");
}

inline std::array<double, 3> meta_triple(const std::string& key, std::string_view v) {
  const auto parts = split_on(v, ',');
  if (parts.size() != 3) metadata_error(key + " needs 3 values");
  return {meta_double(key, parts[0]), meta_double(key, parts[1]), meta_double(key, parts[2])};
}

inline std::string encode_metadata(const Checkpoint& c) {
  const auto& a = c.architecture;
  std::string m;
  auto line = [&](const char* key, const std::string& value) { m += std::string(key) + "=" + value + "\n"; };
  line("input_size", std::to_string(a.input_size));
  line("input_channels", std::to_string(a.input_channels));
  line("base_channels", std::to_string(a.base_channels));
  line("blocks_per_stage", join_numbers(a.blocks_per_stage));
  line("num_classes", std::to_string(a.num_classes));
  line("include_stem_maxpool", a.include_stem_maxpool ? "1" : "0");
  std::string classes;
  for (std::size_t i = 0; i < c.classes.size(); ++i) classes += (i ? "," : "") + c.classes[i];
  line("classes", classes);
  line("norm_mean", join_doubles(c.norm.mean));
  line("norm_std", join_doubles(c.norm.std));
  line("assume_bgr", c.assume_bgr ? "1" : "0");
  line("seed", std::to_string(c.training.seed));
  line("fold", std::to_string(c.training.fold));
  line("epochs_run", std::to_string(c.training.epochs_run));
  line("best_val_loss", format_double(c.training.best_val_loss));
  return m;
}

inline void decode_metadata(std::string_view text, Checkpoint& c) {
  std::map<std::string, std::string> kv;
  for (auto line : split_lines(text)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) metadata_error("line without '=': " + std::string(line));
    std::string key(line.substr(0, eq));
    if (!kv.emplace(key, std::string(line.substr(eq + 1))).second) metadata_error("duplicate key " + key);
  }
  auto take = [&](const char* key) {
    const auto it = kv.find(key);
    if (it == kv.end()) metadata_error(std::string("missing key ") + key);
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto& a = c.architecture;
  a.input_size = meta_uint("input_size", take("input_size"));
  a.input_channels = meta_uint("input_channels", take("input_channels"));
  a.base_channels = meta_uint("base_channels", take("base_channels"));
  a.blocks_per_stage.clear();
  {
    const std::string stages = take("blocks_per_stage");
    for (auto part : split_on(stages, ',')) a.blocks_per_stage.push_back(meta_uint("blocks_per_stage", part));
  }
  a.num_classes = meta_uint("num_classes", take("num_classes"));
  a.include_stem_maxpool = meta_bool("include_stem_maxpool", take("include_stem_maxpool"));
  c.classes.clear();
  {
    const std::string classes = take("classes");
    for (auto part : split_on(classes, ',')) c.classes.emplace_back(part);
  }
  if (c.classes.size() != a.num_classes) metadata_error("class list does not match num_classes");
  c.norm.mean = meta_triple("norm_mean", take("norm_mean"));
  c.norm.std = meta_triple("norm_std", take("norm_std"));
  c.assume_bgr = meta_bool("assume_bgr", take("assume_bgr"));
  c.training.seed = meta_uint("seed", take("seed"));
  c.training.fold = meta_int("fold", take("fold"));
  c.training.epochs_run = meta_uint("epochs_run", take("epochs_run"));
  c.training.best_val_loss = meta_double("best_val_loss", take("best_val_loss"));
  if (!kv.empty()) metadata_error("unknown key " + kv.begin()->first);
  try {
    a.validate();
  } catch (const ConfigError& e) {
    metadata_error(e.what());
  }
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.u32(c.version);
  w.str(detail::encode_metadata(c));
  w.u32(static_cast<std::uint32_t>(c.params.size()));
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    const auto& t = c.params.tensor(i);
    w.str(c.params.name(i));
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.u32(kDtypeFloat32);
    for (float v : t.values()) w.f32(v);
  }
  return std::move(w.bytes());
}

/// Decodes and validates a checkpoint. When `expected` is given, the stored
/// architecture must match it.
inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes,
                                    const ArchitectureConfig* expected = nullptr) {
  detail::ByteReader r(bytes);
  const auto magic = r.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic)) {
    throw CheckpointError(CheckpointErrorKind::BadMagic, "not a checkpoint file (bad magic)");
  }
  Checkpoint c;
  c.version = r.u32("version");
  if (c.version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorKind::Version,
                          "unsupported checkpoint version " + std::to_string(c.version) +
                              " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  detail::decode_metadata(r.str("metadata"), c);
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str("tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank < 1 || rank > 4) {
      throw CheckpointError(CheckpointErrorKind::Schema, "tensor '" + name + "' has rank " + std::to_string(rank));
    }
    typename Tensor<float>::Shape shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.u32("tensor dims"));
      if (shape.back() == 0) {
        throw CheckpointError(CheckpointErrorKind::Schema, "tensor '" + name + "' has a zero dimension");
      }
      n *= shape.back();
    }
    const std::uint32_t dtype = r.u32("tensor dtype");
    if (dtype != kDtypeFloat32) {
      throw CheckpointError(CheckpointErrorKind::Schema,
                            "tensor '" + name + "' has unknown dtype " + std::to_string(dtype));
    }
    const auto raw = r.take(n * 4, "tensor values");
    std::vector<float> values(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::uint32_t bits = std::uint32_t(raw[4 * k]) | std::uint32_t(raw[4 * k + 1]) << 8 |
                                 std::uint32_t(raw[4 * k + 2]) << 16 | std::uint32_t(raw[4 * k + 3]) << 24;
      values[k] = std::bit_cast<float>(bits);
    }
    if (c.params.contains(name)) {
      throw CheckpointError(CheckpointErrorKind::Schema, "duplicate tensor '" + name + "'");
    }
    c.params.add(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  if (!r.at_end()) throw CheckpointError(CheckpointErrorKind::Schema, "trailing bytes after last tensor");
  try {
    validate_params(c.architecture, c.params);
  } catch (const Error& e) {
    throw CheckpointError(CheckpointErrorKind::Schema, std::string("checkpoint schema mismatch: ") + e.what());
  }
  if (expected && !(*expected == c.architecture)) {
    throw CheckpointError(CheckpointErrorKind::Schema,
                          "checkpoint schema mismatch: architecture differs from the expected configuration");
  }
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrorKind::Io, "cannot write checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ArchitectureConfig* expected = nullptr) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_binary_file(path);
  } catch (const DataError& e) {
    throw CheckpointError(CheckpointErrorKind::Io, e.what());
  }
  try {
    return decode_checkpoint(bytes, expected);
  } catch (const CheckpointError& e) {
    throw CheckpointError(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace glpath

#endif  // GLPATH_CHECKPOINT_HPP
