#pragma once

// Checkpoint files: a versioned little-endian binary blob plus a text
// manifest (<path>.manifest) listing tensor shapes and the CRC-32 of the blob.
//
//   magic "BCMLABCK" | u32 version | i32 dim, width, depth, n_freqs, emb_width
//   | f64 freq_min, freq_max | u32 len, activation bytes | f64 sigma_data
//   | u64 n_params | f64 params[n_params]   (declaration order)

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "bcm_lab/network.hpp"

namespace bcm {

inline constexpr std::array<char, 8> kCheckpointMagic{'B', 'C', 'M', 'L', 'A', 'B', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class ChecksumError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v), 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const char* p, std::size_t n) { bytes.insert(bytes.end(), p, p + n); }

  std::vector<char> bytes;

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<char>& b) : bytes_(b) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(get(4))); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes via a temporary sibling and renames it into place.
inline void write_file_atomic(const std::filesystem::path& p, const std::string& data) {
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, p);
}

}  // namespace detail

inline std::string crc32_hex(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

inline std::string crc32_hex(const std::string& s) { return crc32_hex(s.data(), s.size()); }

inline std::string file_crc32(const std::filesystem::path& p) {
  const auto bytes = detail::read_file(p);
  return crc32_hex(bytes.data(), bytes.size());
}

inline std::vector<char> encode_checkpoint(const ModelParams& p) {
  if (p.values.size() != param_count(p.arch)) throw std::invalid_argument("checkpoint: parameter count mismatch");
  detail::ByteWriter w;
  w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  w.i32(p.arch.dim);
  w.i32(p.arch.width);
  w.i32(p.arch.depth);
  w.i32(p.arch.n_freqs);
  w.i32(p.arch.emb_width);
  w.f64(p.arch.freq_min);
  w.f64(p.arch.freq_max);
  w.u32(static_cast<std::uint32_t>(p.arch.activation.size()));
  w.raw(p.arch.activation.data(), p.arch.activation.size());
  w.f64(p.sigma_data);
  w.u64(p.values.size());
  for (double v : p.values) w.f64(v);
  return std::move(w.bytes);
}

inline ModelParams decode_checkpoint(const std::vector<char>& bytes) {
  detail::ByteReader r(bytes);
  if (r.str(kCheckpointMagic.size()) != std::string(kCheckpointMagic.data(), kCheckpointMagic.size()))
    throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  ModelParams p;
  p.arch.dim = r.i32();
  p.arch.width = r.i32();
  p.arch.depth = r.i32();
  p.arch.n_freqs = r.i32();
  p.arch.emb_width = r.i32();
  p.arch.freq_min = r.f64();
  p.arch.freq_max = r.f64();
  p.arch.activation = r.str(r.u32());
  validate(p.arch);
  p.sigma_data = r.f64();
  const std::uint64_t n = r.u64();
  if (n != param_count(p.arch)) throw std::runtime_error("checkpoint: parameter count does not match arch");
  p.values.resize(n);
  for (auto& v : p.values) v = r.f64();
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return p;
}

inline std::filesystem::path manifest_path(const std::filesystem::path& ckpt) {
  return ckpt.string() + ".manifest";
}

inline std::string checkpoint_manifest(const ModelParams& p, const std::string& crc) {
  std::ostringstream os;
  os.precision(17);
  os << "format=bcm_lab-checkpoint\n"
     << "version=" << kCheckpointVersion << '\n'
     << "dim=" << p.arch.dim << "\nwidth=" << p.arch.width << "\ndepth=" << p.arch.depth
     << "\nn_freqs=" << p.arch.n_freqs << "\nemb_width=" << p.arch.emb_width
     << "\nfreq_min=" << p.arch.freq_min << "\nfreq_max=" << p.arch.freq_max
     << "\nactivation=" << p.arch.activation << "\nsigma_data=" << p.sigma_data << '\n';
  const auto shapes = layer_shapes(p.arch);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    os << "tensor=layer" << l << ".weight " << shapes[l].out << 'x' << shapes[l].in << '\n';
    os << "tensor=layer" << l << ".bias " << shapes[l].out << '\n';
  }
  os << "param_count=" << p.values.size() << '\n' << "crc32=" << crc << '\n';
  return os.str();
}

/// Writes the blob and its manifest; returns the blob's CRC-32 (hex).
inline std::string save_checkpoint(const std::filesystem::path& path, const ModelParams& p) {
  const auto bytes = encode_checkpoint(p);
  const std::string crc = crc32_hex(bytes.data(), bytes.size());
  detail::write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
  detail::write_file_atomic(manifest_path(path), checkpoint_manifest(p, crc));
  return crc;
}

inline std::map<std::string, std::string> read_kv_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

struct LoadedCheckpoint {
  ModelParams params;
  std::string crc32;
};

/// Loads a checkpoint after checking it against the CRC-32 in its manifest.
inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const std::string crc = crc32_hex(bytes.data(), bytes.size());
  const auto kv = read_kv_file(manifest_path(path));
  const auto it = kv.find("crc32");
  if (it == kv.end()) throw ChecksumError("checkpoint manifest has no crc32 entry");
  if (it->second != crc)
    throw ChecksumError("checkpoint checksum mismatch: manifest " + it->second + ", file " + crc);
  return {decode_checkpoint(bytes), crc};
}

}  // namespace bcm
