#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vsync/random.hpp"
#include "vsync/tensor.hpp"

namespace vsync {

inline constexpr char kFileMagic[5] = {'V', 'S', 'Y', 'N', 'C'};
inline constexpr std::uint32_t kParamFormatVersion = 1;

/// Named trainable tensors in insertion order.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint32_t format_version() const { return kParamFormatVersion; }

  Tensor& add(const std::string& name, Tensor t) {
    if (contains(name)) throw std::invalid_argument("ParamSet: duplicate parameter name '" + name + "'");
    t.set_requires_grad(true);
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
  }

  const Tensor& at(const std::string& name) const {
    for (const auto& [n, t] : entries_) {
      if (n == name) return t;
    }
    throw std::out_of_range("ParamSet: no parameter named '" + name + "'");
  }
  Tensor& at(const std::string& name) { return const_cast<Tensor&>(std::as_const(*this).at(name)); }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  /// Copy values from another set with identical names and shapes.
  void assign_values(const ParamSet& other) {
    if (other.size() != size()) throw std::invalid_argument("ParamSet: parameter count mismatch");
    for (auto& [name, t] : entries_) {
      const Tensor& src = other.at(name);
      if (src.shape() != t.shape()) {
        throw std::invalid_argument("ParamSet: shape mismatch for '" + name + "': " + shape_string(t.shape()) +
                                    " vs " + shape_string(src.shape()));
      }
      std::copy(src.values().begin(), src.values().end(), t.mutable_values().begin());
    }
  }

  bool values_equal(const ParamSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& [na, ta] = entries_[i];
      const auto& [nb, tb] = other.entries_[i];
      if (na != nb || ta.shape() != tb.shape()) return false;
      if (!std::equal(ta.values().begin(), ta.values().end(), tb.values().begin(), [](double x, double y) {
            return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
          })) {
        return false;
      }
    }
    return true;
  }

  void write(std::ostream& out) const;
  static ParamSet read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static ParamSet load(const std::filesystem::path& path);

 private:
  std::uint64_t seed_ = 0;
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Glorot-uniform values in +-sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return Tensor(std::move(shape), std::move(v), true);
}

namespace io {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t get_le(std::istream& in, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw std::runtime_error("truncated VSYNC file");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}
inline std::uint32_t get_u32(std::istream& in) { return static_cast<std::uint32_t>(get_le(in, 4)); }
inline std::uint64_t get_u64(std::istream& in) { return get_le(in, 8); }
inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

inline void write_header(std::ostream& out, std::uint32_t version, std::uint64_t seed) {
  out.write(kFileMagic, sizeof(kFileMagic));
  put_u32(out, version);
  put_u64(out, seed);
}

struct Header {
  std::uint32_t version;
  std::uint64_t seed;
};

inline Header read_header(std::istream& in) {
  char magic[sizeof(kFileMagic)] = {};
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(std::begin(magic), std::end(magic), std::begin(kFileMagic))) {
    throw std::runtime_error("not a VSYNC file (bad magic)");
  }
  Header h{};
  h.version = get_u32(in);
  h.seed = get_u64(in);
  return h;
}

inline void write_record(std::ostream& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_u64(out, d);
  for (double v : t.values()) put_f64(out, v);
}

inline std::pair<std::string, Tensor> read_record(std::istream& in) {
  const auto len = get_u32(in);
  if (len > (1u << 16)) throw std::runtime_error("VSYNC record name too long");
  std::string name(len, '\0');
  in.read(name.data(), len);
  if (!in) throw std::runtime_error("truncated VSYNC file");
  const auto rank = get_u32(in);
  if (rank == 0 || rank > 8) throw std::runtime_error("VSYNC record '" + name + "' has invalid rank");
  Shape shape(rank);
  for (auto& d : shape) d = get_u64(in);
  const auto n = shape_size(shape);
  if (n > (std::size_t{1} << 32)) throw std::runtime_error("VSYNC record '" + name + "' is implausibly large");
  std::vector<double> values(n);
  for (auto& v : values) v = get_f64(in);
  return {std::move(name), Tensor(std::move(shape), std::move(values))};
}

}  // namespace io

inline void ParamSet::write(std::ostream& out) const {
  io::write_header(out, kParamFormatVersion, seed_);
  io::put_u32(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, t] : entries_) io::write_record(out, name, t);
}

inline ParamSet ParamSet::read(std::istream& in) {
  const auto header = io::read_header(in);
  if (header.version != kParamFormatVersion) {
    throw std::runtime_error("unsupported ParamSet format version " + std::to_string(header.version));
  }
  ParamSet ps(header.seed);
  const auto count = io::get_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = io::read_record(in);
    ps.add(name, std::move(t));
  }
  return ps;
}

inline void ParamSet::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write(out);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline ParamSet ParamSet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read(in);
}

}  // namespace vsync
