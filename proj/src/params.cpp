#include "pff/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "pff/rng.hpp"

namespace pff {

ad::Var& ModelParams::add(const std::string& name, ad::Mat init) {
  if (vars_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  return vars_.emplace(name, ad::parameter(std::move(init))).first->second;
}

const ad::Var& ModelParams::at(const std::string& name) const {
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

ad::Var& ModelParams::at(const std::string& name) {
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : vars_) n += static_cast<std::size_t>(v.value().size());
  return n;
}

void ModelParams::zero_grad() {
  for (auto& [name, v] : vars_) v.node().grad.setZero(v.rows(), v.cols());
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  for (const auto& [name, v] : vars_) out.add(name, v.value());
  return out;
}

ad::Mat glorot_uniform(ad::Index fan_in, ad::Index fan_out, std::uint64_t seed,
                       const std::string& name) {
  CounterRng rng(seed, fnv1a64(name));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  ad::Mat m(fan_in, fan_out);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
  return m;
}

namespace {

constexpr char kMagic[8] = {'P', 'F', 'F', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put_le(std::ostream& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits;
  std::memcpy(&bits, &v, sizeof(T));
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(T));
}

template <typename T>
bool get_le(std::istream& in, T& v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) return false;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(bytes[i]) << (8 * i);
  std::memcpy(&v, &bits, sizeof(T));
  return true;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ModelParams& params) {
  out.write(kMagic, sizeof(kMagic));
  for (const auto& [name, var] : params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, 2);
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(var.rows()));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(var.cols()));
    const ad::Mat& m = var.value();
    for (ad::Index i = 0; i < m.size(); ++i) put_le<double>(out, m.data()[i]);
  }
  if (!out) throw std::runtime_error("checkpoint write failed");
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  write_checkpoint(out, params);
}

ModelParams read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw ParseError("checkpoint: bad magic header", 0);
  }
  ModelParams params;
  for (;;) {
    std::uint32_t name_len = 0;
    if (!get_le(in, name_len)) break;  // clean end of file
    if (name_len == 0 || name_len > 4096) throw ParseError("checkpoint: bad name length", 0);
    std::string name(name_len, '\0');
    std::uint32_t rank = 0;
    if (!in.read(name.data(), name_len) || !get_le(in, rank) || rank > 2) {
      throw ParseError("checkpoint: truncated record header", 0);
    }
    std::uint64_t dims[2] = {1, 1};
    // rank 1 is read as a row vector, rank 0 as 1x1.
    for (std::uint32_t d = 0; d < rank; ++d) {
      if (!get_le(in, dims[rank == 1 ? 1 : d])) throw ParseError("checkpoint: truncated dims", 0);
    }
    if (dims[0] * dims[1] > (std::uint64_t{1} << 32)) throw ParseError("checkpoint: tensor too large", 0);
    ad::Mat m(static_cast<ad::Index>(dims[0]), static_cast<ad::Index>(dims[1]));
    for (ad::Index i = 0; i < m.size(); ++i) {
      if (!get_le(in, m.data()[i])) throw ParseError("checkpoint: truncated payload for " + name, 0);
    }
    params.add(name, std::move(m));
  }
  return params;
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

void assign_values(ModelParams& target, const ModelParams& source) {
  if (target.size() != source.size()) {
    throw ConfigError("parameter count mismatch: expected " + std::to_string(target.size()) +
                      ", got " + std::to_string(source.size()));
  }
  for (auto& [name, var] : target) {
    if (!source.contains(name)) throw ConfigError("checkpoint lacks parameter " + name);
    const ad::Mat& src = source.at(name).value();
    if (src.rows() != var.rows() || src.cols() != var.cols()) {
      throw ConfigError("shape mismatch for parameter " + name);
    }
    var.mutable_value() = src;
  }
}

}  // namespace pff
