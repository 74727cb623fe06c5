#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "pff/autodiff.hpp"

namespace pff {

/// Learnable arrays addressed by stable path names ("stage0.f1.p1.alpha.0.weight").
/// Iteration order is lexicographic by name, which fixes the checkpoint layout.
class ModelParams {
 public:
  /// Registers a new parameter; throws std::invalid_argument on a duplicate name.
  ad::Var& add(const std::string& name, ad::Mat init);
  const ad::Var& at(const std::string& name) const;
  ad::Var& at(const std::string& name);
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }

  std::size_t size() const { return vars_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

  /// Deep copy of the values (fresh leaves, no gradients).
  ModelParams clone() const;

  auto begin() const { return vars_.begin(); }
  auto end() const { return vars_.end(); }
  auto begin() { return vars_.begin(); }
  auto end() { return vars_.end(); }

 private:
  std::map<std::string, ad::Var> vars_;
};

/// Glorot-uniform fill: U(-sqrt(6/(fan_in+fan_out)), +sqrt(...)), seeded per
/// parameter name so the draw does not depend on registration order.
ad::Mat glorot_uniform(ad::Index fan_in, ad::Index fan_out, std::uint64_t seed,
                       const std::string& name);

/// Checkpoint container: magic "PFFCKPT1", then per parameter
///   u32 name length | name bytes | u32 rank | rank x u64 dims | f64 payload,
/// all little-endian, payload row-major.
void write_checkpoint(std::ostream& out, const ModelParams& params);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams read_checkpoint(std::istream& in);
ModelParams load_checkpoint(const std::filesystem::path& path);

/// Copies values from `source` into `target`; every name and shape must match.
void assign_values(ModelParams& target, const ModelParams& source);

}  // namespace pff
