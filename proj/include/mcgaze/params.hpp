#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mcgaze/autograd.hpp"

namespace mcgaze {

/// Optimizer groups; the backbone trains at its own learning rate.
enum class ParamGroup { kBackbone, kHead };

/// Named learnable tensors keyed by module path ("stage0.spatial.wq", ...).
/// Modules keep Var handles that alias the stored leaves, so loading new
/// values in place is visible everywhere.
class ParamStore {
 public:
  ad::Var add(const std::string& name, Tensor init, ParamGroup group);

  const ad::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  ParamGroup group(const std::string& name) const;

  std::vector<std::string> names() const;
  std::size_t scalar_count() const;
  std::size_t size() const { return entries_.size(); }

  void zero_grad();
  /// Replaces the value of `name` in place; shapes must match.
  void assign(const std::string& name, const Tensor& value);

 private:
  struct Entry {
    ad::Var var;
    ParamGroup group;
  };
  std::map<std::string, Entry> entries_;
};

/// Deterministic initializers driven by one seeded engine.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(Shape shape, double stddev);
  Tensor uniform(Shape shape, double bound);
  /// Glorot-uniform for a [fan_in, fan_out] matrix.
  Tensor xavier(int fan_in, int fan_out);
  /// He-normal for a conv weight [co, ci, k, k].
  Tensor kaiming_conv(int co, int ci, int k);

 private:
  std::mt19937_64 rng_;
};

}  // namespace mcgaze
