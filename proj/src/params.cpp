#include "mcgaze/params.hpp"

#include <cmath>
#include <stdexcept>

namespace mcgaze {

ad::Var ParamStore::add(const std::string& name, Tensor init, ParamGroup group) {
  if (entries_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
  auto var = ad::leaf(std::move(init), true);
  entries_.emplace(name, Entry{var, group});
  return var;
}

const ad::Var& ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second.var;
}

ParamGroup ParamStore::group(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second.group;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.var.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, e] : entries_) {
    auto* node = e.var.node();
    if (node->grad.size() == node->value.size())
      node->grad.fill(0.0);
    else
      node->grad = Tensor(node->value.shape());
  }
}

void ParamStore::assign(const std::string& name, const Tensor& value) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
  auto* node = it->second.var.node();
  if (node->value.shape() != value.shape()) {
    throw std::invalid_argument("shape mismatch for parameter " + name + ": expected " +
                                shape_str(node->value.shape()) + ", got " + shape_str(value.shape()));
  }
  node->value = value;
}

Tensor Initializer::normal(Shape shape, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = dist(rng_);
  return t;
}

Tensor Initializer::uniform(Shape shape, double bound) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = dist(rng_);
  return t;
}

Tensor Initializer::xavier(int fan_in, int fan_out) {
  return uniform({fan_in, fan_out}, std::sqrt(6.0 / (fan_in + fan_out)));
}

Tensor Initializer::kaiming_conv(int co, int ci, int k) {
  return normal({co, ci, k, k}, std::sqrt(2.0 / (ci * k * k)));
}

}  // namespace mcgaze
