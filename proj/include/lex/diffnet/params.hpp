#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "lex/diffnet/autograd.hpp"

namespace lex::diffnet {

/// Named trainable tensors plus per-parameter Adam moments.
/// Copying deep-copies values; the copy is detached from any recorded graph.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var<T> var;
    Tensor<T> m1;  // first moment
    Tensor<T> m2;  // second moment
  };

  ParamStore() = default;
  ParamStore(const ParamStore& o) : step_(o.step_) {
    for (const auto& e : o.entries_) {
      Var<T> v(e.var.value(), true);
      if (!e.var.grad().empty()) v.grad() = e.var.grad();
      entries_.push_back({e.name, v, e.m1, e.m2});
    }
  }
  ParamStore& operator=(const ParamStore& o) {
    if (this != &o) {
      ParamStore tmp(o);
      *this = std::move(tmp);
    }
    return *this;
  }
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Var<T>& add(std::string name, Tensor<T> value) {
    for (const auto& e : entries_)
      if (e.name == name) throw ContractError("duplicate parameter name " + name);
    Tensor<T> zeros(value.shape(), T(0));
    entries_.push_back({std::move(name), Var<T>(std::move(value), true), zeros, zeros});
    return entries_.back().var;
  }

  const Var<T>& get(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.var;
    throw ContractError("unknown parameter " + name);
  }
  Var<T>& get(const std::string& name) {
    return const_cast<Var<T>&>(static_cast<const ParamStore&>(*this).get(name));
  }
  bool contains(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return true;
    return false;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  /// Zero-filled gradients for every parameter, reachable or not.
  void zero_grad() {
    for (auto& e : entries_) e.var.grad() = Tensor<T>(e.var.shape(), T(0));
  }
  /// Drops gradients entirely; adam_step then refuses to run until the next backward.
  void clear_grad() {
    for (auto& e : entries_) e.var.grad() = Tensor<T>();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.var.size();
    return n;
  }

  /// FNV-1a over names and raw value bytes.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* p, std::size_t n) {
      auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& e : entries_) {
      mix(e.name.data(), e.name.size());
      mix(e.var.value().data(), e.var.size() * sizeof(T));
    }
    return h;
  }

 private:
  std::vector<Entry> entries_;
  std::uint64_t step_ = 0;
};

struct AdamOptions {
  double lr = 1e-4;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update. Weight decay is added to the gradient (L2, coupled).
template <typename T>
void adam_step(ParamStore<T>& params, const AdamOptions& opt) {
  for (const auto& e : params.entries())
    if (e.var.grad().empty()) throw ContractError("adam_step: parameter " + e.name + " has no gradient");
  params.set_step(params.step() + 1);
  const double t = static_cast<double>(params.step());
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (auto& e : params.entries()) {
    auto& p = e.var.mutable_value();
    const auto& g = e.var.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      double gi = static_cast<double>(g[i]) + opt.weight_decay * static_cast<double>(p[i]);
      double m = opt.beta1 * e.m1[i] + (1.0 - opt.beta1) * gi;
      double v = opt.beta2 * e.m2[i] + (1.0 - opt.beta2) * gi * gi;
      e.m1[i] = static_cast<T>(m);
      e.m2[i] = static_cast<T>(v);
      double update = opt.lr * (m / c1) / (std::sqrt(v / c2) + opt.eps);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
    }
  }
}

}  // namespace lex::diffnet
