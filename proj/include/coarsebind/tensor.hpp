#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "coarsebind/errors.hpp"
#include "coarsebind/rng.hpp"

namespace coarsebind {

// Dense row-major tensor of doubles. Shapes are small and known at call
// sites, so this stays deliberately minimal: storage plus a shape tag.
struct Tensor {
  std::vector<double> data;
  std::vector<std::size_t> shape;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(numel(shape), 0.0);
  }

  static std::size_t numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (const auto d : s) n *= d;
    return n;
  }

  std::size_t size() const { return data.size(); }
  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  void fill_normal(Rng& rng, double scale) {
    for (auto& v : data) v = scale * rng.normal();
  }
};

// Named parameter collection. Iteration order is the registration order,
// which fixes the Adam update order and the checkpoint layout.
class ParamStore {
 public:
  Tensor& add(const std::string& name, std::vector<std::size_t> shape) {
    if (index_.count(name)) throw InputError("duplicate parameter: " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, Tensor(std::move(shape))});
    return entries_.back().tensor;
  }

  Tensor& at(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw InputError("unknown parameter: " + name);
    return entries_[it->second].tensor;
  }
  const Tensor& at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw InputError("unknown parameter: " + name);
    return entries_[it->second].tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  struct Entry {
    std::string name;
    Tensor tensor;
  };

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  // Same names and shapes, all values zero. Used for gradients.
  ParamStore zeros_like() const {
    ParamStore g;
    for (const auto& e : entries_) g.add(e.name, e.tensor.shape);
    return g;
  }

  void zero_all() {
    for (auto& e : entries_) e.tensor.fill(0.0);
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Adam with bias correction. One instance owns the moment buffers for a
// whole ParamStore; posegen reuses the flat-vector overload for coordinates.
struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(ParamStore& params, const ParamStore& grads, double lr) {
    if (m_.empty()) {
      m_.assign(params.total_size(), 0.0);
      v_.assign(params.total_size(), 0.0);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t off = 0;
    auto git = grads.entries().begin();
    for (auto& e : params.entries()) {
      const Tensor& g = git->tensor;
      for (std::size_t i = 0; i < g.size(); ++i) {
        double& m = m_[off + i];
        double& v = v_[off + i];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g[i];
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g[i] * g[i];
        e.tensor[i] -= lr * (m / c1) / (std::sqrt(v / c2) + cfg_.epsilon);
      }
      off += g.size();
      ++git;
    }
  }

  void step(std::vector<double>& x, const std::vector<double>& grad, double lr) {
    if (m_.empty()) {
      m_.assign(x.size(), 0.0);
      v_.assign(x.size(), 0.0);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < x.size(); ++i) {
      double& m = m_[i];
      double& v = v_[i];
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad[i];
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      x[i] -= lr * (m / c1) / (std::sqrt(v / c2) + cfg_.epsilon);
    }
  }

  void reset() {
    m_.clear();
    v_.clear();
    t_ = 0;
  }

 private:
  AdamConfig cfg_{};
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace coarsebind
