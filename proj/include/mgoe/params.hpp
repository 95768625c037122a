#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mgoe/tensor.hpp"

namespace mgoe {

// One trainable tensor with its gradient slot.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Named trainable tensors in registration order. Iteration order is the
// registration order everywhere (updates, regularization, checkpoints), so
// runs are reproducible.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw ConfigError("parameter already registered: " + name);
    init.requires_grad = true;
    Parameter p;
    p.name = name;
    p.grad = Tensor(init.shape);
    p.value = std::move(init);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return params_[it->second];
  }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }

  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) std::fill(p.grad.v.begin(), p.grad.v.end(), 0.0);
  }

  double l1_norm() const {
    double s = 0.0;
    for (const auto& p : params_)
      for (double x : p.value.v) s += std::abs(x);
    return s;
  }

  double l2_norm_sq() const {
    double s = 0.0;
    for (const auto& p : params_)
      for (double x : p.value.v) s += x * x;
    return s;
  }

  // d/dθ of λ1*|θ|_1 + λ2*|θ|_2², accumulated into the grad slots.
  // sign(0) taken as 0.
  void add_regularization_grads(double lambda1, double lambda2) {
    if (lambda1 == 0.0 && lambda2 == 0.0) return;
    for (auto& p : params_)
      for (std::size_t i = 0; i < p.value.v.size(); ++i) {
        const double x = p.value.v[i];
        double g = 2.0 * lambda2 * x;
        if (lambda1 != 0.0 && x != 0.0) g += (x > 0.0 ? lambda1 : -lambda1);
        p.grad.v[i] += g;
      }
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// Adam optimizer state: bias-corrected first/second moments per parameter.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  void init(const ParameterStore& params) {
    step = 0;
    m.clear();
    v.clear();
    m.reserve(params.size());
    v.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m.emplace_back(params[i].value.shape);
      v.emplace_back(params[i].value.shape);
    }
  }
};

inline void adam_step(ParameterStore& params, AdamState& state) {
  if (state.m.size() != params.size()) throw ConfigError("adam state not initialized");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    if (m.shape != p.value.shape)
      throw ShapeError("adam moment shape mismatch for " + p.name);
    for (std::size_t j = 0; j < p.value.v.size(); ++j) {
      const double g = p.grad.v[j];
      m.v[j] = state.beta1 * m.v[j] + (1.0 - state.beta1) * g;
      v.v[j] = state.beta2 * v.v[j] + (1.0 - state.beta2) * g * g;
      const double mhat = m.v[j] / bc1;
      const double vhat = v.v[j] / bc2;
      p.value.v[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

// ---- checkpoint format ----
//
// Flat binary, little-endian:
//   magic "MGCKPT\0\0", u32 version, u64 tensor count,
//   index: per tensor { u32 name_len, name, u32 ndim, i32 dims..., u64 offset },
//   data:  doubles, offsets counted in doubles from the data section start.

namespace detail {

constexpr char kCkptMagic[8] = {'M', 'G', 'C', 'K', 'P', 'T', 0, 0};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& x) {
  os.write(reinterpret_cast<const char*>(&x), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T x{};
  is.read(reinterpret_cast<char*>(&x), sizeof(T));
  if (!is) throw IoError("checkpoint: unexpected end of file");
  return x;
}

}  // namespace detail

inline void save_checkpoint(const ParameterStore& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path);
  os.write(detail::kCkptMagic, 8);
  detail::write_pod(os, detail::kCkptVersion);
  detail::write_pod(os, static_cast<std::uint64_t>(params.size()));
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    detail::write_pod(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_pod(os, static_cast<std::uint32_t>(p.value.shape.size()));
    for (int d : p.value.shape) detail::write_pod(os, static_cast<std::int32_t>(d));
    detail::write_pod(os, offset);
    offset += p.value.size();
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& v = params[i].value.v;
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

inline std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
    throw IoError("not a checkpoint file: " + path);
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != detail::kCkptVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::read_pod<std::uint64_t>(is);
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries(count);
  for (auto& e : entries) {
    const auto name_len = detail::read_pod<std::uint32_t>(is);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    const auto ndim = detail::read_pod<std::uint32_t>(is);
    e.shape.resize(ndim);
    for (auto& d : e.shape) d = detail::read_pod<std::int32_t>(is);
    e.offset = detail::read_pod<std::uint64_t>(is);
    if (!is) throw IoError("checkpoint index truncated: " + path);
  }
  const std::streampos data_start = is.tellg();
  std::map<std::string, Tensor> out;
  for (const auto& e : entries) {
    Tensor t(e.shape);
    is.seekg(data_start + static_cast<std::streamoff>(e.offset * sizeof(double)));
    is.read(reinterpret_cast<char*>(t.v.data()),
            static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    if (!is) throw IoError("checkpoint data truncated: " + path);
    out.emplace(e.name, std::move(t));
  }
  return out;
}

// Loads tensor values into an already-built store; every registered
// parameter must be present with a matching shape.
inline void load_checkpoint(ParameterStore& params, const std::string& path) {
  auto tensors = read_checkpoint(path);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    auto it = tensors.find(p.name);
    if (it == tensors.end())
      throw IoError("checkpoint is missing tensor: " + p.name);
    if (it->second.shape != p.value.shape)
      throw IoError("checkpoint shape mismatch for " + p.name + ": expected " +
                    shape_str(p.value.shape) + ", got " + shape_str(it->second.shape));
    p.value.v = std::move(it->second.v);
  }
}

}  // namespace mgoe
