#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kvmn/tensor.hpp"

namespace kvmn {

// How init_params() fills a tensor.
enum class InitRole : std::uint8_t {
  Weight,      // uniform(-s, s), s = 1/sqrt(fan-in), fan-in = last dimension
  Bias,        // zeros
  ForgetBias,  // ones
};

/// Named parameter tensors with stable addresses, iterated in name order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Shape dims, InitRole role = InitRole::Weight);

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  InitRole role(const std::string& name) const;

  std::vector<std::string> names() const;
  std::vector<Tensor*> tensors();
  std::size_t count() const noexcept { return tensors_.size(); }
  std::size_t total_size() const;

  void zero_grads();
  void drop_grads();
  /// Overwrites values; shapes and names must already match.
  void assign_values(const ParamStore& other);

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

 private:
  std::map<std::string, Tensor> tensors_;
  std::map<std::string, InitRole> roles_;
};

}  // namespace kvmn
