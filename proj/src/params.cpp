#include "kvmn/params.hpp"

#include <algorithm>

#include "kvmn/error.hpp"

namespace kvmn {

Tensor& ParamStore::add(const std::string& name, Shape dims, InitRole role) {
  if (tensors_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  roles_[name] = role;
  return tensors_.emplace(name, Tensor(std::move(dims))).first->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

InitRole ParamStore::role(const std::string& name) const {
  auto it = roles_.find(name);
  if (it == roles_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, _] : tensors_) out.push_back(name);
  return out;
}

std::vector<Tensor*> ParamStore::tensors() {
  std::vector<Tensor*> out;
  out.reserve(tensors_.size());
  for (auto& [_, t] : tensors_) out.push_back(&t);
  return out;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [_, t] : tensors_) {
    t.ensure_grad();
    t.zero_grad();
  }
}

void ParamStore::drop_grads() {
  for (auto& [_, t] : tensors_) t.drop_grad();
}

void ParamStore::assign_values(const ParamStore& other) {
  if (other.tensors_.size() != tensors_.size()) throw ShapeError("parameter sets differ in size");
  for (auto& [name, t] : tensors_) {
    const Tensor& src = other.at(name);
    if (!src.same_shape(t)) {
      throw ShapeError("parameter '" + name + "' shape " + shape_string(src.dims()) + " != " + shape_string(t.dims()));
    }
    std::copy(src.data().begin(), src.data().end(), t.data().begin());
  }
}

}  // namespace kvmn
