#include "elfvc/params.hpp"

#include <stdexcept>

namespace elfvc {

Var ParamRegistry::add(const std::string& name, Tensor init) {
  if (find(name))
    throw std::invalid_argument("ParamRegistry: duplicate parameter '" + name + "'");
  Var p = param(std::move(init));
  items_.emplace_back(name, p);
  return p;
}

std::vector<Var> ParamRegistry::vars() const {
  std::vector<Var> out;
  out.reserve(items_.size());
  for (const auto& [name, v] : items_) out.push_back(v);
  return out;
}

Var ParamRegistry::find(const std::string& name) const {
  for (const auto& [n, v] : items_)
    if (n == name) return v;
  return nullptr;
}

int64_t ParamRegistry::total_numel() const {
  int64_t n = 0;
  for (const auto& [name, v] : items_) n += v->value.numel();
  return n;
}

int64_t ParamRegistry::numel_with_prefix(const std::string& prefix) const {
  int64_t n = 0;
  for (const auto& [name, v] : items_)
    if (name.rfind(prefix, 0) == 0) n += v->value.numel();
  return n;
}

}  // namespace elfvc
