#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "elfvc/autodiff.hpp"

namespace elfvc {

// Named collection of trainable parameters.  Insertion order is the
// serialization order, so construction must be deterministic.
class ParamRegistry {
 public:
  // Registers a fresh parameter; duplicate names are rejected.
  Var add(const std::string& name, Tensor init);

  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  std::vector<Var> vars() const;

  // Returns nullptr when absent.
  Var find(const std::string& name) const;

  int64_t total_numel() const;
  int64_t numel_with_prefix(const std::string& prefix) const;

 private:
  std::vector<std::pair<std::string, Var>> items_;
};

}  // namespace elfvc
