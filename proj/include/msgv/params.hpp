#pragma once

#include <string>
#include <vector>

#include "msgv/tensor.hpp"

namespace msgv {

// A trainable leaf with a stable name used for checkpoints, optimizer state
// and diagnostics. Modules append their parameters in a fixed order so that
// serialization is deterministic.
struct NamedParam {
  std::string name;
  Tensor tensor;
};

inline void add_param(std::vector<NamedParam>& out, std::string name, const Tensor& t) {
  out.push_back({std::move(name), t});
}

}  // namespace msgv
