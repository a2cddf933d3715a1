#pragma once

#include <filesystem>
#include <iosfwd>

#include "esma/mlp.hpp"

namespace esma {

// Text layout, version 1:
//   esma-mlp 1
//   layers <L>
//   layer <out> <in> <relu|identity>
//   <out*in weights, row-major>
//   <out biases>
//   ... (repeated per layer)
// Values use shortest round-trip decimals, so save -> load is bit-exact.
void save_model(std::ostream& os, const MlpClassifier& model);
MlpClassifier load_model(std::istream& is);

void save_model(const std::filesystem::path& path, const MlpClassifier& model);
MlpClassifier load_model(const std::filesystem::path& path);

}  // namespace esma
