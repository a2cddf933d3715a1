#pragma once

#include <filesystem>
#include <iosfwd>

#include "esma/attacks.hpp"
#include "esma/dataset.hpp"

namespace esma {

// Dataset CSV: header "x0,...,x{d-1},label", one sample per row. The class
// count is one more than the largest label unless `num_classes` is larger.
void write_dataset_csv(std::ostream& os, const LabeledDataset& data);
LabeledDataset read_dataset_csv(std::istream& is, std::size_t num_classes = 0);
void write_dataset_csv(const std::filesystem::path& path, const LabeledDataset& data);
LabeledDataset read_dataset_csv(const std::filesystem::path& path, std::size_t num_classes = 0);

// Attack CSV: header "sample_id,source_class,target_class,final_objective,
// clean_0..clean_{d-1},adv_0..adv_{d-1}". Objective traces are not stored.
void write_attack_csv(std::ostream& os, const AttackResult& result);
AttackResult read_attack_csv(std::istream& is);
void write_attack_csv(const std::filesystem::path& path, const AttackResult& result);
AttackResult read_attack_csv(const std::filesystem::path& path);

}  // namespace esma
