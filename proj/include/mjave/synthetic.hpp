#pragma once

// Synthetic multimodal dataset: templated product descriptions whose image
// features carry per-(label, value) prototype vectors. A configurable
// fraction of instances contains an ambiguous surface word shared by two
// labels (only the image decides which), and half that fraction contains a
// distractor value word whose prototype is absent from the image and whose
// gold tag is O. With ambiguity 0 every value word maps to exactly one label
// and the text alone suffices.

#include <cstdint>
#include <vector>

#include "mjave/dataio.hpp"

namespace mjave {

struct SyntheticConfig {
  std::size_t n = 2000;
  std::uint64_t seed = 1;
  std::size_t num_labels = 8;
  double ambiguity = 0.3;
  std::size_t d_v = 32;
  std::size_t k = 9;
  std::size_t values_per_label = 6;
  double noise_std = 0.1;  // relative to the unit prototype norm
  std::size_t max_len = 16;
};

struct SyntheticDataset {
  Manifest manifest;
  std::vector<Instance> train;
  std::vector<Instance> valid;
  std::vector<Instance> test;
};

// Deterministic given the seed; byte-identical when re-run.
SyntheticDataset generate_synthetic(const SyntheticConfig& config);

// Convenience wrapper writing train/valid/test JSONL plus manifest.json
// into the directory.
void write_synthetic(const SyntheticDataset& dataset, const std::string& dir);

}  // namespace mjave
