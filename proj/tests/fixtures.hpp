#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "npcl/config.hpp"

namespace fixtures {

// A corpus and model small enough for a full pipeline pass in seconds.
inline const char* kTinyConfig = R"({
  "name": "tiny",
  "seed": 5,
  "corpus": {"num_unlabeled_slides": 2, "num_train_slides": 1, "num_test_slides": 1, "slide_size": 128,
             "patch_size": 16, "num_classes": 3, "group_budget": 16, "nearby": [0, 1], "regions_per_slide": 4},
  "augment": {"target_size": 16, "eval": {"resize_size": 18, "crop_size": 16}},
  "model": {"encoder": {"channels": [4], "feature_dim": 8}, "projection": {"hidden_dim": 8, "output_dim": 8}},
  "trainer": {"epochs": 2, "warmup_epochs": 1, "view_budget": 8, "nearby": 1, "tau": 0.2, "checkpoint_every": 1},
  "lineval": {"fractions": [0.5, 1.0], "epochs": 2, "folds": 2, "batch_size": 16, "small_batch_size": 8},
  "ablation": {"nearby": [0, 1], "variants": ["dcl"], "fractions": [1.0], "seeds": [1]}
})";

inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("npcl-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace fixtures
