#pragma once

#include <string>
#include <vector>

#include "aldmn/model.hpp"
#include "aldmn/training.hpp"

namespace aldmn {

// Everything needed to run a trained model: the configuration it was trained
// with, the vocabulary in index order, the label names, and the parameters.
struct LoadedModel {
  TrainConfig config;
  Vocabulary vocab;
  std::vector<std::string> labels;
  ModelParams model;
};

// Binary layout, all integers little-endian:
//   "ALDMN1"
//   u32 header length, JSON {config, vocab, labels}
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, u32 extents..., f32 values
// Values are stored at 32-bit precision; a loaded model reproduces the saved
// model's predictions at that precision.
void save_checkpoint(const std::string& path, const ModelParams& model,
                     const TrainConfig& config, const Vocabulary& vocab,
                     const std::vector<std::string>& labels);

LoadedModel load_checkpoint(const std::string& path);

}  // namespace aldmn
