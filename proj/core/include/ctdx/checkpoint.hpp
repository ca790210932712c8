#pragma once

#include <filesystem>

#include "ctdx/classifier.hpp"
#include "ctdx/segmenter.hpp"

namespace ctdx {

// Self-describing binary checkpoints: model configuration plus every named
// parameter tensor, raw float32. Save then load reproduces the parameters
// bit for bit.
void save_checkpoint(const ClassifierModel& model, const std::filesystem::path& path);
void save_checkpoint(const SegmenterModel& model, const std::filesystem::path& path);
ClassifierModel load_classifier_checkpoint(const std::filesystem::path& path);
SegmenterModel load_segmenter_checkpoint(const std::filesystem::path& path);

}  // namespace ctdx
