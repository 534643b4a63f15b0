#pragma once

#include <filesystem>
#include <string>

#include "noduleclip/preprocess/preprocess.hpp"

namespace noduleclip::preprocess {

struct ViewCacheEntry {
  std::string patient_id;
  std::string nodule_id;
  ViewStack stack;
};

// Writes `<stem>.ncta` (tensor "views", f32, shape [9, 3, size, size]) and a
// `<stem>.json` sidecar with plane ids, ids and the preprocessing version.
void save_view_stack(const ViewCacheEntry& entry, const std::filesystem::path& stem);
ViewCacheEntry load_view_stack(const std::filesystem::path& stem);
bool view_stack_cached(const std::filesystem::path& stem);

// Filesystem-safe stem for a (patient, nodule) pair.
std::string cache_stem(const std::string& patient_id, const std::string& nodule_id);

}  // namespace noduleclip::preprocess
