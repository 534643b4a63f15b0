#include "noduleclip/preprocess/view_cache.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "noduleclip/common/error.hpp"
#include "noduleclip/common/tensor_archive.hpp"

namespace noduleclip::preprocess {
namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return stem.string() + suffix;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.';
    out.push_back(ok ? c : '_');
  }
  return out;
}

}  // namespace

std::string cache_stem(const std::string& patient_id, const std::string& nodule_id) {
  return sanitize(patient_id) + "__" + sanitize(nodule_id);
}

void save_view_stack(const ViewCacheEntry& entry, const std::filesystem::path& stem) {
  const auto& s = entry.stack;
  TensorArchive archive;
  archive.put("views", Tensor::from_f32({kNumViews, 3, s.size, s.size}, s.data));
  archive.save(with_suffix(stem, ".ncta"));

  nlohmann::json meta = {{"patient_id", entry.patient_id},
                         {"nodule_id", entry.nodule_id},
                         {"plane_ids", s.plane_ids},
                         {"image_size", s.size},
                         {"preprocessing_version", std::string(kPreprocessingVersion)}};
  std::ofstream os(with_suffix(stem, ".json"), std::ios::trunc);
  if (!os) throw RuntimeFailure("cannot write cache sidecar for " + stem.string());
  os << meta.dump(2) << '\n';
}

ViewCacheEntry load_view_stack(const std::filesystem::path& stem) {
  std::ifstream is(with_suffix(stem, ".json"));
  if (!is) throw RuntimeFailure("missing cache sidecar: " + with_suffix(stem, ".json").string());
  nlohmann::json meta;
  try {
    is >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeFailure("malformed cache sidecar " + stem.string() + ": " + e.what());
  }
  if (meta.value("preprocessing_version", "") != kPreprocessingVersion) {
    throw RuntimeFailure("cache entry " + stem.string() + " was written by a different preprocessing version");
  }
  ViewCacheEntry entry;
  entry.patient_id = meta.at("patient_id").get<std::string>();
  entry.nodule_id = meta.at("nodule_id").get<std::string>();
  entry.stack.plane_ids = meta.at("plane_ids").get<std::array<std::string, kNumViews>>();
  entry.stack.size = meta.at("image_size").get<int>();
  const auto archive = TensorArchive::load(with_suffix(stem, ".ncta"));
  const Tensor& t = archive.at("views");
  const std::vector<std::int64_t> expected = {kNumViews, 3, entry.stack.size, entry.stack.size};
  if (t.shape != expected) throw RuntimeFailure("cache entry " + stem.string() + " has an unexpected tensor shape");
  entry.stack.data = t.to_float();
  return entry;
}

bool view_stack_cached(const std::filesystem::path& stem) {
  return std::filesystem::exists(with_suffix(stem, ".ncta")) && std::filesystem::exists(with_suffix(stem, ".json"));
}

}  // namespace noduleclip::preprocess
