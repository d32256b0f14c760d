#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "trkp/binio.hpp"
#include "trkp/csv.hpp"
#include "trkp/htrm.hpp"

namespace trkp {

// Weights manifest: CSV with columns domain_id, image_index, w, alpha,
// ordered by (domain, image). Optional leading comment lines carry run
// metadata.
void write_weights_manifest(const std::string& path, const RelevanceWeights& weights,
                            const std::vector<std::string>& comments = {});
RelevanceWeights read_weights_manifest(const std::string& path);

// Instance-feature dump, magic "TRKPFT1\0"; same little-endian container
// style as the dataset format with f32 payloads.
namespace detail {
constexpr char kFeatureMagic[8] = {'T', 'R', 'K', 'P', 'F', 'T', '1', '\0'};
}

template <typename T>
void write_feature_dump(const std::string& path, const InstanceFeatureSet<T>& set) {
  if (set.items.empty()) throw ArgError("write_feature_dump: empty feature set");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArgError("write_feature_dump: cannot open " + path);
  const std::uint32_t depth = static_cast<std::uint32_t>(set.items[0].v.size());
  os.write(detail::kFeatureMagic, 8);
  binio::put_u32(os, depth);
  binio::put_u32(os, static_cast<std::uint32_t>(set.items.size()));
  binio::put_u32(os, set.target_pool ? 1 : 0);
  for (const auto& f : set.items) {
    binio::put_string(os, f.domain);
    binio::put_u32(os, static_cast<std::uint32_t>(f.image));
    binio::put_u32(os, static_cast<std::uint32_t>(f.box));
    for (std::uint32_t d = 0; d < depth; ++d)
      binio::put_f32(os, static_cast<float>(f.v[d]));
  }
  if (!os) throw ArgError("write_feature_dump: write failed for " + path);
}

template <typename T>
InstanceFeatureSet<T> read_feature_dump(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("read_feature_dump: cannot open " + path);
  binio::check_magic(is, detail::kFeatureMagic, "TRKPFT1 feature dump");
  const std::uint32_t depth = binio::get_u32(is, "header depth");
  const std::uint32_t count = binio::get_u32(is, "header feature count");
  const std::uint32_t target = binio::get_u32(is, "header pool tag");
  InstanceFeatureSet<T> set;
  set.target_pool = target != 0;
  set.items.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    InstanceFeature<T> f;
    f.domain = binio::get_string(is, "feature owner");
    f.image = static_cast<int>(binio::get_u32(is, "feature owner"));
    f.box = static_cast<int>(binio::get_u32(is, "feature owner"));
    f.v.resize(depth);
    for (std::uint32_t d = 0; d < depth; ++d)
      f.v[d] = static_cast<T>(binio::get_f32(is, "feature payload"));
    set.items.push_back(std::move(f));
  }
  return set;
}

}  // namespace trkp
