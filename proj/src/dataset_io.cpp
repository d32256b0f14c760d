#include "trkp/dataset_io.hpp"

#include <fstream>

#include "trkp/binio.hpp"

namespace trkp {

namespace {
constexpr char kMagic[8] = {'T', 'R', 'K', 'P', 'D', 'S', '1', '\0'};
}

void write_dataset(const Dataset& ds, const std::string& path) {
  if (ds.scenes.empty()) throw ArgError("write_dataset: empty dataset");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArgError("write_dataset: cannot open " + path);
  const int h = ds.image_h(), w = ds.image_w();
  os.write(kMagic, 8);
  binio::put_u32(os, static_cast<std::uint32_t>(h));
  binio::put_u32(os, static_cast<std::uint32_t>(w));
  binio::put_u32(os, static_cast<std::uint32_t>(ds.scenes.size()));
  binio::put_u32(os, static_cast<std::uint32_t>(ds.classes));
  binio::put_string(os, ds.domain_id);
  for (const Scene& s : ds.scenes) {
    if (s.image.dim(0) != h || s.image.dim(1) != w)
      throw ArgError("write_dataset: scene image size differs from header");
    binio::put_u32(os, static_cast<std::uint32_t>(s.boxes.size()));
    binio::put_f32_array(os, s.image.data(), static_cast<std::size_t>(s.image.size()));
    for (const BoxLabel& b : s.boxes) {
      binio::put_f32(os, b.xmin);
      binio::put_f32(os, b.ymin);
      binio::put_f32(os, b.xmax);
      binio::put_f32(os, b.ymax);
      binio::put_u32(os, static_cast<std::uint32_t>(b.class_id));
    }
  }
  if (!os) throw ArgError("write_dataset: write failed for " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("read_dataset: cannot open " + path);
  binio::check_magic(is, kMagic, "TRKPDS1 dataset");
  const std::uint32_t h = binio::get_u32(is, "header h");
  const std::uint32_t w = binio::get_u32(is, "header w");
  const std::uint32_t count = binio::get_u32(is, "header scene count");
  const std::uint32_t classes = binio::get_u32(is, "header class count");
  if (h == 0 || w == 0 || h > 4096 || w > 4096)
    throw ParseError("read_dataset: implausible image size in header");
  Dataset ds;
  ds.domain_id = binio::get_string(is, "header domain id");
  ds.classes = static_cast<int>(classes);
  ds.scenes.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Scene s;
    const std::uint32_t boxes = binio::get_u32(is, "scene box count");
    s.image = Tensor<float>(std::vector<int>{static_cast<int>(h), static_cast<int>(w), 1});
    binio::get_f32_array(is, s.image.data(), static_cast<std::size_t>(s.image.size()),
                         "scene image payload");
    for (std::uint32_t b = 0; b < boxes; ++b) {
      BoxLabel box;
      box.xmin = binio::get_f32(is, "box record");
      box.ymin = binio::get_f32(is, "box record");
      box.xmax = binio::get_f32(is, "box record");
      box.ymax = binio::get_f32(is, "box record");
      box.class_id = static_cast<int>(binio::get_u32(is, "box record"));
      s.boxes.push_back(box);
    }
    ds.scenes.push_back(std::move(s));
  }
  return ds;
}

}  // namespace trkp
