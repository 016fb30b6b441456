#include "wiper/adaptive_mask.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "wiper/error.hpp"
#include "wiper/wtsr.hpp"

namespace wiper {

std::vector<float> response_score_frame(const Matrix& frame_attention, std::span<const std::uint8_t> object) {
  const std::size_t n = frame_attention.rows();
  if (frame_attention.cols() != n || object.size() != n) {
    throw ShapeMismatch("frame attention block and object mask disagree in token count");
  }
  std::vector<float> rs(n, 0.0f);
  bool any = false;
  for (std::uint8_t v : object) any = any || v != 0;
  if (!any) return rs;
  for (std::size_t p = 0; p < n; ++p) {
    double partial = 0.0, total = 0.0;
    const auto row = frame_attention.row(p);
    for (std::size_t y = 0; y < n; ++y) {
      total += row[y];
      partial += object[y] ? static_cast<double>(row[y]) : 0.0;
    }
    rs[p] = total > 0.0 ? static_cast<float>(partial / total) : 0.0f;
  }
  return rs;
}

ResponseMap response_score(const Matrix& visual_self_attention, const MaskGrid& object_tokens) {
  if (object_tokens.resolution() != Resolution::kToken) throw ShapeMismatch("response score needs a token mask");
  const std::size_t frames = object_tokens.shape()[0];
  const std::size_t per_frame = object_tokens.shape()[1] * object_tokens.shape()[2];
  const std::size_t n = frames * per_frame;
  if (visual_self_attention.rows() != n || visual_self_attention.cols() != n) {
    throw ShapeMismatch("self-attention is " + std::to_string(visual_self_attention.rows()) + "x" +
                        std::to_string(visual_self_attention.cols()) + ", token grid holds " + std::to_string(n));
  }
  Tensor values(object_tokens.shape());
  Matrix block(per_frame, per_frame);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t base = f * per_frame;
    for (std::size_t p = 0; p < per_frame; ++p)
      for (std::size_t y = 0; y < per_frame; ++y) block(p, y) = visual_self_attention(base + p, base + y);
    const auto rs = response_score_frame(block, object_tokens.values().subspan(base, per_frame));
    std::copy(rs.begin(), rs.end(), values.data().begin() + static_cast<std::ptrdiff_t>(base));
  }
  return ResponseMap{std::move(values)};
}

MaskGrid adaptive_mask(const ResponseMap& rs, float threshold, const MaskGrid& effect, const MaskGrid& object) {
  if (!(threshold > 0.0f && threshold < 1.0f)) {
    throw InvalidParam("response threshold must lie in (0, 1), got " + std::to_string(threshold));
  }
  if (rs.values.shape() != object.shape()) throw ShapeMismatch("response map and object mask grids differ");
  std::vector<std::uint8_t> v(rs.values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = rs.values[i] > threshold ? 1 : 0;
  MaskGrid thresholded(Resolution::kToken, object.shape(), std::move(v));
  return mask_union(mask_union(thresholded, effect), object);
}

AdaptiveMaskStore::AdaptiveMaskStore(std::size_t total_steps, std::size_t window)
    : total_steps_(total_steps), window_(window) {
  if (window == 0 || window > total_steps) {
    throw InvalidParam("adaptive mask window must lie in [1, total_steps]");
  }
}

void AdaptiveMaskStore::put(std::size_t step, MaskGrid mask) {
  if (!in_window(step)) {
    throw InvalidParam("step " + std::to_string(step) + " is outside the adaptive-mask window [" +
                       std::to_string(first_step()) + ", " + std::to_string(total_steps_) + ")");
  }
  masks_.insert_or_assign(step, std::move(mask));
}

const MaskGrid* AdaptiveMaskStore::find(std::size_t step) const {
  const auto it = masks_.find(step);
  return it == masks_.end() ? nullptr : &it->second;
}

const MaskGrid& AdaptiveMaskStore::at(std::size_t step) const {
  const MaskGrid* m = find(step);
  if (m == nullptr) throw ProtocolError("no adaptive mask stored for inversion step " + std::to_string(step));
  return *m;
}

void AdaptiveMaskStore::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json index;
  index["total_steps"] = total_steps_;
  index["window"] = window_;
  index["masks"] = nlohmann::json::array();
  for (const auto& [step, mask] : masks_) {
    char name[32];
    std::snprintf(name, sizeof name, "step_%03zu.wtsr", step);
    save_tensor_with_manifest(mask.to_tensor(), dir / name, "adaptive_mask", "token");
    index["masks"].push_back({{"step", step}, {"file", name}});
  }
  std::ofstream out(dir / "index.json");
  out << index.dump(2) << "\n";
}

AdaptiveMaskStore AdaptiveMaskStore::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw Error("missing adaptive mask index in " + dir.string());
  try {
    const auto index = nlohmann::json::parse(in);
    AdaptiveMaskStore store(index.at("total_steps").get<std::size_t>(), index.at("window").get<std::size_t>());
    for (const auto& e : index.at("masks")) {
      const auto file = e.at("file").get<std::string>();
      store.put(e.at("step").get<std::size_t>(), MaskGrid::from_tensor(Resolution::kToken, load_tensor(dir / file)));
    }
    return store;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "index.json").string() + ": " + e.what(), 0);
  }
}

}  // namespace wiper
