#include "wiper/attention_dump.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "wiper/error.hpp"
#include "wiper/wtsr.hpp"

namespace wiper {
namespace {

bool selected(const std::vector<int>& set, int v) {
  return set.empty() || std::find(set.begin(), set.end(), v) != set.end();
}

std::size_t check_heads(const Tensor& t, std::size_t heads, std::size_t rows, std::size_t cols,
                        const std::string& file) {
  const Shape flat{rows, cols}, stacked{heads, rows, cols};
  if (t.shape() == flat) return 1;
  if (t.shape() == stacked) return heads;
  throw ShapeMismatch(file + ": shape " + shape_to_string(t.shape()) + " disagrees with manifest " +
                      shape_to_string(heads > 1 ? stacked : flat));
}

Matrix head_slice(const Tensor& t, std::size_t head, std::size_t rows, std::size_t cols) {
  const auto begin = t.values().begin() + static_cast<std::ptrdiff_t>(head * rows * cols);
  return Matrix(rows, cols, std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(rows * cols)));
}

JointAttentionMaps from_qk(const Tensor& q, const Tensor& k, const AttentionDumpManifest& m, const std::string& file,
                           AttentionOptions options) {
  const std::size_t n = m.text_tokens + m.visual_tokens;
  const std::size_t hq = check_heads(q, m.heads, n, m.dim, file);
  const std::size_t hk = check_heads(k, m.heads, n, m.dim, file);
  if (hq != hk) throw ShapeMismatch(file + ": query and key head counts differ");

  std::vector<std::size_t> text(m.text_tokens), visual(m.visual_tokens);
  for (std::size_t i = 0; i < text.size(); ++i) text[i] = i;
  for (std::size_t i = 0; i < visual.size(); ++i) visual[i] = m.text_tokens + i;

  Matrix sum(n, n);
  for (std::size_t h = 0; h < hq; ++h) {
    const Matrix qh = head_slice(q, h, n, m.dim), kh = head_slice(k, h, n, m.dim);
    const Matrix joint = joint_attention(gather_rows(qh, text), gather_rows(kh, text), gather_rows(qh, visual),
                                         gather_rows(kh, visual), options)
                             .assemble();
    for (std::size_t i = 0; i < joint.data().size(); ++i) sum.data()[i] += joint.data()[i];
  }
  if (hq > 1) {
    for (float& v : sum.data()) v /= static_cast<float>(hq);
  }
  return JointAttentionMaps::split(sum, m.text_tokens);
}

}  // namespace

AttentionDumpManifest read_attention_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kAttentionManifestName;
  if (!std::filesystem::exists(path)) throw Error("missing attention manifest " + path.string());
  std::ifstream in(path);
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format").get<std::string>() != kAttentionDumpFormat) {
      throw FormatError(path.string() + ": unsupported format '" + j.at("format").get<std::string>() + "'", 0);
    }
    AttentionDumpManifest m;
    m.text_tokens = j.at("text_tokens").get<std::size_t>();
    m.visual_tokens = j.at("visual_tokens").get<std::size_t>();
    m.dim = j.at("dim").get<std::size_t>();
    m.token_grid = j.at("token_grid").get<Shape>();
    m.heads = j.value("heads", std::size_t{1});
    if (m.token_grid.size() != 3 || checked_element_count(m.token_grid) != m.visual_tokens) {
      throw FormatError(path.string() + ": token_grid does not multiply to visual_tokens", 0);
    }
    if (m.dim == 0 || m.heads == 0 || m.text_tokens == 0) {
      throw FormatError(path.string() + ": dim, heads and text_tokens must be positive", 0);
    }
    for (const auto& e : j.at("entries")) {
      AttentionDumpEntry entry;
      entry.timestep = e.at("timestep").get<int>();
      entry.layer = e.at("layer").get<int>();
      entry.query_file = e.value("query", "");
      entry.key_file = e.value("key", "");
      entry.attention_file = e.value("attention", "");
      const bool qk = !entry.query_file.empty() && !entry.key_file.empty();
      if (qk == !entry.attention_file.empty()) {
        throw FormatError(path.string() + ": each entry needs either query+key or attention", 0);
      }
      m.entries.push_back(std::move(entry));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed manifest: " + e.what(), 0);
  }
}

void write_attention_manifest(const std::filesystem::path& dir, const AttentionDumpManifest& m) {
  nlohmann::json j;
  j["format"] = kAttentionDumpFormat;
  j["text_tokens"] = m.text_tokens;
  j["visual_tokens"] = m.visual_tokens;
  j["dim"] = m.dim;
  j["token_grid"] = m.token_grid;
  j["heads"] = m.heads;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json je{{"timestep", e.timestep}, {"layer", e.layer}};
    if (e.attention_file.empty()) {
      je["query"] = e.query_file;
      je["key"] = e.key_file;
    } else {
      je["attention"] = e.attention_file;
    }
    j["entries"].push_back(std::move(je));
  }
  std::ofstream out(dir / kAttentionManifestName);
  if (!out) throw Error("cannot write attention manifest in " + dir.string());
  out << j.dump(2) << "\n";
}

std::vector<LoadedAttention> load_attention_dump(const std::filesystem::path& dir,
                                                 const AttentionDumpManifest& manifest,
                                                 const std::vector<int>& timesteps, const std::vector<int>& layers,
                                                 AttentionOptions options) {
  std::vector<LoadedAttention> out;
  const std::size_t n = manifest.text_tokens + manifest.visual_tokens;
  for (const auto& e : manifest.entries) {
    if (!selected(timesteps, e.timestep) || !selected(layers, e.layer)) continue;
    LoadedAttention loaded{e.timestep, e.layer, {}};
    if (!e.attention_file.empty()) {
      const Tensor t = load_tensor(dir / e.attention_file);
      check_heads(t, manifest.heads, n, n, e.attention_file);
      loaded.maps = JointAttentionMaps::split(Matrix::from_tensor(t), manifest.text_tokens);
    } else {
      loaded.maps = from_qk(load_tensor(dir / e.query_file), load_tensor(dir / e.key_file), manifest,
                            e.query_file, options);
    }
    out.push_back(std::move(loaded));
  }
  return out;
}

double max_row_sum_deviation(const JointAttentionMaps& maps) {
  const Matrix joint = maps.assemble();
  double worst = 0.0;
  for (std::size_t i = 0; i < joint.rows(); ++i) {
    double s = 0.0;
    for (float v : joint.row(i)) s += v;
    worst = std::max(worst, std::fabs(s - 1.0));
  }
  return worst;
}

}  // namespace wiper
