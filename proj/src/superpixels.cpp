#include "lad/superpixels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "binary_io.hpp"
#include "lad/errors.hpp"

namespace lad {
namespace {

constexpr auto kSuperpixelMagic = detail::make_magic("LADSP1");

/// Relabels nonzero labels to 1..M in order of first raster appearance.
int relabel_raster_order(std::vector<int>& labels) {
  std::map<int, int> remap;
  for (int& l : labels) {
    if (l == 0) continue;
    auto [it, inserted] = remap.try_emplace(l, static_cast<int>(remap.size()) + 1);
    l = it->second;
  }
  return static_cast<int>(remap.size());
}

/// 4-connected components; returns per-pixel component id and component sizes.
std::vector<int> connected_components(const std::vector<int>& labels, int height, int width, std::vector<int>& sizes) {
  std::vector<int> comp(labels.size(), -1);
  std::vector<int> stack;
  sizes.clear();
  for (int start = 0; start < height * width; ++start) {
    if (comp[static_cast<std::size_t>(start)] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    const int label = labels[static_cast<std::size_t>(start)];
    int size = 0;
    stack.push_back(start);
    comp[static_cast<std::size_t>(start)] = id;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++size;
      const int r = p / width, c = p % width;
      const int nbrs[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& n : nbrs) {
        if (n[0] < 0 || n[0] >= height || n[1] < 0 || n[1] >= width) continue;
        const int q = n[0] * width + n[1];
        if (comp[static_cast<std::size_t>(q)] >= 0 || labels[static_cast<std::size_t>(q)] != label) continue;
        comp[static_cast<std::size_t>(q)] = id;
        stack.push_back(q);
      }
    }
    sizes.push_back(size);
  }
  return comp;
}

void enforce_connectivity(std::vector<int>& labels, int height, int width) {
  std::vector<int> sizes;
  const std::vector<int> comp = connected_components(labels, height, width, sizes);
  const auto ncomp = sizes.size();
  std::vector<int> comp_label(ncomp, 0);
  std::vector<int> comp_first(ncomp, -1);
  for (int p = 0; p < height * width; ++p) {
    const auto c = static_cast<std::size_t>(comp[static_cast<std::size_t>(p)]);
    if (comp_first[c] < 0) {
      comp_first[c] = p;
      comp_label[c] = labels[static_cast<std::size_t>(p)];
    }
  }
  // The largest component of each label keeps it (ties: earliest in raster order).
  std::map<int, std::size_t> main_comp;
  for (std::size_t c = 0; c < ncomp; ++c) {
    auto it = main_comp.find(comp_label[c]);
    if (it == main_comp.end() || sizes[c] > sizes[it->second]) main_comp[comp_label[c]] = c;
  }
  std::vector<char> kept(ncomp, 0);
  for (const auto& [label, c] : main_comp) kept[c] = 1;

  std::vector<std::vector<int>> members(ncomp);
  for (int p = 0; p < height * width; ++p) members[static_cast<std::size_t>(comp[static_cast<std::size_t>(p)])].push_back(p);

  bool pending = true;
  while (pending) {
    pending = false;
    bool progress = false;
    for (std::size_t c = 0; c < ncomp; ++c) {
      if (kept[c]) continue;
      std::map<int, int> contacts;
      for (int p : members[c]) {
        const int r = p / width, col = p % width;
        const int nbrs[4][2] = {{r - 1, col}, {r + 1, col}, {r, col - 1}, {r, col + 1}};
        for (const auto& n : nbrs) {
          if (n[0] < 0 || n[0] >= height || n[1] < 0 || n[1] >= width) continue;
          const int q = n[0] * width + n[1];
          const auto qc = static_cast<std::size_t>(comp[static_cast<std::size_t>(q)]);
          if (qc != c && kept[qc]) ++contacts[labels[static_cast<std::size_t>(q)]];
        }
      }
      if (contacts.empty()) {
        pending = true;
        continue;
      }
      int best_label = contacts.begin()->first;
      int best_count = contacts.begin()->second;
      for (const auto& [label, count] : contacts) {
        if (count > best_count) {
          best_label = label;
          best_count = count;
        }
      }
      for (int p : members[c]) labels[static_cast<std::size_t>(p)] = best_label;
      kept[c] = 1;
      progress = true;
    }
    if (pending && !progress) break;  // unreachable on a connected pixel grid
  }
}

}  // namespace

void validate(const SuperpixelMap& map) {
  if (map.labels.size() != static_cast<std::size_t>(map.height) * static_cast<std::size_t>(map.width)) {
    throw InvalidArgument("superpixel map: label grid has wrong size");
  }
  std::vector<char> seen(static_cast<std::size_t>(map.segment_count) + 1, 0);
  for (int l : map.labels) {
    if (l < 0 || l > map.segment_count) throw InvalidArgument("superpixel map: label out of range");
    seen[static_cast<std::size_t>(l)] = 1;
  }
  for (int s = 1; s <= map.segment_count; ++s) {
    if (!seen[static_cast<std::size_t>(s)]) throw InvalidArgument("superpixel map: empty segment");
  }
}

SuperpixelMap slic_superpixels(const Mat& rgb, int height, int width, const SlicParams& params) {
  if (params.target_count < 1) throw InvalidArgument("slic: target_count must be >= 1");
  if (params.iterations < 1) throw InvalidArgument("slic: iterations must be >= 1");
  if (static_cast<long>(params.target_count) > static_cast<long>(height) * width) {
    throw InvalidArgument("slic: target_count exceeds pixel count");
  }
  if (rgb.rows() != static_cast<Eigen::Index>(height) * width || rgb.cols() != 3) {
    throw InvalidArgument("slic: rgb must be (H*W) x 3");
  }
  const int k = params.target_count;
  int ny = 1, nx = 1;
  if (k > 1) {
    ny = std::clamp(static_cast<int>(std::lround(std::sqrt(double(k) * height / width))), 1, height);
    nx = std::clamp(static_cast<int>(std::lround(double(k) / ny)), 1, width);
  }
  const int ncenters = nx * ny;
  const double step = std::sqrt(double(height) * width / ncenters);
  const int window = static_cast<int>(std::ceil(step));
  const double spatial_weight = (params.compactness / step) * (params.compactness / step);

  // center rows: r, g, b, x, y
  Eigen::Matrix<double, Eigen::Dynamic, 5, Eigen::RowMajor> centers(ncenters, 5);
  std::vector<int> labels(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), 0);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const double x = (i + 0.5) * width / nx;
      const double y = (j + 0.5) * height / ny;
      const int px = std::clamp(static_cast<int>(x), 0, width - 1);
      const int py = std::clamp(static_cast<int>(y), 0, height - 1);
      const int id = j * nx + i;
      centers.row(id).head<3>() = rgb.row(static_cast<Eigen::Index>(py) * width + px);
      centers(id, 3) = x - 0.5;
      centers(id, 4) = y - 0.5;
    }
  }
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const int j = std::min(ny - 1, r * ny / height);
      const int i = std::min(nx - 1, c * nx / width);
      labels[static_cast<std::size_t>(r) * width + c] = j * nx + i + 1;
    }
  }

  std::vector<double> best(labels.size());
  for (int iter = 0; iter < params.iterations; ++iter) {
    std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
    for (int id = 0; id < ncenters; ++id) {
      const double cx = centers(id, 3), cy = centers(id, 4);
      const int r0 = std::max(0, static_cast<int>(std::floor(cy)) - window);
      const int r1 = std::min(height - 1, static_cast<int>(std::ceil(cy)) + window);
      const int c0 = std::max(0, static_cast<int>(std::floor(cx)) - window);
      const int c1 = std::min(width - 1, static_cast<int>(std::ceil(cx)) + window);
      for (int r = r0; r <= r1; ++r) {
        for (int c = c0; c <= c1; ++c) {
          const auto p = static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c);
          const double dc = (rgb.row(static_cast<Eigen::Index>(p)) - centers.row(id).head<3>()).squaredNorm();
          const double ds = (c - cx) * (c - cx) + (r - cy) * (r - cy);
          const double d = dc + spatial_weight * ds;
          if (d < best[p]) {
            best[p] = d;
            labels[p] = id + 1;
          }
        }
      }
    }
    Eigen::Matrix<double, Eigen::Dynamic, 5, Eigen::RowMajor> sums =
        Eigen::Matrix<double, Eigen::Dynamic, 5, Eigen::RowMajor>::Zero(ncenters, 5);
    std::vector<int> counts(static_cast<std::size_t>(ncenters), 0);
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        const auto p = static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c);
        const int id = labels[p] - 1;
        sums.row(id).head<3>() += rgb.row(static_cast<Eigen::Index>(p));
        sums(id, 3) += c;
        sums(id, 4) += r;
        ++counts[static_cast<std::size_t>(id)];
      }
    }
    for (int id = 0; id < ncenters; ++id) {
      if (counts[static_cast<std::size_t>(id)] > 0) centers.row(id) = sums.row(id) / counts[static_cast<std::size_t>(id)];
    }
  }

  enforce_connectivity(labels, height, width);
  SuperpixelMap map;
  map.height = height;
  map.width = width;
  map.segment_count = relabel_raster_order(labels);
  map.labels = std::move(labels);
  map.kind = SuperpixelKind::slic;
  return map;
}

SuperpixelMap semantic_superpixels_from_mask(const std::vector<std::uint32_t>& mask, int height, int width) {
  if (mask.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
    throw InvalidArgument("semantic superpixels: mask has wrong size");
  }
  std::set<std::uint32_t> ids(mask.begin(), mask.end());
  ids.erase(0);
  std::map<std::uint32_t, int> dense;
  for (auto id : ids) dense.emplace(id, static_cast<int>(dense.size()) + 1);
  SuperpixelMap map;
  map.height = height;
  map.width = width;
  map.kind = SuperpixelKind::semantic;
  map.segment_count = static_cast<int>(dense.size());
  map.labels.resize(mask.size());
  for (std::size_t p = 0; p < mask.size(); ++p) map.labels[p] = mask[p] == 0 ? 0 : dense.at(mask[p]);
  return map;
}

void write_superpixel_map(const SuperpixelMap& map, const std::filesystem::path& path) {
  if (map.segment_count > std::numeric_limits<std::uint16_t>::max()) {
    throw FormatError(FormatErrorCode::label_overflow, "segment count does not fit u16 labels");
  }
  detail::BinaryWriter w(kSuperpixelMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(map.height));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(map.width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(map.segment_count));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(map.kind));
  for (int l : map.labels) w.put<std::uint16_t>(static_cast<std::uint16_t>(l));
  w.save(path);
}

LoadedSuperpixelMap load_superpixel_map(const std::filesystem::path& path) {
  detail::BinaryReader r(path, kSuperpixelMagic);
  if (r.remaining() < 13) throw FormatError(FormatErrorCode::malformed_header, path.string());
  LoadedSuperpixelMap out;
  auto& map = out.map;
  map.height = static_cast<int>(r.get<std::uint32_t>());
  map.width = static_cast<int>(r.get<std::uint32_t>());
  const auto declared = r.get<std::uint32_t>();
  const auto kind = r.get<std::uint8_t>();
  if (kind > 1) throw FormatError(FormatErrorCode::malformed_header, "unknown superpixel kind");
  map.kind = static_cast<SuperpixelKind>(kind);
  const std::size_t pixels = static_cast<std::size_t>(map.height) * static_cast<std::size_t>(map.width);
  r.require(pixels * 2);
  map.labels.resize(pixels);
  std::set<int> present;
  for (auto& l : map.labels) {
    l = r.get<std::uint16_t>();
    if (static_cast<std::uint32_t>(l) > declared) {
      throw FormatError(FormatErrorCode::label_overflow, "label exceeds declared segment_count in " + path.string());
    }
    if (l != 0) present.insert(l);
  }
  for (int l : present) out.remap.emplace(l, static_cast<int>(out.remap.size()) + 1);
  for (auto& l : map.labels) {
    if (l != 0) l = out.remap.at(l);
  }
  map.segment_count = static_cast<int>(present.size());
  return out;
}

std::vector<int> SuperpointGroups::nonempty_segments() const {
  std::vector<int> out;
  for (std::size_t s = 0; s < groups.size(); ++s) {
    if (!groups[s].empty()) out.push_back(static_cast<int>(s) + 1);
  }
  return out;
}

std::size_t SuperpointGroups::covered_count() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.size();
  return n;
}

SuperpointGroups group_superpoints(const std::vector<PixelProjection>& projections, const SuperpixelMap& map) {
  SuperpointGroups out;
  out.groups.resize(static_cast<std::size_t>(map.segment_count));
  for (std::size_t i = 0; i < projections.size(); ++i) {
    const auto& p = projections[i];
    if (!p.valid) {
      out.uncovered_points.push_back(static_cast<int>(i));
      continue;
    }
    const auto [row, col] = pixel_of(p, map.height, map.width);
    const int label = map.at(row, col);
    if (label == 0) {
      out.uncovered_points.push_back(static_cast<int>(i));
    } else {
      out.groups[static_cast<std::size_t>(label - 1)].push_back(static_cast<int>(i));
    }
  }
  for (std::size_t s = 0; s < out.groups.size(); ++s) {
    if (out.groups[s].empty()) out.empty_segments.push_back(static_cast<int>(s) + 1);
  }
  return out;
}

}  // namespace lad
