#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "npcl/corpus.hpp"
#include "npcl/error.hpp"

namespace npcl {

// Line-delimited patch manifest.
//
//   #npcl-manifest v1<TAB>patch_size=<int><TAB>N=<int><TAB>K=<int><TAB>seed=<uint>
//   #fields<TAB>slide<TAB>x<TAB>y<TAB>size<TAB>role<TAB>group<TAB>label<TAB>split
//   <slide><TAB><x><TAB><y><TAB><size><TAB>center|nearby<k><TAB><group><TAB><label|-><TAB><split>
//
// Records are kept in file order. Labeled manifests use N=0 (every labeled
// patch is a singleton group).
struct Manifest {
  int patch_size = 0;
  int nearby = 0;
  int num_classes = 0;
  std::uint64_t seed = 0;
  std::vector<PatchRecord> records;

  bool operator==(const Manifest&) const = default;
};

inline constexpr std::string_view kManifestMagic = "#npcl-manifest v1";
inline constexpr std::string_view kManifestFields =
    "#fields\tslide\tx\ty\tsize\trole\tgroup\tlabel\tsplit";

inline std::string role_name(const PatchRecord& r) {
  return r.is_center() ? "center" : "nearby" + std::to_string(r.neighbor);
}

// File name of a patch image inside a patch directory.
inline std::string patch_file_name(const PatchRecord& r) {
  return r.slide_id + "_" + std::to_string(r.group_id) + "_" + role_name(r) + ".png";
}

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

inline std::string at_line(std::size_t line) { return "manifest line " + std::to_string(line) + ": "; }

}  // namespace detail

// Checks every structural invariant. `lines[i]` is the source line of
// records[i] (for error messages); pass empty when validating in memory.
inline void validate_manifest(const Manifest& m, const std::vector<std::size_t>& lines = {}) {
  auto where = [&](std::size_t i) {
    return i < lines.size() ? detail::at_line(lines[i]) : "manifest record " + std::to_string(i) + ": ";
  };
  detail::require<data_error>(m.patch_size >= 1, "manifest: patch_size must be positive");
  detail::require<data_error>(m.nearby >= 0 && m.nearby <= kMaxNearby, "manifest: N must be in [0, 8]");
  detail::require<data_error>(m.num_classes >= 2, "manifest: K must be >= 2");

  struct GroupInfo {
    std::size_t first = 0;
    int centers = 0;
    std::set<int> neighbors;
    const PatchRecord* center = nullptr;
    std::vector<std::size_t> nearby_idx;
  };
  std::map<long long, GroupInfo> groups;
  std::map<std::string, std::vector<long long>> slide_groups;
  std::map<std::string, std::set<Split>> slide_splits;

  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    detail::require<data_error>(!r.slide_id.empty() && r.slide_id.find_first_of("\t\n") == std::string::npos,
                                where(i) + "invalid slide id");
    detail::require<data_error>(r.size == m.patch_size, where(i) + "size differs from header patch_size");
    detail::require<data_error>(r.x >= 0 && r.y >= 0, where(i) + "negative coordinates");
    detail::require<data_error>(r.neighbor >= -1 && r.neighbor < 8, where(i) + "nearby index outside 0..7");
    if (r.split == Split::unlabeled) {
      detail::require<data_error>(!r.label.has_value(), where(i) + "unlabeled record carries a label");
    } else {
      detail::require<data_error>(r.label.has_value(), where(i) + "labeled record without label");
      detail::require<data_error>(r.is_center(), where(i) + "labeled records must be center patches");
    }
    if (r.label)
      detail::require<data_error>(*r.label >= 0 && *r.label < m.num_classes, where(i) + "label outside [0, K)");

    auto [it, fresh] = groups.try_emplace(r.group_id);
    auto& g = it->second;
    if (fresh) {
      g.first = i;
      slide_groups[r.slide_id].push_back(r.group_id);
    } else {
      detail::require<data_error>(m.records[g.first].slide_id == r.slide_id,
                                  where(i) + "group spans more than one slide");
      detail::require<data_error>(m.records[g.first].split == r.split, where(i) + "group mixes splits");
    }
    if (r.is_center()) {
      ++g.centers;
      detail::require<data_error>(g.centers == 1, where(i) + "group has more than one center");
      g.center = &r;
    } else {
      detail::require<data_error>(g.neighbors.insert(r.neighbor).second, where(i) + "duplicate nearby index in group");
      g.nearby_idx.push_back(i);
    }
    slide_splits[r.slide_id].insert(r.split);
  }

  for (const auto& [gid, g] : groups) {
    detail::require<data_error>(g.centers == 1, where(g.first) + "group " + std::to_string(gid) + " has no center");
    detail::require<data_error>(static_cast<int>(g.nearby_idx.size()) == m.nearby,
                                where(g.first) + "group " + std::to_string(gid) + " has " +
                                    std::to_string(g.nearby_idx.size()) + " nearby records, expected N=" +
                                    std::to_string(m.nearby));
    for (std::size_t i : g.nearby_idx) {
      const auto& r = m.records[i];
      const auto& off = kNeighborOffsets[static_cast<std::size_t>(r.neighbor)];
      detail::require<data_error>(r.x - g.center->x == off[0] * m.patch_size &&
                                      r.y - g.center->y == off[1] * m.patch_size,
                                  where(i) + "nearby offset does not match neighbour " + std::to_string(r.neighbor) +
                                      " of its center");
    }
  }

  for (auto& [slide, ids] : slide_groups) {
    std::vector<long long> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    detail::require<data_error>(sorted.back() - sorted.front() + 1 == static_cast<long long>(sorted.size()),
                                "manifest: group ids of slide " + slide + " are not contiguous");
  }
  for (auto& [slide, splits] : slide_splits)
    detail::require<data_error>(!splits.contains(Split::test) || splits.size() == 1,
                                "manifest: test slide " + slide + " also appears in another split");

  // Labeled patches of one slide must not overlap.
  std::map<std::string, std::vector<std::size_t>> labeled;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (m.records[i].split != Split::unlabeled) labeled[m.records[i].slide_id].push_back(i);
  for (auto& [slide, idx] : labeled) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return std::pair(m.records[a].y, m.records[a].x) < std::pair(m.records[b].y, m.records[b].x);
    });
    for (std::size_t a = 0; a < idx.size(); ++a) {
      const auto& ra = m.records[idx[a]];
      for (std::size_t b = a + 1; b < idx.size(); ++b) {
        const auto& rb = m.records[idx[b]];
        if (rb.y >= ra.y + ra.size) break;
        const bool overlap = rb.x < ra.x + ra.size && ra.x < rb.x + rb.size;
        detail::require<data_error>(!overlap, where(idx[b]) + "labeled patch overlaps another on slide " + slide);
      }
    }
  }
}

inline void write_manifest(const Manifest& m, std::ostream& out) {
  validate_manifest(m);
  out << kManifestMagic << "\tpatch_size=" << m.patch_size << "\tN=" << m.nearby << "\tK=" << m.num_classes
      << "\tseed=" << m.seed << '\n'
      << kManifestFields << '\n';
  for (const auto& r : m.records) {
    out << r.slide_id << '\t' << r.x << '\t' << r.y << '\t' << r.size << '\t' << role_name(r) << '\t'
        << r.group_id << '\t';
    if (r.label)
      out << *r.label;
    else
      out << '-';
    out << '\t' << to_string(r.split) << '\n';
  }
}

inline void write_manifest(const Manifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  detail::require<data_error>(static_cast<bool>(out), "cannot open manifest for writing: " + path);
  write_manifest(m, out);
  detail::require<data_error>(static_cast<bool>(out), "failed writing manifest: " + path);
}

inline Manifest read_manifest(std::istream& in) {
  using detail::at_line;
  using detail::require;
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::size_t> lines;

  require<data_error>(static_cast<bool>(std::getline(in, line)), "manifest: empty file");
  ++lineno;
  {
    const auto f = detail::split_tabs(line);
    require<data_error>(f.size() == 5 && f[0] == kManifestMagic, at_line(lineno) + "missing version header");
    auto kv = [&](std::string_view field, std::string_view key, auto& out) {
      require<data_error>(field.substr(0, key.size()) == key &&
                              detail::parse_int(field.substr(key.size()), out),
                          at_line(lineno) + "bad header field '" + std::string(field) + "'");
    };
    kv(f[1], "patch_size=", m.patch_size);
    kv(f[2], "N=", m.nearby);
    kv(f[3], "K=", m.num_classes);
    kv(f[4], "seed=", m.seed);
  }

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto f = detail::split_tabs(line);
    require<data_error>(f.size() == 8, at_line(lineno) + "expected 8 tab-separated fields, got " +
                                           std::to_string(f.size()));
    PatchRecord r;
    r.slide_id = std::string(f[0]);
    require<data_error>(detail::parse_int(f[1], r.x) && detail::parse_int(f[2], r.y) &&
                            detail::parse_int(f[3], r.size),
                        at_line(lineno) + "bad coordinates");
    if (f[4] == "center") {
      r.neighbor = -1;
    } else {
      require<data_error>(f[4].substr(0, 6) == "nearby" && detail::parse_int(f[4].substr(6), r.neighbor) &&
                              r.neighbor >= 0 && r.neighbor < 8,
                          at_line(lineno) + "bad role '" + std::string(f[4]) + "'");
    }
    require<data_error>(detail::parse_int(f[5], r.group_id), at_line(lineno) + "bad group id");
    if (f[6] != "-") {
      int label = 0;
      require<data_error>(detail::parse_int(f[6], label), at_line(lineno) + "bad label");
      r.label = label;
    }
    if (f[7] == "unlabeled")
      r.split = Split::unlabeled;
    else if (f[7] == "train")
      r.split = Split::train;
    else if (f[7] == "test")
      r.split = Split::test;
    else
      throw data_error(at_line(lineno) + "bad split '" + std::string(f[7]) + "'");
    m.records.push_back(std::move(r));
    lines.push_back(lineno);
  }
  validate_manifest(m, lines);
  return m;
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  detail::require<data_error>(static_cast<bool>(in), "cannot open manifest: " + path);
  return read_manifest(in);
}

// Reassembles groups (center first, nearby in file order), ordered by group id.
inline std::vector<PatchGroup> manifest_groups(const Manifest& m, Split split = Split::unlabeled) {
  std::map<long long, PatchGroup> by_id;
  for (const auto& r : m.records) {
    if (r.split != split) continue;
    auto& g = by_id[r.group_id];
    if (r.is_center())
      g.center = r;
    else
      g.nearby.push_back(r);
  }
  std::vector<PatchGroup> out;
  out.reserve(by_id.size());
  for (auto& [id, g] : by_id) out.push_back(std::move(g));
  return out;
}

inline std::vector<PatchRecord> manifest_split(const Manifest& m, Split split) {
  std::vector<PatchRecord> out;
  for (const auto& r : m.records)
    if (r.split == split) out.push_back(r);
  return out;
}

}  // namespace npcl
