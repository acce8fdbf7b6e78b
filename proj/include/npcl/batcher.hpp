#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "npcl/augment.hpp"
#include "npcl/corpus.hpp"
#include "npcl/error.hpp"
#include "npcl/image.hpp"

namespace npcl {

// Geometry of a multiviewed batch of C groups with N nearby patches each.
// Indices are 0-based. First views occupy [0, B), second views [B, 2B);
// inside each half, block n (0 = centers, n >= 1 = n-th nearby) holds one
// patch per group, so patch k belongs to group k mod C.
class BatchSpec {
 public:
  BatchSpec(int centers, int nearby) : centers_(centers), nearby_(nearby) {
    detail::require<config_error>(centers >= 2, "batch needs at least 2 centers, otherwise no negatives exist");
    detail::require<config_error>(nearby >= 0 && nearby <= kMaxNearby, "batch nearby count must be in [0, 8]");
  }

  int centers() const { return centers_; }
  int nearby() const { return nearby_; }
  int per_view() const { return centers_ * (nearby_ + 1); }
  int size() const { return 2 * per_view(); }

  int patch_of(int i) const { return i % per_view(); }
  // Group label in 1..C.
  int group_of(int i) const { return patch_of(i) % centers_ + 1; }
  int twin(int i) const { return i < per_view() ? i + per_view() : i - per_view(); }

  std::vector<int> positives(int i) const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(2 * nearby_ + 1));
    for (int j = 0; j < size(); ++j)
      if (j != i && group_of(j) == group_of(i)) out.push_back(j);
    return out;
  }

  // Excludes i itself: self-similarity never enters the loss.
  std::vector<int> negatives(int i) const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(2 * (nearby_ + 1) * (centers_ - 1)));
    for (int j = 0; j < size(); ++j)
      if (group_of(j) != group_of(i)) out.push_back(j);
    return out;
  }

  std::vector<int> group_labels() const {
    std::vector<int> g(static_cast<std::size_t>(size()));
    for (int i = 0; i < size(); ++i) g[static_cast<std::size_t>(i)] = group_of(i);
    return g;
  }

 private:
  int centers_;
  int nearby_;
};

struct GroupImages {
  Image center;
  std::vector<Image> nearby;
};

struct MultiviewBatch {
  BatchSpec spec;
  std::vector<Image> views;
  std::vector<int> group;     // 1..C
  std::vector<int> patch_id;  // 0..B-1
};

// Two augmented views of every patch, laid out per BatchSpec. Each view gets
// its own augmentation seed.
inline MultiviewBatch assemble(std::span<const GroupImages* const> groups, const AugmentPolicy& policy,
                               std::uint64_t seed) {
  detail::require<data_error>(groups.size() >= 2, "batch needs at least 2 groups");
  const auto n = static_cast<int>(groups.front()->nearby.size());
  for (const auto* g : groups)
    detail::require<data_error>(static_cast<int>(g->nearby.size()) == n,
                                "ragged batch: groups carry different numbers of nearby patches");
  MultiviewBatch batch{BatchSpec(static_cast<int>(groups.size()), n), {}, {}, {}};
  const int c_count = batch.spec.centers();
  const int b = batch.spec.per_view();

  std::vector<const Image*> patches(static_cast<std::size_t>(b));
  for (int k = 0; k < b; ++k) {
    const auto& g = *groups[static_cast<std::size_t>(k % c_count)];
    const int block = k / c_count;
    patches[static_cast<std::size_t>(k)] = block == 0 ? &g.center : &g.nearby[static_cast<std::size_t>(block - 1)];
  }
  batch.views.reserve(static_cast<std::size_t>(2 * b));
  for (int i = 0; i < 2 * b; ++i) {
    const int k = i % b;
    batch.views.push_back(make_view(*patches[static_cast<std::size_t>(k)], policy,
                                    derive_seed(seed, {static_cast<std::uint64_t>(i)})));
    batch.group.push_back(batch.spec.group_of(i));
    batch.patch_id.push_back(k);
  }
  return batch;
}

inline MultiviewBatch assemble(std::span<const GroupImages> groups, const AugmentPolicy& policy,
                               std::uint64_t seed) {
  std::vector<const GroupImages*> ptrs;
  for (const auto& g : groups) ptrs.push_back(&g);
  return assemble(std::span<const GroupImages* const>(ptrs), policy, seed);
}

}  // namespace npcl
