#include <algorithm>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "npcl/corpus.hpp"
#include "npcl/manifest.hpp"

namespace {

using npcl::CorpusConfig;
using npcl::PatchRecord;
using npcl::Split;

CorpusConfig small_config() {
  CorpusConfig c;
  c.slide_size = 256;
  c.patch_size = 32;
  return c;
}

TEST(Slide, DeterministicPerSeed) {
  const auto cfg = small_config();
  const auto a = npcl::generate_synthetic_slide(cfg, 7, "s");
  const auto b = npcl::generate_synthetic_slide(cfg, 7, "s");
  EXPECT_EQ(a, b);
  const auto c = npcl::generate_synthetic_slide(cfg, 8, "s");
  EXPECT_NE(a.mask, c.mask);
}

TEST(Slide, EveryClassAppears) {
  auto cfg = small_config();
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto s = npcl::generate_synthetic_slide(cfg, seed, "s");
    std::set<int> seen(s.mask.begin(), s.mask.end());
    EXPECT_EQ(static_cast<int>(seen.size()), cfg.num_classes);
  }
  cfg.num_classes = 2;
  cfg.slide_size = 1536;
  cfg.patch_size = 512;
  const auto big = npcl::generate_synthetic_slide(cfg, 3, "s");
  std::set<int> seen(big.mask.begin(), big.mask.end());
  EXPECT_EQ(seen, (std::set<int>{0, 1}));
}

TEST(Slide, PixelsAreQuantized) {
  const auto s = npcl::generate_synthetic_slide(small_config(), 1, "s");
  for (float v : s.pixels.rgb) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
    ASSERT_FLOAT_EQ(v * 255.0f, std::round(v * 255.0f));
  }
}

TEST(Config, RejectsNineNearby) {
  auto cfg = small_config();
  cfg.nearby = {0, 9};
  EXPECT_THROW(cfg.validate(), npcl::config_error);
  cfg.nearby = {8};
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, StainFieldBounds) {
  auto cfg = small_config();
  cfg.stain_field = 1.0;
  EXPECT_THROW(cfg.validate(), npcl::config_error);
  cfg.stain_field = 0.0;
  cfg.stain_field_scale = 0.0;
  EXPECT_THROW(cfg.validate(), npcl::config_error);
}

TEST(Slide, StainFieldChangesPixelsNotMask) {
  auto flat = small_config();
  flat.stain_field = 0.0;
  auto field = small_config();
  field.stain_field = 0.3;
  const auto a = npcl::generate_synthetic_slide(flat, 4, "s");
  const auto b = npcl::generate_synthetic_slide(field, 4, "s");
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_NE(a.pixels.rgb, b.pixels.rgb);
}

TEST(Quota, EqualBudgetPattern) {
  EXPECT_EQ(npcl::unlabeled_quota(1000, 0), 1000);
  EXPECT_EQ(npcl::unlabeled_quota(1000, 1), 500);
  EXPECT_EQ(npcl::unlabeled_quota(1000, 2), 333);
  EXPECT_EQ(npcl::unlabeled_quota(1000, 4), 200);
  EXPECT_EQ(npcl::unlabeled_quota(1000, 8), 111);
  for (int n = 0; n <= 8; ++n) {
    const int total = npcl::unlabeled_quota(1000, n) * (n + 1);
    EXPECT_LE(total, 1000);
    EXPECT_GT(total, 1000 - (n + 1));
  }
}

npcl::SlideImage blank_slide(int size, int classes = 2) {
  npcl::SlideImage s;
  s.slide_id = "b";
  s.pixels = npcl::Image(size, size);
  s.mask.assign(static_cast<std::size_t>(size) * size, 0);
  s.num_classes = classes;
  return s;
}

TEST(Groups, ForcedCenterHasAllEightNeighbours) {
  const auto slide = blank_slide(1536);
  const auto groups = npcl::extract_unlabeled_groups(slide, 512, 8, 1, 3);
  ASSERT_EQ(groups.size(), 1u);
  EXPECT_EQ(groups[0].center.x, 512);
  EXPECT_EQ(groups[0].center.y, 512);
  std::set<std::pair<int, int>> got;
  for (const auto& r : groups[0].nearby) got.insert({r.x, r.y});
  const std::set<std::pair<int, int>> want{{0, 0},      {512, 0},    {1024, 0},   {0, 512},
                                           {1024, 512}, {0, 1024},   {512, 1024}, {1024, 1024}};
  EXPECT_EQ(got, want);
}

TEST(Groups, CountsAndGeometry) {
  const auto slide = npcl::generate_synthetic_slide(small_config(), 2, "g");
  for (int n : {0, 1, 4, 8}) {
    const int count = npcl::unlabeled_quota(100, n);
    const auto groups = npcl::extract_unlabeled_groups(slide, 32, n, count, 5, 10);
    ASSERT_EQ(static_cast<int>(groups.size()), count);
    long long expect_id = 10;
    for (const auto& g : groups) {
      EXPECT_EQ(g.center.group_id, expect_id++);
      EXPECT_TRUE(g.center.is_center());
      ASSERT_EQ(static_cast<int>(g.nearby.size()), n);
      std::set<int> used;
      for (const auto& r : g.nearby) {
        EXPECT_TRUE(used.insert(r.neighbor).second);
        const auto off = npcl::kNeighborOffsets[static_cast<std::size_t>(r.neighbor)];
        EXPECT_EQ(r.x - g.center.x, off[0] * 32);
        EXPECT_EQ(r.y - g.center.y, off[1] * 32);
        EXPECT_GE(r.x, 0);
        EXPECT_GE(r.y, 0);
        EXPECT_LE(r.x + 32, slide.width());
        EXPECT_LE(r.y + 32, slide.height());
        EXPECT_EQ(r.group_id, g.center.group_id);
      }
    }
  }
}

TEST(Groups, TableOneRecordCounts) {
  CorpusConfig cfg;
  cfg.slide_size = 1024;
  cfg.patch_size = 64;
  const auto slide = npcl::generate_synthetic_slide(cfg, 1, "t");
  const auto four = npcl::extract_unlabeled_groups(slide, 64, 4, 200, 1);
  std::size_t nearby = 0;
  for (const auto& g : four) nearby += g.nearby.size();
  EXPECT_EQ(four.size(), 200u);
  EXPECT_EQ(nearby, 800u);
  const auto zero = npcl::extract_unlabeled_groups(slide, 64, 0, 1000, 1);
  EXPECT_EQ(zero.size(), 1000u);
  for (const auto& g : zero) EXPECT_TRUE(g.nearby.empty());
}

TEST(Labeled, GridCapacityAndDisjointness) {
  const auto slide = blank_slide(1536);
  EXPECT_EQ(npcl::labeled_capacity(slide, 512), 9);
  EXPECT_THROW(npcl::extract_labeled_patches(slide, 512, 10, Split::train, 1), npcl::data_error);
  const auto recs = npcl::extract_labeled_patches(slide, 512, 9, Split::train, 1);
  std::set<std::pair<int, int>> cells;
  for (const auto& r : recs) {
    EXPECT_EQ(r.x % 512, 0);
    EXPECT_EQ(r.y % 512, 0);
    EXPECT_TRUE(cells.insert({r.x, r.y}).second);
    EXPECT_EQ(r.label, 0);
  }
}

TEST(Labeled, UniformRegionLabel) {
  auto slide = blank_slide(96, 3);
  std::fill(slide.mask.begin(), slide.mask.end(), 2);
  for (const auto& r : npcl::extract_labeled_patches(slide, 32, 9, Split::test, 4)) EXPECT_EQ(r.label, 2);
}

// Pixel-count majority computed independently.
int majority_oracle(const npcl::SlideImage& s, int x0, int y0, int size) {
  std::vector<int> counts(static_cast<std::size_t>(s.num_classes));
  for (int y = y0; y < y0 + size; ++y)
    for (int x = x0; x < x0 + size; ++x) ++counts[s.mask[static_cast<std::size_t>(y) * s.width() + x]];
  int best = 0;
  for (int k = 1; k < s.num_classes; ++k)
    if (counts[static_cast<std::size_t>(k)] > counts[static_cast<std::size_t>(best)]) best = k;
  return best;
}

TEST(Labeled, StraddlingPatchTakesMajorityClass) {
  auto slide = blank_slide(100, 2);
  // Columns 40..99 are class 1: a patch at x=0 of size 100 is 60% class 1.
  for (int y = 0; y < 100; ++y)
    for (int x = 40; x < 100; ++x) slide.mask[static_cast<std::size_t>(y) * 100 + x] = 1;
  EXPECT_EQ(npcl::majority_label(slide, 0, 0, 100), 1);
  EXPECT_EQ(npcl::majority_label(slide, 0, 0, 100), majority_oracle(slide, 0, 0, 100));
  const auto real = npcl::generate_synthetic_slide(small_config(), 9, "m");
  for (int y = 0; y < 256; y += 32)
    for (int x = 0; x < 256; x += 32) EXPECT_EQ(npcl::majority_label(real, x, y, 32), majority_oracle(real, x, y, 32));
}

TEST(Labeled, TieGoesToLowestClass) {
  auto slide = blank_slide(10, 3);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) slide.mask[static_cast<std::size_t>(y) * 10 + x] = x < 5 ? 2 : 1;
  EXPECT_EQ(npcl::majority_label(slide, 0, 0, 10), 1);
}

// ------------------------------------------------------------------ manifest

npcl::Manifest unlabeled_manifest(int n) {
  const auto slide = npcl::generate_synthetic_slide(small_config(), 3, "u0");
  npcl::Manifest m{32, n, 6, 11, {}};
  for (const auto& g : npcl::extract_unlabeled_groups(slide, 32, n, 5, 1)) {
    m.records.push_back(g.center);
    m.records.insert(m.records.end(), g.nearby.begin(), g.nearby.end());
  }
  return m;
}

// Labeled records are singleton groups, so they live in an N=0 manifest.
npcl::Manifest labeled_manifest() {
  auto m = unlabeled_manifest(0);
  auto train = npcl::generate_synthetic_slide(small_config(), 4, "r0");
  for (const auto& r : npcl::extract_labeled_patches(train, 32, 6, Split::train, 2, 100)) m.records.push_back(r);
  auto test = npcl::generate_synthetic_slide(small_config(), 5, "t0");
  for (const auto& r : npcl::extract_labeled_patches(test, 32, 6, Split::test, 2, 200)) m.records.push_back(r);
  return m;
}

TEST(Manifest, RoundTrip) {
  for (const auto& m : {unlabeled_manifest(2), unlabeled_manifest(8), labeled_manifest()}) {
    std::stringstream ss;
    npcl::write_manifest(m, ss);
    const auto back = npcl::read_manifest(ss);
    EXPECT_EQ(back.records, m.records);
    EXPECT_EQ(back.nearby, m.nearby);
    EXPECT_EQ(back.patch_size, m.patch_size);
    EXPECT_EQ(back.num_classes, m.num_classes);
    EXPECT_EQ(back.seed, m.seed);
  }
}

TEST(Manifest, EmptyIsValid) {
  npcl::Manifest m{64, 4, 6, 0, {}};
  std::stringstream ss;
  npcl::write_manifest(m, ss);
  EXPECT_TRUE(npcl::read_manifest(ss).records.empty());
}

std::string text_of(const npcl::Manifest& m) {
  std::stringstream ss;
  npcl::write_manifest(m, ss);
  return ss.str();
}

npcl::Manifest parse(const std::string& text) {
  std::stringstream ss(text);
  return npcl::read_manifest(ss);
}

TEST(Manifest, RejectsHalfPatchOffset) {
  npcl::Manifest m{512, 1, 6, 0, {}};
  m.records.push_back(PatchRecord{"s", 512, 512, 512, -1, 0, std::nullopt, Split::unlabeled});
  PatchRecord bad = m.records[0];
  bad.neighbor = 4;  // (+1, 0)
  bad.x = 512 + 256;
  m.records.push_back(bad);
  EXPECT_THROW(parse(text_of(m)), npcl::data_error);
  m.records[1].x = 1024;
  EXPECT_NO_THROW(parse(text_of(m)));
}

TEST(Manifest, RejectsStructuralErrors) {
  {
    auto broken = unlabeled_manifest(2);
    broken.records.erase(broken.records.begin() + 1);  // group missing a nearby record
    EXPECT_THROW(npcl::validate_manifest(broken), npcl::data_error);
  }
  const auto m = labeled_manifest();
  {
    auto broken = m;
    broken.records.back().slide_id = "u0";  // test patch on an unlabeled slide
    EXPECT_THROW(npcl::validate_manifest(broken), npcl::data_error);
  }
  {
    auto broken = m;
    broken.records.back().label.reset();
    EXPECT_THROW(npcl::validate_manifest(broken), npcl::data_error);
  }
  {
    auto broken = m;
    broken.records.back().label = 6;
    EXPECT_THROW(npcl::validate_manifest(broken), npcl::data_error);
  }
  EXPECT_THROW(parse("not a manifest\n"), npcl::data_error);
}

TEST(Manifest, ErrorsNameTheLine) {
  auto text = text_of(unlabeled_manifest(1));
  const auto pos = text.find("\tcenter\t");
  text.replace(pos, 8, "\tmiddle\t");
  try {
    parse(text);
    FAIL() << "expected rejection";
  } catch (const npcl::data_error& e) {
    EXPECT_NE(std::string(e.what()).find("line"), std::string::npos);
  }
}

TEST(Manifest, GroupsAndSplits) {
  const auto groups = npcl::manifest_groups(unlabeled_manifest(2));
  ASSERT_EQ(groups.size(), 5u);
  for (const auto& g : groups) EXPECT_EQ(g.nearby.size(), 2u);
  const auto m = labeled_manifest();
  EXPECT_EQ(npcl::manifest_split(m, Split::train).size(), 6u);
  EXPECT_EQ(npcl::manifest_split(m, Split::test).size(), 6u);
}

}  // namespace
