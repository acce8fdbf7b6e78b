#pragma once

// Experiment orchestration shared by the command-line tool and the
// acceptance suite. Link against PNG::PNG and Threads::Threads.
//
// Corpus directory layout (generate_corpus):
//   config.json               verbatim config echo
//   counts.tsv                per-split patch counts
//   pcatch-<N>/manifest.tsv   unlabeled groups for each requested N
//   pcatch-<N>/patches/       <slide>_<group>_<role>.png
//   labeled/manifest.tsv      train + test labeled patches (N=0 manifest)
//   labeled/patches/
//   slides/<id>.png, slides/<id>_mask.png   test slides and class masks
//
// Pretrain directory: config.json, trace.csv, checkpoint-eNNN.bin, checkpoint-final.bin
// Lineval directory: summary.csv, report-<pct>.txt, folds-<pct>.csv, heads-<pct>.bin,
//                    cache/features-<key>.bin

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "npcl/augment.hpp"
#include "npcl/batcher.hpp"
#include "npcl/checkpoint.hpp"
#include "npcl/config.hpp"
#include "npcl/corpus.hpp"
#include "npcl/image_io.hpp"
#include "npcl/lineval.hpp"
#include "npcl/manifest.hpp"
#include "npcl/model.hpp"
#include "npcl/trainer.hpp"

namespace npcl {

namespace fs = std::filesystem;

inline std::string unlabeled_dir_name(int nearby) { return "pcatch-" + std::to_string(nearby); }

inline std::string fraction_tag(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", fraction * 100.0);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  detail::require<data_error>(static_cast<bool>(out), "cannot write " + path.string());
  out << text;
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  detail::require<data_error>(!ec, "cannot create directory " + dir.string() + ": " + ec.message());
}

// Config echo: the verbatim source text when available, else the resolved config.
inline void echo_config(const fs::path& dir, const RunConfig& cfg, const std::string& source_text) {
  write_text(dir / "config.json", source_text.empty() ? to_json(cfg).dump(2) + "\n" : source_text);
  write_text(dir / "config.resolved.json", to_json(cfg).dump(2) + "\n");
}

// --------------------------------------------------------------- corpus

struct SplitCount {
  std::string name;
  long long centers = 0;
  long long nearby = 0;
};

inline std::string slide_name(const char* kind, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%03d", kind, index);
  return buf;
}

inline std::vector<SplitCount> generate_corpus(const RunConfig& cfg, const fs::path& out_dir,
                                               const std::string& config_text = {}, std::ostream& log = std::cerr) {
  cfg.corpus.validate();
  const auto& cc = cfg.corpus;
  ensure_dir(out_dir);
  echo_config(out_dir, cfg, config_text);

  std::map<int, Manifest> unlabeled;
  std::map<int, long long> next_group;
  for (int n : cc.nearby) {
    ensure_dir(out_dir / unlabeled_dir_name(n) / "patches");
    unlabeled[n] = Manifest{cc.patch_size, n, cc.num_classes, cfg.seed, {}};
  }
  for (int s = 0; s < cc.num_unlabeled_slides; ++s) {
    const auto id = slide_name("unl", s);
    const auto slide = generate_synthetic_slide(cc, derive_seed(cfg.seed, {0xc0, 0, static_cast<std::uint64_t>(s)}), id);
    for (int n : cc.nearby) {
      const auto groups = extract_unlabeled_groups(slide, cc.patch_size, n, unlabeled_quota(cc.group_budget, n),
                                                   derive_seed(cfg.seed, {0xe0, static_cast<std::uint64_t>(n),
                                                                          static_cast<std::uint64_t>(s)}),
                                                   next_group[n]);
      next_group[n] += static_cast<long long>(groups.size());
      const fs::path patch_dir = out_dir / unlabeled_dir_name(n) / "patches";
      for (const auto& g : groups) {
        unlabeled[n].records.push_back(g.center);
        write_png((patch_dir / patch_file_name(g.center)).string(), crop_patch(slide, g.center));
        for (const auto& r : g.nearby) {
          unlabeled[n].records.push_back(r);
          write_png((patch_dir / patch_file_name(r)).string(), crop_patch(slide, r));
        }
      }
    }
    log << "generated " << id << "\n";
  }

  Manifest labeled{cc.patch_size, 0, cc.num_classes, cfg.seed, {}};
  ensure_dir(out_dir / "labeled" / "patches");
  ensure_dir(out_dir / "slides");
  long long gid = 0;
  auto add_labeled = [&](const char* kind, int count, Split split, std::uint64_t tag) {
    for (int s = 0; s < count; ++s) {
      const auto id = slide_name(kind, s);
      const auto slide = generate_synthetic_slide(cc, derive_seed(cfg.seed, {0xc0, tag, static_cast<std::uint64_t>(s)}), id);
      const int n = cc.labeled_per_slide > 0 ? cc.labeled_per_slide : labeled_capacity(slide, cc.patch_size);
      const auto recs = extract_labeled_patches(slide, cc.patch_size, n, split,
                                                derive_seed(cfg.seed, {0xe1, tag, static_cast<std::uint64_t>(s)}), gid);
      gid += static_cast<long long>(recs.size());
      for (const auto& r : recs) {
        labeled.records.push_back(r);
        write_png((out_dir / "labeled" / "patches" / patch_file_name(r)).string(), crop_patch(slide, r));
      }
      if (split == Split::test) {
        write_png((out_dir / "slides" / (id + ".png")).string(), slide.pixels);
        write_png_gray((out_dir / "slides" / (id + "_mask.png")).string(), slide.width(), slide.height(), slide.mask);
      }
      log << "generated " << id << "\n";
    }
  };
  add_labeled("trn", cc.num_train_slides, Split::train, 1);
  add_labeled("tst", cc.num_test_slides, Split::test, 2);

  std::vector<SplitCount> counts;
  for (auto& [n, m] : unlabeled) {
    write_manifest(m, (out_dir / unlabeled_dir_name(n) / "manifest.tsv").string());
    SplitCount c{unlabeled_dir_name(n)};
    for (const auto& r : m.records) (r.is_center() ? c.centers : c.nearby) += 1;
    counts.push_back(c);
  }
  write_manifest(labeled, (out_dir / "labeled" / "manifest.tsv").string());
  for (Split s : {Split::train, Split::test}) {
    SplitCount c{std::string("labeled-") + to_string(s)};
    for (const auto& r : labeled.records)
      if (r.split == s) ++c.centers;
    counts.push_back(c);
  }

  std::ostringstream table;
  table << "set\tcenter\tnearby\ttotal\n";
  for (const auto& c : counts) table << c.name << '\t' << c.centers << '\t' << c.nearby << '\t' << c.centers + c.nearby << '\n';
  write_text(out_dir / "counts.tsv", table.str());
  log << table.str();
  return counts;
}

// --------------------------------------------------------------- loading

inline fs::path patches_dir_for(const fs::path& manifest_path) { return manifest_path.parent_path() / "patches"; }

inline Image load_patch(const fs::path& dir, const PatchRecord& r) {
  const fs::path path = dir / patch_file_name(r);
  Image img = read_png(path.string());
  detail::require<data_error>(img.width == r.size && img.height == r.size,
                              "patch image " + path.string() + " does not match its manifest size");
  return img;
}

inline std::vector<GroupImages> load_groups(const fs::path& manifest_path) {
  detail::require<data_error>(fs::exists(manifest_path), "missing manifest: " + manifest_path.string());
  const Manifest m = read_manifest(manifest_path.string());
  const fs::path dir = patches_dir_for(manifest_path);
  std::vector<GroupImages> out;
  for (const auto& g : manifest_groups(m)) {
    GroupImages gi;
    gi.center = load_patch(dir, g.center);
    for (const auto& r : g.nearby) gi.nearby.push_back(load_patch(dir, r));
    out.push_back(std::move(gi));
  }
  return out;
}

struct LabeledSet {
  std::vector<Image> images;
  std::vector<int> labels;
};

inline LabeledSet load_labeled(const fs::path& manifest_path, Split split, int& num_classes) {
  detail::require<data_error>(fs::exists(manifest_path), "missing manifest: " + manifest_path.string());
  const Manifest m = read_manifest(manifest_path.string());
  num_classes = m.num_classes;
  const fs::path dir = patches_dir_for(manifest_path);
  LabeledSet out;
  for (const auto& r : manifest_split(m, split)) {
    out.images.push_back(load_patch(dir, r));
    out.labels.push_back(*r.label);
  }
  detail::require<data_error>(!out.images.empty(), std::string("manifest has no ") + to_string(split) + " records");
  return out;
}

inline std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t file_hash(const fs::path& path, std::uint64_t h = 0xcbf29ce484222325ull) {
  std::ifstream in(path, std::ios::binary);
  detail::require<data_error>(static_cast<bool>(in), "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a(ss.str(), h);
}

inline Matrix<float> encode_eval(const Model<float>& model, const std::vector<Image>& images, const EvalTransform& t) {
  constexpr std::size_t kChunk = 64;
  Matrix<float> out(images.size(), static_cast<std::size_t>(model.feature_dim()));
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    std::vector<Image> views;
    for (std::size_t i = start; i < std::min(images.size(), start + kChunk); ++i) views.push_back(eval_view(images[i], t));
    const auto f = model.encode(views);
    std::copy(f.data.begin(), f.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(start * out.cols));
  }
  return out;
}

// --------------------------------------------------------------- pretrain

inline std::uint64_t model_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, {0x30de1}); }

struct PretrainResult {
  std::vector<TraceRow> trace;
  fs::path final_checkpoint;
};

inline void write_trace_csv(const fs::path& path, const std::vector<TraceRow>& trace) {
  std::ostringstream out;
  out << "epoch,step,lr,loss\n";
  out << std::setprecision(9);
  for (const auto& r : trace) out << r.epoch << ',' << r.step << ',' << r.lr << ',' << r.loss << '\n';
  write_text(path, out.str());
}

inline PretrainResult run_pretrain(const RunConfig& cfg, const fs::path& out_dir, const std::string& config_text = {},
                                   std::ostream& log = std::cerr) {
  cfg.validate();
  const fs::path manifest = fs::path(cfg.corpus_dir) / unlabeled_dir_name(cfg.trainer.nearby) / "manifest.tsv";
  detail::require<data_error>(fs::exists(manifest), "missing manifest for N=" + std::to_string(cfg.trainer.nearby) +
                                                        ": " + manifest.string() + " (run generate-corpus first)");
  const Manifest header = read_manifest(manifest.string());
  detail::require<data_error>(header.nearby == cfg.trainer.nearby, "manifest N does not match trainer.nearby");
  const auto groups = load_groups(manifest);
  ensure_dir(out_dir);
  echo_config(out_dir, cfg, config_text);

  Model<float> model(cfg.encoder, cfg.projection, model_seed(cfg));
  const nlohmann::json meta = {{"run", cfg.name}, {"seed", cfg.seed}, {"nearby", cfg.trainer.nearby},
                               {"variant", to_string(cfg.trainer.variant)}};
  PretrainResult result;
  PretrainHooks hooks;
  hooks.on_epoch_end = [&](int epoch, bool last, const Model<float>& m) {
    if ((epoch + 1) % cfg.trainer.checkpoint_every == 0) {
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint-e%03d.bin", epoch + 1);
      save_checkpoint((out_dir / name).string(), m, meta);
    }
    if (last) {
      result.final_checkpoint = out_dir / "checkpoint-final.bin";
      save_checkpoint(result.final_checkpoint.string(), m, meta);
    }
  };
  double epoch_sum = 0;
  int epoch_steps = 0, current = 0;
  hooks.on_step = [&](const TraceRow& r) {
    if (r.epoch != current && epoch_steps > 0) {
      log << "epoch " << current << " mean loss " << epoch_sum / epoch_steps << "\n";
      epoch_sum = 0;
      epoch_steps = 0;
    }
    current = r.epoch;
    epoch_sum += r.loss;
    ++epoch_steps;
  };
  log << "pretraining on " << groups.size() << " groups (N=" << cfg.trainer.nearby << ", C=" << cfg.trainer.centers()
      << ", variant=" << to_string(cfg.trainer.variant) << ")\n";
  result.trace = pretrain(groups, model, cfg.trainer, cfg.augment, cfg.eval, hooks);
  if (epoch_steps > 0) log << "epoch " << current << " mean loss " << epoch_sum / epoch_steps << "\n";
  write_trace_csv(out_dir / "trace.csv", result.trace);
  return result;
}

// --------------------------------------------------------------- lineval

struct FeatureSet {
  Matrix<float> train, test;
  std::vector<int> train_labels, test_labels;
  int num_classes = 0;
};

// Encodes the labeled train/test patches once; cached on disk by
// (checkpoint bytes, labeled manifest, eval transform).
inline FeatureSet labeled_features(const RunConfig& cfg, const Model<float>& model, const std::string& model_key,
                                   const fs::path& cache_dir, std::ostream& log) {
  const fs::path manifest = fs::path(cfg.corpus_dir) / "labeled" / "manifest.tsv";
  detail::require<data_error>(fs::exists(manifest), "missing labeled manifest: " + manifest.string());
  std::ostringstream key;
  key << model_key << '|' << cfg.eval.resize_size << '|' << cfg.eval.crop_size;
  for (int c = 0; c < 3; ++c) key << '|' << cfg.eval.mean[static_cast<std::size_t>(c)] << '|' << cfg.eval.stddev[static_cast<std::size_t>(c)];
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(file_hash(manifest, fnv1a(key.str()))));
  const fs::path cache = cache_dir / (std::string("features-") + hex + ".bin");

  FeatureSet fsets;
  LabeledSet train = load_labeled(manifest, Split::train, fsets.num_classes);
  LabeledSet test = load_labeled(manifest, Split::test, fsets.num_classes);
  fsets.train_labels = train.labels;
  fsets.test_labels = test.labels;

  if (fs::exists(cache)) {
    nlohmann::json header;
    auto tensors = detail::read_container(cache.string(), header);
    if (tensors.size() == 2 && tensors[0].shape.size() == 2 && tensors[0].shape[0] == train.images.size() &&
        tensors[1].shape.size() == 2 && tensors[1].shape[0] == test.images.size()) {
      fsets.train = Matrix<float>(tensors[0].shape[0], tensors[0].shape[1]);
      fsets.train.data = std::move(tensors[0].values);
      fsets.test = Matrix<float>(tensors[1].shape[0], tensors[1].shape[1]);
      fsets.test.data = std::move(tensors[1].values);
      log << "features loaded from " << cache.string() << "\n";
      return fsets;
    }
  }
  fsets.train = encode_eval(model, train.images, cfg.eval);
  fsets.test = encode_eval(model, test.images, cfg.eval);
  ensure_dir(cache_dir);
  detail::write_container(cache.string(), {{"kind", "features"}},
                          {{"train", {fsets.train.rows, fsets.train.cols}, fsets.train.data},
                           {"test", {fsets.test.rows, fsets.test.cols}, fsets.test.data}});
  return fsets;
}

inline std::string format_report(const EvalReport& r, int num_classes) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "checkpoint: " << r.checkpoint << "\n"
      << "label fraction: " << fraction_tag(r.fraction) << "%\n"
      << "training rows: " << r.train_rows << "\n"
      << "seed: " << r.seed << "\n"
      << "macro-F1 (mean of " << r.folds.size() << " fold models): " << 100 * r.macro_f1 << "\n"
      << "balanced accuracy (mean of " << r.folds.size() << " fold models): " << 100 * r.balanced_accuracy << "\n";
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    const auto& fr = r.folds[f];
    out << "\nfold " << f << ": macro-F1 " << 100 * fr.metrics.macro_f1 << ", balanced accuracy "
        << 100 * fr.metrics.balanced_accuracy << ", accuracy " << 100 * fr.metrics.accuracy << "\n";
    if (!fr.metrics.excluded.empty()) {
      out << "  classes without test support (excluded from means):";
      for (int c : fr.metrics.excluded) out << ' ' << c;
      out << "\n";
    }
    out << "  class  support  precision  recall  f1\n";
    for (int c = 0; c < num_classes; ++c) {
      const auto& pc = fr.metrics.per_class[static_cast<std::size_t>(c)];
      out << "  " << c << "  " << pc.support << "  " << 100 * pc.precision << "  " << 100 * pc.recall << "  "
          << 100 * pc.f1 << "\n";
    }
    out << "  confusion (rows true, columns predicted):\n";
    for (std::size_t i = 0; i < fr.confusion.rows; ++i) {
      out << "   ";
      for (std::size_t j = 0; j < fr.confusion.cols; ++j) out << ' ' << fr.confusion(i, j);
      out << "\n";
    }
  }
  return out.str();
}

struct LinevalResult {
  std::vector<EvalReport> reports;  // one per configured fraction
};

// `checkpoint` empty selects the random-init baseline: the untrained
// encoder the pretraining run would start from.
inline LinevalResult run_lineval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out_dir,
                                 std::ostream& log = std::cerr) {
  cfg.validate();
  ensure_dir(out_dir);
  Model<float> model;
  std::string model_key, checkpoint_id;
  if (checkpoint.empty()) {
    model = Model<float>(cfg.encoder, cfg.projection, model_seed(cfg));
    model_key = "random-init:" + std::to_string(model_seed(cfg)) + ":" + to_json(cfg.encoder).dump() +
                to_json(cfg.projection).dump();
    checkpoint_id = "random-init";
  } else {
    detail::require<data_error>(fs::exists(checkpoint), "missing checkpoint: " + checkpoint.string());
    model = load_checkpoint(checkpoint.string()).model;
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(file_hash(checkpoint)));
    model_key = hex;
    checkpoint_id = checkpoint.filename().string() + "@" + hex;
  }
  const FeatureSet feats = labeled_features(cfg, model, model_key, out_dir / "cache", log);

  LinevalResult result;
  std::ostringstream summary;
  summary << "fraction,train_rows,macro_f1,balanced_accuracy\n" << std::fixed << std::setprecision(4);
  for (double fraction : cfg.lineval.fractions) {
    const auto idx = subsample_labels(feats.train_labels, feats.num_classes, fraction, derive_seed(cfg.seed, {0x5b}));
    const auto x = select_rows(feats.train, idx);
    const auto y = select(std::span<const int>(feats.train_labels), idx);
    std::vector<int> small;
    const auto heads = train_fold_heads(x, y, feats.num_classes, cfg.lineval, cfg.lineval.batch_size_for(fraction),
                                        derive_seed(cfg.seed, {0x11e}), &small);
    for (int c : small)
      log << "warning: fraction " << fraction_tag(fraction) << "%: class " << c << " has fewer than "
          << cfg.lineval.folds << " labeled patches; some folds train without it\n";
    EvalReport report = evaluate(heads, feats.test, feats.test_labels, feats.num_classes);
    report.fraction = fraction;
    report.train_rows = idx.size();
    report.checkpoint = checkpoint_id;
    report.seed = cfg.seed;

    const std::string tag = fraction_tag(fraction);
    write_text(out_dir / ("report-" + tag + ".txt"), format_report(report, feats.num_classes));
    std::ostringstream folds;
    folds << "fold,macro_f1,balanced_accuracy,accuracy\n" << std::fixed << std::setprecision(4);
    for (std::size_t f = 0; f < report.folds.size(); ++f)
      folds << f << ',' << 100 * report.folds[f].metrics.macro_f1 << ',' << 100 * report.folds[f].metrics.balanced_accuracy
            << ',' << 100 * report.folds[f].metrics.accuracy << '\n';
    write_text(out_dir / ("folds-" + tag + ".csv"), folds.str());
    save_heads((out_dir / ("heads-" + tag + ".bin")).string(), heads,
               {{"fraction", fraction}, {"checkpoint", checkpoint_id}, {"num_classes", feats.num_classes}});
    summary << tag << ',' << idx.size() << ',' << 100 * report.macro_f1 << ',' << 100 * report.balanced_accuracy << '\n';
    log << "fraction " << tag << "%: macro-F1 " << 100 * report.macro_f1 << ", balanced accuracy "
        << 100 * report.balanced_accuracy << "\n";
    result.reports.push_back(std::move(report));
  }
  write_text(out_dir / "summary.csv", summary.str());
  return result;
}

// --------------------------------------------------------------- rendering

// Class palette (RGB), in class-id order.
inline constexpr std::array<std::array<std::uint8_t, 3>, 6> kClassPalette = {{
    {255, 255, 255},  // 0 Background
    {230, 159, 0},    // 1 Dermis
    {86, 180, 233},   // 2 Epidermis
    {0, 158, 115},    // 3 Inflamm/Necrosis
    {240, 228, 66},   // 4 Subcutis
    {213, 94, 0},     // 5 Tumor
}};
inline constexpr std::array<const char*, 6> kClassNames = {"Background", "Dermis", "Epidermis",
                                                           "Inflamm/Necrosis", "Subcutis", "Tumor"};

inline std::array<std::uint8_t, 3> class_color(int k) {
  if (k >= 0 && k < static_cast<int>(kClassPalette.size())) return kClassPalette[static_cast<std::size_t>(k)];
  const auto h = mix64(static_cast<std::uint64_t>(k));
  return {static_cast<std::uint8_t>(h), static_cast<std::uint8_t>(h >> 8), static_cast<std::uint8_t>(h >> 16)};
}

inline Image render_labels(int width, int height, const std::vector<std::uint8_t>& labels) {
  Image img(width, height);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const auto c = class_color(labels[p]);
    for (std::size_t ch = 0; ch < 3; ++ch) img.rgb[p * 3 + ch] = static_cast<float>(c[ch]) / 255.0f;
  }
  return img;
}

// Inverse of render_labels for palette colours; -1 for unknown colours.
inline std::vector<int> decode_labels(const Image& img, int num_classes) {
  std::vector<int> out(static_cast<std::size_t>(img.width) * img.height, -1);
  for (std::size_t p = 0; p < out.size(); ++p) {
    for (int k = 0; k < num_classes; ++k) {
      const auto c = class_color(k);
      bool match = true;
      for (std::size_t ch = 0; ch < 3; ++ch)
        match = match && std::lround(img.rgb[p * 3 + ch] * 255.0f) == c[ch];
      if (match) {
        out[p] = k;
        break;
      }
    }
  }
  return out;
}

struct RenderResult {
  int grid_width = 0;
  int grid_height = 0;
  std::vector<int> predicted;  // per tile
  double pixel_accuracy = 0;
};

// Classifies every non-overlapping tile of a slide with the fold models
// (majority vote) and writes <prefix>_pred.png (one pixel per tile),
// <prefix>_truth.png (full-resolution mask), <prefix>_legend.txt and
// <prefix>_accuracy.txt.
inline RenderResult render_map(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& heads_path,
                               const fs::path& slide_prefix, const fs::path& out_prefix) {
  const Model<float> model = load_checkpoint(checkpoint.string()).model;
  const auto heads = load_heads(heads_path.string());
  detail::require<data_error>(!heads.empty(), "no classifiers in " + heads_path.string());
  const int classes = static_cast<int>(heads.front().classes());
  detail::require<data_error>(static_cast<int>(heads.front().dim()) == model.feature_dim(),
                              "classifier dimension does not match the encoder features");
  const Image slide = read_png(slide_prefix.string() + ".png");
  int mw = 0, mh = 0;
  const auto mask = read_png_gray(slide_prefix.string() + "_mask.png", mw, mh);
  detail::require<data_error>(mw == slide.width && mh == slide.height, "slide and mask sizes differ");
  const int patch = cfg.corpus.patch_size;
  RenderResult r;
  r.grid_width = slide.width / patch;
  r.grid_height = slide.height / patch;
  detail::require<data_error>(r.grid_width > 0 && r.grid_height > 0, "slide smaller than one tile");

  std::vector<Image> tiles;
  for (int gy = 0; gy < r.grid_height; ++gy)
    for (int gx = 0; gx < r.grid_width; ++gx) tiles.push_back(crop(slide, gx * patch, gy * patch, patch, patch));
  const auto features = encode_eval(model, tiles, cfg.eval);
  r.predicted = vote(heads, features, classes);

  std::vector<std::uint8_t> grid(r.predicted.begin(), r.predicted.end());
  ensure_dir(out_prefix.parent_path().empty() ? fs::path(".") : out_prefix.parent_path());
  write_png(out_prefix.string() + "_pred.png", render_labels(r.grid_width, r.grid_height, grid));
  write_png(out_prefix.string() + "_truth.png", render_labels(mw, mh, mask));

  long long correct = 0, total = 0;
  for (int y = 0; y < r.grid_height * patch; ++y)
    for (int x = 0; x < r.grid_width * patch; ++x) {
      const int pred = r.predicted[static_cast<std::size_t>((y / patch) * r.grid_width + x / patch)];
      correct += pred == mask[static_cast<std::size_t>(y) * mw + x];
      ++total;
    }
  r.pixel_accuracy = static_cast<double>(correct) / static_cast<double>(total);

  std::ostringstream legend;
  legend << "class\tname\tr\tg\tb\n";
  for (int k = 0; k < std::max(classes, static_cast<int>(kClassNames.size())); ++k) {
    const auto c = class_color(k);
    legend << k << '\t' << (k < static_cast<int>(kClassNames.size()) ? kClassNames[static_cast<std::size_t>(k)] : "class")
           << '\t' << int(c[0]) << '\t' << int(c[1]) << '\t' << int(c[2]) << '\n';
  }
  write_text(out_prefix.string() + "_legend.txt", legend.str());
  std::ostringstream acc;
  acc << std::fixed << std::setprecision(4) << "pixel_accuracy\t" << 100 * r.pixel_accuracy << "\n"
      << "grid\t" << r.grid_width << "x" << r.grid_height << "\n";
  write_text(out_prefix.string() + "_accuracy.txt", acc.str());
  return r;
}

// --------------------------------------------------------------- ablation

struct AblationCell {
  int nearby = 0;
  LossVariant variant = LossVariant::dcl;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<double> f1, ba;  // per fraction, x100
};

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Pretrain + lineval for every (N, variant, seed); writes runs.csv (one row
// per cell) and ablation.csv (rows (N, variant), median over seeds, columns
// fraction x {F1, BA}). Failed cells are marked and the grid continues.
// Cells have independent output directories; `jobs` > 1 runs up to that
// many at once with identical results.
inline std::vector<AblationCell> run_ablation(const RunConfig& cfg, const fs::path& out_dir,
                                              const std::string& config_text = {}, std::ostream& log = std::cerr,
                                              int jobs = 1) {
  cfg.validate();
  detail::require<config_error>(jobs >= 1, "ablation jobs must be >= 1");
  ensure_dir(out_dir);
  echo_config(out_dir, cfg, config_text);
  std::vector<AblationCell> cells;
  for (int n : cfg.ablation.nearby)
    for (LossVariant v : cfg.ablation.variants)
      for (std::uint64_t seed : cfg.ablation.seeds) {
        AblationCell cell;
        cell.nearby = n;
        cell.variant = v;
        cell.seed = seed;
        cells.push_back(cell);
      }

  auto run_cell = [&](AblationCell& cell, std::ostream& out) {
    RunConfig child = cfg;
    set_seed(child, cell.seed);
    child.trainer.nearby = cell.nearby;
    child.trainer.variant = cell.variant;
    child.lineval.fractions = cfg.ablation.fractions;
    const fs::path dir =
        out_dir / ("N" + std::to_string(cell.nearby) + "-" + to_string(cell.variant) + "-s" + std::to_string(cell.seed));
    out << "ablation cell " << dir.filename().string() << "\n";
    try {
      child.validate();
      const auto pre = run_pretrain(child, dir / "pretrain", {}, out);
      const auto ev = run_lineval(child, pre.final_checkpoint, dir / "lineval", out);
      for (const auto& r : ev.reports) {
        cell.f1.push_back(100 * r.macro_f1);
        cell.ba.push_back(100 * r.balanced_accuracy);
      }
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.error = e.what();
      out << "cell failed: " << e.what() << "\n";
    }
  };

  if (jobs == 1) {
    for (auto& c : cells) run_cell(c, log);
  } else {
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    std::vector<std::thread> workers;
    for (int w = 0; w < std::min<int>(jobs, static_cast<int>(cells.size())); ++w)
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
          std::ostringstream buf;
          run_cell(cells[i], buf);
          const std::lock_guard<std::mutex> lock(log_mutex);
          log << buf.str();
        }
      });
    for (auto& t : workers) t.join();
  }

  std::ostringstream runs, table;
  runs << std::fixed << std::setprecision(4);
  table << std::fixed << std::setprecision(4);
  std::string header = "N,variant";
  for (const char* metric : {"f1", "ba"})
    for (double f : cfg.ablation.fractions) header += std::string(",") + metric + "_" + fraction_tag(f);
  runs << header.substr(0, 9) << ",seed,status" << header.substr(9) << '\n';
  table << header << ",seeds_ok\n";
  for (const auto& c : cells) {
    runs << c.nearby << ',' << to_string(c.variant) << ',' << c.seed << ',' << (c.ok ? "ok" : "failed");
    for (std::size_t i = 0; i < 2 * cfg.ablation.fractions.size(); ++i) {
      runs << ',';
      if (c.ok) runs << (i < cfg.ablation.fractions.size() ? c.f1[i] : c.ba[i - cfg.ablation.fractions.size()]);
    }
    runs << '\n';
  }
  for (int n : cfg.ablation.nearby)
    for (LossVariant v : cfg.ablation.variants) {
      std::vector<const AblationCell*> ok;
      for (const auto& c : cells)
        if (c.nearby == n && c.variant == v && c.ok) ok.push_back(&c);
      table << n << ',' << to_string(v);
      for (std::size_t i = 0; i < 2 * cfg.ablation.fractions.size(); ++i) {
        table << ',';
        if (ok.empty()) {
          table << "failed";
          continue;
        }
        std::vector<double> vals;
        for (const auto* c : ok)
          vals.push_back(i < cfg.ablation.fractions.size() ? c->f1[i] : c->ba[i - cfg.ablation.fractions.size()]);
        table << median(vals);
      }
      table << ',' << ok.size() << '\n';
    }
  write_text(out_dir / "runs.csv", runs.str());
  write_text(out_dir / "ablation.csv", table.str());
  log << table.str();
  return cells;
}

}  // namespace npcl
