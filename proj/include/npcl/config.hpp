#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "npcl/augment.hpp"
#include "npcl/corpus.hpp"
#include "npcl/error.hpp"
#include "npcl/lineval.hpp"
#include "npcl/model.hpp"
#include "npcl/trainer.hpp"

namespace npcl {

struct AblationGrid {
  std::vector<int> nearby = {0, 1, 2, 4, 8};
  std::vector<LossVariant> variants = {LossVariant::dcl, LossVariant::naive};
  std::vector<double> fractions = {0.01, 0.1, 0.2, 1.0};
  std::vector<std::uint64_t> seeds = {1};

  void validate() const {
    using detail::require;
    require<config_error>(!nearby.empty() && !variants.empty() && !fractions.empty() && !seeds.empty(),
                          "ablation lists must be non-empty");
    for (int n : nearby) require<config_error>(n >= 0 && n <= kMaxNearby, "ablation nearby values must be in [0, 8]");
    for (double f : fractions) require<config_error>(f > 0 && f <= 1, "ablation fractions must lie in (0, 1]");
  }
};

// Every field has a default; unknown keys are rejected.
struct RunConfig {
  std::string name = "run";
  std::string out = "out";
  std::string corpus_dir = "corpus";
  std::uint64_t seed = 0;
  CorpusConfig corpus;
  AugmentPolicy augment;
  EvalTransform eval;
  EncoderConfig encoder;
  ProjectionConfig projection;
  TrainConfig trainer;
  EvalConfig lineval;
  AblationGrid ablation;

  void validate() const {
    corpus.validate();
    augment.validate();
    eval.validate();
    encoder.validate();
    projection.validate();
    trainer.validate();
    lineval.validate();
    ablation.validate();
  }
};

namespace detail {

// Reads known keys from a JSON object and rejects anything left over.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    require<config_error>(j.is_object(), "config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& field) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      field = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw config_error("config: '" + path_ + "." + key + "' has the wrong type");
    }
  }

  template <typename T>
  void read_pair(const char* key, T& lo, T& hi) {
    std::vector<T> v{lo, hi};
    read(key, v);
    require<config_error>(v.size() == 2, "config: '" + path_ + "." + key + "' must have two entries");
    lo = v[0];
    hi = v[1];
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      require<config_error>(seen_.contains(k), "config: unknown key '" + path_ + (path_.empty() ? "" : ".") + k + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline LossVariant variant_from(const std::string& s) {
  try {
    return parse_loss_variant(s);
  } catch (const config_error& e) {
    throw config_error(std::string("config: ") + e.what());
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::StrictObject;
  RunConfig c;
  StrictObject root(j, "");
  root.read("name", c.name);
  root.read("out", c.out);
  root.read("corpus_dir", c.corpus_dir);
  root.read("seed", c.seed);

  if (const auto* s = root.child("corpus")) {
    StrictObject o(*s, "corpus");
    auto& k = c.corpus;
    o.read("num_unlabeled_slides", k.num_unlabeled_slides);
    o.read("num_train_slides", k.num_train_slides);
    o.read("num_test_slides", k.num_test_slides);
    o.read("slide_size", k.slide_size);
    o.read("patch_size", k.patch_size);
    o.read("num_classes", k.num_classes);
    o.read("group_budget", k.group_budget);
    o.read("nearby", k.nearby);
    o.read("labeled_per_slide", k.labeled_per_slide);
    o.read("regions_per_slide", k.regions_per_slide);
    o.read("stain_jitter", k.stain_jitter);
    o.read("stain_field", k.stain_field);
    o.read("stain_field_scale", k.stain_field_scale);
    o.read("texture_seed", k.texture_seed);
    o.finish();
  }
  if (const auto* s = root.child("augment")) {
    StrictObject o(*s, "augment");
    auto& a = c.augment;
    o.read("target_size", a.target_size);
    o.read_pair("crop_scale", a.scale_min, a.scale_max);
    o.read_pair("crop_ratio", a.ratio_min, a.ratio_max);
    o.read("flip_prob", a.flip_prob);
    o.read("jitter_prob", a.jitter_prob);
    o.read("brightness", a.brightness);
    o.read("contrast", a.contrast);
    o.read("saturation", a.saturation);
    o.read("hue", a.hue);
    o.read("grayscale_prob", a.grayscale_prob);
    o.read("max_crop_attempts", a.max_crop_attempts);
    if (const auto* e = o.child("eval")) {
      StrictObject ev(*e, "augment.eval");
      ev.read("resize_size", c.eval.resize_size);
      ev.read("crop_size", c.eval.crop_size);
      ev.read("mean", c.eval.mean);
      ev.read("std", c.eval.stddev);
      ev.finish();
    }
    o.finish();
  }
  if (const auto* s = root.child("model")) {
    StrictObject o(*s, "model");
    if (const auto* e = o.child("encoder")) {
      StrictObject enc(*e, "model.encoder");
      std::string preset = c.encoder.preset;
      enc.read("preset", preset);
      if (preset == "paper") c.encoder = EncoderConfig::paper();
      c.encoder.preset = preset;
      enc.read("channels", c.encoder.channels);
      enc.read("feature_dim", c.encoder.feature_dim);
      enc.read("stride", c.encoder.stride);
      enc.finish();
    }
    if (const auto* p = o.child("projection")) {
      StrictObject proj(*p, "model.projection");
      proj.read("hidden_dim", c.projection.hidden_dim);
      proj.read("output_dim", c.projection.output_dim);
      proj.finish();
    }
    o.finish();
  }
  if (const auto* s = root.child("trainer")) {
    StrictObject o(*s, "trainer");
    auto& t = c.trainer;
    o.read("base_lr", t.base_lr);
    o.read("momentum", t.momentum);
    o.read("weight_decay", t.weight_decay);
    o.read("epochs", t.epochs);
    o.read("warmup_epochs", t.warmup_epochs);
    o.read("view_budget", t.view_budget);
    o.read("nearby", t.nearby);
    o.read("tau", t.tau);
    std::string variant = to_string(t.variant);
    o.read("variant", variant);
    t.variant = detail::variant_from(variant);
    o.read("checkpoint_every", t.checkpoint_every);
    o.finish();
  }
  if (const auto* s = root.child("lineval")) {
    StrictObject o(*s, "lineval");
    auto& l = c.lineval;
    o.read("fractions", l.fractions);
    o.read("epochs", l.epochs);
    o.read("lr", l.lr);
    o.read("momentum", l.momentum);
    o.read("weight_decay", l.weight_decay);
    o.read("batch_size", l.batch_size);
    o.read("small_batch_size", l.small_batch_size);
    o.read("small_fraction", l.small_fraction);
    o.read("folds", l.folds);
    o.read("standardize", l.standardize);
    o.finish();
  }
  if (const auto* s = root.child("ablation")) {
    StrictObject o(*s, "ablation");
    auto& g = c.ablation;
    o.read("nearby", g.nearby);
    std::vector<std::string> variants;
    for (auto v : g.variants) variants.emplace_back(to_string(v));
    o.read("variants", variants);
    g.variants.clear();
    for (const auto& v : variants) g.variants.push_back(detail::variant_from(v));
    o.read("fractions", g.fractions);
    o.read("seeds", g.seeds);
    o.finish();
  }
  root.finish();
  c.trainer.seed = c.seed;
  c.lineval.seed = c.seed;
  c.validate();
  return c;
}

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  std::vector<std::string> variants;
  for (auto v : c.ablation.variants) variants.emplace_back(to_string(v));
  return json{
      {"name", c.name},
      {"out", c.out},
      {"corpus_dir", c.corpus_dir},
      {"seed", c.seed},
      {"corpus",
       {{"num_unlabeled_slides", c.corpus.num_unlabeled_slides},
        {"num_train_slides", c.corpus.num_train_slides},
        {"num_test_slides", c.corpus.num_test_slides},
        {"slide_size", c.corpus.slide_size},
        {"patch_size", c.corpus.patch_size},
        {"num_classes", c.corpus.num_classes},
        {"group_budget", c.corpus.group_budget},
        {"nearby", c.corpus.nearby},
        {"labeled_per_slide", c.corpus.labeled_per_slide},
        {"regions_per_slide", c.corpus.regions_per_slide},
        {"stain_jitter", c.corpus.stain_jitter},
        {"stain_field", c.corpus.stain_field},
        {"stain_field_scale", c.corpus.stain_field_scale},
        {"texture_seed", c.corpus.texture_seed}}},
      {"augment",
       {{"target_size", c.augment.target_size},
        {"crop_scale", {c.augment.scale_min, c.augment.scale_max}},
        {"crop_ratio", {c.augment.ratio_min, c.augment.ratio_max}},
        {"flip_prob", c.augment.flip_prob},
        {"jitter_prob", c.augment.jitter_prob},
        {"brightness", c.augment.brightness},
        {"contrast", c.augment.contrast},
        {"saturation", c.augment.saturation},
        {"hue", c.augment.hue},
        {"grayscale_prob", c.augment.grayscale_prob},
        {"max_crop_attempts", c.augment.max_crop_attempts},
        {"eval",
         {{"resize_size", c.eval.resize_size},
          {"crop_size", c.eval.crop_size},
          {"mean", c.eval.mean},
          {"std", c.eval.stddev}}}}},
      {"model",
       {{"encoder",
         {{"preset", c.encoder.preset},
          {"channels", c.encoder.channels},
          {"feature_dim", c.encoder.feature_dim},
          {"stride", c.encoder.stride}}},
        {"projection", {{"hidden_dim", c.projection.hidden_dim}, {"output_dim", c.projection.output_dim}}}}},
      {"trainer",
       {{"base_lr", c.trainer.base_lr},
        {"momentum", c.trainer.momentum},
        {"weight_decay", c.trainer.weight_decay},
        {"epochs", c.trainer.epochs},
        {"warmup_epochs", c.trainer.warmup_epochs},
        {"view_budget", c.trainer.view_budget},
        {"nearby", c.trainer.nearby},
        {"tau", c.trainer.tau},
        {"variant", to_string(c.trainer.variant)},
        {"checkpoint_every", c.trainer.checkpoint_every}}},
      {"lineval",
       {{"fractions", c.lineval.fractions},
        {"epochs", c.lineval.epochs},
        {"lr", c.lineval.lr},
        {"momentum", c.lineval.momentum},
        {"weight_decay", c.lineval.weight_decay},
        {"batch_size", c.lineval.batch_size},
        {"small_batch_size", c.lineval.small_batch_size},
        {"small_fraction", c.lineval.small_fraction},
        {"folds", c.lineval.folds},
        {"standardize", c.lineval.standardize}}},
      {"ablation",
       {{"nearby", c.ablation.nearby},
        {"variants", variants},
        {"fractions", c.ablation.fractions},
        {"seeds", c.ablation.seeds}}},
  };
}

inline RunConfig parse_run_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw config_error(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_run_config(j);
}

// The run seed drives corpus, pretraining and linear evaluation alike.
inline void set_seed(RunConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.trainer.seed = seed;
  c.lineval.seed = seed;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  detail::require<config_error>(static_cast<bool>(in), "cannot read config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace npcl
