// Command-line front end. Exit codes: 0 success, 1 config error,
// 2 data error, 3 numeric failure.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "npcl.hpp"

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run configuration (defaults apply to missing keys)");
  cmd->add_option("--seed", c.seed, "root seed; overrides the config value");
  cmd->add_option("--out", c.out, "output directory or prefix")->required();
}

struct Loaded {
  npcl::RunConfig cfg;
  std::string text;
};

Loaded load(const Common& c, const std::string& corpus_override) {
  Loaded l;
  if (!c.config.empty()) {
    l.text = npcl::read_text_file(c.config);
    l.cfg = npcl::parse_run_config_text(l.text);
  }
  if (c.seed) npcl::set_seed(l.cfg, *c.seed);
  if (!corpus_override.empty()) l.cfg.corpus_dir = corpus_override;
  l.cfg.out = c.out;
  l.cfg.validate();
  return l;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive pretraining with nearby-patch positives on synthetic histology"};
  app.require_subcommand(1);

  Common gen_c, pre_c, eval_c, map_c, abl_c;
  std::string pre_corpus, eval_corpus, abl_corpus, checkpoint, baseline, map_checkpoint, heads, slide;

  auto* gen = app.add_subcommand("generate-corpus", "synthesize slides and write patch manifests");
  add_common(gen, gen_c);

  auto* pre = app.add_subcommand("pretrain", "contrastive pretraining on one unlabeled manifest");
  add_common(pre, pre_c);
  pre->add_option("--corpus", pre_corpus, "corpus directory; overrides corpus_dir");

  auto* ev = app.add_subcommand("lineval", "linear evaluation of a frozen encoder");
  add_common(ev, eval_c);
  ev->add_option("--corpus", eval_corpus, "corpus directory; overrides corpus_dir");
  auto* ck = ev->add_option("--checkpoint", checkpoint, "encoder checkpoint");
  auto* bl = ev->add_option("--baseline", baseline, "evaluate a baseline encoder instead")
                 ->check(CLI::IsMember({"random-init"}));
  ck->excludes(bl);

  auto* map = app.add_subcommand("render-map", "tile-level prediction map of a test slide");
  add_common(map, map_c);
  map->add_option("--checkpoint", map_checkpoint, "encoder checkpoint")->required();
  map->add_option("--heads", heads, "fold classifiers written by lineval (heads-<pct>.bin)")->required();
  map->add_option("--slide", slide, "slide path prefix; reads <prefix>.png and <prefix>_mask.png")->required();

  auto* abl = app.add_subcommand("ablate", "pretrain + lineval over the configured ablation grid");
  add_common(abl, abl_c);
  abl->add_option("--corpus", abl_corpus, "corpus directory; overrides corpus_dir");
  int jobs = 1;
  abl->add_option("--jobs", jobs, "grid cells run concurrently")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      const auto l = load(gen_c, "");
      npcl::generate_corpus(l.cfg, l.cfg.out, l.text);
    } else if (*pre) {
      const auto l = load(pre_c, pre_corpus);
      const auto r = npcl::run_pretrain(l.cfg, l.cfg.out, l.text);
      std::cout << r.final_checkpoint.string() << "\n";
    } else if (*ev) {
      const auto l = load(eval_c, eval_corpus);
      npcl::detail::require<npcl::config_error>(!checkpoint.empty() || !baseline.empty(),
                                                "lineval needs --checkpoint or --baseline random-init");
      const auto r = npcl::run_lineval(l.cfg, checkpoint, l.cfg.out);
      std::cout << "fraction,macro_f1,balanced_accuracy\n";
      for (const auto& rep : r.reports)
        std::cout << npcl::fraction_tag(rep.fraction) << ',' << 100 * rep.macro_f1 << ','
                  << 100 * rep.balanced_accuracy << "\n";
    } else if (*map) {
      const auto l = load(map_c, "");
      const auto r = npcl::render_map(l.cfg, map_checkpoint, heads, slide, l.cfg.out);
      std::cout << "pixel_accuracy " << 100 * r.pixel_accuracy << "\n";
    } else if (*abl) {
      const auto l = load(abl_c, abl_corpus);
      const auto cells = npcl::run_ablation(l.cfg, l.cfg.out, l.text, std::cerr, jobs);
      for (const auto& c : cells)
        if (!c.ok) std::cerr << "warning: cell N=" << c.nearby << " " << npcl::to_string(c.variant) << " seed " << c.seed
                             << " failed: " << c.error << "\n";
    }
  } catch (const npcl::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const npcl::data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const npcl::numeric_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
