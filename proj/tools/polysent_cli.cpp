#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "polysent/pipeline.hpp"

namespace {

using namespace polysent;

std::vector<LanguageTag> parse_target_list(const std::string& csv) {
  std::vector<LanguageTag> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(LanguageTag::parse(item));
  return out;
}

struct GlobalOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  bool verbose = false;
};

ExperimentConfig load_experiment_config(const GlobalOpts& g) {
  if (g.config_path.empty())
    throw ConfigError("this command requires --config");
  ExperimentConfig cfg = ExperimentConfig::load(g.config_path);
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.pretrain.rng_seed = *g.seed;
    cfg.finetune.rng_seed = *g.seed;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-lingual tweet sentiment pipeline"};
  app.require_subcommand(1);

  GlobalOpts global;
  app.add_option("--config", global.config_path, "experiment config JSON");
  uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "override the config seed");
  app.add_flag("--verbose", global.verbose, "verbose progress output");

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "convert a dataset file to the canonical corpus TSV");
  std::string in_path, format_desc = "canonical", dataset = "corpus";
  std::string language = "en", split_str = "train", out_path;
  std::vector<std::string> label_maps;
  ingest_cmd->add_option("--input", in_path, "source file")->required();
  ingest_cmd->add_option("--format", format_desc, "'canonical' or 'columns:id=I,label=J,text=K[,header=0|1]'");
  ingest_cmd->add_option("--dataset", dataset, "dataset name");
  ingest_cmd->add_option("--language", language, "language code (en,fr,de,es,it)");
  ingest_cmd->add_option("--split", split_str, "train|dev|test");
  ingest_cmd->add_option("--label-map", label_maps, "RAW=canonical (repeatable; canonical may be 'skip')");
  ingest_cmd->add_option("--out", out_path, "output corpus TSV")->required();

  // augment
  auto* augment_cmd = app.add_subcommand("augment", "expand a corpus across languages via translation");
  std::string corpus_path, targets_csv = "en,fr,de,es,it", backend_name = "tagging";
  std::string lexicon_path, cache_path, aug_out, aug_dataset = "corpus", aug_split = "train";
  augment_cmd->add_option("--corpus", corpus_path, "input corpus TSV")->required();
  augment_cmd->add_option("--targets", targets_csv, "comma-separated target languages");
  augment_cmd->add_option("--backend", backend_name, "tagging|dictionary|http");
  augment_cmd->add_option("--lexicon", lexicon_path, "lexicon JSON (dictionary backend)");
  augment_cmd->add_option("--cache", cache_path, "translation cache file");
  augment_cmd->add_option("--dataset", aug_dataset, "dataset name for the corpus");
  augment_cmd->add_option("--split", aug_split, "split tag of the corpus");
  augment_cmd->add_option("--out", aug_out, "output corpus TSV")->required();

  // train / evaluate
  auto* train_cmd = app.add_subcommand("train", "run the training stages for one experiment");
  auto* eval_cmd = app.add_subcommand("evaluate", "train (resumable) and evaluate on the target test set");
  std::string target_override;
  bool flag_using_english = false, flag_data_augmentation = false;
  for (auto* cmd : {train_cmd, eval_cmd}) {
    cmd->add_option("--target", target_override, "target language");
    cmd->add_flag("--using-english", flag_using_english, "enable English pre-training");
    cmd->add_flag("--data-augmentation", flag_data_augmentation, "enable translation augmentation");
  }

  // report
  auto* report_cmd = app.add_subcommand("report", "render a results table from report JSON files");
  std::vector<std::string> report_files;
  std::string report_out;
  report_cmd->add_option("files", report_files, "report.json files")->required();
  report_cmd->add_option("--out", report_out, "write the table here as well");

  // matrix
  auto* matrix_cmd = app.add_subcommand("matrix", "run the full configuration grid over all targets");
  bool include_extra = false;
  std::string matrix_out;
  matrix_cmd->add_flag("--extra", include_extra, "also run the (no English, augmented) extra cell");
  matrix_cmd->add_option("--out", matrix_out, "write the table here as well");

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) global.seed = seed_value;

  try {
    if (ingest_cmd->parsed()) {
      FormatSpec spec = FormatSpec::parse(format_desc);
      for (const auto& m : label_maps) {
        auto eq = m.find('=');
        if (eq == std::string::npos)
          throw ConfigError("bad --label-map entry: '" + m + "'");
        spec.label_map[m.substr(0, eq)] = m.substr(eq + 1);
      }
      auto split = parse_split(split_str);
      if (!split) throw ConfigError("bad split: '" + split_str + "'");
      IngestStats stats;
      Corpus corpus = ingest(in_path, spec, dataset, LanguageTag::parse(language),
                             *split, &stats);
      write_corpus(corpus, out_path);
      std::printf("ingested %zu rows: kept %zu, skipped %zu (label) + %zu (empty)\n",
                  stats.rows_read, stats.rows_kept, stats.rows_skipped_label,
                  stats.rows_skipped_empty);
    } else if (augment_cmd->parsed()) {
      auto split = parse_split(aug_split);
      if (!split) throw ConfigError("bad split: '" + aug_split + "'");
      Corpus corpus = read_corpus(corpus_path, aug_dataset, *split);
      BackendConfig bc;
      bc.name = backend_name;
      bc.lexicon_path = lexicon_path;
      auto backend = make_backend(bc);
      TranslationCache cache(cache_path);
      AugmentationPlan plan;
      plan.target_languages = parse_target_list(targets_csv);
      Corpus augmented = augment_corpus(corpus, plan, *backend, cache);
      write_corpus(augmented, aug_out);
      std::printf("augmented %zu -> %zu examples (cache: %zu hits, %zu misses)\n",
                  corpus.size(), augmented.size(), cache.hits(), cache.misses());
    } else if (train_cmd->parsed() || eval_cmd->parsed()) {
      ExperimentConfig cfg = load_experiment_config(global);
      if (!target_override.empty()) cfg.target = LanguageTag::parse(target_override);
      if (flag_using_english) cfg.using_english = true;
      if (flag_data_augmentation) cfg.data_augmentation = true;
      if (train_cmd->parsed()) {
        int epochs = train_stages(cfg);
        std::printf("trained %d epoch(s); checkpoints under %s/stages\n", epochs,
                    cfg.run_dir.c_str());
      } else {
        ExperimentResult result = run_experiment(cfg);
        const EvalReport reports[] = {result.report};
        emit_report(reports, std::cout);
        std::printf("report: %s\npredictions: %s\nepochs trained: %d\n",
                    result.report_path.c_str(), result.predictions_path.c_str(),
                    result.epochs_trained);
      }
    } else if (report_cmd->parsed()) {
      std::vector<EvalReport> reports;
      for (const auto& f : report_files)
        reports.push_back(eval_report_from_json(read_file(f)));
      emit_report(reports, std::cout);
      if (!report_out.empty()) emit_report_file(reports, report_out);
    } else if (matrix_cmd->parsed()) {
      ExperimentConfig cfg = load_experiment_config(global);
      std::vector<EvalReport> reports = run_matrix(cfg, include_extra);
      emit_report(reports, std::cout);
      std::string out = matrix_out.empty() ? cfg.run_dir + "/matrix_report.txt"
                                           : matrix_out;
      emit_report_file(reports, out);
      std::printf("table written to %s\n", out.c_str());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
