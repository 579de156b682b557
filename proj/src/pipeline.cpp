#include "polysent/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace polysent {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

TrainConfig parse_train_config(const json& j, double default_lr,
                               uint64_t default_seed) {
  TrainConfig cfg;
  cfg.learning_rate = j.value("learning_rate", default_lr);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
  cfg.patience = j.value("patience", cfg.patience);
  if (j.contains("selection_metric")) {
    auto m = parse_selection_metric(j.at("selection_metric").get<std::string>());
    if (!m) throw ConfigError("unknown selection_metric: " +
                              j.at("selection_metric").get<std::string>());
    cfg.selection_metric = *m;
  }
  if (j.contains("class_weight_mode")) {
    std::string mode = j.at("class_weight_mode").get<std::string>();
    if (mode == "none") cfg.class_weight_mode = ClassWeightMode::none;
    else if (mode == "inverse_frequency")
      cfg.class_weight_mode = ClassWeightMode::inverse_frequency;
    else throw ConfigError("unknown class_weight_mode: " + mode);
  }
  cfg.rng_seed = j.value("rng_seed", default_seed);
  cfg.validate();
  return cfg;
}

const DatasetEntry& dataset_for_language(const ExperimentConfig& config,
                                         const LanguageTag& language) {
  for (const auto& [name, entry] : config.datasets)
    if (entry.language == language) return entry;
  throw ConfigError("no dataset configured for language '" + language.code + "'");
}

const DatasetEntry& english_dataset(const ExperimentConfig& config) {
  auto it = config.datasets.find(config.english_dataset);
  if (it == config.datasets.end())
    throw ConfigError("english dataset '" + config.english_dataset +
                      "' is not configured");
  if (it->second.language != LanguageTag{"en"})
    throw ConfigError("english dataset '" + config.english_dataset +
                      "' is not tagged as English");
  return it->second;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty() || !fs::exists(path))
    throw DataError("missing " + what + " corpus: '" + path + "'");
}

std::string patched_encoder_descriptor(const ExperimentConfig& config) {
  json j;
  try {
    j = json::parse(config.encoder_descriptor);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad encoder descriptor: ") + e.what());
  }
  j["init_seed"] = config.seed;
  return j.dump();
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", fraction * 100.0);
  return buf;
}

struct ReportRow {
  std::string language;
  std::string model;
  bool using_english;
  bool data_augmentation;
  bool extra;
  MetricTriple metrics;
};

int config_rank(bool ue, bool da, bool extra) {
  if (extra) return 3;
  if (!ue && !da) return 0;
  if (ue && !da) return 1;
  return 2;  // ue && da
}

}  // namespace

uint64_t ExperimentConfig::hash() const {
  std::ostringstream ss;
  ss << target.code << '|' << using_english << '|' << data_augmentation << '|'
     << encoder_descriptor << '|' << backend.name << '|' << backend.lexicon_path
     << '|' << cache_path << '|' << english_dataset << '|' << seed << '|'
     << to_hex(pretrain.hash()) << '|' << to_hex(finetune.hash());
  for (const auto& [name, d] : datasets)
    ss << '|' << name << ':' << d.language.code << ':' << d.train_path << ':'
       << d.dev_path << ':' << d.test_path;
  return fnv1a64(ss.str());
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("bad config file " + path + ": " + e.what());
  }
  ExperimentConfig cfg;
  cfg.seed = j.value("seed", cfg.seed);
  cfg.run_dir = j.value("run_dir", cfg.run_dir);
  cfg.cache_path = j.value("cache", "");
  cfg.english_dataset = j.value("english_dataset", cfg.english_dataset);
  if (j.contains("encoder")) cfg.encoder_descriptor = j.at("encoder").dump();
  else cfg.encoder_descriptor = R"({"name":"tiny_hash"})";
  if (j.contains("backend")) {
    const auto& b = j.at("backend");
    cfg.backend.name = b.value("name", "");
    cfg.backend.lexicon_path = b.value("lexicon", "");
    cfg.backend.retry.attempts = b.value("retry_attempts", cfg.backend.retry.attempts);
    cfg.backend.retry.base_delay_ms =
        b.value("retry_base_delay_ms", cfg.backend.retry.base_delay_ms);
  }
  if (j.contains("datasets")) {
    for (auto& [name, d] : j.at("datasets").items()) {
      DatasetEntry entry;
      entry.name = name;
      entry.language = LanguageTag::parse(d.at("language").get<std::string>());
      entry.train_path = d.value("train", "");
      entry.dev_path = d.value("dev", "");
      entry.test_path = d.value("test", "");
      cfg.datasets[name] = entry;
    }
  }
  if (j.contains("targets"))
    for (const auto& t : j.at("targets"))
      cfg.matrix_targets.push_back(LanguageTag::parse(t.get<std::string>()));
  if (j.contains("target_language"))
    cfg.target = LanguageTag::parse(j.at("target_language").get<std::string>());
  cfg.using_english = j.value("using_english", false);
  cfg.data_augmentation = j.value("data_augmentation", false);
  cfg.pretrain = parse_train_config(j.value("pretrain", json::object()), 2e-6,
                                    cfg.seed);
  cfg.finetune = parse_train_config(j.value("finetune", json::object()), 5e-7,
                                    cfg.seed);
  return cfg;
}

StagePlan build_stage_plan(const ExperimentConfig& config) {
  if (config.data_augmentation && config.backend.name.empty())
    throw ConfigError("data augmentation requested but no translation backend configured");

  StagePlan plan;
  const bool target_is_english = (config.target == LanguageTag{"en"});

  if (target_is_english) {
    // English is both the pre-train source and the target: one stage.
    const DatasetEntry& en = english_dataset(config);
    require_file(en.train_path, "English train");
    require_file(en.dev_path, "English dev");
    require_file(en.test_path, "English test");
    plan.stages.push_back(Stage{"pretrain", en.name, en.train_path, en.dev_path,
                                config.data_augmentation, false, config.pretrain});
    plan.test_dataset = en.name;
    plan.test_path = en.test_path;
    return plan;
  }

  if (config.using_english) {
    const DatasetEntry& en = english_dataset(config);
    require_file(en.train_path, "English train");
    require_file(en.dev_path, "English dev");
    plan.stages.push_back(Stage{"pretrain", en.name, en.train_path, en.dev_path,
                                config.data_augmentation, false, config.pretrain});
  }
  const DatasetEntry& tgt = dataset_for_language(config, config.target);
  require_file(tgt.train_path, "target train");
  require_file(tgt.dev_path, "target dev");
  require_file(tgt.test_path, "target test");
  plan.stages.push_back(Stage{"finetune", tgt.name, tgt.train_path, tgt.dev_path,
                              config.data_augmentation, config.using_english,
                              config.finetune});
  plan.test_dataset = tgt.name;
  plan.test_path = tgt.test_path;
  return plan;
}

void SplitAudit::record(Split split, const std::string& path) {
  entries_.emplace_back(split, path);
}

bool SplitAudit::test_read_before(size_t n) const {
  for (size_t i = 0; i < entries_.size() && i < n; ++i)
    if (entries_[i].first == Split::test) return true;
  return false;
}

std::unique_ptr<TranslationBackend> make_backend(const BackendConfig& config) {
  if (config.name == "tagging") return std::make_unique<TaggingBackend>();
  if (config.name == "dictionary") {
    if (config.lexicon_path.empty())
      throw ConfigError("dictionary backend requires a lexicon path");
    return std::make_unique<DictionaryBackend>(
        DictionaryBackend::from_file(config.lexicon_path));
  }
  if (config.name == "http")
    return std::make_unique<HttpBackend>(HttpBackend::from_environment());
  throw ConfigError("unknown translation backend: '" + config.name + "'");
}

namespace {

// Executes the plan's stages in order, resuming from content-addressed
// checkpoints where possible. Returns the final-stage model.
ClassifierModel run_stages(const ExperimentConfig& config, const StagePlan& plan,
                           SplitAudit& audit, int& epochs_trained) {
  std::string stages_dir = config.run_dir + "/stages";
  std::error_code ec;
  fs::create_directories(stages_dir, ec);
  if (ec) throw IoError("cannot create stage directory: " + stages_dir);

  std::unique_ptr<TranslationBackend> backend;
  std::unique_ptr<TranslationCache> cache;
  if (config.data_augmentation) {
    backend = make_backend(config.backend);
    cache = std::make_unique<TranslationCache>(config.cache_path);
  }

  std::string encoder_desc = patched_encoder_descriptor(config);
  std::optional<ClassifierModel> model;
  uint64_t previous_stage_hash = 0;

  for (const Stage& stage : plan.stages) {
    Corpus train_corpus = read_corpus(stage.train_path, stage.dataset, Split::train);
    audit.record(Split::train, stage.train_path);
    if (stage.augment) {
      AugmentationPlan aug;
      for (auto code : kLanguages)
        aug.target_languages.push_back(LanguageTag{std::string(code)});
      aug.retry = config.backend.retry;
      train_corpus = augment_corpus(train_corpus, aug, *backend, *cache);
    }
    Corpus dev_corpus = read_corpus(stage.dev_path, stage.dataset, Split::dev);
    audit.record(Split::dev, stage.dev_path);

    TrainConfig stage_cfg = stage.train_config;
    std::ostringstream hs;
    hs << to_hex(train_corpus.content_hash()) << '|'
       << to_hex(dev_corpus.content_hash()) << '|' << to_hex(stage_cfg.hash())
       << '|' << encoder_desc << '|' << config.seed << '|'
       << to_hex(previous_stage_hash) << '|' << stage.init_from_previous;
    uint64_t stage_hash = fnv1a64(hs.str());
    std::string stage_dir = stages_dir + "/" + to_hex(stage_hash);

    if (fs::exists(stage_dir + "/meta.json")) {
      uint64_t stored = ClassifierModel::checkpoint_config_hash(stage_dir);
      if (stored != stage_hash)
        throw TrainError("stale checkpoint in " + stage_dir +
                         ": stored config hash " + to_hex(stored) +
                         " does not match " + to_hex(stage_hash));
      model = ClassifierModel::load_checkpoint(stage_dir);
    } else {
      if (!stage.init_from_previous || !model)
        model.emplace(make_encoder(encoder_desc), config.seed);
      TrainingLog log = train(*model, train_corpus, dev_corpus, stage_cfg);
      epochs_trained += static_cast<int>(log.epochs.size());
      model->save_checkpoint(stage_dir, stage_hash);
    }
    previous_stage_hash = stage_hash;
  }
  return std::move(*model);
}

}  // namespace

int train_stages(const ExperimentConfig& config) {
  StagePlan plan = build_stage_plan(config);
  SplitAudit audit;
  int epochs_trained = 0;
  run_stages(config, plan, audit, epochs_trained);
  return epochs_trained;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  StagePlan plan = build_stage_plan(config);
  SplitAudit audit;

  std::string experiment_dir =
      config.run_dir + "/experiments/" + to_hex(config.hash());
  std::error_code ec;
  fs::create_directories(experiment_dir, ec);
  if (ec) throw IoError("cannot create run directory: " + experiment_dir);

  int epochs_trained = 0;
  ClassifierModel model = run_stages(config, plan, audit, epochs_trained);

  // Evaluation: the only reader of the test split.
  Corpus test_corpus = read_corpus(plan.test_path, plan.test_dataset, Split::test);
  audit.record(Split::test, plan.test_path);
  if (audit.test_read_before(audit.entries().size() - 1))
    throw TrainError("split hygiene violation: test split was read before evaluation");

  std::vector<std::string> ids, texts;
  std::vector<SentimentLabel> gold;
  for (const auto& ex : test_corpus) {
    ids.push_back(ex.id);
    texts.push_back(ex.text);
    gold.push_back(ex.label);
  }
  std::vector<SentimentLabel> pred = model.predict(texts);

  ExperimentResult result;
  result.predictions_path =
      experiment_dir + "/predictions_" + config.target.code + ".tsv";
  write_predictions(result.predictions_path, ids, gold, pred);

  LanguageEval ev;
  ev.cm = confusion(gold, pred);
  ev.metrics = metric_triple(ev.cm);
  ev.test_size = test_corpus.size();

  EvalReport report;
  report.model_name = model.encoder().name();
  report.using_english = config.using_english;
  report.data_augmentation = config.data_augmentation;
  report.extra_configuration = !config.using_english && config.data_augmentation;
  report.per_language[config.target.code] = ev;
  report.finalize_aggregate();

  result.report = report;
  result.epochs_trained = epochs_trained;
  result.report_path = experiment_dir + "/report.json";
  write_file(result.report_path, eval_report_to_json(report));
  {
    std::ostringstream table;
    const EvalReport reports[] = {report};
    emit_report(reports, table);
    write_file(experiment_dir + "/report.txt", table.str());
  }
  return result;
}

void emit_report(std::span<const EvalReport> reports, std::ostream& out) {
  if (reports.empty()) throw DataError("emit_report: no reports");

  std::vector<ReportRow> rows;
  // configuration -> per-language triples, for the aggregate rows
  std::map<std::tuple<bool, bool, bool>,
           std::pair<std::string, std::map<std::string, MetricTriple>>>
      by_config;
  for (const auto& r : reports) {
    for (const auto& [lang, ev] : r.per_language) {
      rows.push_back(ReportRow{lang, r.model_name, r.using_english,
                               r.data_augmentation, r.extra_configuration,
                               ev.metrics});
      auto& slot = by_config[{r.using_english, r.data_augmentation,
                              r.extra_configuration}];
      slot.first = r.model_name;
      slot.second[lang] = ev.metrics;
    }
  }

  auto lang_rank = [](const std::string& code) {
    for (size_t i = 0; i < kLanguages.size(); ++i)
      if (code == kLanguages[i]) return static_cast<int>(i);
    return static_cast<int>(kLanguages.size());
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
    if (lang_rank(a.language) != lang_rank(b.language))
      return lang_rank(a.language) < lang_rank(b.language);
    return config_rank(a.using_english, a.data_augmentation, a.extra) <
           config_rank(b.using_english, b.data_augmentation, b.extra);
  });

  // aggregate rows over non-English languages, one per configuration
  std::vector<ReportRow> agg_rows;
  for (const auto& [key, slot] : by_config) {
    bool has_non_english = false;
    for (const auto& [lang, _] : slot.second)
      if (lang != "en") has_non_english = true;
    if (!has_non_english) continue;
    ReportRow row;
    row.language = "all-non-english";
    row.model = slot.first;
    row.using_english = std::get<0>(key);
    row.data_augmentation = std::get<1>(key);
    row.extra = std::get<2>(key);
    row.metrics = aggregate_languages(slot.second);
    agg_rows.push_back(row);
  }
  std::stable_sort(agg_rows.begin(), agg_rows.end(), [](const auto& a, const auto& b) {
    return config_rank(a.using_english, a.data_augmentation, a.extra) <
           config_rank(b.using_english, b.data_augmentation, b.extra);
  });
  rows.insert(rows.end(), agg_rows.begin(), agg_rows.end());

  auto emit_row = [&out](std::string_view lang, std::string_view model,
                         std::string_view ue, std::string_view da,
                         std::string_view rec, std::string_view f1m,
                         std::string_view f1pn) {
    out << std::left << std::setw(16) << lang << " | " << std::setw(18) << model
        << " | " << std::setw(13) << ue << " | " << std::setw(3) << da << " | "
        << std::right << std::setw(7) << rec << " | " << std::setw(6) << f1m
        << " | " << std::setw(6) << f1pn << '\n';
  };
  emit_row("Language", "Model", "Using English", "D-A", "Rec_avg", "F1_mac",
           "F1_PN");
  for (const auto& row : rows) {
    std::string model = row.model + (row.extra ? " [extra]" : "");
    emit_row(row.language, model, row.using_english ? "yes" : "no",
             row.data_augmentation ? "yes" : "no",
             format_percent(row.metrics.rec_avg),
             format_percent(row.metrics.f1_macro),
             format_percent(row.metrics.f1_pn));
  }
}

void emit_report_file(std::span<const EvalReport> reports,
                      const std::string& path) {
  std::ostringstream out;
  emit_report(reports, out);
  write_file(path, out.str());
}

std::vector<EvalReport> run_matrix(const ExperimentConfig& config,
                                   bool include_extra) {
  if (config.matrix_targets.empty())
    throw ConfigError("matrix command needs a non-empty 'targets' list");
  std::vector<std::pair<bool, bool>> grid = {{false, false}, {true, false},
                                             {true, true}};
  if (include_extra) grid.push_back({false, true});

  std::vector<EvalReport> reports;
  for (const auto& target : config.matrix_targets) {
    for (auto [ue, da] : grid) {
      ExperimentConfig cell = config;
      cell.target = target;
      cell.using_english = ue;
      cell.data_augmentation = da;
      reports.push_back(run_experiment(cell).report);
    }
  }
  return reports;
}

}  // namespace polysent
