#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <sstream>

#include "json.hpp"
#include "polysent/pipeline.hpp"
#include "test_util.hpp"

using namespace polysent;

namespace {

ExperimentConfig quick_setup(const testutil::TempDir& dir) {
  return testutil::make_synthetic_setup(dir, 90, 30, 30);
}

EvalReport fixed_report(const std::string& lang, double rec, bool ue, bool da) {
  EvalReport r;
  r.model_name = "tiny_hash";
  r.using_english = ue;
  r.data_augmentation = da;
  LanguageEval ev;
  ev.cm.counts = {{{10, 0, 0}, {0, 10, 0}, {0, 0, 10}}};
  ev.metrics = {rec, rec, rec};
  ev.test_size = 30;
  r.per_language[lang] = ev;
  r.finalize_aggregate();
  return r;
}

}  // namespace

TEST_CASE("stage plans for the four configurations") {
  testutil::TempDir dir;
  ExperimentConfig cfg = quick_setup(dir);
  cfg.target = LanguageTag{"fr"};

  SUBCASE("no pretrain, no augmentation") {
    StagePlan plan = build_stage_plan(cfg);
    REQUIRE(plan.stages.size() == 1);
    CHECK(plan.stages[0].name == "finetune");
    CHECK(plan.stages[0].dataset == "synth_fr");
    CHECK_FALSE(plan.stages[0].augment);
    CHECK_FALSE(plan.stages[0].init_from_previous);
    CHECK(plan.test_dataset == "synth_fr");
  }

  SUBCASE("english pretrain, no augmentation") {
    cfg.using_english = true;
    StagePlan plan = build_stage_plan(cfg);
    REQUIRE(plan.stages.size() == 2);
    CHECK(plan.stages[0].name == "pretrain");
    CHECK(plan.stages[0].dataset == "synth_en");
    CHECK_FALSE(plan.stages[0].init_from_previous);
    CHECK(plan.stages[1].name == "finetune");
    CHECK(plan.stages[1].init_from_previous);
    CHECK_FALSE(plan.stages[0].augment);
  }

  SUBCASE("english pretrain with augmentation") {
    cfg.using_english = true;
    cfg.data_augmentation = true;
    StagePlan plan = build_stage_plan(cfg);
    REQUIRE(plan.stages.size() == 2);
    CHECK(plan.stages[0].augment);
    CHECK(plan.stages[1].augment);
  }

  SUBCASE("augmentation only") {
    cfg.data_augmentation = true;
    StagePlan plan = build_stage_plan(cfg);
    REQUIRE(plan.stages.size() == 1);
    CHECK(plan.stages[0].augment);
  }

  SUBCASE("english target collapses to a single stage") {
    cfg.target = LanguageTag{"en"};
    cfg.using_english = true;
    StagePlan plan = build_stage_plan(cfg);
    REQUIRE(plan.stages.size() == 1);
    CHECK(plan.stages[0].dataset == "synth_en");
    CHECK(plan.test_dataset == "synth_en");
  }
}

TEST_CASE("stage planning is deterministic") {
  testutil::TempDir dir;
  ExperimentConfig cfg = quick_setup(dir);
  cfg.target = LanguageTag{"de"};
  cfg.using_english = true;
  StagePlan a = build_stage_plan(cfg);
  StagePlan b = build_stage_plan(cfg);
  REQUIRE(a.stages.size() == b.stages.size());
  for (size_t i = 0; i < a.stages.size(); ++i) {
    CHECK(a.stages[i].name == b.stages[i].name);
    CHECK(a.stages[i].train_path == b.stages[i].train_path);
    CHECK(a.stages[i].augment == b.stages[i].augment);
    CHECK(a.stages[i].train_config.hash() == b.stages[i].train_config.hash());
  }
}

TEST_CASE("stage planning error paths") {
  testutil::TempDir dir;
  ExperimentConfig cfg = quick_setup(dir);
  cfg.target = LanguageTag{"it"};

  SUBCASE("augmentation without a backend") {
    cfg.data_augmentation = true;
    cfg.backend.name.clear();
    CHECK_THROWS_AS(build_stage_plan(cfg), ConfigError);
  }

  SUBCASE("missing corpus file") {
    std::filesystem::remove(cfg.datasets.at("synth_it").train_path);
    CHECK_THROWS_AS(build_stage_plan(cfg), Error);
  }

  SUBCASE("unknown target dataset") {
    cfg.datasets.erase("synth_it");
    CHECK_THROWS_AS(build_stage_plan(cfg), ConfigError);
  }
}

TEST_CASE("config file loading") {
  testutil::TempDir dir;
  nlohmann::json j = {
      {"seed", 7},
      {"run_dir", dir.file("runs")},
      {"cache", dir.file("cache.txt")},
      {"encoder", {{"name", "tiny_hash"}, {"hash_dim", 1024}}},
      {"backend", {{"name", "tagging"}, {"retry_attempts", 2}}},
      {"datasets",
       {{"synth_fr",
         {{"language", "fr"},
          {"train", "a.tsv"},
          {"dev", "b.tsv"},
          {"test", "c.tsv"}}}}},
      {"targets", {"fr", "de"}},
      {"target_language", "fr"},
      {"using_english", true},
      {"pretrain", {{"learning_rate", 0.01}, {"selection_metric", "f1_macro"}}},
  };
  std::string path = dir.file("config.json");
  write_file(path, j.dump(2));

  ExperimentConfig cfg = ExperimentConfig::load(path);
  CHECK(cfg.seed == 7);
  CHECK(cfg.cache_path == dir.file("cache.txt"));
  CHECK(cfg.backend.name == "tagging");
  CHECK(cfg.backend.retry.attempts == 2);
  CHECK(cfg.datasets.at("synth_fr").language == LanguageTag{"fr"});
  CHECK(cfg.matrix_targets.size() == 2);
  CHECK(cfg.target == LanguageTag{"fr"});
  CHECK(cfg.using_english);
  CHECK_FALSE(cfg.data_augmentation);
  CHECK(cfg.pretrain.learning_rate == doctest::Approx(0.01));
  CHECK(cfg.pretrain.selection_metric == SelectionMetric::f1_macro);
  CHECK(cfg.finetune.learning_rate == doctest::Approx(5e-7));

  write_file(path, "{not json");
  CHECK_THROWS_AS(ExperimentConfig::load(path), ConfigError);
  write_file(path, R"({"pretrain":{"selection_metric":"accuracy"}})");
  CHECK_THROWS_AS(ExperimentConfig::load(path), ConfigError);
}

TEST_CASE("experiment config hash separates cells and seeds") {
  testutil::TempDir dir;
  ExperimentConfig a = quick_setup(dir);
  a.target = LanguageTag{"fr"};
  ExperimentConfig b = a;
  b.using_english = true;
  ExperimentConfig c = a;
  c.seed = 43;
  ExperimentConfig d = a;
  d.target = LanguageTag{"de"};
  CHECK(a.hash() == ExperimentConfig(a).hash());
  CHECK(a.hash() != b.hash());
  CHECK(a.hash() != c.hash());
  CHECK(a.hash() != d.hash());
}

TEST_CASE("run_experiment trains, evaluates and resumes") {
  testutil::TempDir dir;
  ExperimentConfig cfg = quick_setup(dir);
  cfg.target = LanguageTag{"fr"};

  ExperimentResult first = run_experiment(cfg);
  CHECK(first.epochs_trained > 0);
  REQUIRE(first.report.per_language.count("fr") == 1);
  CHECK(first.report.per_language.at("fr").test_size == 30);
  CHECK(std::filesystem::exists(first.report_path));
  CHECK(std::filesystem::exists(first.predictions_path));
  Predictions preds = read_predictions(first.predictions_path);
  CHECK(preds.ids.size() == 30);

  // identical rerun resumes every stage from its checkpoint
  ExperimentResult second = run_experiment(cfg);
  CHECK(second.epochs_trained == 0);
  CHECK(eval_report_to_json(second.report) == eval_report_to_json(first.report));

  // train_stages alone also finds the finished stage
  CHECK(train_stages(cfg) == 0);
}

TEST_CASE("augmented two-stage experiment populates the translation cache") {
  testutil::TempDir dir;
  ExperimentConfig cfg = quick_setup(dir);
  cfg.target = LanguageTag{"de"};
  cfg.using_english = true;
  cfg.data_augmentation = true;

  ExperimentResult result = run_experiment(cfg);
  CHECK(result.epochs_trained > 0);
  CHECK_FALSE(result.report.extra_configuration);
  CHECK(result.report.using_english);
  CHECK(result.report.data_augmentation);

  {
    TranslationCache cache(cfg.cache_path);
    // two train corpora of 90 examples, each translated into 4 other languages
    CHECK(cache.size() == 2 * 90 * 4);
  }

  // rerun: cache-served augmentation and checkpoint reuse
  ExperimentResult again = run_experiment(cfg);
  CHECK(again.epochs_trained == 0);
}

TEST_CASE("the (no-english, augmentation) cell is flagged as extra") {
  testutil::TempDir dir;
  ExperimentConfig cfg = quick_setup(dir);
  cfg.target = LanguageTag{"es"};
  cfg.data_augmentation = true;
  ExperimentResult result = run_experiment(cfg);
  CHECK(result.report.extra_configuration);
}

TEST_CASE("emit_report layout, ordering and aggregate row") {
  std::vector<EvalReport> reports = {
      fixed_report("de", 0.741, true, false), fixed_report("es", 0.683, true, false),
      fixed_report("fr", 0.738, true, false), fixed_report("it", 0.671, true, false),
  };
  std::ostringstream out;
  emit_report(reports, out);
  std::string table = out.str();

  CHECK(table.find("Language") != std::string::npos);
  CHECK(table.find("Using English") != std::string::npos);
  CHECK(table.find("D-A") != std::string::npos);
  CHECK(table.find("all-non-english") != std::string::npos);
  // unweighted mean of 74.1, 68.3, 73.8, 67.1
  CHECK(table.find("70.8") != std::string::npos);
  // languages in canonical order: fr before de before es before it
  // (rows start with the language code)
  CHECK(table.find("\nfr ") < table.find("\nde "));
  CHECK(table.find("\nde ") < table.find("\nes "));
  CHECK(table.find("\nes ") < table.find("\nit "));

  std::vector<EvalReport> with_extra = reports;
  with_extra.push_back(fixed_report("de", 0.5, false, true));
  with_extra.back().extra_configuration = true;
  std::ostringstream out2;
  emit_report(with_extra, out2);
  CHECK(out2.str().find("[extra]") != std::string::npos);

  std::vector<EvalReport> none;
  std::ostringstream out3;
  CHECK_THROWS_AS(emit_report(none, out3), DataError);
}

TEST_CASE("split audit flags test reads before training reads") {
  SplitAudit audit;
  audit.record(Split::train, "t1");
  audit.record(Split::dev, "d1");
  audit.record(Split::test, "x1");
  CHECK_FALSE(audit.test_read_before(2));
  CHECK(audit.test_read_before(3));

  SplitAudit bad;
  bad.record(Split::test, "x1");
  bad.record(Split::train, "t1");
  CHECK(bad.test_read_before(1));
}

TEST_CASE("make_backend dispatch") {
  testutil::TempDir dir;
  BackendConfig cfg;
  cfg.name = "tagging";
  CHECK(make_backend(cfg)->name() == "tagging");

  cfg.name = "dictionary";
  CHECK_THROWS_AS(make_backend(cfg), ConfigError);
  cfg.lexicon_path = dir.file("lex.json");
  testutil::write_lexicon(cfg.lexicon_path);
  CHECK(make_backend(cfg)->name() == "dictionary");

  cfg.name = "nope";
  CHECK_THROWS_AS(make_backend(cfg), ConfigError);
}
