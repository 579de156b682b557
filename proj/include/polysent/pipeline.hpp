#pragma once

#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "polysent/classifier.hpp"
#include "polysent/corpus.hpp"
#include "polysent/metrics.hpp"
#include "polysent/translate.hpp"

namespace polysent {

struct DatasetEntry {
  std::string name;        // e.g. "sb10k"
  LanguageTag language;
  std::string train_path;  // canonical corpus TSVs
  std::string dev_path;
  std::string test_path;
};

struct BackendConfig {
  std::string name;          // "tagging" | "dictionary" | "http"
  std::string lexicon_path;  // dictionary backend
  RetryPolicy retry;
};

struct ExperimentConfig {
  LanguageTag target{"en"};
  bool using_english = false;
  bool data_augmentation = false;
  std::string encoder_descriptor;  // JSON, see make_encoder
  BackendConfig backend;
  std::string cache_path;
  std::string run_dir = "runs";
  std::map<std::string, DatasetEntry> datasets;  // keyed by dataset name
  std::string english_dataset = "semeval";
  std::vector<LanguageTag> matrix_targets;  // used by the matrix command
  TrainConfig pretrain;   // defaults: lr 2e-6
  TrainConfig finetune;   // defaults: lr 5e-7
  uint64_t seed = 42;

  uint64_t hash() const;

  // Parses the JSON config file; defaults applied for absent keys.
  static ExperimentConfig load(const std::string& path);
};

struct Stage {
  std::string name;  // "pretrain" or "finetune"
  std::string dataset;
  std::string train_path;
  std::string dev_path;
  bool augment = false;
  bool init_from_previous = false;
  TrainConfig train_config;
};

struct StagePlan {
  std::vector<Stage> stages;
  std::string test_dataset;
  std::string test_path;
};

// Deterministic mapping of the (using_english, data_augmentation) matrix onto
// training stages. Throws ConfigError/DataError for missing corpora or an
// augmentation request without a backend.
StagePlan build_stage_plan(const ExperimentConfig& config);

// Records which corpus splits were read, in order; evaluation must be the
// first reader of any test split.
class SplitAudit {
 public:
  void record(Split split, const std::string& path);
  bool test_read_before(size_t n_train_dev_reads) const;
  const std::vector<std::pair<Split, std::string>>& entries() const {
    return entries_;
  }

 private:
  std::vector<std::pair<Split, std::string>> entries_;
};

struct ExperimentResult {
  EvalReport report;
  int epochs_trained = 0;  // 0 when every stage was resumed from disk
  std::string report_path;
  std::string predictions_path;
};

// Runs all training stages (resumable, no test data touched) and returns the
// number of epochs actually executed.
int train_stages(const ExperimentConfig& config);

// Runs the staged training and the final test-set evaluation. Completed
// stages are identified by a content hash of (corpus, train config, encoder,
// init) and reloaded instead of retrained.
ExperimentResult run_experiment(const ExperimentConfig& config);

// Plain-text table mirroring the published layout: Language | Model |
// Using English | D-A | Rec_avg | F1_mac | F1_PN, percentages to one decimal,
// plus "all-non-english" aggregate rows.
void emit_report(std::span<const EvalReport> reports, std::ostream& out);
void emit_report_file(std::span<const EvalReport> reports,
                      const std::string& path);

// Runs the full configuration grid over config.matrix_targets: for each
// target (no-pretrain, no-DA), (pretrain, no-DA), (pretrain, DA), optionally
// the extra (no-pretrain, DA) cell.
std::vector<EvalReport> run_matrix(const ExperimentConfig& config,
                                   bool include_extra = false);

std::unique_ptr<TranslationBackend> make_backend(const BackendConfig& config);

}  // namespace polysent
