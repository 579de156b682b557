#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polysent/corpus.hpp"

namespace polysent {

struct ConfusionMatrix {
  // counts[gold][predicted], canonical label order.
  std::array<std::array<long, kNumClasses>, kNumClasses> counts{};

  long total() const;
  long row_sum(int gold) const;
  long col_sum(int pred) const;
};

ConfusionMatrix confusion(std::span<const SentimentLabel> gold,
                          std::span<const SentimentLabel> pred);

// How a gold class with zero support contributes to averaged metrics.
enum class ZeroSupportMode {
  contribute_zero,  // default: counts as 0 (a warning is logged)
  exclude,          // dropped from the average
};

double rec_avg(const ConfusionMatrix& cm,
               ZeroSupportMode mode = ZeroSupportMode::contribute_zero);
double f1_macro(const ConfusionMatrix& cm,
                ZeroSupportMode mode = ZeroSupportMode::contribute_zero);
double f1_pn(const ConfusionMatrix& cm,
             ZeroSupportMode mode = ZeroSupportMode::contribute_zero);

struct MetricTriple {
  double rec_avg = 0.0;
  double f1_macro = 0.0;
  double f1_pn = 0.0;
  bool operator==(const MetricTriple&) const = default;
};

MetricTriple metric_triple(const ConfusionMatrix& cm,
                           ZeroSupportMode mode = ZeroSupportMode::contribute_zero);

// Unweighted arithmetic mean per metric over the non-excluded languages.
// Throws DataError when nothing remains after exclusion.
MetricTriple aggregate_languages(
    const std::map<std::string, MetricTriple>& per_language,
    const std::string& exclude = "en");

struct LanguageEval {
  ConfusionMatrix cm;
  MetricTriple metrics;
  size_t test_size = 0;
};

struct EvalReport {
  std::map<std::string, LanguageEval> per_language;
  std::optional<MetricTriple> aggregate_non_english;  // set iff a non-en language scored
  std::string model_name;
  bool using_english = false;
  bool data_augmentation = false;
  bool extra_configuration = false;  // true for the (no-English, augmented) extra cell

  void finalize_aggregate();  // recomputes aggregate_non_english
};

std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);

// Predictions file: TSV `id<TAB>gold<TAB>pred`.
void write_predictions(const std::string& path,
                       std::span<const std::string> ids,
                       std::span<const SentimentLabel> gold,
                       std::span<const SentimentLabel> pred);

struct Predictions {
  std::vector<std::string> ids;
  std::vector<SentimentLabel> gold;
  std::vector<SentimentLabel> pred;
};

Predictions read_predictions(const std::string& path);

}  // namespace polysent
