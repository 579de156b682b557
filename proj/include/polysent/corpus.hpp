#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "polysent/common.hpp"

namespace polysent {

// Canonical class order: negative=0, neutral=1, positive=2.
enum class SentimentLabel : int { negative = 0, neutral = 1, positive = 2 };

constexpr int kNumClasses = 3;

std::string_view label_name(SentimentLabel l);
std::optional<SentimentLabel> parse_label(std::string_view name);

// The five studied languages, in the fixed canonical order.
constexpr std::array<std::string_view, 5> kLanguages = {"en", "fr", "de",
                                                        "es", "it"};

struct LanguageTag {
  std::string code;  // always one of kLanguages

  // Throws DataError for anything outside the five-language set.
  static LanguageTag parse(std::string_view code);

  bool operator==(const LanguageTag&) const = default;
  auto operator<=>(const LanguageTag&) const = default;
};

enum class Split { train, dev, test };

std::string_view split_name(Split s);
std::optional<Split> parse_split(std::string_view name);

struct LabeledExample {
  std::string id;
  std::string text;  // already normalized
  LanguageTag language;
  SentimentLabel label = SentimentLabel::neutral;
  // Empty when the example is an original; otherwise the language it was
  // machine-translated from (never equal to `language`).
  std::optional<LanguageTag> translated_from;
  std::string dataset;
  Split split = Split::train;

  bool is_original() const { return !translated_from.has_value(); }
  bool operator==(const LabeledExample&) const = default;
};

struct ManifestKey {
  std::string dataset;
  std::string language;
  std::string split;
  auto operator<=>(const ManifestKey&) const = default;
};

using Manifest = std::map<ManifestKey, size_t>;

// Ordered, id-unique collection of examples. Iteration order is insertion
// order and the manifest is always recomputable from the examples.
class Corpus {
 public:
  Corpus() = default;

  // Throws DataError on duplicate id or empty text.
  void add(LabeledExample ex);

  bool contains_id(const std::string& id) const { return ids_.count(id) > 0; }

  const std::vector<LabeledExample>& examples() const { return examples_; }
  size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }

  auto begin() const { return examples_.begin(); }
  auto end() const { return examples_.end(); }
  const LabeledExample& operator[](size_t i) const { return examples_[i]; }

  Manifest manifest() const;

  // Per-class counts over the whole corpus in canonical label order.
  std::array<size_t, kNumClasses> label_counts() const;

  // Content hash of the canonical serialization (order-sensitive).
  uint64_t content_hash() const;

  bool operator==(const Corpus& other) const {
    return examples_ == other.examples_;
  }

 private:
  std::vector<LabeledExample> examples_;
  std::unordered_set<std::string> ids_;
};

// Text normalization applied to every ingested text and to every backend
// translation: compose combining diacritics, replace URLs with HTTPURL and
// @-mentions with @USER, collapse whitespace runs, trim, cap at 512
// codepoints. Total and idempotent.
std::string normalize_text(std::string_view raw);

// Column layout of a source file plus its label mapping.
struct FormatSpec {
  // "canonical" reads the 5-column corpus TSV; "columns" reads a generic TSV
  // through the indices below.
  enum class Kind { canonical, columns };
  Kind kind = Kind::canonical;
  int id_col = 0;
  int label_col = 1;
  int text_col = 2;
  bool has_header = true;
  // Maps non-canonical label strings onto canonical ones (value must parse as
  // a canonical label) or "skip" to drop the row. Labels absent from both the
  // canonical set and this map skip the row with a count.
  std::map<std::string, std::string> label_map;

  // Parses descriptors like "canonical" or "columns:id=0,label=2,text=3".
  static FormatSpec parse(std::string_view descriptor);
};

struct IngestStats {
  size_t rows_read = 0;
  size_t rows_kept = 0;
  size_t rows_skipped_label = 0;
  size_t rows_skipped_empty = 0;
};

Corpus ingest(const std::string& path, const FormatSpec& format,
              const std::string& dataset, const LanguageTag& language,
              Split split, IngestStats* stats = nullptr);

Corpus merge(std::span<const Corpus> corpora);

// Canonical TSV: header `id\tlanguage\tlabel\torigin\ttext`, tabs/newlines in
// text escaped. A manifest file `<path>.manifest.json` is written alongside.
void write_corpus(const Corpus& corpus, const std::string& path);

Corpus read_corpus(const std::string& path, const std::string& dataset,
                   Split split);

}  // namespace polysent
