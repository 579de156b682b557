#pragma once

// Shared helpers for the test suites: scratch directories and the synthetic
// separable 5-language corpus used by the pipeline and acceptance tests.

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "polysent/corpus.hpp"
#include "polysent/pipeline.hpp"

namespace polysent::testutil {

class TempDir {
 public:
  explicit TempDir(const std::string& prefix = "polysent") {
    std::string tmpl =
        (std::filesystem::temp_directory_path() / (prefix + ".XXXXXX")).string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
    path_ = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const { return path_ + "/" + name; }

 private:
  std::string path_;
};

// ---- synthetic corpus --------------------------------------------------------
// Every language gets its own vocabulary (stem + "_" + lang); class keywords
// make the task linearly separable and the lexicon translates word-by-word.

inline const std::vector<std::string>& class_stems(SentimentLabel label) {
  static const std::vector<std::string> neg = {"awful", "terrible", "horrid",
                                               "sad", "angry"};
  static const std::vector<std::string> neu = {"table", "report", "meeting",
                                               "weather", "street"};
  static const std::vector<std::string> pos = {"great", "lovely", "happy",
                                               "super", "bright"};
  switch (label) {
    case SentimentLabel::negative: return neg;
    case SentimentLabel::neutral: return neu;
    case SentimentLabel::positive: return pos;
  }
  return neu;
}

inline const std::vector<std::string>& filler_stems() {
  static const std::vector<std::string> filler = {"the", "today", "very",
                                                  "about", "this", "quite"};
  return filler;
}

inline std::vector<std::string> all_stems() {
  std::vector<std::string> stems = filler_stems();
  for (auto label : {SentimentLabel::negative, SentimentLabel::neutral,
                     SentimentLabel::positive})
    for (const auto& s : class_stems(label)) stems.push_back(s);
  return stems;
}

inline std::string word(const std::string& stem, const LanguageTag& lang) {
  return stem + "_" + lang.code;
}

inline Corpus make_synthetic_corpus(const LanguageTag& lang, Split split,
                                    size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed ^ fnv1a64(lang.code) ^ fnv1a64(split_name(split)));
  Corpus corpus;
  for (size_t i = 0; i < n; ++i) {
    auto label = static_cast<SentimentLabel>(i % 3);
    const auto& keywords = class_stems(label);
    const auto& filler = filler_stems();
    std::string text;
    size_t n_filler = 2 + rng() % 3;
    size_t n_key = 2 + rng() % 2;
    for (size_t k = 0; k < n_filler; ++k) {
      if (!text.empty()) text += ' ';
      text += word(filler[rng() % filler.size()], lang);
    }
    for (size_t k = 0; k < n_key; ++k) {
      text += ' ';
      text += word(keywords[rng() % keywords.size()], lang);
    }
    LabeledExample ex;
    ex.id = lang.code + "-" + std::string(split_name(split)) + "-" +
            std::to_string(i);
    ex.text = normalize_text(text);
    ex.language = lang;
    ex.label = label;
    ex.dataset = "synth_" + lang.code;
    ex.split = split;
    corpus.add(std::move(ex));
  }
  return corpus;
}

inline void write_lexicon(const std::string& path) {
  nlohmann::json lex = nlohmann::json::object();
  auto stems = all_stems();
  for (auto src : kLanguages)
    for (auto tgt : kLanguages) {
      if (src == tgt) continue;
      auto& table = lex[std::string(src)][std::string(tgt)];
      for (const auto& stem : stems)
        table[word(stem, LanguageTag{std::string(src)})] =
            word(stem, LanguageTag{std::string(tgt)});
    }
  write_file(path, lex.dump());
}

// Writes corpora + lexicon for all five languages and returns a ready config.
// Train/dev/test sizes are per language.
inline ExperimentConfig make_synthetic_setup(const TempDir& dir, size_t n_train,
                                             size_t n_dev, size_t n_test,
                                             uint64_t seed = 42) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.run_dir = dir.file("runs");
  cfg.cache_path = dir.file("cache.txt");
  cfg.encoder_descriptor =
      R"({"name":"tiny_hash","hash_dim":4096,"hidden_dim":32})";
  cfg.backend.name = "dictionary";
  cfg.backend.lexicon_path = dir.file("lexicon.json");
  cfg.backend.retry.base_delay_ms = 1;
  write_lexicon(cfg.backend.lexicon_path);
  cfg.english_dataset = "synth_en";

  for (auto code : kLanguages) {
    LanguageTag lang{std::string(code)};
    DatasetEntry entry;
    entry.name = "synth_" + lang.code;
    entry.language = lang;
    entry.train_path = dir.file(entry.name + "_train.tsv");
    entry.dev_path = dir.file(entry.name + "_dev.tsv");
    entry.test_path = dir.file(entry.name + "_test.tsv");
    write_corpus(make_synthetic_corpus(lang, Split::train, n_train, seed),
                 entry.train_path);
    write_corpus(make_synthetic_corpus(lang, Split::dev, n_dev, seed + 1),
                 entry.dev_path);
    write_corpus(make_synthetic_corpus(lang, Split::test, n_test, seed + 2),
                 entry.test_path);
    cfg.datasets[entry.name] = entry;
    if (lang.code != "en") cfg.matrix_targets.push_back(lang);
  }

  // Desk-scale learning rates; the production defaults are far too small for
  // a from-scratch tiny encoder.
  cfg.pretrain.learning_rate = 5e-3;
  cfg.pretrain.max_epochs = 20;
  cfg.pretrain.patience = 3;
  cfg.pretrain.class_weight_mode = ClassWeightMode::inverse_frequency;
  cfg.pretrain.rng_seed = seed;
  cfg.finetune = cfg.pretrain;
  cfg.finetune.learning_rate = 1e-3;
  return cfg;
}

}  // namespace polysent::testutil
