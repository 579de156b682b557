#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "polysent/corpus.hpp"

namespace polysent {

// Contract: deterministic for fixed inputs, and translate(s, L, L) == s.
class TranslationBackend {
 public:
  virtual ~TranslationBackend() = default;
  virtual std::string name() const = 0;
  virtual std::string translate(const std::string& text,
                                const LanguageTag& source,
                                const LanguageTag& target) = 0;
};

// Plumbing-test backend: prefixes "[<target>] " to the text.
class TaggingBackend : public TranslationBackend {
 public:
  std::string name() const override { return "tagging"; }
  std::string translate(const std::string& text, const LanguageTag& source,
                        const LanguageTag& target) override;
  size_t call_count() const { return calls_; }

 private:
  size_t calls_ = 0;
};

// Word-by-word lookup from a bilingual lexicon; unknown words pass through.
// Lexicon JSON shape: { "<src>": { "<tgt>": { "word": "translation" } } }.
class DictionaryBackend : public TranslationBackend {
 public:
  static DictionaryBackend from_file(const std::string& lexicon_path);
  explicit DictionaryBackend(
      std::map<std::string, std::map<std::string, std::unordered_map<std::string, std::string>>>
          lexicon)
      : lexicon_(std::move(lexicon)) {}

  std::string name() const override { return "dictionary"; }
  std::string translate(const std::string& text, const LanguageTag& source,
                        const LanguageTag& target) override;
  size_t call_count() const { return calls_; }

 private:
  std::map<std::string,
           std::map<std::string, std::unordered_map<std::string, std::string>>>
      lexicon_;
  size_t calls_ = 0;
};

// Client for an external MT service: POST {text, source, target} as JSON,
// expects {"translation": "..."} back.
class HttpBackend : public TranslationBackend {
 public:
  // endpoint like "http://host:port/translate"; empty token sends no auth
  // header.
  HttpBackend(std::string endpoint, std::string auth_token,
              int timeout_seconds = 30);

  // Reads POLYSENT_MT_ENDPOINT / POLYSENT_MT_TOKEN.
  static HttpBackend from_environment();

  std::string name() const override { return "http"; }
  std::string translate(const std::string& text, const LanguageTag& source,
                        const LanguageTag& target) override;

 private:
  std::string scheme_host_;
  std::string path_;
  std::string auth_token_;
  int timeout_seconds_;
};

// Persistent (source, target, content-hash) -> translation map backed by an
// append-only record file. A key is never overwritten with a different value.
class TranslationCache {
 public:
  // Loads existing records; the file is created lazily on first put. An
  // empty path keeps the cache memory-only.
  explicit TranslationCache(std::string path);
  ~TranslationCache();

  TranslationCache(const TranslationCache&) = delete;
  TranslationCache& operator=(const TranslationCache&) = delete;

  std::optional<std::string> get(const LanguageTag& source,
                                 const LanguageTag& target,
                                 const std::string& text);
  void put(const LanguageTag& source, const LanguageTag& target,
           const std::string& text, const std::string& translation);

  // Rewrites the record file with one line per live key.
  void compact();

  size_t hits() const { return hits_; }
  size_t misses() const { return misses_; }
  size_t size() const { return entries_.size(); }

 private:
  std::string make_key(const LanguageTag& source, const LanguageTag& target,
                       const std::string& text) const;
  void append_record(const std::string& key, const std::string& translation);

  std::string path_;
  std::unordered_map<std::string, std::string> entries_;
  size_t hits_ = 0;
  size_t misses_ = 0;
  int lock_fd_ = -1;
};

struct RetryPolicy {
  int attempts = 3;
  int base_delay_ms = 500;  // doubles after each failed attempt
};

// Cache-through translation. pre: source != target.
std::string cache_lookup_or_translate(const std::string& text,
                                      const LanguageTag& source,
                                      const LanguageTag& target,
                                      TranslationBackend& backend,
                                      TranslationCache& cache,
                                      const RetryPolicy& retry = {});

struct AugmentationPlan {
  std::vector<LanguageTag> target_languages;  // duplicates ignored
  RetryPolicy retry;
};

// For every origin=original train example, emits the original plus one
// translated copy per target language other than its own, id suffixed with
// "#<lang>", label copied. Dev/test examples pass through untouched. Output
// order is the input order with translations in the fixed language order.
Corpus augment_corpus(const Corpus& corpus, const AugmentationPlan& plan,
                      TranslationBackend& backend, TranslationCache& cache);

}  // namespace polysent
