#include "polysent/translate.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace polysent {

namespace {
using json = nlohmann::json;
}

// ---- TaggingBackend ---------------------------------------------------------

std::string TaggingBackend::translate(const std::string& text,
                                      const LanguageTag& source,
                                      const LanguageTag& target) {
  if (source == target) return text;
  ++calls_;
  return "[" + target.code + "] " + text;
}

// ---- DictionaryBackend ------------------------------------------------------

DictionaryBackend DictionaryBackend::from_file(const std::string& lexicon_path) {
  json j;
  try {
    j = json::parse(read_file(lexicon_path));
  } catch (const json::exception& e) {
    throw ConfigError("bad lexicon file " + lexicon_path + ": " + e.what());
  }
  std::map<std::string,
           std::map<std::string, std::unordered_map<std::string, std::string>>>
      lex;
  for (auto& [src, targets] : j.items())
    for (auto& [tgt, words] : targets.items())
      for (auto& [word, tr] : words.items())
        lex[src][tgt][word] = tr.get<std::string>();
  return DictionaryBackend(std::move(lex));
}

std::string DictionaryBackend::translate(const std::string& text,
                                         const LanguageTag& source,
                                         const LanguageTag& target) {
  if (source == target) return text;
  ++calls_;
  const std::unordered_map<std::string, std::string>* table = nullptr;
  auto s = lexicon_.find(source.code);
  if (s != lexicon_.end()) {
    auto t = s->second.find(target.code);
    if (t != s->second.end()) table = &t->second;
  }
  std::ostringstream out;
  std::istringstream in(text);
  std::string word;
  bool first = true;
  while (in >> word) {
    if (!first) out << ' ';
    first = false;
    if (table) {
      auto hit = table->find(word);
      out << (hit != table->end() ? hit->second : word);
    } else {
      out << word;
    }
  }
  return out.str();
}

// ---- HttpBackend ------------------------------------------------------------

HttpBackend::HttpBackend(std::string endpoint, std::string auth_token,
                         int timeout_seconds)
    : auth_token_(std::move(auth_token)), timeout_seconds_(timeout_seconds) {
  auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos)
    throw ConfigError("MT endpoint must include scheme: " + endpoint);
  auto path_start = endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    scheme_host_ = endpoint;
    path_ = "/";
  } else {
    scheme_host_ = endpoint.substr(0, path_start);
    path_ = endpoint.substr(path_start);
  }
}

HttpBackend HttpBackend::from_environment() {
  const char* endpoint = std::getenv("POLYSENT_MT_ENDPOINT");
  if (!endpoint)
    throw ConfigError("POLYSENT_MT_ENDPOINT is not set");
  const char* token = std::getenv("POLYSENT_MT_TOKEN");
  return HttpBackend(endpoint, token ? token : "");
}

std::string HttpBackend::translate(const std::string& text,
                                   const LanguageTag& source,
                                   const LanguageTag& target) {
  if (source == target) return text;
  httplib::Client client(scheme_host_);
  client.set_connection_timeout(timeout_seconds_, 0);
  client.set_read_timeout(timeout_seconds_, 0);
  httplib::Headers headers;
  if (!auth_token_.empty())
    headers.emplace("Authorization", "Bearer " + auth_token_);
  json body = {{"text", text}, {"source", source.code}, {"target", target.code}};
  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res)
    throw IoError("MT request failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw IoError("MT request returned status " + std::to_string(res->status));
  try {
    json reply = json::parse(res->body);
    return reply.at("translation").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("bad MT response: ") + e.what());
  }
}

// ---- TranslationCache -------------------------------------------------------

TranslationCache::TranslationCache(std::string path) : path_(std::move(path)) {
  if (path_.empty()) return;
  std::ifstream in(path_, std::ios::binary);
  if (in) {
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      // <source> <target> <hexhash> <escaped text>
      size_t a = line.find(' ');
      size_t b = (a == std::string::npos) ? a : line.find(' ', a + 1);
      size_t c = (b == std::string::npos) ? b : line.find(' ', b + 1);
      if (c == std::string::npos)
        throw DataError(path_ + ":" + std::to_string(lineno) +
                        ": malformed cache record");
      std::string key = line.substr(0, c);
      std::string value = unescape_field(line.substr(c + 1));
      auto it = entries_.find(key);
      if (it != entries_.end() && it->second != value)
        throw DataError(path_ + ":" + std::to_string(lineno) +
                        ": conflicting cache records for key " + key);
      entries_[key] = std::move(value);
    }
  }
  lock_fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (lock_fd_ < 0) throw IoError("cannot open cache file: " + path_);
  if (::flock(lock_fd_, LOCK_EX) != 0)
    throw IoError("cannot lock cache file: " + path_);
}

TranslationCache::~TranslationCache() {
  if (lock_fd_ >= 0) {
    ::flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
  }
}

std::string TranslationCache::make_key(const LanguageTag& source,
                                       const LanguageTag& target,
                                       const std::string& text) const {
  return source.code + " " + target.code + " " + to_hex(fnv1a64(text));
}

std::optional<std::string> TranslationCache::get(const LanguageTag& source,
                                                 const LanguageTag& target,
                                                 const std::string& text) {
  auto it = entries_.find(make_key(source, target, text));
  if (it == entries_.end()) {
    ++misses_;
    return std::nullopt;
  }
  ++hits_;
  return it->second;
}

void TranslationCache::put(const LanguageTag& source, const LanguageTag& target,
                           const std::string& text,
                           const std::string& translation) {
  std::string key = make_key(source, target, text);
  auto it = entries_.find(key);
  if (it != entries_.end()) {
    if (it->second != translation)
      throw DataError("cache overwrite with different value for key " + key);
    return;
  }
  entries_.emplace(key, translation);
  append_record(key, translation);
}

void TranslationCache::append_record(const std::string& key,
                                     const std::string& translation) {
  if (lock_fd_ < 0) return;
  std::string line = key + " " + escape_field(translation) + "\n";
  ssize_t n = ::write(lock_fd_, line.data(), line.size());
  if (n != static_cast<ssize_t>(line.size()))
    throw IoError("cache append failed: " + path_);
}

void TranslationCache::compact() {
  if (path_.empty()) return;
  std::ostringstream out;
  for (const auto& [key, value] : entries_)
    out << key << ' ' << escape_field(value) << '\n';
  if (::ftruncate(lock_fd_, 0) != 0)
    throw IoError("cache truncate failed: " + path_);
  std::string content = out.str();
  if (::write(lock_fd_, content.data(), content.size()) !=
      static_cast<ssize_t>(content.size()))
    throw IoError("cache rewrite failed: " + path_);
}

// ---- augmentation -----------------------------------------------------------

std::string cache_lookup_or_translate(const std::string& text,
                                      const LanguageTag& source,
                                      const LanguageTag& target,
                                      TranslationBackend& backend,
                                      TranslationCache& cache,
                                      const RetryPolicy& retry) {
  if (source == target)
    throw DataError("translation requested with source == target (" +
                    source.code + ")");
  if (auto cached = cache.get(source, target, text)) return *cached;
  int delay_ms = retry.base_delay_ms;
  for (int attempt = 1;; ++attempt) {
    try {
      std::string translated = normalize_text(backend.translate(text, source, target));
      cache.put(source, target, text, translated);
      return translated;
    } catch (const Error&) {
      if (attempt >= retry.attempts) throw;
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      delay_ms *= 2;
    }
  }
}

Corpus augment_corpus(const Corpus& corpus, const AugmentationPlan& plan,
                      TranslationBackend& backend, TranslationCache& cache) {
  std::vector<LanguageTag> targets;
  for (auto code : kLanguages) {  // fixed output order en,fr,de,es,it
    LanguageTag lang{std::string(code)};
    for (const auto& t : plan.target_languages)
      if (t == lang) {
        targets.push_back(lang);
        break;
      }
  }

  size_t total_pairs = 0;
  for (const auto& ex : corpus)
    if (ex.split == Split::train && ex.is_original())
      for (const auto& t : targets)
        if (t != ex.language) ++total_pairs;

  Corpus out;
  size_t completed = 0;
  for (const auto& ex : corpus) {
    out.add(ex);
    if (ex.split != Split::train || !ex.is_original()) continue;
    for (const auto& target : targets) {
      if (target == ex.language) continue;
      std::string translated;
      try {
        translated = cache_lookup_or_translate(ex.text, ex.language, target,
                                               backend, cache, plan.retry);
      } catch (const Error& e) {
        throw IoError("augmentation aborted after backend failure (" +
                      std::string(e.what()) + "); " + std::to_string(completed) +
                      " pairs completed, " + std::to_string(total_pairs - completed) +
                      " pending; completed work is retained in the cache");
      }
      ++completed;
      LabeledExample copy;
      copy.id = ex.id + "#" + target.code;
      copy.text = translated;
      copy.language = target;
      copy.label = ex.label;
      copy.translated_from = ex.language;
      copy.dataset = ex.dataset;
      copy.split = ex.split;
      out.add(std::move(copy));
    }
  }
  return out;
}

}  // namespace polysent
