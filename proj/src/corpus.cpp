#include "polysent/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace polysent {

namespace {

using json = nlohmann::json;

// ---- UTF-8 <-> codepoints -------------------------------------------------
// Invalid bytes are carried through as surrogate-escaped codepoints so
// normalization stays total and idempotent on arbitrary input.

constexpr uint32_t kByteEscapeBase = 0xDC00;

std::vector<uint32_t> decode_utf8(std::string_view s) {
  std::vector<uint32_t> out;
  out.reserve(s.size());
  size_t i = 0;
  while (i < s.size()) {
    unsigned char b0 = s[i];
    uint32_t cp = 0;
    size_t len = 0;
    if (b0 < 0x80) {
      cp = b0;
      len = 1;
    } else if ((b0 & 0xE0) == 0xC0) {
      cp = b0 & 0x1F;
      len = 2;
    } else if ((b0 & 0xF0) == 0xE0) {
      cp = b0 & 0x0F;
      len = 3;
    } else if ((b0 & 0xF8) == 0xF0) {
      cp = b0 & 0x07;
      len = 4;
    } else {
      out.push_back(kByteEscapeBase + b0);
      ++i;
      continue;
    }
    if (i + len > s.size()) {
      out.push_back(kByteEscapeBase + b0);
      ++i;
      continue;
    }
    bool ok = true;
    for (size_t k = 1; k < len; ++k) {
      unsigned char bk = s[i + k];
      if ((bk & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (bk & 0x3F);
    }
    if (!ok || (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
        (len == 4 && cp < 0x10000) || cp > 0x10FFFF ||
        (cp >= 0xD800 && cp <= 0xDFFF)) {
      out.push_back(kByteEscapeBase + b0);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

void encode_utf8(uint32_t cp, std::string& out) {
  if (cp >= kByteEscapeBase && cp <= kByteEscapeBase + 0xFF) {
    out += static_cast<char>(cp - kByteEscapeBase);
  } else if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

std::string encode_utf8(const std::vector<uint32_t>& cps) {
  std::string out;
  out.reserve(cps.size());
  for (uint32_t cp : cps) encode_utf8(cp, out);
  return out;
}

// Composition of the combining diacritics that occur in the five studied
// languages onto their Latin base letters.
uint32_t compose_pair(uint32_t base, uint32_t mark) {
  auto pick = [&](std::string_view bases, const uint32_t* composed) -> uint32_t {
    for (size_t i = 0; i < bases.size(); ++i)
      if (static_cast<uint32_t>(bases[i]) == base) return composed[i];
    return 0;
  };
  switch (mark) {
    case 0x0300: {  // grave
      static const uint32_t c[] = {0xC0, 0xC8, 0xCC, 0xD2, 0xD9,
                                   0xE0, 0xE8, 0xEC, 0xF2, 0xF9};
      return pick("AEIOUaeiou", c);
    }
    case 0x0301: {  // acute
      static const uint32_t c[] = {0xC1, 0xC9, 0xCD, 0xD3, 0xDA, 0xDD,
                                   0xE1, 0xE9, 0xED, 0xF3, 0xFA, 0xFD};
      return pick("AEIOUYaeiouy", c);
    }
    case 0x0302: {  // circumflex
      static const uint32_t c[] = {0xC2, 0xCA, 0xCE, 0xD4, 0xDB,
                                   0xE2, 0xEA, 0xEE, 0xF4, 0xFB};
      return pick("AEIOUaeiou", c);
    }
    case 0x0303: {  // tilde
      static const uint32_t c[] = {0xC3, 0xD1, 0xD5, 0xE3, 0xF1, 0xF5};
      return pick("ANOano", c);
    }
    case 0x0308: {  // diaeresis
      static const uint32_t c[] = {0xC4, 0xCB, 0xCF, 0xD6, 0xDC,
                                   0xE4, 0xEB, 0xEF, 0xF6, 0xFC, 0xFF};
      return pick("AEIOUaeiouy", c);
    }
    case 0x030A: {  // ring
      static const uint32_t c[] = {0xC5, 0xE5};
      return pick("Aa", c);
    }
    case 0x0327: {  // cedilla
      static const uint32_t c[] = {0xC7, 0xE7};
      return pick("Cc", c);
    }
    default:
      return 0;
  }
}

std::string compose_diacritics(std::string_view s) {
  std::vector<uint32_t> cps = decode_utf8(s);
  std::vector<uint32_t> out;
  out.reserve(cps.size());
  for (uint32_t cp : cps) {
    if (!out.empty() && cp >= 0x0300 && cp <= 0x036F) {
      if (uint32_t composed = compose_pair(out.back(), cp)) {
        out.back() = composed;
        continue;
      }
    }
    out.push_back(cp);
  }
  return encode_utf8(out);
}

constexpr size_t kMaxTextCodepoints = 512;

std::string truncate_codepoints(std::string_view s, size_t limit) {
  std::vector<uint32_t> cps = decode_utf8(s);
  if (cps.size() <= limit) return std::string(s);
  cps.resize(limit);
  return encode_utf8(cps);
}

const std::regex& url_regex() {
  static const std::regex re(R"((https?://[^\s]+|www\.[^\s]+))");
  return re;
}

const std::regex& mention_regex() {
  static const std::regex re(R"(@[A-Za-z0-9_]+)");
  return re;
}

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

std::string collapse_and_trim(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out += ' ';
      pending_space = false;
      out += c;
    }
  }
  return out;
}

std::string rtrim(std::string s) {
  while (!s.empty() && is_space(s.back())) s.pop_back();
  return s;
}

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> fields;
  size_t start = 0;
  while (true) {
    size_t pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

std::string origin_string(const LabeledExample& ex) {
  return ex.is_original() ? "original" : "translated:" + ex.translated_from->code;
}

std::optional<std::optional<LanguageTag>> parse_origin(std::string_view s) {
  if (s == "original") return std::optional<LanguageTag>{};
  if (s.starts_with("translated:")) {
    return std::optional<LanguageTag>{LanguageTag::parse(s.substr(11))};
  }
  return std::nullopt;
}

constexpr std::string_view kCanonicalHeader = "id\tlanguage\tlabel\torigin\ttext";

Corpus parse_canonical(const std::string& path, const std::string& dataset,
                       Split split, IngestStats* stats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing corpus file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty corpus file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCanonicalHeader)
    throw DataError("malformed header in " + path + ": '" + line + "'");
  Corpus corpus;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 5)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected 5 fields, got " +
                      std::to_string(fields.size()));
    if (stats) stats->rows_read++;
    auto label = parse_label(fields[2]);
    if (!label) {
      if (stats) stats->rows_skipped_label++;
      continue;
    }
    auto origin = parse_origin(fields[3]);
    if (!origin)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": bad origin '" + fields[3] + "'");
    LabeledExample ex;
    ex.id = unescape_field(fields[0]);
    ex.language = LanguageTag::parse(fields[1]);
    ex.label = *label;
    ex.translated_from = *origin;
    ex.text = normalize_text(unescape_field(fields[4]));
    ex.dataset = dataset;
    ex.split = split;
    if (ex.text.empty()) {
      if (stats) stats->rows_skipped_empty++;
      continue;
    }
    if (corpus.contains_id(ex.id))
      throw DataError(path + ": duplicate id '" + ex.id + "'");
    corpus.add(std::move(ex));
    if (stats) stats->rows_kept++;
  }
  return corpus;
}

}  // namespace

std::string_view label_name(SentimentLabel l) {
  switch (l) {
    case SentimentLabel::negative: return "negative";
    case SentimentLabel::neutral: return "neutral";
    case SentimentLabel::positive: return "positive";
  }
  return "?";
}

std::optional<SentimentLabel> parse_label(std::string_view name) {
  if (name == "negative") return SentimentLabel::negative;
  if (name == "neutral") return SentimentLabel::neutral;
  if (name == "positive") return SentimentLabel::positive;
  return std::nullopt;
}

LanguageTag LanguageTag::parse(std::string_view code) {
  for (auto lang : kLanguages)
    if (code == lang) return LanguageTag{std::string(code)};
  throw DataError("unsupported language code: '" + std::string(code) + "'");
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

std::optional<Split> parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "dev") return Split::dev;
  if (name == "test") return Split::test;
  return std::nullopt;
}

void Corpus::add(LabeledExample ex) {
  if (ex.text.empty())
    throw DataError("empty text for example id '" + ex.id + "'");
  if (ex.translated_from && *ex.translated_from == ex.language)
    throw DataError("translated example '" + ex.id +
                    "' has source equal to its language");
  if (!ids_.insert(ex.id).second)
    throw DataError("duplicate example id '" + ex.id + "'");
  examples_.push_back(std::move(ex));
}

Manifest Corpus::manifest() const {
  Manifest m;
  for (const auto& ex : examples_) {
    m[ManifestKey{ex.dataset, ex.language.code,
                  std::string(split_name(ex.split))}]++;
  }
  return m;
}

std::array<size_t, kNumClasses> Corpus::label_counts() const {
  std::array<size_t, kNumClasses> counts{};
  for (const auto& ex : examples_) counts[static_cast<int>(ex.label)]++;
  return counts;
}

uint64_t Corpus::content_hash() const {
  uint64_t h = fnv1a64("corpus-v1");
  for (const auto& ex : examples_) {
    for (std::string_view part :
         {std::string_view(ex.id), std::string_view(ex.text),
          std::string_view(ex.language.code), label_name(ex.label),
          std::string_view(origin_string(ex)), std::string_view(ex.dataset),
          split_name(ex.split)}) {
      h = fnv1a64(part, h);
      h = fnv1a64("\x1f", h);
    }
  }
  return h;
}

std::string normalize_text(std::string_view raw) {
  std::string s = compose_diacritics(raw);
  s = std::regex_replace(s, url_regex(), "HTTPURL");
  s = std::regex_replace(s, mention_regex(), "@USER");
  s = collapse_and_trim(s);
  s = rtrim(truncate_codepoints(s, kMaxTextCodepoints));
  return s;
}

FormatSpec FormatSpec::parse(std::string_view descriptor) {
  FormatSpec spec;
  if (descriptor == "canonical") {
    spec.kind = Kind::canonical;
    return spec;
  }
  if (descriptor.starts_with("columns:")) {
    spec.kind = Kind::columns;
    std::string rest(descriptor.substr(8));
    std::stringstream ss(rest);
    std::string item;
    while (std::getline(ss, item, ',')) {
      auto eq = item.find('=');
      if (eq == std::string::npos)
        throw ConfigError("bad format descriptor item: '" + item + "'");
      std::string key = item.substr(0, eq);
      std::string val = item.substr(eq + 1);
      if (key == "id") spec.id_col = std::stoi(val);
      else if (key == "label") spec.label_col = std::stoi(val);
      else if (key == "text") spec.text_col = std::stoi(val);
      else if (key == "header") spec.has_header = (val == "1" || val == "true");
      else throw ConfigError("unknown format key: '" + key + "'");
    }
    return spec;
  }
  throw ConfigError("unknown format descriptor: '" + std::string(descriptor) +
                    "'");
}

Corpus ingest(const std::string& path, const FormatSpec& format,
              const std::string& dataset, const LanguageTag& language,
              Split split, IngestStats* stats) {
  if (format.kind == FormatSpec::Kind::canonical)
    return parse_canonical(path, dataset, split, stats);

  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing corpus file: " + path);
  Corpus corpus;
  std::string line;
  size_t lineno = 0;
  int max_col = std::max({format.id_col, format.label_col, format.text_col});
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first && format.has_header) {
      first = false;
      auto fields = split_tabs(line);
      if (static_cast<int>(fields.size()) <= max_col)
        throw DataError(path + ": malformed header, " +
                        std::to_string(fields.size()) + " columns but layout needs " +
                        std::to_string(max_col + 1));
      continue;
    }
    first = false;
    if (line.empty()) continue;
    if (stats) stats->rows_read++;
    auto fields = split_tabs(line);
    if (static_cast<int>(fields.size()) <= max_col)
      throw DataError(path + ":" + std::to_string(lineno) + ": too few columns");

    std::string raw_label = fields[format.label_col];
    auto mapped = format.label_map.find(raw_label);
    if (mapped != format.label_map.end()) {
      if (mapped->second == "skip") {
        if (stats) stats->rows_skipped_label++;
        continue;
      }
      raw_label = mapped->second;
    }
    auto label = parse_label(raw_label);
    if (!label) {
      if (stats) stats->rows_skipped_label++;
      continue;
    }
    LabeledExample ex;
    ex.id = fields[format.id_col];
    ex.text = normalize_text(unescape_field(fields[format.text_col]));
    ex.language = language;
    ex.label = *label;
    ex.dataset = dataset;
    ex.split = split;
    if (ex.text.empty()) {
      if (stats) stats->rows_skipped_empty++;
      continue;
    }
    if (corpus.contains_id(ex.id))
      throw DataError(path + ": duplicate id '" + ex.id + "'");
    corpus.add(std::move(ex));
    if (stats) stats->rows_kept++;
  }
  return corpus;
}

Corpus merge(std::span<const Corpus> corpora) {
  Corpus out;
  for (const auto& c : corpora) {
    for (const auto& ex : c) {
      LabeledExample copy = ex;
      if (out.contains_id(copy.id)) copy.id = copy.dataset + ":" + copy.id;
      int bump = 2;
      std::string base = copy.id;
      while (out.contains_id(copy.id))
        copy.id = base + "#" + std::to_string(bump++);
      out.add(std::move(copy));
    }
  }
  return out;
}

void write_corpus(const Corpus& corpus, const std::string& path) {
  std::ostringstream out;
  out << kCanonicalHeader << '\n';
  for (const auto& ex : corpus) {
    out << escape_field(ex.id) << '\t' << ex.language.code << '\t'
        << label_name(ex.label) << '\t' << origin_string(ex) << '\t'
        << escape_field(ex.text) << '\n';
  }
  write_file(path, out.str());

  json manifest = json::array();
  for (const auto& [key, count] : corpus.manifest()) {
    manifest.push_back({{"dataset", key.dataset},
                        {"language", key.language},
                        {"split", key.split},
                        {"count", count}});
  }
  write_file(path + ".manifest.json", manifest.dump(2) + "\n");
}

Corpus read_corpus(const std::string& path, const std::string& dataset,
                   Split split) {
  return parse_canonical(path, dataset, split, nullptr);
}

}  // namespace polysent
