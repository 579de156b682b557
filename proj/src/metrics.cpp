#include "polysent/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace polysent {

namespace {

using json = nlohmann::json;

void check_scoreable(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw DataError("empty confusion matrix");
}

double per_class_recall(const ConfusionMatrix& cm, int c) {
  long support = cm.row_sum(c);
  return support == 0 ? 0.0
                      : static_cast<double>(cm.counts[c][c]) / support;
}

double per_class_f1(const ConfusionMatrix& cm, int c) {
  long support = cm.row_sum(c);
  long predicted = cm.col_sum(c);
  if (support == 0 || predicted == 0) return 0.0;
  double r = static_cast<double>(cm.counts[c][c]) / support;
  double p = static_cast<double>(cm.counts[c][c]) / predicted;
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

void warn_zero_support(const ConfusionMatrix& cm, int c) {
  if (cm.row_sum(c) == 0)
    std::fprintf(stderr,
                 "[polysent] warning: gold class '%.*s' has zero support\n",
                 static_cast<int>(label_name(static_cast<SentimentLabel>(c)).size()),
                 label_name(static_cast<SentimentLabel>(c)).data());
}

double average_over_classes(const ConfusionMatrix& cm,
                            std::span<const int> classes, ZeroSupportMode mode,
                            double (*per_class)(const ConfusionMatrix&, int)) {
  double sum = 0.0;
  int n = 0;
  for (int c : classes) {
    if (cm.row_sum(c) == 0) {
      warn_zero_support(cm, c);
      if (mode == ZeroSupportMode::exclude) continue;
    }
    sum += per_class(cm, c);
    ++n;
  }
  if (n == 0) throw DataError("no gold class with support");
  return sum / n;
}

json triple_to_json(const MetricTriple& t) {
  return {{"rec_avg", t.rec_avg}, {"f1_macro", t.f1_macro}, {"f1_pn", t.f1_pn}};
}

MetricTriple triple_from_json(const json& j) {
  return MetricTriple{j.at("rec_avg").get<double>(),
                      j.at("f1_macro").get<double>(),
                      j.at("f1_pn").get<double>()};
}

}  // namespace

long ConfusionMatrix::total() const {
  long t = 0;
  for (const auto& row : counts)
    for (long v : row) t += v;
  return t;
}

long ConfusionMatrix::row_sum(int gold) const {
  long t = 0;
  for (long v : counts[gold]) t += v;
  return t;
}

long ConfusionMatrix::col_sum(int pred) const {
  long t = 0;
  for (const auto& row : counts) t += row[pred];
  return t;
}

ConfusionMatrix confusion(std::span<const SentimentLabel> gold,
                          std::span<const SentimentLabel> pred) {
  if (gold.size() != pred.size())
    throw DataError("gold/pred length mismatch: " + std::to_string(gold.size()) +
                    " vs " + std::to_string(pred.size()));
  if (gold.empty()) throw DataError("cannot score an empty prediction set");
  ConfusionMatrix cm;
  for (size_t i = 0; i < gold.size(); ++i)
    cm.counts[static_cast<int>(gold[i])][static_cast<int>(pred[i])]++;
  return cm;
}

double rec_avg(const ConfusionMatrix& cm, ZeroSupportMode mode) {
  check_scoreable(cm);
  static const int all[] = {0, 1, 2};
  return average_over_classes(cm, all, mode, per_class_recall);
}

double f1_macro(const ConfusionMatrix& cm, ZeroSupportMode mode) {
  check_scoreable(cm);
  static const int all[] = {0, 1, 2};
  return average_over_classes(cm, all, mode, per_class_f1);
}

double f1_pn(const ConfusionMatrix& cm, ZeroSupportMode mode) {
  check_scoreable(cm);
  static const int pn[] = {static_cast<int>(SentimentLabel::negative),
                           static_cast<int>(SentimentLabel::positive)};
  return average_over_classes(cm, pn, mode, per_class_f1);
}

MetricTriple metric_triple(const ConfusionMatrix& cm, ZeroSupportMode mode) {
  return MetricTriple{rec_avg(cm, mode), f1_macro(cm, mode), f1_pn(cm, mode)};
}

MetricTriple aggregate_languages(
    const std::map<std::string, MetricTriple>& per_language,
    const std::string& exclude) {
  MetricTriple sum;
  int n = 0;
  for (const auto& [lang, t] : per_language) {
    if (lang == exclude) continue;
    sum.rec_avg += t.rec_avg;
    sum.f1_macro += t.f1_macro;
    sum.f1_pn += t.f1_pn;
    ++n;
  }
  if (n == 0) throw DataError("no languages left to aggregate");
  return MetricTriple{sum.rec_avg / n, sum.f1_macro / n, sum.f1_pn / n};
}

void EvalReport::finalize_aggregate() {
  std::map<std::string, MetricTriple> triples;
  for (const auto& [lang, ev] : per_language) triples[lang] = ev.metrics;
  bool has_non_english = false;
  for (const auto& [lang, _] : triples)
    if (lang != "en") has_non_english = true;
  aggregate_non_english =
      has_non_english ? std::optional(aggregate_languages(triples)) : std::nullopt;
}

std::string eval_report_to_json(const EvalReport& report) {
  json j;
  j["model"] = report.model_name;
  j["using_english"] = report.using_english;
  j["data_augmentation"] = report.data_augmentation;
  j["extra_configuration"] = report.extra_configuration;
  json langs = json::object();
  for (const auto& [lang, ev] : report.per_language) {
    json e;
    e["confusion"] = ev.cm.counts;
    e["metrics"] = triple_to_json(ev.metrics);
    e["test_size"] = ev.test_size;
    langs[lang] = e;
  }
  j["per_language"] = langs;
  if (report.aggregate_non_english)
    j["aggregate_non_english"] = triple_to_json(*report.aggregate_non_english);
  return j.dump(2) + "\n";
}

EvalReport eval_report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad report JSON: ") + e.what());
  }
  EvalReport report;
  report.model_name = j.at("model").get<std::string>();
  report.using_english = j.at("using_english").get<bool>();
  report.data_augmentation = j.at("data_augmentation").get<bool>();
  report.extra_configuration = j.value("extra_configuration", false);
  for (auto& [lang, e] : j.at("per_language").items()) {
    LanguageEval ev;
    auto c = e.at("confusion");
    for (int g = 0; g < kNumClasses; ++g)
      for (int p = 0; p < kNumClasses; ++p)
        ev.cm.counts[g][p] = c.at(g).at(p).get<long>();
    ev.metrics = triple_from_json(e.at("metrics"));
    ev.test_size = e.at("test_size").get<size_t>();
    report.per_language[lang] = ev;
  }
  if (j.contains("aggregate_non_english"))
    report.aggregate_non_english = triple_from_json(j.at("aggregate_non_english"));
  return report;
}

void write_predictions(const std::string& path,
                       std::span<const std::string> ids,
                       std::span<const SentimentLabel> gold,
                       std::span<const SentimentLabel> pred) {
  if (ids.size() != gold.size() || gold.size() != pred.size())
    throw DataError("predictions: length mismatch");
  std::ostringstream out;
  out << "id\tgold\tpred\n";
  for (size_t i = 0; i < ids.size(); ++i)
    out << escape_field(ids[i]) << '\t' << label_name(gold[i]) << '\t'
        << label_name(pred[i]) << '\n';
  write_file(path, out.str());
}

Predictions read_predictions(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "id\tgold\tpred")
    throw DataError("malformed predictions header in " + path);
  Predictions p;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto t1 = line.find('\t');
    auto t2 = line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw DataError("malformed predictions row in " + path);
    auto g = parse_label(std::string_view(line).substr(t1 + 1, t2 - t1 - 1));
    auto pr = parse_label(std::string_view(line).substr(t2 + 1));
    if (!g || !pr) throw DataError("bad label in predictions file " + path);
    p.ids.push_back(unescape_field(line.substr(0, t1)));
    p.gold.push_back(*g);
    p.pred.push_back(*pr);
  }
  return p;
}

}  // namespace polysent
