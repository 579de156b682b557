#include "polysent/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace polysent {

namespace {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian platform");

size_t shape_size(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

void init_normal(Tensor& t, uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.value) v = static_cast<float>(dist(rng));
}

std::array<double, kNumClasses> softmax3(const double* logits) {
  double m = std::max({logits[0], logits[1], logits[2]});
  std::array<double, kNumClasses> p;
  double sum = 0.0;
  for (int k = 0; k < kNumClasses; ++k) {
    p[k] = std::exp(logits[k] - m);
    sum += p[k];
  }
  for (auto& v : p) v /= sum;
  return p;
}

}  // namespace

Tensor::Tensor(std::string name_, std::vector<size_t> shape_)
    : name(std::move(name_)), shape(std::move(shape_)) {
  value.assign(shape_size(this->shape), 0.0f);
  grad.assign(value.size(), 0.0);
}

void Tensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

// ---- TinyHashEncoder --------------------------------------------------------

TinyHashEncoder::TinyHashEncoder(TinyHashEncoderConfig config)
    : config_(config),
      w1_("encoder.w1", {config.hash_dim, config.hidden_dim}),
      b1_("encoder.b1", {config.hidden_dim}) {
  if (config_.ngram_min < 1 || config_.ngram_max < config_.ngram_min)
    throw ConfigError("bad n-gram range");
  if (config_.hash_dim == 0 || config_.hidden_dim == 0)
    throw ConfigError("encoder dimensions must be positive");
  init_normal(w1_, config_.init_seed ^ fnv1a64("tiny_hash.w1"), 0.05);
}

const TinyHashEncoder::SparseVec& TinyHashEncoder::features(
    const std::string& text) {
  auto it = feature_memo_.find(text);
  if (it != feature_memo_.end()) return it->second;

  std::unordered_map<uint32_t, double> counts;
  const size_t len = text.size();
  for (int n = config_.ngram_min; n <= config_.ngram_max; ++n) {
    if (len < static_cast<size_t>(n)) break;
    for (size_t i = 0; i + n <= len; ++i) {
      uint64_t h = fnv1a64(std::string_view(text).substr(i, n), config_.hash_seed);
      counts[static_cast<uint32_t>(h % config_.hash_dim)] += 1.0;
    }
  }
  SparseVec vec(counts.begin(), counts.end());
  std::sort(vec.begin(), vec.end());
  double norm_sq = 0.0;
  for (const auto& [idx, v] : vec) norm_sq += v * v;
  if (norm_sq > 0.0) {
    double inv = 1.0 / std::sqrt(norm_sq);
    for (auto& [idx, v] : vec) v *= inv;
  }
  return feature_memo_.emplace(text, std::move(vec)).first->second;
}

std::vector<double> TinyHashEncoder::encode(const std::vector<std::string>& texts,
                                            bool train_mode) {
  const size_t n = texts.size();
  const size_t H = config_.hidden_dim;
  std::vector<double> out(n * H, 0.0);
  std::vector<double> preact(n * H, 0.0);
  std::vector<const SparseVec*> feats(n);
  for (size_t i = 0; i < n; ++i) {
    feats[i] = &features(texts[i]);
    double* z = preact.data() + i * H;
    for (size_t h = 0; h < H; ++h) z[h] = static_cast<double>(b1_.value[h]);
    for (const auto& [idx, val] : *feats[i]) {
      const float* row = w1_.value.data() + static_cast<size_t>(idx) * H;
      for (size_t h = 0; h < H; ++h) z[h] += val * static_cast<double>(row[h]);
    }
    double* o = out.data() + i * H;
    for (size_t h = 0; h < H; ++h) o[h] = z[h] > 0.0 ? z[h] : 0.0;
  }
  if (train_mode) {
    last_features_ = std::move(feats);
    last_preact_ = std::move(preact);
  }
  return out;
}

void TinyHashEncoder::backward(const std::vector<double>& grad_out) {
  const size_t H = config_.hidden_dim;
  const size_t n = last_features_.size();
  if (grad_out.size() != n * H)
    throw TrainError("encoder backward called with mismatched gradient size");
  for (size_t i = 0; i < n; ++i) {
    const double* g = grad_out.data() + i * H;
    const double* z = last_preact_.data() + i * H;
    // relu gate
    std::vector<double> dz(H);
    for (size_t h = 0; h < H; ++h) dz[h] = z[h] > 0.0 ? g[h] : 0.0;
    for (size_t h = 0; h < H; ++h) b1_.grad[h] += dz[h];
    for (const auto& [idx, val] : *last_features_[i]) {
      double* wrow = w1_.grad.data() + static_cast<size_t>(idx) * H;
      for (size_t h = 0; h < H; ++h) wrow[h] += val * dz[h];
    }
  }
}

std::string TinyHashEncoder::descriptor_json() const {
  json j = {{"name", "tiny_hash"},
            {"ngram_min", config_.ngram_min},
            {"ngram_max", config_.ngram_max},
            {"hash_dim", config_.hash_dim},
            {"hidden_dim", config_.hidden_dim},
            {"hash_seed", config_.hash_seed},
            {"init_seed", config_.init_seed}};
  return j.dump();
}

TinyHashEncoder TinyHashEncoder::from_descriptor_json(const std::string& desc) {
  json j = json::parse(desc);
  TinyHashEncoderConfig cfg;
  cfg.ngram_min = j.value("ngram_min", cfg.ngram_min);
  cfg.ngram_max = j.value("ngram_max", cfg.ngram_max);
  cfg.hash_dim = j.value("hash_dim", cfg.hash_dim);
  cfg.hidden_dim = j.value("hidden_dim", cfg.hidden_dim);
  cfg.hash_seed = j.value("hash_seed", cfg.hash_seed);
  cfg.init_seed = j.value("init_seed", cfg.init_seed);
  return TinyHashEncoder(cfg);
}

std::unique_ptr<EncoderBackend> make_encoder(const std::string& descriptor_json) {
  json j;
  try {
    j = json::parse(descriptor_json);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad encoder descriptor: ") + e.what());
  }
  std::string name = j.value("name", "");
  if (name == "tiny_hash")
    return std::make_unique<TinyHashEncoder>(
        TinyHashEncoder::from_descriptor_json(descriptor_json));
  throw ConfigError("unknown encoder backend: '" + name + "'");
}

// ---- TrainConfig ------------------------------------------------------------

std::string_view selection_metric_name(SelectionMetric m) {
  switch (m) {
    case SelectionMetric::avg_rec: return "avg_rec";
    case SelectionMetric::f1_macro: return "f1_macro";
    case SelectionMetric::f1_pn: return "f1_pn";
  }
  return "?";
}

std::optional<SelectionMetric> parse_selection_metric(std::string_view name) {
  if (name == "avg_rec") return SelectionMetric::avg_rec;
  if (name == "f1_macro") return SelectionMetric::f1_macro;
  if (name == "f1_pn") return SelectionMetric::f1_pn;
  return std::nullopt;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
}

uint64_t TrainConfig::hash() const {
  std::ostringstream ss;
  ss << learning_rate << '|' << batch_size << '|' << max_epochs << '|'
     << patience << '|' << selection_metric_name(selection_metric) << '|'
     << static_cast<int>(class_weight_mode) << '|' << rng_seed << '|' << beta1
     << '|' << beta2 << '|' << epsilon;
  return fnv1a64(ss.str());
}

// ---- loss and weights -------------------------------------------------------

ClassWeights class_weights(const Corpus& train, ClassWeightMode mode) {
  if (train.empty()) throw DataError("class_weights: empty training corpus");
  if (mode == ClassWeightMode::none) return {1.0, 1.0, 1.0};
  auto counts = train.label_counts();
  ClassWeights w;
  double total = static_cast<double>(train.size());
  for (int c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0)
      throw DataError("inverse_frequency weights impossible: class '" +
                      std::string(label_name(static_cast<SentimentLabel>(c))) +
                      "' is absent from the training corpus");
    w[c] = total / (kNumClasses * static_cast<double>(counts[c]));
  }
  return w;
}

double weighted_cross_entropy(const std::array<double, kNumClasses>& logits,
                              SentimentLabel gold, const ClassWeights& weights) {
  for (double l : logits)
    if (!std::isfinite(l)) throw TrainError("non-finite logits in loss");
  double m = std::max({logits[0], logits[1], logits[2]});
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - m);
  double log_softmax_gold = logits[static_cast<int>(gold)] - m - std::log(sum);
  return -weights[static_cast<int>(gold)] * log_softmax_gold;
}

// ---- EarlyStopping ----------------------------------------------------------

bool EarlyStopping::update(int epoch, double metric) {
  if (metric > best_metric_) {
    best_metric_ = metric;
    best_epoch_ = epoch;
    return true;
  }
  return false;
}

// ---- ClassifierModel --------------------------------------------------------

ClassifierModel::ClassifierModel(std::unique_ptr<EncoderBackend> encoder,
                                 uint64_t init_seed)
    : encoder_(std::move(encoder)),
      w2_("head.w2", {encoder_->out_dim(), static_cast<size_t>(kNumClasses)}),
      b2_("head.b2", {static_cast<size_t>(kNumClasses)}),
      init_seed_(init_seed) {
  init_normal(w2_, init_seed ^ fnv1a64("head.w2"), 0.05);
}

std::vector<double> ClassifierModel::logits(const std::vector<std::string>& texts,
                                            bool train_mode) {
  const size_t d = encoder_->out_dim();
  std::vector<double> enc = encoder_->encode(texts, train_mode);
  std::vector<double> out(texts.size() * kNumClasses, 0.0);
  for (size_t i = 0; i < texts.size(); ++i) {
    const double* e = enc.data() + i * d;
    double* l = out.data() + i * kNumClasses;
    for (int k = 0; k < kNumClasses; ++k) l[k] = static_cast<double>(b2_.value[k]);
    for (size_t h = 0; h < d; ++h) {
      const float* wrow = w2_.value.data() + h * kNumClasses;
      for (int k = 0; k < kNumClasses; ++k)
        l[k] += e[h] * static_cast<double>(wrow[k]);
    }
  }
  if (train_mode) last_encoded_ = std::move(enc);
  return out;
}

SentimentLabel argmax_label(const double* logits3) {
  int best = 0;
  for (int k = 1; k < kNumClasses; ++k)
    if (logits3[k] > logits3[best]) best = k;
  return static_cast<SentimentLabel>(best);
}

std::vector<SentimentLabel> ClassifierModel::predict(
    const std::vector<std::string>& texts) {
  std::vector<SentimentLabel> out;
  out.reserve(texts.size());
  constexpr size_t kChunk = 256;
  for (size_t start = 0; start < texts.size(); start += kChunk) {
    size_t end = std::min(texts.size(), start + kChunk);
    std::vector<std::string> chunk(texts.begin() + start, texts.begin() + end);
    std::vector<double> l = logits(chunk, /*train_mode=*/false);
    for (size_t i = 0; i < chunk.size(); ++i)
      out.push_back(argmax_label(l.data() + i * kNumClasses));
  }
  return out;
}

double ClassifierModel::compute_gradients(
    const std::vector<std::string>& texts,
    const std::vector<SentimentLabel>& golds, const ClassWeights& weights) {
  if (texts.size() != golds.size() || texts.empty())
    throw TrainError("compute_gradients: bad batch");
  for (Tensor* t : parameters()) t->zero_grad();

  const size_t n = texts.size();
  const size_t d = encoder_->out_dim();
  std::vector<double> l = logits(texts, /*train_mode=*/true);

  double total_loss = 0.0;
  std::vector<double> dlogits(n * kNumClasses, 0.0);
  for (size_t i = 0; i < n; ++i) {
    const double* li = l.data() + i * kNumClasses;
    std::array<double, kNumClasses> arr = {li[0], li[1], li[2]};
    total_loss += weighted_cross_entropy(arr, golds[i], weights);
    auto p = softmax3(li);
    double w = weights[static_cast<int>(golds[i])] / static_cast<double>(n);
    for (int k = 0; k < kNumClasses; ++k) {
      double target = (k == static_cast<int>(golds[i])) ? 1.0 : 0.0;
      dlogits[i * kNumClasses + k] = w * (p[k] - target);
    }
  }
  double mean_loss = total_loss / static_cast<double>(n);

  // head gradients and gradient w.r.t. encoder output
  std::vector<double> denc(n * d, 0.0);
  for (size_t i = 0; i < n; ++i) {
    const double* e = last_encoded_.data() + i * d;
    const double* dl = dlogits.data() + i * kNumClasses;
    for (int k = 0; k < kNumClasses; ++k) b2_.grad[k] += dl[k];
    double* de = denc.data() + i * d;
    for (size_t h = 0; h < d; ++h) {
      const float* wrow = w2_.value.data() + h * kNumClasses;
      double* grow = w2_.grad.data() + h * kNumClasses;
      for (int k = 0; k < kNumClasses; ++k) {
        grow[k] += e[h] * dl[k];
        de[h] += static_cast<double>(wrow[k]) * dl[k];
      }
    }
  }
  encoder_->backward(denc);
  return mean_loss;
}

std::vector<Tensor*> ClassifierModel::parameters() {
  std::vector<Tensor*> params = encoder_->parameters();
  params.push_back(&w2_);
  params.push_back(&b2_);
  return params;
}

// ---- checkpointing ----------------------------------------------------------

void ClassifierModel::save_checkpoint(const std::string& directory,
                                      uint64_t config_hash) const {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw IoError("cannot create checkpoint directory: " + directory);

  auto* self = const_cast<ClassifierModel*>(this);
  std::ostringstream layout;
  std::string params_blob;
  for (Tensor* t : self->parameters()) {
    layout << t->name;
    for (size_t d : t->shape) layout << ' ' << d;
    layout << '\n';
    size_t bytes = t->value.size() * sizeof(float);
    size_t off = params_blob.size();
    params_blob.resize(off + bytes);
    std::memcpy(params_blob.data() + off, t->value.data(), bytes);
  }
  write_file(directory + "/layout.txt", layout.str());
  write_file(directory + "/params.bin", params_blob);

  json meta;
  meta["seed"] = init_seed_;
  meta["config_hash"] = to_hex(config_hash);
  meta["label_order"] = {"negative", "neutral", "positive"};
  meta["encoder"] = json::parse(encoder_->descriptor_json());
  meta["history"] = history_json_.empty() ? json(nullptr) : json::parse(history_json_);
  write_file(directory + "/meta.json", meta.dump(2) + "\n");
}

ClassifierModel ClassifierModel::load_checkpoint(const std::string& directory) {
  json meta;
  try {
    meta = json::parse(read_file(directory + "/meta.json"));
  } catch (const json::exception& e) {
    throw DataError("bad checkpoint meta in " + directory + ": " + e.what());
  }
  auto label_order = meta.at("label_order").get<std::vector<std::string>>();
  if (label_order != std::vector<std::string>{"negative", "neutral", "positive"})
    throw DataError("checkpoint label order mismatch in " + directory);

  auto encoder = make_encoder(meta.at("encoder").dump());
  ClassifierModel model(std::move(encoder), meta.at("seed").get<uint64_t>());
  if (!meta.at("history").is_null())
    model.history_json_ = meta.at("history").dump();

  // validate layout against the freshly constructed model
  std::istringstream layout(read_file(directory + "/layout.txt"));
  auto params = model.parameters();
  std::string line;
  size_t idx = 0;
  size_t total_floats = 0;
  while (std::getline(layout, line)) {
    if (line.empty()) continue;
    if (idx >= params.size())
      throw DataError("checkpoint layout has extra tensors in " + directory);
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    std::vector<size_t> shape;
    size_t d;
    while (ls >> d) shape.push_back(d);
    if (name != params[idx]->name || shape != params[idx]->shape)
      throw DataError("checkpoint layout mismatch for tensor '" + name +
                      "' in " + directory);
    total_floats += params[idx]->size();
    ++idx;
  }
  if (idx != params.size())
    throw DataError("checkpoint layout is missing tensors in " + directory);

  std::string blob = read_file(directory + "/params.bin");
  if (blob.size() != total_floats * sizeof(float))
    throw DataError("truncated or oversized parameter file in " + directory +
                    ": expected " + std::to_string(total_floats * sizeof(float)) +
                    " bytes, got " + std::to_string(blob.size()));
  size_t off = 0;
  for (Tensor* t : params) {
    std::memcpy(t->value.data(), blob.data() + off, t->value.size() * sizeof(float));
    off += t->value.size() * sizeof(float);
  }
  return model;
}

uint64_t ClassifierModel::checkpoint_config_hash(const std::string& directory) {
  json meta = json::parse(read_file(directory + "/meta.json"));
  return std::stoull(meta.at("config_hash").get<std::string>(), nullptr, 16);
}

// ---- training ---------------------------------------------------------------

namespace {

struct AdamState {
  std::vector<std::vector<double>> m, v;
  long t = 0;

  explicit AdamState(const std::vector<Tensor*>& params) {
    for (Tensor* p : params) {
      m.emplace_back(p->size(), 0.0);
      v.emplace_back(p->size(), 0.0);
    }
  }

  void step(const std::vector<Tensor*>& params, const TrainConfig& cfg) {
    ++t;
    double bc1 = 1.0 - std::pow(cfg.beta1, t);
    double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (size_t pi = 0; pi < params.size(); ++pi) {
      Tensor* p = params[pi];
      auto& mi = m[pi];
      auto& vi = v[pi];
      for (size_t j = 0; j < p->size(); ++j) {
        double g = p->grad[j];
        mi[j] = cfg.beta1 * mi[j] + (1.0 - cfg.beta1) * g;
        vi[j] = cfg.beta2 * vi[j] + (1.0 - cfg.beta2) * g * g;
        double update = cfg.learning_rate * (mi[j] / bc1) /
                        (std::sqrt(vi[j] / bc2) + cfg.epsilon);
        p->value[j] = static_cast<float>(static_cast<double>(p->value[j]) - update);
      }
    }
  }
};

double dev_metric_value(ClassifierModel& model,
                        const std::vector<std::string>& dev_texts,
                        const std::vector<SentimentLabel>& dev_gold,
                        SelectionMetric metric) {
  auto pred = model.predict(dev_texts);
  ConfusionMatrix cm = confusion(dev_gold, pred);
  switch (metric) {
    case SelectionMetric::avg_rec: return rec_avg(cm);
    case SelectionMetric::f1_macro: return f1_macro(cm);
    case SelectionMetric::f1_pn: return f1_pn(cm);
  }
  return 0.0;
}

}  // namespace

TrainingLog train(ClassifierModel& model, const Corpus& train_corpus,
                  const Corpus& dev_corpus, const TrainConfig& config) {
  config.validate();
  if (train_corpus.empty()) throw DataError("train: empty training corpus");
  if (dev_corpus.empty()) throw DataError("train: empty dev corpus");

  ClassWeights weights = class_weights(train_corpus, config.class_weight_mode);

  std::vector<std::string> train_texts;
  std::vector<SentimentLabel> train_gold;
  for (const auto& ex : train_corpus) {
    train_texts.push_back(ex.text);
    train_gold.push_back(ex.label);
  }
  std::vector<std::string> dev_texts;
  std::vector<SentimentLabel> dev_gold;
  for (const auto& ex : dev_corpus) {
    dev_texts.push_back(ex.text);
    dev_gold.push_back(ex.label);
  }

  auto params = model.parameters();
  AdamState adam(params);
  std::mt19937_64 shuffle_rng(config.rng_seed);
  EarlyStopping stopper(config.patience);

  std::vector<std::vector<float>> best_params;
  TrainingLog log;

  std::vector<size_t> order(train_texts.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    size_t examples_seen = 0;
    size_t batch_index = 0;
    for (size_t start = 0; start < order.size();
         start += config.batch_size, ++batch_index) {
      size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<std::string> batch_texts;
      std::vector<SentimentLabel> batch_gold;
      batch_texts.reserve(end - start);
      for (size_t i = start; i < end; ++i) {
        batch_texts.push_back(train_texts[order[i]]);
        batch_gold.push_back(train_gold[order[i]]);
      }
      double loss;
      try {
        loss = model.compute_gradients(batch_texts, batch_gold, weights);
      } catch (const TrainError& e) {
        throw TrainError("training diverged at epoch " + std::to_string(epoch) +
                         ", batch " + std::to_string(batch_index) + ": " +
                         e.what());
      }
      if (!std::isfinite(loss))
        throw TrainError("training diverged at epoch " + std::to_string(epoch) +
                         ", batch " + std::to_string(batch_index) +
                         ": non-finite loss");
      adam.step(params, config);
      loss_sum += loss * static_cast<double>(end - start);
      examples_seen += end - start;
    }

    double metric = dev_metric_value(model, dev_texts, dev_gold,
                                     config.selection_metric);
    log.epochs.push_back(EpochRecord{loss_sum / examples_seen, metric});
    if (stopper.update(epoch, metric)) {
      best_params.clear();
      for (Tensor* p : params) best_params.push_back(p->value);
    }
    if (stopper.should_stop(epoch)) {
      log.stopped_early = epoch < config.max_epochs;
      break;
    }
  }

  for (size_t pi = 0; pi < params.size(); ++pi)
    params[pi]->value = best_params[pi];
  log.best_epoch = stopper.best_epoch();
  log.best_metric = stopper.best_metric();

  json hist;
  hist["selection_metric"] = selection_metric_name(config.selection_metric);
  hist["best_epoch"] = log.best_epoch;
  hist["best_metric"] = log.best_metric;
  json per_epoch = json::array();
  for (const auto& e : log.epochs)
    per_epoch.push_back({{"train_loss", e.train_loss}, {"dev_metric", e.dev_metric}});
  hist["epochs"] = per_epoch;
  model.set_training_history_json(hist.dump());

  return log;
}

}  // namespace polysent
