#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <random>

#include "polysent/classifier.hpp"
#include "test_util.hpp"

using namespace polysent;

namespace {

ClassifierModel tiny_model(size_t hash_dim = 64, size_t hidden = 4,
                           uint64_t seed = 42) {
  TinyHashEncoderConfig cfg;
  cfg.hash_dim = hash_dim;
  cfg.hidden_dim = hidden;
  cfg.init_seed = seed;
  return ClassifierModel(std::make_unique<TinyHashEncoder>(cfg), seed);
}

struct Batch {
  std::vector<std::string> texts;
  std::vector<SentimentLabel> golds;
};

Batch eight_example_batch() {
  return Batch{{"awful day truly awful", "the weather report", "great and lovely",
                "so sad and angry", "meeting at the table", "super happy today",
                "horrid horrid horrid", "bright lovely morning"},
               {SentimentLabel::negative, SentimentLabel::neutral,
                SentimentLabel::positive, SentimentLabel::negative,
                SentimentLabel::neutral, SentimentLabel::positive,
                SentimentLabel::negative, SentimentLabel::positive}};
}

// Central finite differences against the analytic gradients. The evaluation
// point is the stored float parameters; the actual realized step (after float
// rounding) is used as the denominator.
double max_tensor_relative_error(ClassifierModel& model, const Batch& batch,
                                 const ClassWeights& weights, double delta) {
  auto params = model.parameters();
  model.compute_gradients(batch.texts, batch.golds, weights);
  std::vector<std::vector<double>> analytic;
  for (Tensor* p : params) analytic.push_back(p->grad);

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor* p = params[pi];
    double diff_sq = 0.0, a_sq = 0.0, fd_sq = 0.0;
    for (size_t j = 0; j < p->size(); ++j) {
      float saved = p->value[j];
      p->value[j] = static_cast<float>(static_cast<double>(saved) + delta);
      double v_plus = static_cast<double>(p->value[j]);
      double loss_plus = model.compute_gradients(batch.texts, batch.golds, weights);
      p->value[j] = static_cast<float>(static_cast<double>(saved) - delta);
      double v_minus = static_cast<double>(p->value[j]);
      double loss_minus = model.compute_gradients(batch.texts, batch.golds, weights);
      p->value[j] = saved;
      double fd = (loss_plus - loss_minus) / (v_plus - v_minus);
      double a = analytic[pi][j];
      diff_sq += (a - fd) * (a - fd);
      a_sq += a * a;
      fd_sq += fd * fd;
    }
    double rel = std::sqrt(diff_sq) /
                 (std::sqrt(a_sq) + std::sqrt(fd_sq) + 1e-12);
    worst = std::max(worst, rel);
  }
  return worst;
}

struct SimResult {
  int epochs_run;
  int best_epoch;
  double best_metric;
};

// Drives the production EarlyStopping controller over a fixed metric trace.
SimResult simulate(const std::vector<double>& trace, int patience,
                   int max_epochs) {
  EarlyStopping stopper(patience);
  int epochs = 0;
  for (int e = 1; e <= max_epochs && e <= static_cast<int>(trace.size()); ++e) {
    epochs = e;
    stopper.update(e, trace[e - 1]);
    if (stopper.should_stop(e)) break;
  }
  return SimResult{epochs, stopper.best_epoch(), stopper.best_metric()};
}

}  // namespace

TEST_CASE("class weights: inverse frequency and none") {
  Corpus c;
  auto add = [&c](const std::string& id, SentimentLabel l) {
    LabeledExample ex;
    ex.id = id;
    ex.text = "t " + id;
    ex.language = LanguageTag{"en"};
    ex.label = l;
    ex.dataset = "d";
    ex.split = Split::train;
    c.add(ex);
  };
  add("a", SentimentLabel::negative);
  add("b", SentimentLabel::neutral);
  add("c", SentimentLabel::positive);
  add("d", SentimentLabel::positive);

  ClassWeights w = class_weights(c, ClassWeightMode::inverse_frequency);
  CHECK(w[0] == doctest::Approx(4.0 / 3.0));
  CHECK(w[1] == doctest::Approx(4.0 / 3.0));
  CHECK(w[2] == doctest::Approx(2.0 / 3.0));
  // sum_c n_c * w_c = N
  CHECK(1 * w[0] + 1 * w[1] + 2 * w[2] == doctest::Approx(4.0).epsilon(1e-12));

  ClassWeights none = class_weights(c, ClassWeightMode::none);
  CHECK(none == ClassWeights{1.0, 1.0, 1.0});

  // balanced corpus -> unit weights
  add("e", SentimentLabel::negative);
  add("f", SentimentLabel::neutral);
  ClassWeights balanced = class_weights(c, ClassWeightMode::inverse_frequency);
  for (double v : balanced) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("class weights error when a class is absent") {
  Corpus c;
  LabeledExample ex;
  ex.id = "a";
  ex.text = "x";
  ex.language = LanguageTag{"en"};
  ex.label = SentimentLabel::positive;
  ex.dataset = "d";
  c.add(ex);
  CHECK_THROWS_WITH_AS(class_weights(c, ClassWeightMode::inverse_frequency),
                       doctest::Contains("negative"), DataError);
  CHECK_THROWS_AS(class_weights(Corpus{}, ClassWeightMode::none), DataError);
}

TEST_CASE("weighted cross entropy values") {
  ClassWeights ones = {1, 1, 1};
  CHECK(weighted_cross_entropy({0, 0, 0}, SentimentLabel::neutral, ones) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(weighted_cross_entropy({10, -10, -10}, SentimentLabel::negative, ones) <
        1e-8);

  // linear in the gold-class weight
  std::array<double, 3> logits = {0.3, -0.2, 1.1};
  double l1 = weighted_cross_entropy(logits, SentimentLabel::positive, ones);
  double l2 = weighted_cross_entropy(logits, SentimentLabel::positive, {1, 1, 2});
  CHECK(l2 == doctest::Approx(2.0 * l1).epsilon(1e-12));

  CHECK_THROWS_AS(weighted_cross_entropy(
                      {std::numeric_limits<double>::infinity(), 0, 0},
                      SentimentLabel::neutral, ones),
                  TrainError);
}

TEST_CASE("softmax probabilities implied by the loss sum to 1") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(-20, 20);
  ClassWeights ones = {1, 1, 1};
  for (int trial = 0; trial < 200; ++trial) {
    std::array<double, 3> logits = {dist(rng), dist(rng), dist(rng)};
    double total = 0.0;
    for (int c = 0; c < 3; ++c)
      total += std::exp(-weighted_cross_entropy(
          logits, static_cast<SentimentLabel>(c), ones));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("unit weights reproduce the unweighted loss exactly") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> dist(-5, 5);
  ClassWeights ones = {1, 1, 1};
  for (int trial = 0; trial < 100; ++trial) {
    std::array<double, 3> logits = {dist(rng), dist(rng), dist(rng)};
    auto gold = static_cast<SentimentLabel>(rng() % 3);
    // independent unweighted cross entropy
    double m = std::max({logits[0], logits[1], logits[2]});
    double lse = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m) +
                              std::exp(logits[2] - m));
    double unweighted = lse - logits[static_cast<int>(gold)];
    CHECK(weighted_cross_entropy(logits, gold, ones) ==
          doctest::Approx(unweighted).epsilon(1e-12));
  }
}

TEST_CASE("predict: argmax with lower-index tie break and shift invariance") {
  double a[3] = {1, 0, 0};
  CHECK(argmax_label(a) == SentimentLabel::negative);
  double tie[3] = {0.5, 0.5, 0.1};
  CHECK(argmax_label(tie) == SentimentLabel::negative);
  double b[3] = {0.1, 0.1, 0.1};
  CHECK(argmax_label(b) == SentimentLabel::negative);
  double c[3] = {-1, 2, 2};
  CHECK(argmax_label(c) == SentimentLabel::neutral);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> dist(-3, 3);
  for (int i = 0; i < 200; ++i) {
    double l[3] = {dist(rng), dist(rng), dist(rng)};
    double shift = dist(rng);
    double l2[3] = {l[0] + shift, l[1] + shift, l[2] + shift};
    CHECK(argmax_label(l) == argmax_label(l2));
  }
}

TEST_CASE("tiny hash encoder features are unit-norm and deterministic") {
  TinyHashEncoderConfig cfg;
  cfg.hash_dim = 512;
  cfg.hidden_dim = 8;
  TinyHashEncoder enc(cfg);
  const auto& f = enc.features("hello world");
  double norm = 0.0;
  for (auto& [i, v] : f) norm += v * v;
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(enc.features("").empty());

  TinyHashEncoder enc2(cfg);
  CHECK(enc2.features("hello world") == f);
}

TEST_CASE("zero weights give zero gradients") {
  auto model = tiny_model();
  Batch batch = eight_example_batch();
  model.compute_gradients(batch.texts, batch.golds, {0, 0, 0});
  for (Tensor* p : model.parameters())
    for (double g : p->grad) CHECK(g == 0.0);
}

TEST_CASE("analytic gradients match central finite differences") {
  auto model = tiny_model(64, 4);
  Batch batch = eight_example_batch();
  ClassWeights weights = {1.2, 0.9, 0.8};
  double err = max_tensor_relative_error(model, batch, weights, 1e-4);
  CHECK(err < 1e-4);
}

TEST_CASE("directional derivative: single-parameter perturbation") {
  auto model = tiny_model(64, 4, 7);
  Batch batch = eight_example_batch();
  ClassWeights ones = {1, 1, 1};
  double loss0 = model.compute_gradients(batch.texts, batch.golds, ones);
  auto params = model.parameters();
  Tensor* w2 = params[2];  // head weights
  double g = w2->grad[5];
  double delta = 1e-4;
  float saved = w2->value[5];
  w2->value[5] = static_cast<float>(static_cast<double>(saved) + delta);
  double realized = static_cast<double>(w2->value[5]) - static_cast<double>(saved);
  double loss1 = model.compute_gradients(batch.texts, batch.golds, ones);
  w2->value[5] = saved;
  CHECK(loss1 - loss0 == doctest::Approx(g * realized).epsilon(1e-3));
}

TEST_CASE("early stopping traces") {
  auto r = simulate({0.50, 0.60, 0.58, 0.59, 0.55}, 3, 50);
  CHECK(r.best_epoch == 2);
  CHECK(r.epochs_run == 5);
  CHECK(r.best_metric == doctest::Approx(0.60));

  auto r2 = simulate({0.7, 0.6}, 1, 50);
  CHECK(r2.best_epoch == 1);
  CHECK(r2.epochs_run == 2);

  // ties keep the earlier epoch
  auto r3 = simulate({0.5, 0.5, 0.5, 0.5, 0.5}, 3, 50);
  CHECK(r3.best_epoch == 1);
  CHECK(r3.epochs_run == 4);
}

TEST_CASE("early stopping on randomized traces obeys the stopping identity") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    int max_epochs = 5 + static_cast<int>(rng() % 30);
    int patience = 1 + static_cast<int>(rng() % 5);
    std::vector<double> trace(max_epochs);
    for (auto& v : trace) v = dist(rng);
    auto r = simulate(trace, patience, max_epochs);
    CHECK(r.epochs_run == std::min(max_epochs, r.best_epoch + patience));
    double max_seen = 0.0;
    for (int e = 0; e < r.epochs_run; ++e) max_seen = std::max(max_seen, trace[e]);
    CHECK(r.best_metric == max_seen);
  }
}

TEST_CASE("training fits a separable synthetic set") {
  Corpus train_corpus = testutil::make_synthetic_corpus(LanguageTag{"en"},
                                                        Split::train, 200, 13);
  Corpus dev_corpus = testutil::make_synthetic_corpus(LanguageTag{"en"},
                                                      Split::dev, 60, 14);
  auto model = tiny_model(4096, 32, 13);
  TrainConfig cfg;
  cfg.learning_rate = 5e-3;
  cfg.max_epochs = 20;
  cfg.patience = 3;
  cfg.rng_seed = 13;
  TrainingLog log = train(model, train_corpus, dev_corpus, cfg);
  CHECK(log.best_metric == doctest::Approx(log.epochs[log.best_epoch - 1].dev_metric));
  CHECK(static_cast<int>(log.epochs.size()) <= cfg.max_epochs);
  CHECK(static_cast<int>(log.epochs.size()) <= log.best_epoch + cfg.patience);

  std::vector<std::string> texts;
  std::vector<SentimentLabel> gold;
  for (const auto& ex : train_corpus) {
    texts.push_back(ex.text);
    gold.push_back(ex.label);
  }
  auto pred = model.predict(texts);
  size_t agree = 0;
  for (size_t i = 0; i < gold.size(); ++i)
    if (pred[i] == gold[i]) ++agree;
  CHECK(static_cast<double>(agree) / gold.size() >= 0.95);
}

TEST_CASE("fixed seed training is bit-identical across runs") {
  Corpus train_corpus = testutil::make_synthetic_corpus(LanguageTag{"de"},
                                                        Split::train, 90, 17);
  Corpus dev_corpus = testutil::make_synthetic_corpus(LanguageTag{"de"},
                                                      Split::dev, 30, 18);
  TrainConfig cfg;
  cfg.learning_rate = 5e-3;
  cfg.max_epochs = 6;
  cfg.patience = 2;
  cfg.rng_seed = 99;

  auto run = [&] {
    auto model = tiny_model(1024, 16, 99);
    TrainingLog log = train(model, train_corpus, dev_corpus, cfg);
    std::vector<std::vector<float>> params;
    for (Tensor* p : model.parameters()) params.push_back(p->value);
    return std::pair(params, log);
  };
  auto [p1, l1] = run();
  auto [p2, l2] = run();
  CHECK(p1 == p2);
  CHECK(l1.best_epoch == l2.best_epoch);
  REQUIRE(l1.epochs.size() == l2.epochs.size());
  for (size_t i = 0; i < l1.epochs.size(); ++i) {
    CHECK(l1.epochs[i].train_loss == l2.epochs[i].train_loss);
    CHECK(l1.epochs[i].dev_metric == l2.epochs[i].dev_metric);
  }
}

TEST_CASE("divergent training aborts with a training error") {
  Corpus train_corpus = testutil::make_synthetic_corpus(LanguageTag{"en"},
                                                        Split::train, 64, 1);
  Corpus dev_corpus = testutil::make_synthetic_corpus(LanguageTag{"en"},
                                                      Split::dev, 16, 2);
  auto model = tiny_model(256, 8, 1);
  TrainConfig cfg;
  cfg.learning_rate = 1e38;
  cfg.max_epochs = 3;
  CHECK_THROWS_AS(train(model, train_corpus, dev_corpus, cfg), TrainError);
}

TEST_CASE("checkpoint round-trip preserves logits bit-exactly") {
  testutil::TempDir dir;
  auto model = tiny_model(512, 8, 5);

  std::vector<std::string> probe;
  std::ifstream in(std::string(POLYSENT_SOURCE_DIR) + "/data/probe_batch.txt");
  REQUIRE(in.good());
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) probe.push_back(normalize_text(line));
  REQUIRE(probe.size() == 8);

  auto logits_before = model.logits(probe);
  auto pred_before = model.predict(probe);
  model.save_checkpoint(dir.file("ckpt"), 0xabcdefULL);

  ClassifierModel loaded = ClassifierModel::load_checkpoint(dir.file("ckpt"));
  CHECK(loaded.logits(probe) == logits_before);
  CHECK(loaded.predict(probe) == pred_before);
  CHECK(ClassifierModel::checkpoint_config_hash(dir.file("ckpt")) == 0xabcdefULL);
}

TEST_CASE("checkpoints record distinct config hashes per seed") {
  testutil::TempDir dir;
  auto m1 = tiny_model(128, 4, 1);
  auto m2 = tiny_model(128, 4, 2);
  TrainConfig c1, c2;
  c1.rng_seed = 1;
  c2.rng_seed = 2;
  m1.save_checkpoint(dir.file("a"), c1.hash());
  m2.save_checkpoint(dir.file("b"), c2.hash());
  CHECK(ClassifierModel::checkpoint_config_hash(dir.file("a")) !=
        ClassifierModel::checkpoint_config_hash(dir.file("b")));
}

TEST_CASE("tampered checkpoints are rejected") {
  testutil::TempDir dir;
  auto model = tiny_model(128, 4, 3);
  model.save_checkpoint(dir.file("ckpt"), 1);

  // truncate the parameter file
  std::string params = read_file(dir.file("ckpt/params.bin"));
  write_file(dir.file("ckpt/params.bin"), params.substr(0, params.size() - 8));
  CHECK_THROWS_WITH_AS(ClassifierModel::load_checkpoint(dir.file("ckpt")),
                       doctest::Contains("truncated"), DataError);
  write_file(dir.file("ckpt/params.bin"), params);

  // corrupt the layout
  std::string layout = read_file(dir.file("ckpt/layout.txt"));
  write_file(dir.file("ckpt/layout.txt"), "encoder.w1 128 5\n" + layout.substr(layout.find('\n') + 1));
  CHECK_THROWS_AS(ClassifierModel::load_checkpoint(dir.file("ckpt")), DataError);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.learning_rate = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.batch_size = 32;
  cfg.patience = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("unknown encoder descriptor is a config error") {
  CHECK_THROWS_AS(make_encoder(R"({"name":"xlm_roberta_large"})"), ConfigError);
  CHECK_THROWS_AS(make_encoder("not json"), ConfigError);
}
