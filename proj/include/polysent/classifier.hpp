#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "polysent/corpus.hpp"
#include "polysent/metrics.hpp"

namespace polysent {

// Named parameter tensor. Values are 32-bit floats (the checkpoint format);
// all arithmetic runs in double with the float values as the evaluation point.
struct Tensor {
  std::string name;
  std::vector<size_t> shape;
  std::vector<float> value;
  std::vector<double> grad;

  Tensor() = default;
  Tensor(std::string name, std::vector<size_t> shape);
  size_t size() const { return value.size(); }
  void zero_grad();
};

// Maps a batch of normalized texts to an [n x out_dim] feature matrix.
class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;
  virtual std::string name() const = 0;
  virtual size_t out_dim() const = 0;
  virtual bool trainable() const = 0;
  // Row-major [n x out_dim]. With train_mode the activations needed by the
  // following backward() call are retained.
  virtual std::vector<double> encode(const std::vector<std::string>& texts,
                                     bool train_mode) = 0;
  // grad_out is d(loss)/d(encode output), same layout as the last encode.
  virtual void backward(const std::vector<double>& grad_out) { (void)grad_out; }
  virtual std::vector<Tensor*> parameters() { return {}; }
  // Serialized construction parameters (used by checkpoints).
  virtual std::string descriptor_json() const = 0;
};

struct TinyHashEncoderConfig {
  int ngram_min = 3;
  int ngram_max = 5;
  size_t hash_dim = 32768;
  size_t hidden_dim = 64;
  uint64_t hash_seed = 0x9e3779b97f4a7c15ULL;
  uint64_t init_seed = 42;
};

// Hashed character n-gram bag (L2-normalized) followed by a trainable
// rectified projection to hidden_dim.
class TinyHashEncoder : public EncoderBackend {
 public:
  explicit TinyHashEncoder(TinyHashEncoderConfig config);

  std::string name() const override { return "tiny_hash"; }
  size_t out_dim() const override { return config_.hidden_dim; }
  bool trainable() const override { return true; }
  std::vector<double> encode(const std::vector<std::string>& texts,
                             bool train_mode) override;
  void backward(const std::vector<double>& grad_out) override;
  std::vector<Tensor*> parameters() override { return {&w1_, &b1_}; }
  std::string descriptor_json() const override;

  static TinyHashEncoder from_descriptor_json(const std::string& desc);

  // Sparse L2-normalized hashed n-gram vector; empty text -> zero vector.
  using SparseVec = std::vector<std::pair<uint32_t, double>>;
  const SparseVec& features(const std::string& text);

 private:
  TinyHashEncoderConfig config_;
  Tensor w1_;  // [hash_dim x hidden_dim], row-major
  Tensor b1_;  // [hidden_dim]
  std::unordered_map<std::string, SparseVec> feature_memo_;
  // retained forward state
  std::vector<const SparseVec*> last_features_;
  std::vector<double> last_preact_;  // [n x hidden_dim]
};

// Builds an encoder from a descriptor JSON like {"name":"tiny_hash", ...}.
std::unique_ptr<EncoderBackend> make_encoder(const std::string& descriptor_json);

enum class SelectionMetric { avg_rec, f1_macro, f1_pn };
std::string_view selection_metric_name(SelectionMetric m);
std::optional<SelectionMetric> parse_selection_metric(std::string_view name);

enum class ClassWeightMode { none, inverse_frequency };

struct TrainConfig {
  double learning_rate = 2e-6;  // default pre-train rate; fine-tune uses 5e-7
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 3;
  SelectionMetric selection_metric = SelectionMetric::avg_rec;
  ClassWeightMode class_weight_mode = ClassWeightMode::none;
  uint64_t rng_seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;  // throws ConfigError
  uint64_t hash() const;
};

using ClassWeights = std::array<double, kNumClasses>;

// mode=none -> (1,1,1); inverse_frequency -> w_c = N / (3 * n_c).
ClassWeights class_weights(const Corpus& train, ClassWeightMode mode);

// w_gold * (-log softmax(logits)[gold]); throws TrainError on non-finite logits.
double weighted_cross_entropy(const std::array<double, kNumClasses>& logits,
                              SentimentLabel gold, const ClassWeights& weights);

struct EpochRecord {
  double train_loss = 0.0;
  double dev_metric = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;      // 1-based
  double best_metric = 0.0;
  bool stopped_early = false;
};

// Tracks the best dev metric; strict improvement resets the patience counter,
// ties keep the earlier epoch.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  // Returns true when this epoch improved the best metric.
  bool update(int epoch, double metric);
  bool should_stop(int epoch) const { return epoch >= best_epoch_ + patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_metric() const { return best_metric_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_metric_ = -1.0;
};

class ClassifierModel {
 public:
  ClassifierModel(std::unique_ptr<EncoderBackend> encoder, uint64_t init_seed);

  EncoderBackend& encoder() { return *encoder_; }
  const EncoderBackend& encoder() const { return *encoder_; }

  // Row-major [n x 3] logits in canonical label order.
  std::vector<double> logits(const std::vector<std::string>& texts,
                             bool train_mode = false);
  std::vector<SentimentLabel> predict(const std::vector<std::string>& texts);

  // Mean weighted cross-entropy over the batch; accumulates analytic
  // gradients into every trainable tensor (grads are zeroed first).
  double compute_gradients(const std::vector<std::string>& texts,
                           const std::vector<SentimentLabel>& golds,
                           const ClassWeights& weights);

  std::vector<Tensor*> parameters();

  uint64_t init_seed() const { return init_seed_; }
  const std::string& training_history_json() const { return history_json_; }
  void set_training_history_json(std::string j) { history_json_ = std::move(j); }

  // Checkpoint directory: params.bin + layout.txt + meta.json.
  void save_checkpoint(const std::string& directory,
                       uint64_t config_hash) const;
  static ClassifierModel load_checkpoint(const std::string& directory);
  static uint64_t checkpoint_config_hash(const std::string& directory);

 private:
  std::unique_ptr<EncoderBackend> encoder_;
  Tensor w2_;  // [out_dim x 3]
  Tensor b2_;  // [3]
  uint64_t init_seed_;
  std::string history_json_;
  std::vector<double> last_encoded_;  // retained by logits(train_mode=true)
};

// Argmax with ties broken toward the lower canonical class index.
SentimentLabel argmax_label(const double* logits3);

// Seeded mini-batch training with per-epoch dev evaluation and best-checkpoint
// retention. The model is left holding the best parameters.
TrainingLog train(ClassifierModel& model, const Corpus& train_corpus,
                  const Corpus& dev_corpus, const TrainConfig& config);

}  // namespace polysent
