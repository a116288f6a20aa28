#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "corrmine/corpus.hpp"
#include "corrmine/encoder.hpp"
#include "corrmine/idc.hpp"

namespace corrmine {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 64;
  int epochs_per_iteration = 3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool symmetric = false;  // ablation: average anchor->pos and pos->anchor directions
  std::uint64_t seed = 0;

  void validate() const;
};

/// One contrastive training sample. The anchor is either a token sequence
/// (self-supervised pairs) or a whole document (fine-tuning); the positive is
/// always a token sequence. Entries within a batch come from distinct
/// documents, so the other entries' positives act as negatives.
struct BatchEntry {
  std::string doc_id;
  const Document* anchor_doc = nullptr;  // set for document anchors
  std::vector<int> anchor_tokens;        // used when anchor_doc == nullptr
  std::vector<int> positive_tokens;
};

struct Batch {
  std::vector<BatchEntry> entries;

  int size() const { return static_cast<int>(entries.size()); }
};

struct Gradients {
  Matrix token_table;
  Matrix projection;
  std::vector<double> proj_bias;

  static Gradients zeros_like(const EncoderModel& model);
  void clear();
  double global_norm() const;
};

struct AdamState {
  Matrix m_token, v_token;
  Matrix m_proj, v_proj;
  std::vector<double> m_bias, v_bias;
  long step = 0;

  static AdamState zeros_like(const EncoderModel& model);
};

struct LossReport {
  double mean_loss = 0.0;
  long batch_count = 0;
  double grad_norm = 0.0;
};

/// InfoNCE over the batch: for each anchor b, softmax over the inner products
/// (scaled by 1/temperature) between f(anchor_b) and every positive in the
/// batch; loss is the mean of -log softmax at the own positive. Analytic
/// gradients for every parameter are accumulated into `grads` (cleared
/// first). Throws on a non-finite loss, naming the batch's doc_ids.
double infonce_loss_and_grads(const EncoderModel& model, const Batch& batch, Gradients& grads);

/// Ablation overload: averages the anchor->positives and positives->anchors
/// directions when `symmetric` is set.
double infonce_loss_and_grads(const EncoderModel& model, const Batch& batch, Gradients& grads,
                              bool symmetric);

/// Forward-only variant of the above.
double infonce_loss(const EncoderModel& model, const Batch& batch);

/// Standard Adam with bias correction; parameters stay on the f32 grid and
/// are checked finite after the step.
void adam_step(EncoderModel& model, const Gradients& grads, AdamState& state,
               const TrainConfig& cfg);

/// Shuffles pairs by `seed`, then packs batches greedily such that no two
/// entries in a batch share a doc_id (conflicting pairs are deferred to later
/// batches). A final short batch is kept only if it has >= 2 entries. Throws
/// if the pair set spans fewer than 2 distinct documents.
std::vector<Batch> make_batches(const PositivePairSet& pairs, const Corpus& corpus,
                                const TrainConfig& cfg, std::uint64_t seed);

/// Doc-distinct batch packing over prebuilt entries (shared by make_batches
/// and fine_tune).
std::vector<Batch> pack_batches(std::vector<BatchEntry> entries, int batch_size,
                                std::uint64_t seed);

/// One pair per adjacent sentence couple (i, i+1) in every document with
/// >= 2 sentences: the heuristic bootstrap annotation.
PositivePairSet init_neighbor_positives(const Corpus& corpus);

/// Sink for the training log JSONL (one line per epoch).
class TrainLog {
 public:
  explicit TrainLog(const std::string& path);
  ~TrainLog();
  void append(int iteration, int epoch, double mean_loss, double grad_norm, long pairs);

 private:
  std::ofstream* out_;
};

/// epochs_per_iteration passes of make_batches -> infonce_loss_and_grads ->
/// adam_step, with a fresh AdamState. Deterministic given cfg.seed.
LossReport train_iteration(EncoderModel& model, const PositivePairSet& pairs,
                           const Corpus& corpus, const TrainConfig& cfg,
                           TrainLog* log = nullptr, int iteration = 0);

/// Same InfoNCE machinery where the anchor is the document embedding and the
/// positive is the paired item; in-batch negatives are the other items.
/// Requires >= 2 labeled pairs from distinct documents.
LossReport fine_tune(EncoderModel& model, const std::vector<LabeledPair>& labeled,
                     const Corpus& corpus, const TrainConfig& cfg,
                     TrainLog* log = nullptr, int iteration = 0);

/// Mean InfoNCE loss of `pairs` under `model` without updating anything.
double evaluate_loss(const EncoderModel& model, const PositivePairSet& pairs,
                     const Corpus& corpus, const TrainConfig& cfg, std::uint64_t seed);

}  // namespace corrmine
