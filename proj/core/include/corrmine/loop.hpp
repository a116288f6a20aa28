#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "corrmine/corpus.hpp"
#include "corrmine/encoder.hpp"
#include "corrmine/idc.hpp"
#include "corrmine/training.hpp"

namespace corrmine {

struct LoopConfig {
  int max_iterations = 10;       // inner self-supervision iterations
  int patience = 2;              // inner early-stop patience (iterations)
  int outer_max_iterations = 5;  // InfoCSE++ rounds
  int outer_patience = 2;
  int finetune_epochs = 20;
  IdcConfig idc;
  TrainConfig train;
  int annotate_threads = 1;

  void validate() const;
};

struct IterationState {
  int t = 0;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::string best_checkpoint_path;
  int patience_left = 0;

  struct HistoryEntry {
    int t = 0;
    double metric = 0.0;
    long pair_count = 0;
    bool stopped = false;  // true only on the early-stop entry
  };
  std::vector<HistoryEntry> history;

  bool stopped_early() const { return !history.empty() && history.back().stopped; }
};

enum class Decision { kContinue, kStop };

/// Improvement strictly greater than 1e-6 over the best metric resets
/// patience and updates the best; otherwise patience is decremented and the
/// loop stops when it is exhausted. NaN metrics are an error.
Decision check_convergence(IterationState& state, double new_metric, int patience);

struct LoopResult {
  EncoderModel model;  // the best checkpoint, reloaded from disk
  Vocab vocab;
  IterationState state;
};

/// Alg-style driver: initialize the encoder, pretrain on neighbor positives,
/// then iterate annotate -> train -> validate until Recall@5 on the
/// validation pairs stops improving. Writes ckpt/iter_<t>.idc1, ckpt/best.idc1
/// and history.jsonl under `out_dir` and returns the best checkpoint.
LoopResult run_infocse(const CorpusSplits& splits, const LoopConfig& cfg,
                       const EncoderConfig& encoder_cfg, const std::string& out_dir);

/// Inner loop starting from an existing model (no fresh init, no neighbor
/// pretraining); used by run_infocse_plus when a fine-tuned model re-enters.
LoopResult run_infocse_from(EncoderModel model, const CorpusSplits& splits,
                            const LoopConfig& cfg, const std::string& out_dir,
                            std::uint64_t seed_salt = 0);

/// Outer loop: {InfoCSE -> fine-tune -> validate} until the fine-tuned
/// validation metric stops improving; the best fine-tuned checkpoint wins.
/// `labeled_budget` limits the labeled training pairs (0 = all), selected
/// deterministically.
LoopResult run_infocse_plus(const CorpusSplits& splits, const LoopConfig& cfg,
                            const EncoderConfig& encoder_cfg, int labeled_budget,
                            const std::string& out_dir);

namespace detail {
// Seed derivation shared by the loop drivers (exposed so tests can reproduce
// individual phases exactly).
inline constexpr std::uint64_t kInitPhase = 0xA11CEULL;
inline constexpr std::uint64_t kIterPhase = 0x17E2ULL;
inline constexpr std::uint64_t kFinetunePhase = 0xF17EULL;
inline constexpr std::uint64_t kBudgetPhase = 0xB0D6ULL;
std::uint64_t phase_seed(std::uint64_t base, std::uint64_t phase, std::uint64_t index);
}  // namespace detail

}  // namespace corrmine
