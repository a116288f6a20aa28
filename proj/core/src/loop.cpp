#include "corrmine/loop.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

#include <json.hpp>

#include "corrmine/eval.hpp"
#include "corrmine/rng.hpp"

namespace corrmine {

namespace fs = std::filesystem;
using nlohmann::json;

void LoopConfig::validate() const {
  if (max_iterations < 1) throw std::invalid_argument("loop.max_iterations: must be >= 1");
  if (patience < 1) throw std::invalid_argument("loop.patience: must be >= 1");
  if (outer_max_iterations < 1)
    throw std::invalid_argument("loop.outer_max_iterations: must be >= 1");
  if (outer_patience < 1) throw std::invalid_argument("loop.outer_patience: must be >= 1");
  if (finetune_epochs < 1) throw std::invalid_argument("loop.finetune_epochs: must be >= 1");
  if (annotate_threads < 1) throw std::invalid_argument("loop.annotate_threads: must be >= 1");
  idc.validate();
  train.validate();
}

namespace detail {
std::uint64_t phase_seed(std::uint64_t base, std::uint64_t phase, std::uint64_t index) {
  return mix_seed(mix_seed(base, phase), index);
}
}  // namespace detail

Decision check_convergence(IterationState& state, double new_metric, int patience) {
  if (std::isnan(new_metric)) throw std::runtime_error("check_convergence: NaN metric");
  if (new_metric - state.best_metric > 1e-6) {
    state.best_metric = new_metric;
    state.patience_left = patience;
    return Decision::kContinue;
  }
  state.patience_left -= 1;
  return state.patience_left <= 0 ? Decision::kStop : Decision::kContinue;
}

namespace {

double validation_recall5(const EncoderModel& model, const CorpusSplits& splits) {
  EvalReport report = evaluate_retrieval(model, splits.valid, splits.valid_pairs, {5});
  return report.recall_at.at(5);
}

void append_history(std::ofstream& out, const IterationState::HistoryEntry& entry) {
  json j;
  j["t"] = entry.t;
  j["recall_at_5"] = entry.metric;
  j["pairs"] = entry.pair_count;
  j["stopped"] = entry.stopped;
  out << j.dump() << '\n';
  out.flush();
}

std::string iter_ckpt_path(const std::string& ckpt_dir, int t) {
  return ckpt_dir + "/iter_" + std::to_string(t) + ".idc1";
}

// Shared inner-loop body. When `pretrained` is false the model is fresh and
// gets the neighbor-positive initialization phase first.
LoopResult inner_loop(EncoderModel model, bool pretrain_neighbors, const CorpusSplits& splits,
                      const LoopConfig& cfg, const std::string& out_dir,
                      std::uint64_t seed_salt) {
  cfg.validate();
  if (splits.train.documents.empty()) throw std::runtime_error("run_infocse: empty train corpus");
  if (splits.valid_pairs.empty())
    throw std::runtime_error("run_infocse: empty validation pair set");

  const std::string ckpt_dir = out_dir + "/ckpt";
  fs::create_directories(ckpt_dir);
  std::ofstream history(out_dir + "/history.jsonl", std::ios::trunc);
  if (!history) throw std::runtime_error("cannot write history: " + out_dir + "/history.jsonl");
  TrainLog log(out_dir + "/train_log.jsonl");

  const Vocab& vocab = splits.train.vocab;
  IterationState state;
  const std::string best_path = ckpt_dir + "/best.idc1";

  auto record = [&](int t, double metric, long pair_count,
                    const std::string& ckpt) -> Decision {
    double prev_best = state.best_metric;
    Decision decision = check_convergence(state, metric, cfg.patience);
    if (state.best_metric != prev_best) {
      fs::copy_file(ckpt, best_path, fs::copy_options::overwrite_existing);
      state.best_checkpoint_path = best_path;
    }
    const bool stopped = decision == Decision::kStop;
    state.t = t;
    state.history.push_back({t, metric, pair_count, stopped});
    append_history(history, state.history.back());
    return decision;
  };

  long init_pairs = 0;
  if (pretrain_neighbors) {
    PositivePairSet neighbors = init_neighbor_positives(splits.train);
    if (neighbors.empty())
      throw std::runtime_error("run_infocse: no neighbor pairs (every document has < 2 sentences)");
    TrainConfig tcfg = cfg.train;
    tcfg.seed = detail::phase_seed(cfg.train.seed, detail::kInitPhase, seed_salt);
    train_iteration(model, neighbors, splits.train, tcfg, &log, 0);
    init_pairs = static_cast<long>(neighbors.size());
  }
  {
    const std::string path = iter_ckpt_path(ckpt_dir, 0);
    save_checkpoint(model, vocab, path);
    record(0, validation_recall5(model, splits), init_pairs, path);
  }

  for (int t = 1; t <= cfg.max_iterations; ++t) {
    PositivePairSet pairs = annotate_corpus(model, splits.train, cfg.idc, cfg.annotate_threads);
    TrainConfig tcfg = cfg.train;
    tcfg.seed = detail::phase_seed(cfg.train.seed, detail::kIterPhase,
                                   seed_salt * 1000003ULL + static_cast<std::uint64_t>(t));
    train_iteration(model, pairs, splits.train, tcfg, &log, t);

    const std::string path = iter_ckpt_path(ckpt_dir, t);
    save_checkpoint(model, vocab, path);
    Decision decision =
        record(t, validation_recall5(model, splits), static_cast<long>(pairs.size()), path);
    if (decision == Decision::kStop) break;
  }

  Checkpoint best = load_checkpoint(best_path);
  return {std::move(best.model), std::move(best.vocab), std::move(state)};
}

}  // namespace

LoopResult run_infocse(const CorpusSplits& splits, const LoopConfig& cfg,
                       const EncoderConfig& encoder_cfg, const std::string& out_dir) {
  if (splits.train.documents.empty()) throw std::runtime_error("run_infocse: empty train corpus");
  EncoderConfig enc = encoder_cfg;
  enc.vocab_size = splits.train.vocab.size();
  EncoderModel model = EncoderModel::init(enc);
  return inner_loop(std::move(model), /*pretrain_neighbors=*/true, splits, cfg, out_dir, 0);
}

LoopResult run_infocse_from(EncoderModel model, const CorpusSplits& splits, const LoopConfig& cfg,
                            const std::string& out_dir, std::uint64_t seed_salt) {
  if (model.config.vocab_size != splits.train.vocab.size())
    throw std::runtime_error("run_infocse_from: model/corpus vocab size mismatch");
  return inner_loop(std::move(model), /*pretrain_neighbors=*/false, splits, cfg, out_dir,
                    seed_salt);
}

LoopResult run_infocse_plus(const CorpusSplits& splits, const LoopConfig& cfg,
                            const EncoderConfig& encoder_cfg, int labeled_budget,
                            const std::string& out_dir) {
  cfg.validate();
  std::vector<LabeledPair> labeled = splits.train_pairs;
  if (labeled_budget > 0 && static_cast<std::size_t>(labeled_budget) < labeled.size()) {
    Rng rng(detail::phase_seed(cfg.train.seed, detail::kBudgetPhase, 0));
    rng.shuffle(labeled);
    labeled.resize(static_cast<std::size_t>(labeled_budget));
  }
  std::unordered_set<std::string> distinct;
  for (const auto& p : labeled) distinct.insert(p.doc_id);
  if (labeled.size() < 2 || distinct.size() < 2)
    throw std::runtime_error("run_infocse_plus: need >= 2 labeled pairs from distinct documents");

  const std::string ckpt_dir = out_dir + "/ckpt";
  fs::create_directories(ckpt_dir);
  std::ofstream history(out_dir + "/history.jsonl", std::ios::trunc);
  if (!history) throw std::runtime_error("cannot write history: " + out_dir + "/history.jsonl");
  TrainLog ft_log(out_dir + "/finetune_log.jsonl");

  const Vocab& vocab = splits.train.vocab;
  const std::string best_path = ckpt_dir + "/best.idc1";

  IterationState outer;
  EncoderModel current;
  for (int round = 0; round < cfg.outer_max_iterations; ++round) {
    const std::string inner_dir = out_dir + "/outer_" + std::to_string(round);
    LoopResult inner =
        round == 0 ? run_infocse(splits, cfg, encoder_cfg, inner_dir)
                   : run_infocse_from(std::move(current), splits, cfg, inner_dir,
                                      static_cast<std::uint64_t>(round));

    EncoderModel tuned = std::move(inner.model);
    TrainConfig ft_cfg = cfg.train;
    ft_cfg.epochs_per_iteration = cfg.finetune_epochs;
    ft_cfg.seed = detail::phase_seed(cfg.train.seed, detail::kFinetunePhase,
                                     static_cast<std::uint64_t>(round));
    fine_tune(tuned, labeled, splits.train, ft_cfg, &ft_log, round);

    const std::string round_path = ckpt_dir + "/round_" + std::to_string(round) + ".idc1";
    save_checkpoint(tuned, vocab, round_path);

    double metric = validation_recall5(tuned, splits);
    double prev_best = outer.best_metric;
    Decision decision = check_convergence(outer, metric, cfg.outer_patience);
    if (outer.best_metric != prev_best) {
      fs::copy_file(round_path, best_path, fs::copy_options::overwrite_existing);
      outer.best_checkpoint_path = best_path;
    }
    const bool stopped = decision == Decision::kStop;
    outer.t = round;
    outer.history.push_back({round, metric, static_cast<long>(labeled.size()), stopped});
    append_history(history, outer.history.back());

    current = std::move(tuned);
    if (stopped) break;
  }

  Checkpoint best = load_checkpoint(best_path);
  return {std::move(best.model), std::move(best.vocab), std::move(outer)};
}

}  // namespace corrmine
