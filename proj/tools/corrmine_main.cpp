// corrmine: iterative self-supervised correlation mining over tokenized
// behavior sequences, with retrieval evaluation. See README.md for the
// subcommand reference.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "corrmine/config.hpp"
#include "corrmine/eval.hpp"
#include "corrmine/loop.hpp"
#include "corrmine/rng.hpp"

namespace fs = std::filesystem;
using namespace corrmine;

namespace {

/// Exclusive lock file preventing concurrent runs from clobbering one
/// checkpoint directory. Removed on destruction; a stale lock after a hard
/// kill must be removed manually.
class LockFile {
 public:
  explicit LockFile(const std::string& dir) : path_(dir + "/.lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw std::runtime_error("another run holds " + path_ +
                               " (remove it if no run is active)");
  }
  ~LockFile() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> k;
  std::optional<int> iterations;
  std::optional<int> patience;
  std::optional<std::string> out;
  std::string corpus_path;
  std::string items_path;
  std::string model_path;
  std::string pairs_path;  // pair dump (pair-quality)
  std::string split = "test";
  int trials = 100;
  double tolerance = 1e-4;
};

void add_common_options(CLI::App* cmd, CliOptions& opt) {
  cmd->add_option("--config", opt.config_path, "JSON run configuration");
  cmd->add_option("--seed", opt.seed, "master seed override (re-derives section seeds)");
  cmd->add_option("--k", opt.k, "top-K edges kept per sentence");
  cmd->add_option("--iterations", opt.iterations, "max self-supervision iterations");
  cmd->add_option("--patience", opt.patience, "early-stop patience (iterations)");
  cmd->add_option("--out", opt.out, "output directory");
}

RunConfig resolve_config(const CliOptions& opt) {
  RunConfig cfg = opt.config_path.empty() ? RunConfig{} : load_config(opt.config_path);
  if (opt.config_path.empty()) reseed(cfg, cfg.seed);  // make derived seeds explicit
  if (opt.seed) reseed(cfg, *opt.seed);
  if (opt.k) cfg.idc.k = *opt.k;
  if (opt.iterations) cfg.loop.max_iterations = *opt.iterations;
  if (opt.patience) cfg.loop.patience = *opt.patience;
  if (opt.out) cfg.paths.out = *opt.out;
  if (!opt.corpus_path.empty()) cfg.paths.corpus = opt.corpus_path;
  if (!opt.items_path.empty()) cfg.paths.pairs = opt.items_path;

  if (const char* env = std::getenv("CORRMINE_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1) cfg.loop.annotate_threads = std::min(cfg.loop.annotate_threads, cap);
  }
  cfg.validate();
  return cfg;
}

Corpus load_required_corpus(const RunConfig& cfg, const Vocab* frozen = nullptr) {
  if (cfg.paths.corpus.empty())
    throw std::runtime_error("no corpus path (set --corpus or paths.corpus in the config)");
  LoadReport report;
  Corpus corpus = load_corpus(cfg.paths.corpus, frozen, &report);
  if (report.dropped_sentences > 0)
    std::cerr << "warning: dropped " << report.dropped_sentences
              << " empty-tokenizing sentence(s)\n";
  return corpus;
}

std::vector<LabeledPair> load_required_items(const RunConfig& cfg, const Corpus& corpus) {
  if (cfg.paths.pairs.empty())
    throw std::runtime_error("no labeled pairs path (set --items or paths.pairs in the config)");
  return load_labeled_pairs(cfg.paths.pairs, corpus);
}

void require_matching_vocab(const Vocab& a, const Vocab& b) {
  if (a.tokens() != b.tokens())
    throw std::runtime_error(
        "checkpoint vocabulary does not match the corpus-derived vocabulary "
        "(was the model trained on this corpus and split?)");
}

int cmd_gen_corpus(const CliOptions& opt) {
  RunConfig cfg = resolve_config(opt);
  const std::string& out = cfg.paths.out;
  fs::create_directories(out);
  write_resolved_config(cfg, out);

  SyntheticData data = generate_synthetic(cfg.synthetic);
  save_corpus(data.corpus, out + "/corpus.jsonl");
  save_labeled_pairs(data.pairs, out + "/items.jsonl");
  std::cout << "wrote " << data.corpus.documents.size() << " documents and " << data.pairs.size()
            << " items to " << out << "\n";
  return 0;
}

int cmd_init(const CliOptions& opt) {
  RunConfig cfg = resolve_config(opt);
  const std::string& out = cfg.paths.out;
  LockFile lock(out);
  write_resolved_config(cfg, out);

  Corpus corpus = load_required_corpus(cfg);
  PositivePairSet neighbors = init_neighbor_positives(corpus);
  if (neighbors.empty()) throw std::runtime_error("no neighbor pairs: every document has < 2 sentences");

  EncoderConfig enc = cfg.encoder;
  enc.vocab_size = corpus.vocab.size();
  EncoderModel model = EncoderModel::init(enc);
  TrainLog log(out + "/train_log.jsonl");
  TrainConfig tcfg = cfg.train;
  tcfg.seed = detail::phase_seed(cfg.train.seed, detail::kInitPhase, 0);
  LossReport report = train_iteration(model, neighbors, corpus, tcfg, &log, 0);

  save_checkpoint(model, corpus.vocab, out + "/init.idc1");
  std::cout << "init: " << neighbors.size() << " neighbor pairs, mean loss " << report.mean_loss
            << ", checkpoint " << out << "/init.idc1\n";
  return 0;
}

int cmd_annotate(const CliOptions& opt) {
  RunConfig cfg = resolve_config(opt);
  if (opt.model_path.empty()) throw std::runtime_error("annotate requires --model");
  const std::string& out = cfg.paths.out;
  fs::create_directories(out);
  write_resolved_config(cfg, out);

  Checkpoint ckpt = load_checkpoint(opt.model_path);
  Corpus corpus = load_required_corpus(cfg, &ckpt.vocab);
  PositivePairSet pairs =
      annotate_corpus(ckpt.model, corpus, cfg.idc, cfg.loop.annotate_threads);
  dump_pairs(pairs, out + "/pairs_dump.jsonl");
  std::cout << "annotated " << pairs.size() << " pairs -> " << out << "/pairs_dump.jsonl\n";
  return 0;
}

int cmd_run(const CliOptions& opt, bool plus) {
  RunConfig cfg = resolve_config(opt);
  const std::string& out = cfg.paths.out;
  LockFile lock(out + "/ckpt");
  write_resolved_config(cfg, out);

  Corpus corpus = load_required_corpus(cfg);
  std::vector<LabeledPair> items = load_required_items(cfg, corpus);
  CorpusSplits splits = split_corpus(corpus, items, cfg.split);

  auto start = std::chrono::steady_clock::now();
  LoopResult result = plus ? run_infocse_plus(splits, cfg.loop_config(), cfg.encoder,
                                              cfg.labeled_budget, out)
                           : run_infocse(splits, cfg.loop_config(), cfg.encoder, out);
  auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  for (const auto& h : result.state.history)
    std::cout << "t=" << h.t << " recall@5=" << h.metric << " pairs=" << h.pair_count
              << (h.stopped ? " [early stop]" : "") << "\n";
  std::cout << "best recall@5 " << result.state.best_metric << " ("
            << result.state.best_checkpoint_path << "), " << elapsed << "s\n";
  return 0;
}

int cmd_finetune(const CliOptions& opt) {
  RunConfig cfg = resolve_config(opt);
  if (opt.model_path.empty()) throw std::runtime_error("finetune requires --model");
  const std::string& out = cfg.paths.out;
  LockFile lock(out);
  write_resolved_config(cfg, out);

  Checkpoint ckpt = load_checkpoint(opt.model_path);
  Corpus corpus = load_required_corpus(cfg, &ckpt.vocab);
  std::vector<LabeledPair> items = load_required_items(cfg, corpus);
  if (cfg.labeled_budget > 0 && static_cast<std::size_t>(cfg.labeled_budget) < items.size()) {
    Rng rng(detail::phase_seed(cfg.train.seed, detail::kBudgetPhase, 0));
    rng.shuffle(items);
    items.resize(static_cast<std::size_t>(cfg.labeled_budget));
  }

  TrainLog log(out + "/finetune_log.jsonl");
  TrainConfig tcfg = cfg.train;
  tcfg.epochs_per_iteration = cfg.loop.finetune_epochs;
  tcfg.seed = detail::phase_seed(cfg.train.seed, detail::kFinetunePhase, 0);
  LossReport report = fine_tune(ckpt.model, items, corpus, tcfg, &log, 0);

  save_checkpoint(ckpt.model, ckpt.vocab, out + "/finetuned.idc1");
  std::cout << "fine-tuned on " << items.size() << " pairs, mean loss " << report.mean_loss
            << ", checkpoint " << out << "/finetuned.idc1\n";
  return 0;
}

int cmd_eval(const CliOptions& opt) {
  RunConfig cfg = resolve_config(opt);
  if (opt.model_path.empty()) throw std::runtime_error("eval requires --model");
  Checkpoint ckpt = load_checkpoint(opt.model_path);

  EvalReport report;
  const std::vector<int> ks = {5, 10, 20};
  if (opt.split == "all") {
    Corpus corpus = load_required_corpus(cfg, &ckpt.vocab);
    auto items = load_required_items(cfg, corpus);
    report = evaluate_retrieval(ckpt.model, corpus, items, ks);
  } else {
    Corpus corpus = load_required_corpus(cfg);
    auto items = load_required_items(cfg, corpus);
    CorpusSplits splits = split_corpus(corpus, items, cfg.split);
    require_matching_vocab(splits.train.vocab, ckpt.vocab);
    const Corpus* sub = nullptr;
    const std::vector<LabeledPair>* sub_items = nullptr;
    if (opt.split == "train") {
      sub = &splits.train;
      sub_items = &splits.train_pairs;
    } else if (opt.split == "valid") {
      sub = &splits.valid;
      sub_items = &splits.valid_pairs;
    } else if (opt.split == "test") {
      sub = &splits.test;
      sub_items = &splits.test_pairs;
    } else {
      throw std::runtime_error("unknown --split value: " + opt.split);
    }
    report = evaluate_retrieval(ckpt.model, *sub, *sub_items, ks);
  }

  std::string text = to_json(report);
  std::cout << text << "\n";
  if (opt.out) {
    fs::create_directories(*opt.out);
    std::ofstream f(*opt.out + "/report.json", std::ios::trunc);
    f << text << "\n";
  }
  return 0;
}

int cmd_pair_quality(const CliOptions& opt) {
  RunConfig cfg = resolve_config(opt);
  if (opt.pairs_path.empty()) throw std::runtime_error("pair-quality requires --pairs");
  Corpus corpus = load_required_corpus(cfg);
  PositivePairSet pairs = load_pairs_dump(opt.pairs_path);
  AnnotationQualityReport report = pair_quality(pairs, corpus);
  std::cout << to_json(report) << "\n";
  return 0;
}

int cmd_gradcheck(const CliOptions& opt) {
  RunConfig cfg = resolve_config(opt);
  auto start = std::chrono::steady_clock::now();
  GradCheckReport report = gradient_check(opt.trials, opt.tolerance, cfg.seed);
  auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "gradcheck: " << report.trials << " trials, max relative error "
            << report.max_rel_err << ", " << report.failures << " failure(s), " << elapsed
            << "s\n";
  for (const auto& note : report.failure_notes) std::cout << "  " << note << "\n";
  return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"corrmine: self-supervised correlation mining and retrieval evaluation"};
  app.require_subcommand(1);
  CliOptions opt;

  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus with topic labels");
  add_common_options(gen, opt);

  auto* init = app.add_subcommand("init", "train the neighbor-positive initialization model");
  add_common_options(init, opt);
  init->add_option("--corpus", opt.corpus_path, "corpus JSONL");

  auto* annotate = app.add_subcommand("annotate", "run one clustering pass and dump the pairs");
  add_common_options(annotate, opt);
  annotate->add_option("--corpus", opt.corpus_path, "corpus JSONL");
  annotate->add_option("--model", opt.model_path, "encoder checkpoint");

  auto* run = app.add_subcommand("run", "full self-supervision loop");
  add_common_options(run, opt);
  run->add_option("--corpus", opt.corpus_path, "corpus JSONL");
  run->add_option("--items", opt.items_path, "labeled pairs JSONL");

  auto* run_plus = app.add_subcommand("run-plus", "self-supervision interleaved with fine-tuning");
  add_common_options(run_plus, opt);
  run_plus->add_option("--corpus", opt.corpus_path, "corpus JSONL");
  run_plus->add_option("--items", opt.items_path, "labeled pairs JSONL");

  auto* finetune = app.add_subcommand("finetune", "fine-tune a checkpoint on labeled pairs");
  add_common_options(finetune, opt);
  finetune->add_option("--corpus", opt.corpus_path, "corpus JSONL");
  finetune->add_option("--items", opt.items_path, "labeled pairs JSONL");
  finetune->add_option("--model", opt.model_path, "encoder checkpoint");

  auto* eval = app.add_subcommand("eval", "recall@K retrieval evaluation");
  add_common_options(eval, opt);
  eval->add_option("--corpus", opt.corpus_path, "corpus JSONL");
  eval->add_option("--items", opt.items_path, "labeled pairs JSONL");
  eval->add_option("--model", opt.model_path, "encoder checkpoint");
  eval->add_option("--split", opt.split, "train|valid|test|all (default test)");

  auto* quality = app.add_subcommand("pair-quality", "precision/recall of mined pairs vs labels");
  add_common_options(quality, opt);
  quality->add_option("--corpus", opt.corpus_path, "corpus JSONL with topic labels");
  quality->add_option("--pairs", opt.pairs_path, "pair dump JSONL from annotate");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  add_common_options(gradcheck, opt);
  gradcheck->add_option("--trials", opt.trials, "number of random trials");
  gradcheck->add_option("--tolerance", opt.tolerance, "max allowed relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_corpus(opt);
    if (init->parsed()) return cmd_init(opt);
    if (annotate->parsed()) return cmd_annotate(opt);
    if (run->parsed()) return cmd_run(opt, false);
    if (run_plus->parsed()) return cmd_run(opt, true);
    if (finetune->parsed()) return cmd_finetune(opt);
    if (eval->parsed()) return cmd_eval(opt);
    if (quality->parsed()) return cmd_pair_quality(opt);
    if (gradcheck->parsed()) return cmd_gradcheck(opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
