#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace corrmine {

/// Reserved vocabulary id for unknown tokens.
inline constexpr int kUnkId = 0;

/// Bijective token <-> id map. Id 0 is always the UNK token.
class Vocab {
 public:
  Vocab() { add("<unk>"); }

  /// Returns the id of `tok`, inserting it if absent.
  int add(const std::string& tok);

  /// Returns the id of `tok`, or kUnkId if absent.
  int lookup(const std::string& tok) const;

  bool contains(const std::string& tok) const { return ids_.count(tok) > 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> tokens_;
};

struct Sentence {
  int sent_id = 0;  // 0-based position within the document
  std::vector<int> tokens;
  std::string raw_text;
  std::optional<int> topic_label;  // synthetic ground truth only
};

struct Document {
  std::string doc_id;
  std::vector<Sentence> sentences;
};

enum class Split { train, valid, test };

struct Corpus {
  std::vector<Document> documents;
  Vocab vocab;
  Split split_tag = Split::train;

  const Document* find(const std::string& doc_id) const;
};

/// A document paired with its ground-truth counterpart item.
struct LabeledPair {
  std::string doc_id;
  std::string item_text;
  std::vector<int> item_tokens;
};

struct SyntheticSpec {
  int n_topics = 5;
  int n_docs = 500;
  int sentences_per_doc = 8;
  double topic_switch_prob = 0.4;
  int vocab_per_topic = 50;
  int shared_vocab = 20;
  int tokens_per_sentence = 6;
  std::uint64_t seed = 42;

  void validate() const;  // throws std::invalid_argument naming the field
};

/// Lowercases and splits on runs of non-alphanumeric bytes. When `frozen`,
/// unknown tokens map to UNK; otherwise they are added to `vocab`.
/// An empty result is legal; callers drop empty sentences.
std::vector<int> tokenize(std::string_view raw, Vocab& vocab, bool frozen);

/// Token-id sequence back to space-joined text (UNK renders as "<unk>").
std::string detokenize(const std::vector<int>& tokens, const Vocab& vocab);

struct LoadReport {
  std::size_t dropped_sentences = 0;
};

/// Reads corpus JSONL (one document per line). With `frozen_vocab` the file is
/// tokenized against it; otherwise a fresh vocabulary is built in file order.
/// Sentences that tokenize to empty are dropped and counted in `report`.
Corpus load_corpus(const std::string& path, const Vocab* frozen_vocab = nullptr,
                   LoadReport* report = nullptr);

/// Canonical corpus JSONL writer (inverse of load_corpus).
void save_corpus(const Corpus& corpus, const std::string& path);

/// Reads labeled-pair JSONL and tokenizes items against `corpus.vocab`
/// (frozen). Every doc_id must exist in `corpus`.
std::vector<LabeledPair> load_labeled_pairs(const std::string& path, const Corpus& corpus);

void save_labeled_pairs(const std::vector<LabeledPair>& pairs, const std::string& path);

struct SyntheticData {
  Corpus corpus;
  std::vector<LabeledPair> pairs;
};

/// Topic-structured corpus with known ground truth: each document walks over
/// topics (switching with topic_switch_prob), each sentence samples tokens
/// from its topic's private vocabulary mixed with a shared pool, and each
/// document gets one counterpart item drawn from its majority topic as
/// realized in the document. Fully deterministic given spec.seed.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

struct CorpusSplits {
  Corpus train, valid, test;
  std::vector<LabeledPair> train_pairs, valid_pairs, test_pairs;
};

/// Splits by document, deterministically in corpus order. The train split
/// rebuilds the vocabulary from its own documents; valid/test (and all items)
/// are re-tokenized frozen against it.
CorpusSplits split_corpus(const Corpus& corpus, const std::vector<LabeledPair>& pairs,
                          std::array<double, 3> fractions);

}  // namespace corrmine
