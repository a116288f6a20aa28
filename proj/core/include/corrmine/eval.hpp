#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "corrmine/corpus.hpp"
#include "corrmine/encoder.hpp"
#include "corrmine/idc.hpp"

namespace corrmine {

/// Candidate items for retrieval, deduplicated by text. Ids are assigned in
/// first-occurrence order.
struct RetrievalIndex {
  std::vector<std::string> item_texts;
  std::vector<Embedding> embeddings;
  std::unordered_map<std::string, int> ids;
  std::size_t dropped = 0;  // items that tokenized to empty

  int id_of(const std::string& text) const;  // -1 if absent
  int size() const { return static_cast<int>(item_texts.size()); }
};

RetrievalIndex build_index(const EncoderModel& model, const std::vector<LabeledPair>& items);

struct EvalReport {
  std::map<int, double> recall_at;  // K -> recall in [0,1]
  long query_count = 0;
};

struct Query {
  const Document* doc = nullptr;
  int item_id = -1;  // ground truth id in the index
};

/// Ranks index rows by inner product with the document embedding (descending,
/// ties by ascending item id); recall@K is the fraction of queries whose
/// ground truth lands in the top K.
EvalReport recall_at_k(const EncoderModel& model, const std::vector<Query>& queries,
                       const RetrievalIndex& index, const std::vector<int>& ks);

/// Convenience wrapper: one query per labeled pair against an index built
/// from the same pair list.
EvalReport evaluate_retrieval(const EncoderModel& model, const Corpus& corpus,
                              const std::vector<LabeledPair>& pairs,
                              const std::vector<int>& ks);

struct AnnotationQualityReport {
  double pair_precision = 0.0;  // mined pairs whose sentences share a topic
  double pair_recall = 0.0;     // same-topic intra-document pairs that were mined
  long mined_count = 0;
};

/// Measures mined pairs against the same-topic relation of a corpus carrying
/// topic labels. Throws if labels are missing.
AnnotationQualityReport pair_quality(const PositivePairSet& pairs, const Corpus& corpus);

struct GradCheckReport {
  int trials = 0;
  int failures = 0;
  double max_rel_err = 0.0;
  std::vector<std::string> failure_notes;

  bool passed() const { return failures == 0; }
};

/// Compares analytic gradients against central finite differences (step
/// 1e-4) on random small models and batches, covering both sentence and
/// document anchors. Relative error uses max(1, |analytic|, |fd|) as the
/// denominator.
GradCheckReport gradient_check(int trials, double tolerance, std::uint64_t seed);

std::string to_json(const EvalReport& report);
std::string to_json(const AnnotationQualityReport& report);

}  // namespace corrmine
