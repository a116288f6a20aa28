#pragma once

#include <string>
#include <utility>
#include <vector>

#include "corrmine/corpus.hpp"
#include "corrmine/encoder.hpp"

namespace corrmine {

struct IdcConfig {
  int k = 1;  // top-K edges nominated per sentence

  void validate() const;
};

/// Per-document similarity graph. `weights` is symmetric with an unused
/// diagonal; `kept_edges` holds the post-pruning edge set as (i, j), i < j.
struct SimilarityGraph {
  int n = 0;
  Matrix weights;
  std::vector<std::pair<int, int>> kept_edges;
};

struct Clustering {
  std::vector<int> assignment;              // sentence index -> cluster id
  std::vector<std::vector<int>> clusters;   // ids in order of smallest member
};

struct PosPair {
  std::string doc_id;
  int i = 0, j = 0;  // sentence indices, i < j
  int cluster = 0;   // cluster the pair came from (for dumps)
};

struct PositivePairSet {
  std::vector<PosPair> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

/// Fully connected graph over the document's sentences, weighted by embedding
/// inner products. Requires n >= 2; kept_edges is left empty.
SimilarityGraph build_graph(const EncoderModel& model, const Document& doc);

/// Keeps edge {i,j} iff w_ij is among the top-K entries of row i or row j.
/// Ties break toward the smaller partner index.
void prune_edges(SimilarityGraph& graph, const IdcConfig& cfg);

/// Connected components of the kept-edge graph (union-find). Cluster ids are
/// assigned in order of smallest member index.
Clustering partition(const SimilarityGraph& graph);

/// All unordered within-cluster pairs, each emitted once with i < j.
PositivePairSet extract_pairs(const Clustering& clustering, const std::string& doc_id);

/// Per-document pipeline build_graph -> prune_edges -> partition ->
/// extract_pairs over the whole corpus, in document order. Documents with
/// fewer than 2 sentences contribute nothing. `n_threads` fans the documents
/// out to workers; output is identical to the serial run.
PositivePairSet annotate_corpus(const EncoderModel& model, const Corpus& corpus,
                                const IdcConfig& cfg, int n_threads = 1);

/// Pair-set dump, JSONL: {"doc_id": ..., "i": ..., "j": ..., "cluster": ...}
void dump_pairs(const PositivePairSet& pairs, const std::string& path);

PositivePairSet load_pairs_dump(const std::string& path);

}  // namespace corrmine
