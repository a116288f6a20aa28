#include "corrmine/idc.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace corrmine {

using nlohmann::json;

void IdcConfig::validate() const {
  if (k < 1) throw std::invalid_argument("idc.k: must be >= 1");
}

SimilarityGraph build_graph(const EncoderModel& model, const Document& doc) {
  const int n = static_cast<int>(doc.sentences.size());
  if (n < 2)
    throw std::runtime_error("build_graph: document \"" + doc.doc_id +
                             "\" has fewer than 2 sentences");
  SimilarityGraph graph;
  graph.n = n;
  graph.weights = Matrix(n, n);

  std::vector<Embedding> embeddings;
  embeddings.reserve(static_cast<std::size_t>(n));
  for (const auto& s : doc.sentences) embeddings.push_back(encode_sentence(model, s.tokens));

  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double w = similarity(embeddings[i], embeddings[j]);
      graph.weights.at(i, j) = w;
      graph.weights.at(j, i) = w;
    }
  }
  return graph;
}

namespace {

// Top-K partner indices of row i: weight descending, ties toward the smaller
// partner index.
std::vector<int> top_k_partners(const SimilarityGraph& graph, int i, int k) {
  std::vector<int> partners;
  partners.reserve(static_cast<std::size_t>(graph.n - 1));
  for (int j = 0; j < graph.n; ++j)
    if (j != i) partners.push_back(j);
  std::stable_sort(partners.begin(), partners.end(), [&](int a, int b) {
    double wa = graph.weights.at(i, a), wb = graph.weights.at(i, b);
    if (wa != wb) return wa > wb;
    return a < b;
  });
  if (static_cast<int>(partners.size()) > k) partners.resize(static_cast<std::size_t>(k));
  return partners;
}

}  // namespace

void prune_edges(SimilarityGraph& graph, const IdcConfig& cfg) {
  cfg.validate();
  const int n = graph.n;
  std::vector<std::vector<bool>> nominated(static_cast<std::size_t>(n),
                                           std::vector<bool>(static_cast<std::size_t>(n), false));
  for (int i = 0; i < n; ++i)
    for (int j : top_k_partners(graph, i, cfg.k)) nominated[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = true;

  graph.kept_edges.clear();
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (nominated[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] ||
          nominated[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]) {
        graph.kept_edges.emplace_back(i, j);
      }
    }
  }
}

namespace {

struct UnionFind {
  std::vector<int> parent;

  explicit UnionFind(int n) : parent(static_cast<std::size_t>(n)) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }
  void merge(int a, int b) {
    int ra = find(a), rb = find(b);
    if (ra == rb) return;
    // Root at the smaller index so cluster ids come out in member order.
    if (ra < rb)
      parent[static_cast<std::size_t>(rb)] = ra;
    else
      parent[static_cast<std::size_t>(ra)] = rb;
  }
};

}  // namespace

Clustering partition(const SimilarityGraph& graph) {
  UnionFind uf(graph.n);
  for (const auto& [i, j] : graph.kept_edges) uf.merge(i, j);

  Clustering clustering;
  clustering.assignment.assign(static_cast<std::size_t>(graph.n), -1);
  std::vector<int> cluster_of_root(static_cast<std::size_t>(graph.n), -1);
  for (int i = 0; i < graph.n; ++i) {
    int root = uf.find(i);
    int& cid = cluster_of_root[static_cast<std::size_t>(root)];
    if (cid < 0) {
      cid = static_cast<int>(clustering.clusters.size());
      clustering.clusters.emplace_back();
    }
    clustering.assignment[static_cast<std::size_t>(i)] = cid;
    clustering.clusters[static_cast<std::size_t>(cid)].push_back(i);
  }
  return clustering;
}

PositivePairSet extract_pairs(const Clustering& clustering, const std::string& doc_id) {
  PositivePairSet out;
  for (std::size_t c = 0; c < clustering.clusters.size(); ++c) {
    const auto& members = clustering.clusters[c];
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        out.pairs.push_back({doc_id, members[a], members[b], static_cast<int>(c)});
      }
    }
  }
  return out;
}

namespace {

PositivePairSet annotate_document(const EncoderModel& model, const Document& doc,
                                  const IdcConfig& cfg) {
  SimilarityGraph graph = build_graph(model, doc);
  prune_edges(graph, cfg);
  Clustering clustering = partition(graph);
  return extract_pairs(clustering, doc.doc_id);
}

}  // namespace

PositivePairSet annotate_corpus(const EncoderModel& model, const Corpus& corpus,
                                const IdcConfig& cfg, int n_threads) {
  cfg.validate();
  if (model.config.vocab_size != corpus.vocab.size())
    throw std::runtime_error("annotate_corpus: vocab size mismatch (model " +
                             std::to_string(model.config.vocab_size) + " vs corpus " +
                             std::to_string(corpus.vocab.size()) + ")");

  const std::size_t n_docs = corpus.documents.size();
  std::vector<PositivePairSet> slots(n_docs);

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t d = begin; d < end; ++d) {
      if (corpus.documents[d].sentences.size() < 2) continue;
      slots[d] = annotate_document(model, corpus.documents[d], cfg);
    }
  };

  int threads = std::max(1, n_threads);
  threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads),
                                                   std::max<std::size_t>(n_docs, 1)));
  if (threads <= 1 || n_docs == 0) {
    work(0, n_docs);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n_docs + static_cast<std::size_t>(threads) - 1) /
                              static_cast<std::size_t>(threads);
    for (int t = 0; t < threads; ++t) {
      std::size_t begin = static_cast<std::size_t>(t) * chunk;
      std::size_t end = std::min(n_docs, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  // Merge in ascending document order: identical to the serial run.
  PositivePairSet merged;
  for (auto& slot : slots) {
    merged.pairs.insert(merged.pairs.end(), slot.pairs.begin(), slot.pairs.end());
  }
  return merged;
}

void dump_pairs(const PositivePairSet& pairs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write pair dump: " + path);
  for (const auto& p : pairs.pairs) {
    json j;
    j["doc_id"] = p.doc_id;
    j["i"] = p.i;
    j["j"] = p.j;
    j["cluster"] = p.cluster;
    out << j.dump() << '\n';
  }
}

PositivePairSet load_pairs_dump(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pair dump: " + path);
  PositivePairSet out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("pair dump line " + std::to_string(line_no) +
                               ": malformed JSON (" + e.what() + ")");
    }
    out.pairs.push_back({j.at("doc_id").get<std::string>(), j.at("i").get<int>(),
                         j.at("j").get<int>(), j.value("cluster", 0)});
  }
  return out;
}

}  // namespace corrmine
