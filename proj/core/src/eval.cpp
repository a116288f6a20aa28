#include "corrmine/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "corrmine/rng.hpp"
#include "corrmine/training.hpp"

namespace corrmine {

using nlohmann::json;

int RetrievalIndex::id_of(const std::string& text) const {
  auto it = ids.find(text);
  return it == ids.end() ? -1 : it->second;
}

RetrievalIndex build_index(const EncoderModel& model, const std::vector<LabeledPair>& items) {
  if (items.empty()) throw std::runtime_error("build_index: empty item list");
  RetrievalIndex index;
  for (const auto& item : items) {
    if (index.ids.count(item.item_text)) continue;
    if (item.item_tokens.empty()) {
      ++index.dropped;
      continue;
    }
    int id = static_cast<int>(index.item_texts.size());
    index.ids.emplace(item.item_text, id);
    index.item_texts.push_back(item.item_text);
    index.embeddings.push_back(encode_sentence(model, item.item_tokens));
  }
  if (index.item_texts.empty())
    throw std::runtime_error("build_index: every item tokenized to empty");
  return index;
}

EvalReport recall_at_k(const EncoderModel& model, const std::vector<Query>& queries,
                       const RetrievalIndex& index, const std::vector<int>& ks) {
  EvalReport report;
  report.query_count = static_cast<long>(queries.size());
  if (queries.empty()) throw std::runtime_error("recall_at_k: no queries");

  std::map<int, long> hits;
  for (int k : ks) hits[k] = 0;

  std::vector<int> order(static_cast<std::size_t>(index.size()));
  std::vector<double> scores(static_cast<std::size_t>(index.size()));
  for (const auto& q : queries) {
    if (q.item_id < 0 || q.item_id >= index.size())
      throw std::runtime_error("recall_at_k: ground-truth item id " + std::to_string(q.item_id) +
                               " not in index");
    Embedding qe = encode_document(model, *q.doc);
    for (int i = 0; i < index.size(); ++i)
      scores[static_cast<std::size_t>(i)] = similarity(qe, index.embeddings[static_cast<std::size_t>(i)]);

    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      double sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
      if (sa != sb) return sa > sb;
      return a < b;  // ties by ascending item id
    });

    int rank = 0;
    for (; rank < index.size(); ++rank)
      if (order[static_cast<std::size_t>(rank)] == q.item_id) break;
    for (int k : ks)
      if (rank < k) hits[k] += 1;
  }
  for (int k : ks)
    report.recall_at[k] = static_cast<double>(hits[k]) / static_cast<double>(queries.size());
  return report;
}

EvalReport evaluate_retrieval(const EncoderModel& model, const Corpus& corpus,
                              const std::vector<LabeledPair>& pairs,
                              const std::vector<int>& ks) {
  RetrievalIndex index = build_index(model, pairs);
  std::unordered_map<std::string, const Document*> by_id;
  for (const auto& d : corpus.documents) by_id.emplace(d.doc_id, &d);

  std::vector<Query> queries;
  for (const auto& p : pairs) {
    auto it = by_id.find(p.doc_id);
    if (it == by_id.end())
      throw std::runtime_error("evaluate_retrieval: pair references unknown document \"" +
                               p.doc_id + "\"");
    int gt = index.id_of(p.item_text);
    if (gt < 0) continue;  // item was dropped (tokenized to empty)
    queries.push_back({it->second, gt});
  }
  if (queries.empty()) throw std::runtime_error("evaluate_retrieval: no usable queries");
  return recall_at_k(model, queries, index, ks);
}

AnnotationQualityReport pair_quality(const PositivePairSet& pairs, const Corpus& corpus) {
  std::unordered_map<std::string, const Document*> by_id;
  for (const auto& d : corpus.documents) by_id.emplace(d.doc_id, &d);

  auto label_of = [&](const Document& doc, int idx) -> int {
    const auto& s = doc.sentences.at(static_cast<std::size_t>(idx));
    if (!s.topic_label)
      throw std::runtime_error("pair_quality: document \"" + doc.doc_id +
                               "\" is missing topic labels");
    return *s.topic_label;
  };

  long mined_true = 0;
  for (const auto& p : pairs.pairs) {
    auto it = by_id.find(p.doc_id);
    if (it == by_id.end())
      throw std::runtime_error("pair_quality: pair references unknown document \"" + p.doc_id +
                               "\"");
    if (label_of(*it->second, p.i) == label_of(*it->second, p.j)) ++mined_true;
  }

  long candidates_true = 0;
  for (const auto& doc : corpus.documents) {
    const int n = static_cast<int>(doc.sentences.size());
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (label_of(doc, i) == label_of(doc, j)) ++candidates_true;
  }

  AnnotationQualityReport report;
  report.mined_count = static_cast<long>(pairs.size());
  report.pair_precision =
      pairs.empty() ? 0.0 : static_cast<double>(mined_true) / static_cast<double>(pairs.size());
  report.pair_recall = candidates_true == 0
                           ? 0.0
                           : static_cast<double>(mined_true) / static_cast<double>(candidates_true);
  return report;
}

namespace {

// Loss as a pure function of the (possibly perturbed) model, for finite
// differences.
double batch_loss(const EncoderModel& model, const Batch& batch) {
  return infonce_loss(model, batch);
}

double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

GradCheckReport gradient_check(int trials, double tolerance, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("gradient_check: trials must be >= 1");
  GradCheckReport report;
  report.trials = trials;

  Rng rng(seed);
  for (int trial = 0; trial < trials; ++trial) {
    EncoderConfig cfg;
    cfg.vocab_size = 5 + static_cast<int>(rng.below(46));   // [5, 50]
    cfg.embed_dim = 2 + static_cast<int>(rng.below(15));    // [2, 16]
    cfg.out_dim = 2 + static_cast<int>(rng.below(7));       // [2, 8]
    cfg.normalize = trial % 2 == 0;
    cfg.temperature = (trial % 3 == 0) ? 1.0 : 0.1;
    cfg.init_scale = rng.uniform(0.1, 1.0);
    cfg.seed = rng.next_u64();
    EncoderModel model = EncoderModel::init(cfg);

    const int b_size = 2 + static_cast<int>(rng.below(7));  // [2, 8]
    const bool doc_anchor = trial % 4 == 3;

    auto random_tokens = [&] {
      std::vector<int> t(1 + rng.below(4));
      for (int& id : t) id = static_cast<int>(rng.below(static_cast<std::size_t>(cfg.vocab_size)));
      return t;
    };

    // Documents must outlive the batch when used as anchors.
    std::vector<Document> docs(static_cast<std::size_t>(b_size));
    Batch batch;
    for (int b = 0; b < b_size; ++b) {
      BatchEntry e;
      e.doc_id = "d" + std::to_string(b);
      if (doc_anchor) {
        Document& doc = docs[static_cast<std::size_t>(b)];
        doc.doc_id = e.doc_id;
        const int n_sents = 1 + static_cast<int>(rng.below(3));
        for (int s = 0; s < n_sents; ++s)
          doc.sentences.push_back({s, random_tokens(), "", std::nullopt});
        e.anchor_doc = &doc;
      } else {
        e.anchor_tokens = random_tokens();
      }
      e.positive_tokens = random_tokens();
      batch.entries.push_back(std::move(e));
    }

    Gradients grads = Gradients::zeros_like(model);
    infonce_loss_and_grads(model, batch, grads);

    const double h = 1e-4;
    auto check_param = [&](std::vector<double>& params, const std::vector<double>& analytic,
                           const char* name) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double original = params[i];
        params[i] = original + h;
        const double up = batch_loss(model, batch);
        params[i] = original - h;
        const double down = batch_loss(model, batch);
        params[i] = original;
        const double fd = (up - down) / (2.0 * h);
        const double err = rel_error(analytic[i], fd);
        if (err > report.max_rel_err) report.max_rel_err = err;
        if (err > tolerance) {
          ++report.failures;
          if (report.failure_notes.size() < 16) {
            std::ostringstream note;
            note << "trial " << trial << " " << name << "[" << i << "]: analytic=" << analytic[i]
                 << " fd=" << fd << " rel_err=" << err;
            report.failure_notes.push_back(note.str());
          }
        }
      }
    };
    check_param(model.token_table.data, grads.token_table.data, "token_table");
    check_param(model.projection.data, grads.projection.data, "projection");
    check_param(model.proj_bias, grads.proj_bias, "proj_bias");
  }
  return report;
}

std::string to_json(const EvalReport& report) {
  json j;
  json recalls;
  for (const auto& [k, v] : report.recall_at) recalls[std::to_string(k)] = v;
  j["recall"] = std::move(recalls);
  j["queries"] = report.query_count;
  return j.dump();
}

std::string to_json(const AnnotationQualityReport& report) {
  json j;
  j["precision"] = report.pair_precision;
  j["recall"] = report.pair_recall;
  j["mined"] = report.mined_count;
  return j.dump();
}

}  // namespace corrmine
