#include "corrmine/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "corrmine/rng.hpp"

namespace corrmine {

using nlohmann::json;

int Vocab::add(const std::string& tok) {
  auto it = ids_.find(tok);
  if (it != ids_.end()) return it->second;
  int id = static_cast<int>(tokens_.size());
  ids_.emplace(tok, id);
  tokens_.push_back(tok);
  return id;
}

int Vocab::lookup(const std::string& tok) const {
  auto it = ids_.find(tok);
  return it == ids_.end() ? kUnkId : it->second;
}

const Document* Corpus::find(const std::string& doc_id) const {
  for (const auto& doc : documents) {
    if (doc.doc_id == doc_id) return &doc;
  }
  return nullptr;
}

void SyntheticSpec::validate() const {
  auto need = [](bool ok, const char* field) {
    if (!ok) throw std::invalid_argument(std::string("synthetic.") + field + ": invalid value");
  };
  need(n_topics >= 1, "n_topics");
  need(n_docs >= 1, "n_docs");
  need(sentences_per_doc >= 1, "sentences_per_doc");
  need(vocab_per_topic >= 1, "vocab_per_topic");
  need(shared_vocab >= 1, "shared_vocab");
  need(tokens_per_sentence >= 1, "tokens_per_sentence");
  need(topic_switch_prob >= 0.0 && topic_switch_prob <= 1.0, "topic_switch_prob");
}

std::vector<int> tokenize(std::string_view raw, Vocab& vocab, bool frozen) {
  std::vector<int> out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    out.push_back(frozen ? vocab.lookup(cur) : vocab.add(cur));
    cur.clear();
  };
  for (unsigned char c : raw) {
    if (c < 128 && std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();  // every non-alphanumeric byte (incl. UTF-8 lead/cont) is a boundary
    }
  }
  flush();
  return out;
}

std::string detokenize(const std::vector<int>& tokens, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.token(tokens[i]);
  }
  return out;
}

namespace {

Sentence make_sentence(int sent_id, std::string raw, Vocab& vocab, bool frozen,
                       std::optional<int> label) {
  Sentence s;
  s.sent_id = sent_id;
  s.raw_text = std::move(raw);
  s.tokens = tokenize(s.raw_text, vocab, frozen);
  s.topic_label = label;
  return s;
}

}  // namespace

Corpus load_corpus(const std::string& path, const Vocab* frozen_vocab, LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);

  Corpus corpus;
  if (frozen_vocab) corpus.vocab = *frozen_vocab;
  const bool frozen = frozen_vocab != nullptr;

  std::unordered_set<std::string> seen_ids;
  std::string line;
  long line_no = 0;
  std::size_t dropped = 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("corpus line " + std::to_string(line_no) +
                               ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("doc_id") || !j.contains("sentences"))
      throw std::runtime_error("corpus line " + std::to_string(line_no) +
                               ": expected object with doc_id and sentences");

    Document doc;
    doc.doc_id = j.at("doc_id").get<std::string>();
    if (!seen_ids.insert(doc.doc_id).second)
      throw std::runtime_error("corpus line " + std::to_string(line_no) +
                               ": duplicate doc_id \"" + doc.doc_id + "\"");

    const auto& sents = j.at("sentences");
    if (!sents.is_array())
      throw std::runtime_error("corpus line " + std::to_string(line_no) +
                               ": sentences must be an array");

    std::vector<std::optional<int>> labels(sents.size(), std::nullopt);
    if (j.contains("topic_labels")) {
      const auto& tl = j.at("topic_labels");
      if (!tl.is_array() || tl.size() != sents.size())
        throw std::runtime_error("corpus line " + std::to_string(line_no) +
                                 ": topic_labels must parallel sentences");
      for (std::size_t i = 0; i < tl.size(); ++i) labels[i] = tl[i].get<int>();
    }

    for (std::size_t i = 0; i < sents.size(); ++i) {
      Sentence s = make_sentence(static_cast<int>(doc.sentences.size()),
                                 sents[i].get<std::string>(), corpus.vocab, frozen, labels[i]);
      if (s.tokens.empty()) {
        ++dropped;
        continue;
      }
      doc.sentences.push_back(std::move(s));
    }
    corpus.documents.push_back(std::move(doc));
  }
  if (report) report->dropped_sentences = dropped;
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  for (const auto& doc : corpus.documents) {
    json j;
    j["doc_id"] = doc.doc_id;
    json sents = json::array();
    json labels = json::array();
    bool any_label = false;
    for (const auto& s : doc.sentences) {
      sents.push_back(s.raw_text);
      if (s.topic_label) {
        labels.push_back(*s.topic_label);
        any_label = true;
      } else {
        labels.push_back(-1);
      }
    }
    j["sentences"] = std::move(sents);
    if (any_label) j["topic_labels"] = std::move(labels);
    out << j.dump() << '\n';
  }
}

std::vector<LabeledPair> load_labeled_pairs(const std::string& path, const Corpus& corpus) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open labeled pairs file: " + path);

  std::unordered_set<std::string> known_ids;
  for (const auto& doc : corpus.documents) known_ids.insert(doc.doc_id);

  Vocab vocab = corpus.vocab;  // frozen lookups only
  std::vector<LabeledPair> pairs;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("pairs line " + std::to_string(line_no) + ": malformed JSON (" +
                               e.what() + ")");
    }
    LabeledPair p;
    p.doc_id = j.at("doc_id").get<std::string>();
    p.item_text = j.at("item_text").get<std::string>();
    if (!known_ids.count(p.doc_id))
      throw std::runtime_error("pairs line " + std::to_string(line_no) + ": unknown doc_id \"" +
                               p.doc_id + "\"");
    p.item_tokens = tokenize(p.item_text, vocab, /*frozen=*/true);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void save_labeled_pairs(const std::vector<LabeledPair>& pairs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write labeled pairs file: " + path);
  for (const auto& p : pairs) {
    json j;
    j["doc_id"] = p.doc_id;
    j["item_text"] = p.item_text;
    out << j.dump() << '\n';
  }
}

namespace {

std::string topic_token(int topic, int k) {
  return "t" + std::to_string(topic) + "w" + std::to_string(k);
}

std::string shared_token(int k) { return "sh" + std::to_string(k); }

// Fraction of sentence tokens drawn from the shared pool.
constexpr double kSharedMix = 0.25;

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  SyntheticData data;
  Corpus& corpus = data.corpus;

  for (int d = 0; d < spec.n_docs; ++d) {
    Document doc;
    {
      std::ostringstream id;
      id << "doc_";
      std::string num = std::to_string(d);
      for (std::size_t pad = num.size(); pad < 5; ++pad) id << '0';
      id << num;
      doc.doc_id = id.str();
    }

    int topic = static_cast<int>(rng.below(static_cast<std::size_t>(spec.n_topics)));
    std::vector<int> topic_of_sentence;
    for (int s = 0; s < spec.sentences_per_doc; ++s) {
      if (s > 0 && spec.n_topics > 1 && rng.next_real() < spec.topic_switch_prob) {
        // Uniform over the other topics.
        int step = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(spec.n_topics - 1)));
        topic = (topic + step) % spec.n_topics;
      }
      topic_of_sentence.push_back(topic);

      std::string raw;
      for (int t = 0; t < spec.tokens_per_sentence; ++t) {
        if (t) raw.push_back(' ');
        if (rng.next_real() < kSharedMix) {
          raw += shared_token(static_cast<int>(rng.below(spec.shared_vocab)));
        } else {
          raw += topic_token(topic, static_cast<int>(rng.below(spec.vocab_per_topic)));
        }
      }
      Sentence sent = make_sentence(s, std::move(raw), corpus.vocab, /*frozen=*/false, topic);
      doc.sentences.push_back(std::move(sent));
    }

    // Majority topic, ties toward the smaller topic id.
    std::vector<int> counts(spec.n_topics, 0);
    for (int t : topic_of_sentence) counts[t]++;
    int majority = 0;
    for (int t = 1; t < spec.n_topics; ++t)
      if (counts[t] > counts[majority]) majority = t;

    // Item tokens come from the majority topic's private tokens as realized
    // in this document; fallback to the topic's full private vocabulary.
    std::vector<int> pool;
    for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
      if (topic_of_sentence[s] != majority) continue;
      for (int id : doc.sentences[s].tokens) {
        const std::string& tok = corpus.vocab.token(id);
        if (tok.size() > 1 && tok[0] == 't') pool.push_back(id);  // private, not shared
      }
    }
    std::string item_text;
    for (int t = 0; t < spec.tokens_per_sentence; ++t) {
      if (t) item_text.push_back(' ');
      if (!pool.empty()) {
        item_text += corpus.vocab.token(pool[rng.below(pool.size())]);
      } else {
        item_text += topic_token(majority, static_cast<int>(rng.below(spec.vocab_per_topic)));
      }
    }
    LabeledPair pair;
    pair.doc_id = doc.doc_id;
    pair.item_text = std::move(item_text);
    pair.item_tokens = tokenize(pair.item_text, corpus.vocab, /*frozen=*/false);
    data.pairs.push_back(std::move(pair));

    corpus.documents.push_back(std::move(doc));
  }
  return data;
}

namespace {

Corpus rebuild_split(const Corpus& source, std::size_t begin, std::size_t end, Split tag,
                     const Vocab* frozen) {
  Corpus out;
  out.split_tag = tag;
  if (frozen) out.vocab = *frozen;
  for (std::size_t d = begin; d < end; ++d) {
    const Document& src = source.documents[d];
    Document doc;
    doc.doc_id = src.doc_id;
    for (const auto& s : src.sentences) {
      Sentence copy = make_sentence(static_cast<int>(doc.sentences.size()), s.raw_text,
                                    out.vocab, frozen != nullptr, s.topic_label);
      if (copy.tokens.empty()) continue;  // cannot happen for sentences kept at ingestion
      doc.sentences.push_back(std::move(copy));
    }
    doc.sentences.shrink_to_fit();
    out.documents.push_back(std::move(doc));
  }
  return out;
}

}  // namespace

CorpusSplits split_corpus(const Corpus& corpus, const std::vector<LabeledPair>& pairs,
                          std::array<double, 3> fractions) {
  double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions must sum to 1");

  const std::size_t n = corpus.documents.size();
  const auto b1 = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fractions[0]));
  const auto b2 = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * (fractions[0] + fractions[1])));

  CorpusSplits splits;
  splits.train = rebuild_split(corpus, 0, b1, Split::train, nullptr);
  splits.valid = rebuild_split(corpus, b1, b2, Split::valid, &splits.train.vocab);
  splits.test = rebuild_split(corpus, b2, n, Split::test, &splits.train.vocab);

  std::unordered_set<std::string> train_ids, valid_ids;
  for (const auto& d : splits.train.documents) train_ids.insert(d.doc_id);
  for (const auto& d : splits.valid.documents) valid_ids.insert(d.doc_id);

  Vocab frozen = splits.train.vocab;
  for (const auto& p : pairs) {
    LabeledPair copy = p;
    copy.item_tokens = tokenize(copy.item_text, frozen, /*frozen=*/true);
    if (train_ids.count(copy.doc_id)) {
      splits.train_pairs.push_back(std::move(copy));
    } else if (valid_ids.count(copy.doc_id)) {
      splits.valid_pairs.push_back(std::move(copy));
    } else {
      splits.test_pairs.push_back(std::move(copy));
    }
  }
  return splits;
}

}  // namespace corrmine
