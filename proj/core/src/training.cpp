#include "corrmine/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "corrmine/rng.hpp"

namespace corrmine {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train.learning_rate: must be > 0");
  if (batch_size < 2) throw std::invalid_argument("train.batch_size: must be >= 2");
  if (epochs_per_iteration < 1)
    throw std::invalid_argument("train.epochs_per_iteration: must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0))
    throw std::invalid_argument("train.adam_beta1: must be in [0,1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw std::invalid_argument("train.adam_beta2: must be in [0,1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("train.adam_eps: must be > 0");
}

Gradients Gradients::zeros_like(const EncoderModel& model) {
  Gradients g;
  g.token_table = Matrix(model.token_table.rows, model.token_table.cols);
  g.projection = Matrix(model.projection.rows, model.projection.cols);
  g.proj_bias.assign(model.proj_bias.size(), 0.0);
  return g;
}

void Gradients::clear() {
  std::fill(token_table.data.begin(), token_table.data.end(), 0.0);
  std::fill(projection.data.begin(), projection.data.end(), 0.0);
  std::fill(proj_bias.begin(), proj_bias.end(), 0.0);
}

double Gradients::global_norm() const {
  double s = 0.0;
  for (double x : token_table.data) s += x * x;
  for (double x : projection.data) s += x * x;
  for (double x : proj_bias) s += x * x;
  return std::sqrt(s);
}

AdamState AdamState::zeros_like(const EncoderModel& model) {
  AdamState st;
  st.m_token = Matrix(model.token_table.rows, model.token_table.cols);
  st.v_token = Matrix(model.token_table.rows, model.token_table.cols);
  st.m_proj = Matrix(model.projection.rows, model.projection.cols);
  st.v_proj = Matrix(model.projection.rows, model.projection.cols);
  st.m_bias.assign(model.proj_bias.size(), 0.0);
  st.v_bias.assign(model.proj_bias.size(), 0.0);
  return st;
}

namespace {

// Forward pass of one sentence with everything the backward pass needs.
struct SentTrace {
  std::vector<int> tokens;
  std::vector<double> pooled;  // embed_dim
  std::vector<double> pre;     // out_dim, before normalization
  double norm = 0.0;
  std::vector<double> out;     // out_dim
};

SentTrace forward_sentence(const EncoderModel& model, std::span<const int> tokens) {
  if (tokens.empty()) throw std::runtime_error("forward_sentence: empty token sequence");
  SentTrace tr;
  tr.tokens.assign(tokens.begin(), tokens.end());
  mean_pool(model, tokens, tr.pooled);
  project(model, tr.pooled, tr.pre);
  if (model.config.normalize) {
    tr.norm = l2_norm(tr.pre);
    if (tr.norm == 0.0) throw std::runtime_error("forward_sentence: zero embedding norm");
    tr.out.resize(tr.pre.size());
    for (std::size_t k = 0; k < tr.pre.size(); ++k) tr.out[k] = tr.pre[k] / tr.norm;
  } else {
    tr.out = tr.pre;
  }
  return tr;
}

void backward_sentence(const EncoderModel& model, const SentTrace& tr,
                       const std::vector<double>& dout, Gradients& grads) {
  const int d_in = model.config.embed_dim;
  const int d_out = model.config.out_dim;

  std::vector<double> dpre(static_cast<std::size_t>(d_out));
  if (model.config.normalize) {
    // y = pre / ||pre||: dpre = (dout - y * <y, dout>) / ||pre||
    double proj_coeff = 0.0;
    for (int j = 0; j < d_out; ++j) proj_coeff += tr.out[static_cast<std::size_t>(j)] * dout[static_cast<std::size_t>(j)];
    for (int j = 0; j < d_out; ++j)
      dpre[static_cast<std::size_t>(j)] =
          (dout[static_cast<std::size_t>(j)] - tr.out[static_cast<std::size_t>(j)] * proj_coeff) / tr.norm;
  } else {
    dpre = dout;
  }

  for (int j = 0; j < d_out; ++j) grads.proj_bias[static_cast<std::size_t>(j)] += dpre[static_cast<std::size_t>(j)];

  std::vector<double> dpooled(static_cast<std::size_t>(d_in), 0.0);
  for (int k = 0; k < d_in; ++k) {
    const double h = tr.pooled[static_cast<std::size_t>(k)];
    double* grow = grads.projection.row(k);
    const double* prow = model.projection.row(k);
    double acc = 0.0;
    for (int j = 0; j < d_out; ++j) {
      grow[j] += h * dpre[static_cast<std::size_t>(j)];
      acc += prow[j] * dpre[static_cast<std::size_t>(j)];
    }
    dpooled[static_cast<std::size_t>(k)] = acc;
  }

  const double inv = 1.0 / static_cast<double>(tr.tokens.size());
  for (int id : tr.tokens) {
    double* row = grads.token_table.row(id);
    for (int k = 0; k < d_in; ++k) row[k] += dpooled[static_cast<std::size_t>(k)] * inv;
  }
}

// Anchor is either one sentence or a whole document (mean of sentence
// embeddings, re-normalized if configured).
struct AnchorTrace {
  std::vector<SentTrace> sents;
  std::vector<double> mean;  // document path only; out_dim, pre-normalization
  double norm = 0.0;
  std::vector<double> out;
  bool is_doc = false;
};

AnchorTrace forward_anchor(const EncoderModel& model, const BatchEntry& entry) {
  AnchorTrace tr;
  if (entry.anchor_doc == nullptr) {
    tr.sents.push_back(forward_sentence(model, entry.anchor_tokens));
    tr.out = tr.sents.back().out;
    return tr;
  }
  tr.is_doc = true;
  const Document& doc = *entry.anchor_doc;
  if (doc.sentences.empty())
    throw std::runtime_error("forward_anchor: document \"" + doc.doc_id + "\" has no sentences");
  tr.mean.assign(static_cast<std::size_t>(model.config.out_dim), 0.0);
  for (const auto& s : doc.sentences) {
    tr.sents.push_back(forward_sentence(model, s.tokens));
    const auto& e = tr.sents.back().out;
    for (std::size_t k = 0; k < tr.mean.size(); ++k) tr.mean[k] += e[k];
  }
  const double inv = 1.0 / static_cast<double>(tr.sents.size());
  for (double& x : tr.mean) x *= inv;
  if (model.config.normalize) {
    tr.norm = l2_norm(tr.mean);
    if (tr.norm == 0.0) throw std::runtime_error("forward_anchor: zero document embedding norm");
    tr.out.resize(tr.mean.size());
    for (std::size_t k = 0; k < tr.mean.size(); ++k) tr.out[k] = tr.mean[k] / tr.norm;
  } else {
    tr.out = tr.mean;
  }
  return tr;
}

void backward_anchor(const EncoderModel& model, const AnchorTrace& tr,
                     const std::vector<double>& dout, Gradients& grads) {
  if (!tr.is_doc) {
    backward_sentence(model, tr.sents.front(), dout, grads);
    return;
  }
  std::vector<double> dmean(dout.size());
  if (model.config.normalize) {
    double proj_coeff = 0.0;
    for (std::size_t k = 0; k < dout.size(); ++k) proj_coeff += tr.out[k] * dout[k];
    for (std::size_t k = 0; k < dout.size(); ++k)
      dmean[k] = (dout[k] - tr.out[k] * proj_coeff) / tr.norm;
  } else {
    dmean = dout;
  }
  const double inv = 1.0 / static_cast<double>(tr.sents.size());
  std::vector<double> dsent(dout.size());
  for (const auto& s : tr.sents) {
    for (std::size_t k = 0; k < dmean.size(); ++k) dsent[k] = dmean[k] * inv;
    backward_sentence(model, s, dsent, grads);
  }
}

std::string batch_doc_ids(const Batch& batch) {
  std::string ids;
  for (const auto& e : batch.entries) {
    if (!ids.empty()) ids += ", ";
    ids += e.doc_id;
  }
  return ids;
}

// One InfoNCE direction: softmax over candidates for every anchor row.
// Returns the summed per-anchor loss (caller divides); writes d(loss)/d(row)
// scaled by `scale` into du/dv.
double direction_loss(const std::vector<const std::vector<double>*>& u,
                      const std::vector<const std::vector<double>*>& v, double inv_temp,
                      double scale, std::vector<std::vector<double>>* du,
                      std::vector<std::vector<double>>* dv) {
  const int b_size = static_cast<int>(u.size());
  const std::size_t dim = u.front()->size();

  std::vector<std::vector<double>> logits(static_cast<std::size_t>(b_size),
                                          std::vector<double>(static_cast<std::size_t>(b_size)));
  for (int b = 0; b < b_size; ++b)
    for (int c = 0; c < b_size; ++c) {
      double s = 0.0;
      const auto& ub = *u[static_cast<std::size_t>(b)];
      const auto& vc = *v[static_cast<std::size_t>(c)];
      for (std::size_t k = 0; k < dim; ++k) s += ub[k] * vc[k];
      logits[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)] = s * inv_temp;
    }

  double total = 0.0;
  for (int b = 0; b < b_size; ++b) {
    auto& row = logits[static_cast<std::size_t>(b)];
    double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double z : row) sum += std::exp(z - mx);
    double lse = mx + std::log(sum);
    total += lse - row[static_cast<std::size_t>(b)];

    if (du && dv) {
      for (int c = 0; c < b_size; ++c) {
        double soft = std::exp(row[static_cast<std::size_t>(c)] - lse);
        double dz = (soft - (b == c ? 1.0 : 0.0)) * scale;
        const auto& ub = *u[static_cast<std::size_t>(b)];
        const auto& vc = *v[static_cast<std::size_t>(c)];
        auto& dub = (*du)[static_cast<std::size_t>(b)];
        auto& dvc = (*dv)[static_cast<std::size_t>(c)];
        for (std::size_t k = 0; k < dim; ++k) {
          dub[k] += dz * inv_temp * vc[k];
          dvc[k] += dz * inv_temp * ub[k];
        }
      }
    }
  }
  return total;
}

double infonce_impl(const EncoderModel& model, const Batch& batch, Gradients* grads,
                    bool symmetric) {
  if (batch.entries.empty()) throw std::runtime_error("infonce: empty batch");
  const int b_size = batch.size();
  const double inv_temp = 1.0 / model.config.temperature;

  std::vector<AnchorTrace> anchors;
  std::vector<SentTrace> positives;
  anchors.reserve(static_cast<std::size_t>(b_size));
  positives.reserve(static_cast<std::size_t>(b_size));
  for (const auto& e : batch.entries) {
    anchors.push_back(forward_anchor(model, e));
    positives.push_back(forward_sentence(model, e.positive_tokens));
  }

  std::vector<const std::vector<double>*> u, v;
  for (int b = 0; b < b_size; ++b) {
    u.push_back(&anchors[static_cast<std::size_t>(b)].out);
    v.push_back(&positives[static_cast<std::size_t>(b)].out);
  }

  const std::size_t dim = u.front()->size();
  std::vector<std::vector<double>> du, dv;
  if (grads) {
    du.assign(static_cast<std::size_t>(b_size), std::vector<double>(dim, 0.0));
    dv.assign(static_cast<std::size_t>(b_size), std::vector<double>(dim, 0.0));
  }

  // Per-anchor mean; with the symmetric flag the two directions are averaged.
  const double scale = symmetric ? 0.5 / b_size : 1.0 / b_size;
  double sum = direction_loss(u, v, inv_temp, scale, grads ? &du : nullptr,
                              grads ? &dv : nullptr);
  if (symmetric) {
    sum += direction_loss(v, u, inv_temp, scale, grads ? &dv : nullptr,
                          grads ? &du : nullptr);
  }
  double loss = sum * scale;

  if (!std::isfinite(loss))
    throw std::runtime_error("infonce: non-finite loss on batch [" + batch_doc_ids(batch) + "]");

  if (grads) {
    grads->clear();
    for (int b = 0; b < b_size; ++b) {
      backward_anchor(model, anchors[static_cast<std::size_t>(b)], du[static_cast<std::size_t>(b)], *grads);
      backward_sentence(model, positives[static_cast<std::size_t>(b)], dv[static_cast<std::size_t>(b)], *grads);
    }
  }
  return loss;
}

}  // namespace

double infonce_loss_and_grads(const EncoderModel& model, const Batch& batch, Gradients& grads) {
  return infonce_impl(model, batch, &grads, /*symmetric=*/false);
}

double infonce_loss_and_grads(const EncoderModel& model, const Batch& batch, Gradients& grads,
                              bool symmetric) {
  return infonce_impl(model, batch, &grads, symmetric);
}

double infonce_loss(const EncoderModel& model, const Batch& batch) {
  return infonce_impl(model, batch, nullptr, /*symmetric=*/false);
}

void adam_step(EncoderModel& model, const Gradients& grads, AdamState& state,
               const TrainConfig& cfg) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));

  auto update = [&](std::vector<double>& params, const std::vector<double>& g,
                    std::vector<double>& m, std::vector<double>& v) {
    if (params.size() != g.size())
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
      v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  };
  update(model.token_table.data, grads.token_table.data, state.m_token.data, state.v_token.data);
  update(model.projection.data, grads.projection.data, state.m_proj.data, state.v_proj.data);
  update(model.proj_bias, grads.proj_bias, state.m_bias, state.v_bias);

  model.quantize();
  model.check_finite("after adam_step " + std::to_string(state.step));
}

std::vector<Batch> pack_batches(std::vector<BatchEntry> entries, int batch_size,
                                std::uint64_t seed) {
  Rng rng(seed);
  rng.shuffle(entries);

  std::vector<Batch> batches;
  std::vector<BatchEntry> queue = std::move(entries);
  while (!queue.empty()) {
    Batch batch;
    std::unordered_set<std::string> docs;
    std::vector<BatchEntry> deferred;
    std::size_t scanned = 0;
    for (; scanned < queue.size(); ++scanned) {
      if (batch.size() == batch_size) break;
      auto& entry = queue[scanned];
      if (docs.count(entry.doc_id)) {
        deferred.push_back(std::move(entry));
      } else {
        docs.insert(entry.doc_id);
        batch.entries.push_back(std::move(entry));
      }
    }
    // Deferred conflicts retry first; unscanned entries keep their order.
    for (std::size_t i = scanned; i < queue.size(); ++i) deferred.push_back(std::move(queue[i]));
    queue = std::move(deferred);

    if (batch.size() >= 2) {
      batches.push_back(std::move(batch));
    } else {
      break;  // a lone entry means everything left shares its document
    }
  }
  return batches;
}

std::vector<Batch> make_batches(const PositivePairSet& pairs, const Corpus& corpus,
                                const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (pairs.empty()) throw std::runtime_error("make_batches: empty pair set");

  std::unordered_set<std::string> distinct;
  for (const auto& p : pairs.pairs) distinct.insert(p.doc_id);
  if (distinct.size() < 2)
    throw std::runtime_error(
        "make_batches: fewer than 2 distinct documents in pair set, no valid negatives exist");

  std::unordered_map<std::string, const Document*> by_id;
  for (const auto& d : corpus.documents) by_id.emplace(d.doc_id, &d);

  std::vector<BatchEntry> entries;
  entries.reserve(pairs.size());
  for (const auto& p : pairs.pairs) {
    auto it = by_id.find(p.doc_id);
    if (it == by_id.end())
      throw std::runtime_error("make_batches: pair references unknown document \"" + p.doc_id +
                               "\"");
    const Document& doc = *it->second;
    const int n = static_cast<int>(doc.sentences.size());
    if (p.i < 0 || p.j < 0 || p.i >= n || p.j >= n)
      throw std::runtime_error("make_batches: pair indices out of range for document \"" +
                               p.doc_id + "\"");
    BatchEntry e;
    e.doc_id = p.doc_id;
    e.anchor_tokens = doc.sentences[static_cast<std::size_t>(p.i)].tokens;
    e.positive_tokens = doc.sentences[static_cast<std::size_t>(p.j)].tokens;
    entries.push_back(std::move(e));
  }
  return pack_batches(std::move(entries), cfg.batch_size, seed);
}

PositivePairSet init_neighbor_positives(const Corpus& corpus) {
  PositivePairSet out;
  for (const auto& doc : corpus.documents) {
    const int n = static_cast<int>(doc.sentences.size());
    for (int i = 0; i + 1 < n; ++i) out.pairs.push_back({doc.doc_id, i, i + 1, 0});
  }
  return out;
}

TrainLog::TrainLog(const std::string& path) : out_(new std::ofstream(path, std::ios::trunc)) {
  if (!*out_) {
    delete out_;
    out_ = nullptr;
    throw std::runtime_error("cannot open training log: " + path);
  }
}

TrainLog::~TrainLog() { delete out_; }

void TrainLog::append(int iteration, int epoch, double mean_loss, double grad_norm, long pairs) {
  json j;
  j["iteration"] = iteration;
  j["epoch"] = epoch;
  j["mean_loss"] = mean_loss;
  j["grad_norm"] = grad_norm;
  j["pairs"] = pairs;
  (*out_) << j.dump() << '\n';
  out_->flush();
}

namespace {

LossReport run_epochs(EncoderModel& model, const std::vector<BatchEntry>& base_entries,
                      const Corpus* corpus, const PositivePairSet* pairs, const TrainConfig& cfg,
                      TrainLog* log, int iteration) {
  AdamState state = AdamState::zeros_like(model);
  Gradients grads = Gradients::zeros_like(model);

  LossReport report;
  double loss_sum = 0.0;
  for (int epoch = 0; epoch < cfg.epochs_per_iteration; ++epoch) {
    const std::uint64_t epoch_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch));
    std::vector<Batch> batches = pairs
                                     ? make_batches(*pairs, *corpus, cfg, epoch_seed)
                                     : pack_batches(base_entries, cfg.batch_size, epoch_seed);
    if (batches.empty()) throw std::runtime_error("training: no usable batches");

    double epoch_loss = 0.0, epoch_norm = 0.0;
    long epoch_pairs = 0;
    for (const auto& batch : batches) {
      double loss = infonce_loss_and_grads(model, batch, grads, cfg.symmetric);
      adam_step(model, grads, state, cfg);
      epoch_loss += loss;
      epoch_norm += grads.global_norm();
      epoch_pairs += batch.size();
    }
    const double n_batches = static_cast<double>(batches.size());
    epoch_loss /= n_batches;
    epoch_norm /= n_batches;
    if (log) log->append(iteration, epoch, epoch_loss, epoch_norm, epoch_pairs);

    loss_sum += epoch_loss;
    report.batch_count += static_cast<long>(batches.size());
    report.grad_norm = epoch_norm;
  }
  report.mean_loss = loss_sum / static_cast<double>(cfg.epochs_per_iteration);
  return report;
}

}  // namespace

LossReport train_iteration(EncoderModel& model, const PositivePairSet& pairs,
                           const Corpus& corpus, const TrainConfig& cfg, TrainLog* log,
                           int iteration) {
  cfg.validate();
  if (pairs.empty()) throw std::runtime_error("train_iteration: empty pair set");
  return run_epochs(model, {}, &corpus, &pairs, cfg, log, iteration);
}

LossReport fine_tune(EncoderModel& model, const std::vector<LabeledPair>& labeled,
                     const Corpus& corpus, const TrainConfig& cfg, TrainLog* log, int iteration) {
  cfg.validate();
  std::unordered_set<std::string> distinct;
  for (const auto& p : labeled) distinct.insert(p.doc_id);
  if (labeled.size() < 2 || distinct.size() < 2)
    throw std::runtime_error("fine_tune: need >= 2 labeled pairs from distinct documents");

  std::unordered_map<std::string, const Document*> by_id;
  for (const auto& d : corpus.documents) by_id.emplace(d.doc_id, &d);

  std::vector<BatchEntry> entries;
  entries.reserve(labeled.size());
  for (const auto& p : labeled) {
    auto it = by_id.find(p.doc_id);
    if (it == by_id.end())
      throw std::runtime_error("fine_tune: labeled pair references unknown document \"" +
                               p.doc_id + "\"");
    if (p.item_tokens.empty())
      throw std::runtime_error("fine_tune: item for document \"" + p.doc_id +
                               "\" tokenizes to empty");
    BatchEntry e;
    e.doc_id = p.doc_id;
    e.anchor_doc = it->second;
    e.positive_tokens = p.item_tokens;
    entries.push_back(std::move(e));
  }
  return run_epochs(model, entries, nullptr, nullptr, cfg, log, iteration);
}

double evaluate_loss(const EncoderModel& model, const PositivePairSet& pairs,
                     const Corpus& corpus, const TrainConfig& cfg, std::uint64_t seed) {
  std::vector<Batch> batches = make_batches(pairs, corpus, cfg, seed);
  if (batches.empty()) throw std::runtime_error("evaluate_loss: no usable batches");
  double total = 0.0;
  long count = 0;
  for (const auto& batch : batches) {
    total += infonce_loss(model, batch) * batch.size();
    count += batch.size();
  }
  return total / static_cast<double>(count);
}

}  // namespace corrmine
