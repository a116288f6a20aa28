#include "corrmine/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "corrmine/rng.hpp"

namespace corrmine {

static_assert(std::numeric_limits<float>::is_iec559, "IEEE-754 float required");

void EncoderConfig::validate() const {
  if (vocab_size < 1) throw std::invalid_argument("encoder.vocab_size: must be >= 1");
  if (embed_dim < 1) throw std::invalid_argument("encoder.embed_dim: must be >= 1");
  if (out_dim < 1) throw std::invalid_argument("encoder.out_dim: must be >= 1");
  if (!(temperature > 0.0)) throw std::invalid_argument("encoder.temperature: must be > 0");
  if (!(init_scale > 0.0)) throw std::invalid_argument("encoder.init_scale: must be > 0");
}

EncoderModel EncoderModel::init(const EncoderConfig& cfg) {
  cfg.validate();
  EncoderModel model;
  model.config = cfg;
  model.token_table = Matrix(cfg.vocab_size, cfg.embed_dim);
  model.projection = Matrix(cfg.embed_dim, cfg.out_dim);
  model.proj_bias.assign(static_cast<std::size_t>(cfg.out_dim), 0.0);

  Rng rng(cfg.seed);
  auto fill = [&](std::vector<double>& v) {
    for (double& x : v) x = rng.uniform(-cfg.init_scale, cfg.init_scale);
  };
  fill(model.token_table.data);
  fill(model.projection.data);
  fill(model.proj_bias);
  model.quantize();
  return model;
}

void EncoderModel::quantize() {
  auto snap = [](std::vector<double>& v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  };
  snap(token_table.data);
  snap(projection.data);
  snap(proj_bias);
}

void EncoderModel::check_finite(const std::string& context) const {
  auto scan = [&](const std::vector<double>& v, const char* name) {
    for (double x : v) {
      if (!std::isfinite(x))
        throw std::runtime_error("non-finite parameter in " + std::string(name) + " (" +
                                 context + ")");
    }
  };
  scan(token_table.data, "token_table");
  scan(projection.data, "projection");
  scan(proj_bias, "proj_bias");
}

std::size_t EncoderModel::parameter_count() const {
  return token_table.data.size() + projection.data.size() + proj_bias.size();
}

void mean_pool(const EncoderModel& model, std::span<const int> tokens, std::vector<double>& out) {
  const int d = model.config.embed_dim;
  out.assign(static_cast<std::size_t>(d), 0.0);
  for (int id : tokens) {
    if (id < 0 || id >= model.config.vocab_size)
      throw std::runtime_error("token id " + std::to_string(id) + " out of range (vocab_size=" +
                               std::to_string(model.config.vocab_size) + ")");
    const double* row = model.token_table.row(id);
    for (int k = 0; k < d; ++k) out[k] += row[k];
  }
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (double& x : out) x *= inv;
}

void project(const EncoderModel& model, const std::vector<double>& pooled,
             std::vector<double>& out) {
  const int d_in = model.config.embed_dim;
  const int d_out = model.config.out_dim;
  out.assign(model.proj_bias.begin(), model.proj_bias.end());
  for (int k = 0; k < d_in; ++k) {
    const double h = pooled[k];
    const double* row = model.projection.row(k);
    for (int j = 0; j < d_out; ++j) out[j] += h * row[j];
  }
}

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

Embedding encode_sentence(const EncoderModel& model, std::span<const int> tokens) {
  if (tokens.empty()) throw std::runtime_error("encode_sentence: empty token sequence");
  std::vector<double> pooled, out;
  mean_pool(model, tokens, pooled);
  project(model, pooled, out);
  if (model.config.normalize) {
    double norm = l2_norm(out);
    if (norm == 0.0) throw std::runtime_error("encode_sentence: zero embedding norm");
    for (double& x : out) x /= norm;
  }
  return out;
}

Embedding encode_document(const EncoderModel& model, const Document& doc) {
  if (doc.sentences.empty())
    throw std::runtime_error("encode_document: document \"" + doc.doc_id + "\" has no sentences");
  std::vector<double> mean(static_cast<std::size_t>(model.config.out_dim), 0.0);
  for (const auto& s : doc.sentences) {
    Embedding e = encode_sentence(model, s.tokens);
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += e[k];
  }
  const double inv = 1.0 / static_cast<double>(doc.sentences.size());
  for (double& x : mean) x *= inv;
  if (model.config.normalize) {
    double norm = l2_norm(mean);
    if (norm == 0.0) throw std::runtime_error("encode_document: zero embedding norm");
    for (double& x : mean) x /= norm;
  }
  return mean;
}

double similarity(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("similarity: dimension mismatch (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

namespace {

constexpr char kMagic[4] = {'I', 'D', 'C', '1'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_raw(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void write_f32_array(std::ofstream& out, const std::vector<double>& v) {
  for (double x : v) write_raw(out, static_cast<float>(x));
}

template <class T>
T read_raw(std::ifstream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error(std::string("truncated checkpoint while reading ") + what);
  return value;
}

void read_f32_array(std::ifstream& in, std::vector<double>& v, const char* what) {
  for (double& x : v) x = static_cast<double>(read_raw<float>(in, what));
}

}  // namespace

void save_checkpoint(const EncoderModel& model, const Vocab& vocab, const std::string& path) {
  if (vocab.size() != model.config.vocab_size)
    throw std::runtime_error("save_checkpoint: vocab size " + std::to_string(vocab.size()) +
                             " does not match model vocab_size " +
                             std::to_string(model.config.vocab_size));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);

  out.write(kMagic, 4);
  write_raw(out, kVersion);
  write_raw(out, static_cast<std::uint32_t>(model.config.vocab_size));
  write_raw(out, static_cast<std::uint32_t>(model.config.embed_dim));
  write_raw(out, static_cast<std::uint32_t>(model.config.out_dim));
  write_raw(out, static_cast<std::uint8_t>(model.config.normalize ? 1 : 0));
  write_raw(out, model.config.temperature);
  write_raw(out, model.config.seed);
  write_f32_array(out, model.token_table.data);
  write_f32_array(out, model.projection.data);
  write_f32_array(out, model.proj_bias);
  for (const auto& tok : vocab.tokens()) {
    write_raw(out, static_cast<std::uint32_t>(tok.size()));
    out.write(tok.data(), static_cast<std::streamsize>(tok.size()));
  }
  if (!out) throw std::runtime_error("write failure on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad magic bytes in checkpoint: " + path);
  const auto version = read_raw<std::uint32_t>(in, "version");
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

  EncoderConfig cfg;
  cfg.vocab_size = static_cast<int>(read_raw<std::uint32_t>(in, "vocab_size"));
  cfg.embed_dim = static_cast<int>(read_raw<std::uint32_t>(in, "embed_dim"));
  cfg.out_dim = static_cast<int>(read_raw<std::uint32_t>(in, "out_dim"));
  cfg.normalize = read_raw<std::uint8_t>(in, "normalize") != 0;
  cfg.temperature = read_raw<double>(in, "temperature");
  cfg.seed = read_raw<std::uint64_t>(in, "seed");
  cfg.validate();

  Checkpoint ckpt;
  ckpt.model.config = cfg;
  ckpt.model.token_table = Matrix(cfg.vocab_size, cfg.embed_dim);
  ckpt.model.projection = Matrix(cfg.embed_dim, cfg.out_dim);
  ckpt.model.proj_bias.assign(static_cast<std::size_t>(cfg.out_dim), 0.0);
  read_f32_array(in, ckpt.model.token_table.data, "token_table");
  read_f32_array(in, ckpt.model.projection.data, "projection");
  read_f32_array(in, ckpt.model.proj_bias, "proj_bias");

  for (int i = 0; i < cfg.vocab_size; ++i) {
    const auto len = read_raw<std::uint32_t>(in, "vocab entry length");
    std::string tok(len, '\0');
    in.read(tok.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("truncated checkpoint while reading vocab entry");
    if (i == 0) continue;  // UNK is installed by the Vocab constructor
    ckpt.vocab.add(tok);
  }
  if (ckpt.vocab.size() != cfg.vocab_size)
    throw std::runtime_error("checkpoint vocabulary has duplicate entries");
  in.peek();
  if (!in.eof()) throw std::runtime_error("trailing bytes after checkpoint payload: " + path);
  return ckpt;
}

}  // namespace corrmine
