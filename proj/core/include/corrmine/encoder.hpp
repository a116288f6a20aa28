#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "corrmine/corpus.hpp"

namespace corrmine {

struct EncoderConfig {
  int vocab_size = 0;  // set from the training corpus
  int embed_dim = 64;
  int out_dim = 32;
  bool normalize = true;
  double temperature = 0.1;  // applied in the loss, not in similarity
  double init_scale = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Row-major dense matrix. Values live on the f32 grid (see
/// EncoderModel::quantize) so f32 checkpoints round-trip bit-exactly while
/// arithmetic stays in double.
struct Matrix {
  int rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
};

using Embedding = std::vector<double>;

/// The representation model: token embedding table, mean pooling over token
/// rows, one affine projection, optional L2 normalization.
struct EncoderModel {
  EncoderConfig config;
  Matrix token_table;             // vocab_size x embed_dim
  Matrix projection;              // embed_dim x out_dim
  std::vector<double> proj_bias;  // out_dim

  /// Seeded i.i.d. uniform [-init_scale, +init_scale] initialization.
  static EncoderModel init(const EncoderConfig& cfg);

  /// Snaps every parameter to the nearest f32 value.
  void quantize();

  /// Throws if any parameter is non-finite.
  void check_finite(const std::string& context) const;

  std::size_t parameter_count() const;
};

Embedding encode_sentence(const EncoderModel& model, std::span<const int> tokens);

/// Mean of the document's sentence embeddings, re-normalized if configured.
Embedding encode_document(const EncoderModel& model, const Document& doc);

/// Plain inner product; temperature scaling happens in the loss.
double similarity(const Embedding& a, const Embedding& b);

void save_checkpoint(const EncoderModel& model, const Vocab& vocab, const std::string& path);

struct Checkpoint {
  EncoderModel model;
  Vocab vocab;
};

Checkpoint load_checkpoint(const std::string& path);

// Shared pieces of the forward pass, reused by the training module.
void mean_pool(const EncoderModel& model, std::span<const int> tokens, std::vector<double>& out);
void project(const EncoderModel& model, const std::vector<double>& pooled, std::vector<double>& out);
double l2_norm(const std::vector<double>& v);

}  // namespace corrmine
