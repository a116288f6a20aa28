#include "corrmine/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "corrmine/rng.hpp"

namespace corrmine {

using nlohmann::json;

namespace {

// Seed-derivation tags for sections whose seed was not given explicitly.
constexpr std::uint64_t kEncoderSeedTag = 1;
constexpr std::uint64_t kTrainSeedTag = 2;
constexpr std::uint64_t kSyntheticSeedTag = 3;

[[noreturn]] void fail(const std::string& key, const std::string& what) {
  throw std::invalid_argument("config key " + key + ": " + what);
}

void check_keys(const json& j, const std::string& prefix, const std::set<std::string>& allowed) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key))
      throw std::invalid_argument("unknown config key: " + (prefix.empty() ? key : prefix + "." + key));
  }
}

double get_double(const json& j, const std::string& key) {
  if (!j.is_number()) fail(key, "expected a number");
  return j.get<double>();
}

int get_int(const json& j, const std::string& key) {
  if (!j.is_number_integer()) fail(key, "expected an integer");
  return j.get<int>();
}

std::uint64_t get_u64(const json& j, const std::string& key) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<long long>() >= 0)
    return static_cast<std::uint64_t>(j.get<long long>());
  fail(key, "expected a non-negative integer");
}

bool get_bool(const json& j, const std::string& key) {
  if (!j.is_boolean()) fail(key, "expected a boolean");
  return j.get<bool>();
}

std::string get_string(const json& j, const std::string& key) {
  if (!j.is_string()) fail(key, "expected a string");
  return j.get<std::string>();
}

template <class T, class Getter>
void maybe(const json& section, const char* key, const std::string& prefix, T& out,
           Getter getter) {
  if (!section.contains(key)) return;
  out = getter(section.at(key), prefix + "." + key);
}

}  // namespace

LoopConfig RunConfig::loop_config() const {
  LoopConfig out = loop;
  out.idc = idc;
  out.train = train;
  return out;
}

void RunConfig::validate() const {
  double sum = split[0] + split[1] + split[2];
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("config key split: fractions must sum to 1");
  for (double f : split)
    if (f < 0.0) throw std::invalid_argument("config key split: fractions must be >= 0");
  if (labeled_budget < 0)
    throw std::invalid_argument("config key labeled_budget: must be >= 0");
  {
    EncoderConfig probe = encoder;
    probe.vocab_size = 1;  // resolved from data at run time
    probe.validate();
  }
  train.validate();
  idc.validate();
  LoopConfig probe = loop_config();
  probe.validate();
  synthetic.validate();
}

RunConfig parse_config_text(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config root must be a JSON object");

  check_keys(j, "", {"seed", "split", "labeled_budget", "encoder", "train", "idc", "loop",
                     "synthetic", "paths"});

  RunConfig cfg;
  bool encoder_seed_given = false, train_seed_given = false, synthetic_seed_given = false;

  if (j.contains("seed")) cfg.seed = get_u64(j.at("seed"), "seed");

  if (j.contains("split")) {
    const auto& s = j.at("split");
    if (!s.is_array() || s.size() != 3)
      throw std::invalid_argument("config key split: expected an array of 3 fractions");
    for (int i = 0; i < 3; ++i)
      cfg.split[static_cast<std::size_t>(i)] = get_double(s.at(i), "split[" + std::to_string(i) + "]");
  }
  if (j.contains("labeled_budget"))
    cfg.labeled_budget = get_int(j.at("labeled_budget"), "labeled_budget");

  if (j.contains("encoder")) {
    const auto& s = j.at("encoder");
    if (!s.is_object()) throw std::invalid_argument("config key encoder: expected an object");
    check_keys(s, "encoder",
               {"embed_dim", "out_dim", "normalize", "temperature", "init_scale", "seed"});
    maybe(s, "embed_dim", "encoder", cfg.encoder.embed_dim, get_int);
    maybe(s, "out_dim", "encoder", cfg.encoder.out_dim, get_int);
    maybe(s, "normalize", "encoder", cfg.encoder.normalize, get_bool);
    maybe(s, "temperature", "encoder", cfg.encoder.temperature, get_double);
    maybe(s, "init_scale", "encoder", cfg.encoder.init_scale, get_double);
    if (s.contains("seed")) {
      cfg.encoder.seed = get_u64(s.at("seed"), "encoder.seed");
      encoder_seed_given = true;
    }
  }

  if (j.contains("train")) {
    const auto& s = j.at("train");
    if (!s.is_object()) throw std::invalid_argument("config key train: expected an object");
    check_keys(s, "train",
               {"learning_rate", "batch_size", "epochs_per_iteration", "adam_beta1", "adam_beta2",
                "adam_eps", "symmetric", "seed"});
    maybe(s, "learning_rate", "train", cfg.train.learning_rate, get_double);
    maybe(s, "batch_size", "train", cfg.train.batch_size, get_int);
    maybe(s, "epochs_per_iteration", "train", cfg.train.epochs_per_iteration, get_int);
    maybe(s, "adam_beta1", "train", cfg.train.adam_beta1, get_double);
    maybe(s, "adam_beta2", "train", cfg.train.adam_beta2, get_double);
    maybe(s, "adam_eps", "train", cfg.train.adam_eps, get_double);
    maybe(s, "symmetric", "train", cfg.train.symmetric, get_bool);
    if (s.contains("seed")) {
      cfg.train.seed = get_u64(s.at("seed"), "train.seed");
      train_seed_given = true;
    }
  }

  if (j.contains("idc")) {
    const auto& s = j.at("idc");
    if (!s.is_object()) throw std::invalid_argument("config key idc: expected an object");
    check_keys(s, "idc", {"k"});
    maybe(s, "k", "idc", cfg.idc.k, get_int);
  }

  if (j.contains("loop")) {
    const auto& s = j.at("loop");
    if (!s.is_object()) throw std::invalid_argument("config key loop: expected an object");
    check_keys(s, "loop",
               {"max_iterations", "patience", "outer_max_iterations", "outer_patience",
                "finetune_epochs", "annotate_threads"});
    maybe(s, "max_iterations", "loop", cfg.loop.max_iterations, get_int);
    maybe(s, "patience", "loop", cfg.loop.patience, get_int);
    maybe(s, "outer_max_iterations", "loop", cfg.loop.outer_max_iterations, get_int);
    maybe(s, "outer_patience", "loop", cfg.loop.outer_patience, get_int);
    maybe(s, "finetune_epochs", "loop", cfg.loop.finetune_epochs, get_int);
    maybe(s, "annotate_threads", "loop", cfg.loop.annotate_threads, get_int);
  }

  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    if (!s.is_object()) throw std::invalid_argument("config key synthetic: expected an object");
    check_keys(s, "synthetic",
               {"n_topics", "n_docs", "sentences_per_doc", "topic_switch_prob", "vocab_per_topic",
                "shared_vocab", "tokens_per_sentence", "seed"});
    maybe(s, "n_topics", "synthetic", cfg.synthetic.n_topics, get_int);
    maybe(s, "n_docs", "synthetic", cfg.synthetic.n_docs, get_int);
    maybe(s, "sentences_per_doc", "synthetic", cfg.synthetic.sentences_per_doc, get_int);
    maybe(s, "topic_switch_prob", "synthetic", cfg.synthetic.topic_switch_prob, get_double);
    maybe(s, "vocab_per_topic", "synthetic", cfg.synthetic.vocab_per_topic, get_int);
    maybe(s, "shared_vocab", "synthetic", cfg.synthetic.shared_vocab, get_int);
    maybe(s, "tokens_per_sentence", "synthetic", cfg.synthetic.tokens_per_sentence, get_int);
    if (s.contains("seed")) {
      cfg.synthetic.seed = get_u64(s.at("seed"), "synthetic.seed");
      synthetic_seed_given = true;
    }
  }

  if (j.contains("paths")) {
    const auto& s = j.at("paths");
    if (!s.is_object()) throw std::invalid_argument("config key paths: expected an object");
    check_keys(s, "paths", {"corpus", "pairs", "out"});
    maybe(s, "corpus", "paths", cfg.paths.corpus, get_string);
    maybe(s, "pairs", "paths", cfg.paths.pairs, get_string);
    maybe(s, "out", "paths", cfg.paths.out, get_string);
  }

  if (!encoder_seed_given) cfg.encoder.seed = mix_seed(cfg.seed, kEncoderSeedTag);
  if (!train_seed_given) cfg.train.seed = mix_seed(cfg.seed, kTrainSeedTag);
  if (!synthetic_seed_given) cfg.synthetic.seed = mix_seed(cfg.seed, kSyntheticSeedTag);

  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void reseed(RunConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.encoder.seed = mix_seed(seed, kEncoderSeedTag);
  cfg.train.seed = mix_seed(seed, kTrainSeedTag);
  cfg.synthetic.seed = mix_seed(seed, kSyntheticSeedTag);
}

std::string resolved_config_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["split"] = {cfg.split[0], cfg.split[1], cfg.split[2]};
  j["labeled_budget"] = cfg.labeled_budget;
  j["encoder"] = {{"embed_dim", cfg.encoder.embed_dim},
                  {"out_dim", cfg.encoder.out_dim},
                  {"normalize", cfg.encoder.normalize},
                  {"temperature", cfg.encoder.temperature},
                  {"init_scale", cfg.encoder.init_scale},
                  {"seed", cfg.encoder.seed}};
  j["train"] = {{"learning_rate", cfg.train.learning_rate},
                {"batch_size", cfg.train.batch_size},
                {"epochs_per_iteration", cfg.train.epochs_per_iteration},
                {"adam_beta1", cfg.train.adam_beta1},
                {"adam_beta2", cfg.train.adam_beta2},
                {"adam_eps", cfg.train.adam_eps},
                {"symmetric", cfg.train.symmetric},
                {"seed", cfg.train.seed}};
  j["idc"] = {{"k", cfg.idc.k}};
  j["loop"] = {{"max_iterations", cfg.loop.max_iterations},
               {"patience", cfg.loop.patience},
               {"outer_max_iterations", cfg.loop.outer_max_iterations},
               {"outer_patience", cfg.loop.outer_patience},
               {"finetune_epochs", cfg.loop.finetune_epochs},
               {"annotate_threads", cfg.loop.annotate_threads}};
  j["synthetic"] = {{"n_topics", cfg.synthetic.n_topics},
                    {"n_docs", cfg.synthetic.n_docs},
                    {"sentences_per_doc", cfg.synthetic.sentences_per_doc},
                    {"topic_switch_prob", cfg.synthetic.topic_switch_prob},
                    {"vocab_per_topic", cfg.synthetic.vocab_per_topic},
                    {"shared_vocab", cfg.synthetic.shared_vocab},
                    {"tokens_per_sentence", cfg.synthetic.tokens_per_sentence},
                    {"seed", cfg.synthetic.seed}};
  j["paths"] = {{"corpus", cfg.paths.corpus}, {"pairs", cfg.paths.pairs}, {"out", cfg.paths.out}};
  return j.dump(2) + "\n";
}

void write_resolved_config(const RunConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::string path = out_dir + "/resolved_config.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write resolved config: " + path);
  out << resolved_config_json(cfg);
}

}  // namespace corrmine
