#include "im2markup/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "im2markup/checkpoint.hpp"
#include "im2markup/error.hpp"
#include "json.hpp"

namespace im2markup {

using nlohmann::json;

void ModelConfig::validate() const {
  if (cnn_channels.empty()) {
    throw ConfigError("model.cnn_channels: must name at least one layer");
  }
  for (int c : cnn_channels) {
    if (c < 1) throw ConfigError("model.cnn_channels: non-positive width");
  }
  const int factor = 1 << conv_depth();
  if (canvas_h % factor != 0 || canvas_w % factor != 0) {
    throw ConfigError("model.canvas: " + std::to_string(canvas_h) + "x" +
                      std::to_string(canvas_w) + " is not divisible by 2^" +
                      std::to_string(conv_depth()) +
                      " required by the pooling pyramid");
  }
  if (pool_stride_h < 1 || pool_stride_w < 1 ||
      raw_grid_h() % pool_stride_h != 0 || raw_grid_w() % pool_stride_w != 0) {
    throw ConfigError("model.pool_stride: " + std::to_string(pool_stride_h) +
                      "x" + std::to_string(pool_stride_w) +
                      " does not divide the feature grid " +
                      std::to_string(raw_grid_h()) + "x" +
                      std::to_string(raw_grid_w()));
  }
  if (lstm_layers < 1) throw ConfigError("model.lstm_layers: must be >= 1");
  if (lstm_units < 1) throw ConfigError("model.lstm_units: must be >= 1");
  if (embed_dim < 1) throw ConfigError("model.embed_dim: must be >= 1");
  if (init_mode != "learned" && init_mode != "zeros") {
    throw ConfigError("model.init_mode: expected 'learned' or 'zeros', got '" +
                      init_mode + "'");
  }
  if (init_hidden < 1) throw ConfigError("model.init_hidden: must be >= 1");
  if (vocab_total < 4) {
    throw ConfigError("model: vocabulary must hold the specials plus at "
                      "least one token");
  }
  if (num_locations() < 2) {
    throw ConfigError("model: pooled grid has fewer than 2 locations");
  }
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "canvas=" << canvas_h << "x" << canvas_w << ";channels=";
  for (size_t i = 0; i < cnn_channels.size(); ++i) {
    if (i) os << ",";
    os << cnn_channels[i];
  }
  os << ";stride=" << pool_stride_h << "x" << pool_stride_w
     << ";lstm_layers=" << lstm_layers << ";lstm_units=" << lstm_units
     << ";embed_dim=" << embed_dim << ";init_mode=" << init_mode
     << ";init_hidden=" << init_hidden << ";vocab_total=" << vocab_total;
  return os.str();
}

uint64_t ModelConfig::digest() const { return fnv1a64(canonical()); }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.canvas_h = 32;
  c.canvas_w = 64;
  c.cnn_channels = {8, 8, 8};
  c.pool_stride_h = 4;
  c.pool_stride_w = 1;
  c.lstm_layers = 2;
  c.lstm_units = 16;
  c.embed_dim = 8;
  c.init_mode = "learned";
  return c;
}

ModelConfig ModelConfig::i2l_strips() {
  ModelConfig c;  // defaults are the strips geometry
  return c;
}

ModelConfig ModelConfig::i2l_nopool() {
  ModelConfig c;
  c.pool_stride_h = 1;
  c.pool_stride_w = 1;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "tiny") return tiny();
  if (name == "i2l-strips") return i2l_strips();
  if (name == "i2l-nopool") return i2l_nopool();
  throw ConfigError("model.preset: unknown preset '" + name +
                    "' (expected tiny, i2l-strips or i2l-nopool)");
}

void TrainConfig::validate() const {
  if (lambda_r < 0) throw ConfigError("train.lambda_r: must be >= 0");
  if (lambda_a < 0) throw ConfigError("train.lambda_a: must be >= 0");
  if (ase_target < 0 || ase_target > 100) {
    throw ConfigError("train.ase_target: must lie in [0, 100]");
  }
  if (lr <= 0) throw ConfigError("train.lr: must be > 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    throw ConfigError("train.beta1/beta2: must lie in [0, 1)");
  }
  if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
  if (max_steps < 0) throw ConfigError("train.max_steps: must be >= 0");
  if (max_epochs < 1) throw ConfigError("train.max_epochs: must be >= 1");
  if (eval_period < 1) throw ConfigError("train.eval_period: must be >= 1");
  if (valid_fraction < 0 || valid_fraction >= 1) {
    throw ConfigError("train.valid_fraction: must lie in [0, 1)");
  }
  if (beam_width < 1) throw ConfigError("train.beam_width: must be >= 1");
  if (max_decode_len < 1) {
    throw ConfigError("train.max_decode_len: must be >= 1");
  }
  if (bleu_window < 1) throw ConfigError("train.bleu_window: must be >= 1");
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& section) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError("config: unknown field '" + section + "." + it.key() +
                        "'");
    }
  }
}

ModelConfig model_from_json(const json& j) {
  ModelConfig c;
  if (j.contains("preset")) {
    c = ModelConfig::preset(j.at("preset").get<std::string>());
  }
  reject_unknown(j,
                 {"preset", "canvas", "cnn_channels", "pool_stride",
                  "lstm_layers", "lstm_units", "embed_dim", "init_mode",
                  "init_hidden"},
                 "model");
  if (j.contains("canvas")) {
    const auto canvas = j.at("canvas");
    if (!canvas.is_array() || canvas.size() != 2) {
      throw ConfigError("model.canvas: expected [height, width]");
    }
    c.canvas_h = canvas.at(0).get<int>();
    c.canvas_w = canvas.at(1).get<int>();
  }
  if (j.contains("cnn_channels")) {
    c.cnn_channels = j.at("cnn_channels").get<std::vector<int>>();
  }
  if (j.contains("pool_stride")) {
    const auto stride = j.at("pool_stride");
    if (!stride.is_array() || stride.size() != 2) {
      throw ConfigError("model.pool_stride: expected [rows, cols]");
    }
    c.pool_stride_h = stride.at(0).get<int>();
    c.pool_stride_w = stride.at(1).get<int>();
  }
  if (j.contains("lstm_layers")) c.lstm_layers = j.at("lstm_layers").get<int>();
  if (j.contains("lstm_units")) c.lstm_units = j.at("lstm_units").get<int>();
  if (j.contains("embed_dim")) c.embed_dim = j.at("embed_dim").get<int>();
  if (j.contains("init_mode")) {
    c.init_mode = j.at("init_mode").get<std::string>();
  }
  if (j.contains("init_hidden")) c.init_hidden = j.at("init_hidden").get<int>();
  return c;
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  reject_unknown(
      j,
      {"lr", "beta1", "beta2", "adam_eps", "lambda_r", "lambda_a",
       "ase_target", "batch_size", "max_steps", "max_epochs", "eval_period",
       "valid_fraction", "beam_width", "max_decode_len", "bleu_window",
       "stop_exact_match", "stop_train_bleu", "seed"},
      "train");
  auto get = [&](const char* key, auto& slot) {
    if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
  };
  get("lr", c.lr);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("adam_eps", c.adam_eps);
  get("lambda_r", c.lambda_r);
  get("lambda_a", c.lambda_a);
  get("ase_target", c.ase_target);
  get("batch_size", c.batch_size);
  get("max_steps", c.max_steps);
  get("max_epochs", c.max_epochs);
  get("eval_period", c.eval_period);
  get("valid_fraction", c.valid_fraction);
  get("beam_width", c.beam_width);
  get("max_decode_len", c.max_decode_len);
  get("bleu_window", c.bleu_window);
  get("stop_exact_match", c.stop_exact_match);
  get("stop_train_bleu", c.stop_train_bleu);
  get("seed", c.seed);
  return c;
}

}  // namespace

RunFileConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  RunFileConfig out;
  try {
    if (j.contains("model")) out.model = model_from_json(j.at("model"));
    if (j.contains("train")) out.train = train_from_json(j.at("train"));
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  out.train.validate();
  return out;
}

void save_run_config(const std::string& path, const RunFileConfig& config) {
  json j;
  j["model"]["canvas"] = {config.model.canvas_h, config.model.canvas_w};
  j["model"]["cnn_channels"] = config.model.cnn_channels;
  j["model"]["pool_stride"] = {config.model.pool_stride_h,
                               config.model.pool_stride_w};
  j["model"]["lstm_layers"] = config.model.lstm_layers;
  j["model"]["lstm_units"] = config.model.lstm_units;
  j["model"]["embed_dim"] = config.model.embed_dim;
  j["model"]["init_mode"] = config.model.init_mode;
  j["model"]["init_hidden"] = config.model.init_hidden;
  j["train"]["lr"] = config.train.lr;
  j["train"]["beta1"] = config.train.beta1;
  j["train"]["beta2"] = config.train.beta2;
  j["train"]["adam_eps"] = config.train.adam_eps;
  j["train"]["lambda_r"] = config.train.lambda_r;
  j["train"]["lambda_a"] = config.train.lambda_a;
  j["train"]["ase_target"] = config.train.ase_target;
  j["train"]["batch_size"] = config.train.batch_size;
  j["train"]["max_steps"] = config.train.max_steps;
  j["train"]["max_epochs"] = config.train.max_epochs;
  j["train"]["eval_period"] = config.train.eval_period;
  j["train"]["valid_fraction"] = config.train.valid_fraction;
  j["train"]["beam_width"] = config.train.beam_width;
  j["train"]["max_decode_len"] = config.train.max_decode_len;
  j["train"]["bleu_window"] = config.train.bleu_window;
  j["train"]["stop_exact_match"] = config.train.stop_exact_match;
  j["train"]["stop_train_bleu"] = config.train.stop_train_bleu;
  j["train"]["seed"] = config.train.seed;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("config: cannot write " + path);
  os << j.dump(2) << "\n";
}

}  // namespace im2markup
