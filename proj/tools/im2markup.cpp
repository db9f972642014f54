#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "im2markup/checkpoint.hpp"
#include "im2markup/config.hpp"
#include "im2markup/dataset.hpp"
#include "im2markup/decoding.hpp"
#include "im2markup/error.hpp"
#include "im2markup/heatmap.hpp"
#include "im2markup/metrics.hpp"
#include "im2markup/model.hpp"
#include "im2markup/synth.hpp"
#include "im2markup/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace im2markup;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

std::string dirname_of(const std::string& path) {
  const fs::path p(path);
  return p.has_parent_path() ? p.parent_path().string() : std::string(".");
}

std::vector<TokenSeq> read_token_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::vector<TokenSeq> out;
  std::string line;
  while (std::getline(is, line)) out.push_back(split_tokens(line));
  return out;
}

// ---- dataset ----

struct DatasetGenArgs {
  std::string out_dir;
  int count = 1000;
  uint64_t seed = 7;
  std::string grammar = "full";  // full | linear
  int min_atoms = 2;
  int max_atoms = 6;
  int num_glyphs = 10;
  int freq_threshold = 1;
  int max_w = 1086;
  int max_h = 126;
  int max_len = 150;
  double test_frac = 0.0;
};

int run_dataset_gen(const DatasetGenArgs& args) {
  GrammarConfig grammar;
  grammar.min_atoms = args.min_atoms;
  grammar.max_atoms = args.max_atoms;
  grammar.num_glyphs = args.num_glyphs;
  if (args.grammar == "linear") {
    grammar.enable_scripts = false;
    grammar.enable_fractions = false;
  } else if (args.grammar != "full") {
    throw ConfigError("--grammar: expected 'full' or 'linear'");
  }
  Manifest manifest =
      synth_generate(args.count, grammar, args.seed, args.out_dir);
  const Vocab vocab = build_vocab(manifest, args.freq_threshold);
  FilterStats stats;
  Manifest filtered = filter_dataset(manifest, vocab, args.max_w, args.max_h,
                                     args.max_len, args.out_dir, &stats);
  if (args.test_frac > 0) {
    Rng rng(args.seed ^ 0x7e57);
    for (auto& rec : filtered.records) {
      if (rng.uniform() < args.test_frac) rec.split = "test";
    }
  }
  filtered.save((fs::path(args.out_dir) / "manifest.jsonl").string());
  vocab.save((fs::path(args.out_dir) / "vocab.txt").string());
  std::cout << "generated " << manifest.size() << " samples, filter: "
            << stats.summary() << "\n";
  std::cout << "vocabulary: " << vocab.total() << " entries ("
            << vocab.num_classes() << " classes)\n";
  std::cout << "wrote " << (fs::path(args.out_dir) / "manifest.jsonl").string()
            << "\n";
  return kExitOk;
}

int run_dataset_stats(const std::string& manifest_path) {
  const Manifest manifest = Manifest::load(manifest_path);
  std::set<std::string> tokens;
  std::map<size_t, int> length_histogram;
  std::map<std::string, int> split_counts;
  for (const auto& rec : manifest.records) {
    const auto toks = split_tokens(rec.tokens);
    for (const auto& t : toks) tokens.insert(t);
    ++length_histogram[toks.size()];
    ++split_counts[rec.split];
  }
  std::cout << "records: " << manifest.size() << "\n";
  std::cout << "unique tokens: " << tokens.size() << "\n";
  for (const auto& [split, count] : split_counts) {
    std::cout << "split " << split << ": " << count << "\n";
  }
  std::cout << "length histogram (tokens -> count):\n";
  for (const auto& [len, count] : length_histogram) {
    std::cout << "  " << len << " -> " << count << "\n";
  }
  return kExitOk;
}

// ---- train ----

struct TrainArgs {
  std::string config_path;
  std::string manifest_path;
  std::string out_dir;
  std::string image_root;
  std::string vocab_path;
  int freq_threshold = 1;
  uint64_t seed = 0;
  bool seed_set = false;
};

int run_train(const TrainArgs& args) {
  RunFileConfig config = load_run_config(args.config_path);
  if (args.seed_set) config.train.seed = args.seed;
  const Manifest manifest = Manifest::load(args.manifest_path);
  const std::string image_root =
      args.image_root.empty() ? dirname_of(args.manifest_path)
                              : args.image_root;
  const Vocab vocab = args.vocab_path.empty()
                          ? build_vocab(manifest, args.freq_threshold)
                          : Vocab::load(args.vocab_path);
  config.model.vocab_total = vocab.total();
  config.model.validate();

  std::error_code ec;
  fs::create_directories(args.out_dir, ec);
  if (ec) throw IoError("cannot create " + args.out_dir);
  save_run_config((fs::path(args.out_dir) / "config.json").string(), config);
  vocab.save((fs::path(args.out_dir) / "vocab.txt").string());

  ModelT<float> model(config.model);
  model.init_params(config.train.seed);
  const TrainSummary summary = train_model(model, config.train, manifest,
                                           image_root, vocab, args.out_dir);
  std::cout << "steps: " << summary.steps << " (epochs: " << summary.epochs
            << ")\n";
  std::cout << "train bleu (window): " << summary.final_train_bleu << "\n";
  if (!summary.valid_indices.empty()) {
    std::cout << "best validation bleu: " << summary.best_valid_bleu << "\n";
  }
  if (!summary.best_checkpoint.empty()) {
    std::cout << "best checkpoint: " << summary.best_checkpoint << "\n";
  }
  if (summary.nan_abort) {
    std::cerr << "aborted: loss became non-finite; last good checkpoint "
                 "retained\n";
    return kExitNumeric;
  }
  return kExitOk;
}

// ---- infer ----

struct InferArgs {
  std::string checkpoint;
  std::vector<std::string> images;
  std::string config_path;
  std::string vocab_path;
  int beam_width = 10;
  int max_len = 160;
  std::string emit_attention;
  std::string out_path;
};

int run_infer(const InferArgs& args) {
  const std::string base = dirname_of(args.checkpoint);
  const std::string config_path =
      args.config_path.empty() ? base + "/config.json" : args.config_path;
  const std::string vocab_path =
      args.vocab_path.empty() ? base + "/vocab.txt" : args.vocab_path;
  RunFileConfig config = load_run_config(config_path);
  const Vocab vocab = Vocab::load(vocab_path);
  config.model.vocab_total = vocab.total();
  config.model.validate();
  ModelT<float> model(config.model);
  load_checkpoint(args.checkpoint, config.model.digest(), model.params());

  std::ofstream out_file;
  if (!args.out_path.empty()) {
    out_file.open(args.out_path, std::ios::trunc);
    if (!out_file) throw IoError("cannot write " + args.out_path);
  }
  for (size_t i = 0; i < args.images.size(); ++i) {
    const Image img = load_image(args.images[i]);
    DecodeResult result =
        beam_search(model, img, args.beam_width, args.max_len);
    const auto tokens = vocab.decode(result.token_ids);
    const std::string line = join_tokens(tokens);
    std::cout << line << "\n";
    if (out_file) out_file << line << "\n";
    if (!args.emit_attention.empty()) {
      result.trace.tokens.clear();
      for (int id : result.token_ids) {
        result.trace.tokens.push_back(vocab.token(id));
      }
      std::string path = args.emit_attention;
      if (args.images.size() > 1) {
        const fs::path p(path);
        path = (p.parent_path() /
                (p.stem().string() + "_" + std::to_string(i) +
                 p.extension().string()))
                   .string();
      }
      result.trace.save(path);
    }
  }
  return kExitOk;
}

// ---- evaluate ----

struct EvaluateArgs {
  std::string hyp_file;
  std::string ref_file;
  std::string image_dir_a;
  std::string image_dir_b;
  std::string out_path;
};

int run_evaluate(const EvaluateArgs& args) {
  const auto hyps = read_token_file(args.hyp_file);
  const auto refs = read_token_file(args.ref_file);
  if (hyps.size() != refs.size()) {
    throw ContractError("evaluate: " + std::to_string(hyps.size()) +
                        " hypotheses vs " + std::to_string(refs.size()) +
                        " references");
  }
  CorpusScore score = score_corpus(hyps, refs);
  json report;
  report["bleu"] = score.bleu;
  report["mean_edit_distance"] = score.mean_edit_distance;
  report["pairs"] = score.pair_count;
  if (!args.image_dir_a.empty() || !args.image_dir_b.empty()) {
    if (args.image_dir_a.empty() || args.image_dir_b.empty()) {
      throw ConfigError("evaluate: both --image-dir-a and --image-dir-b are "
                        "required for visual matching");
    }
    size_t matched = 0, compared = 0;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(args.image_dir_a)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      const fs::path other = fs::path(args.image_dir_b) / file.filename();
      if (!fs::exists(other)) continue;
      ++compared;
      if (visual_match(load_image(file.string()), load_image(other.string()))) {
        ++matched;
      }
    }
    if (compared == 0) {
      throw ContractError("evaluate: no image pairs shared a filename");
    }
    report["visual_match_rate"] =
        static_cast<double>(matched) / static_cast<double>(compared);
    report["image_pairs"] = compared;
  }
  const std::string text = report.dump(2);
  std::cout << text << "\n";
  if (!args.out_path.empty()) {
    std::ofstream os(args.out_path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + args.out_path);
    os << text << "\n";
  }
  return kExitOk;
}

// ---- heatmap ----

struct HeatmapArgs {
  std::string trace_path;
  std::string image_path;
  std::string config_path;
  std::string out_dir;
};

int run_heatmap(const HeatmapArgs& args) {
  const RunFileConfig config = load_run_config(args.config_path);
  const AttentionTrace trace = AttentionTrace::load(args.trace_path);
  const GridGeometry grid{config.model.grid_h(), config.model.grid_w()};
  for (const auto& row : trace.steps) {
    if (static_cast<int>(row.size()) != grid.locations()) {
      throw ContractError(
          "heatmap: trace carries " + std::to_string(row.size()) +
          " weights per step, config grid is " + std::to_string(grid.rows) +
          "x" + std::to_string(grid.cols));
    }
  }
  const Image img = load_image(args.image_path);
  const Image canvas =
      center_on_canvas(img, config.model.canvas_w, config.model.canvas_h);
  emit_heatmaps(trace, canvas, grid, args.out_dir);
  std::cout << "wrote " << trace.length() << " step overlays and strip.png to "
            << args.out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"image-to-markup transducer: synthetic data, training, "
               "inference, evaluation and attention heat maps"};
  app.require_subcommand(1);

  // dataset
  auto* dataset = app.add_subcommand("dataset", "corpus utilities");
  dataset->require_subcommand(1);
  DatasetGenArgs gen_args;
  auto* gen = dataset->add_subcommand("gen", "generate a synthetic corpus");
  gen->add_option("--out", gen_args.out_dir, "output directory")->required();
  gen->add_option("--n", gen_args.count, "number of samples");
  gen->add_option("--seed", gen_args.seed, "generator seed");
  gen->add_option("--grammar", gen_args.grammar, "full | linear");
  gen->add_option("--min-atoms", gen_args.min_atoms, "shortest formula");
  gen->add_option("--max-atoms", gen_args.max_atoms, "longest formula");
  gen->add_option("--num-glyphs", gen_args.num_glyphs, "glyph alphabet size");
  gen->add_option("--freq-threshold", gen_args.freq_threshold,
                  "vocabulary frequency threshold");
  gen->add_option("--max-w", gen_args.max_w, "image width limit");
  gen->add_option("--max-h", gen_args.max_h, "image height limit");
  gen->add_option("--max-len", gen_args.max_len, "formula token limit");
  gen->add_option("--test-frac", gen_args.test_frac,
                  "fraction tagged as the test split");

  std::string stats_manifest;
  auto* stats = dataset->add_subcommand("stats", "summarize a manifest");
  stats->add_option("--manifest", stats_manifest, "manifest path")->required();

  // train
  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", train_args.config_path, "run config JSON")
      ->required();
  train->add_option("--manifest", train_args.manifest_path, "training data")
      ->required();
  train->add_option("--out", train_args.out_dir, "run directory")->required();
  train->add_option("--image-root", train_args.image_root,
                    "base directory for image paths");
  train->add_option("--vocab", train_args.vocab_path,
                    "vocabulary file (default: built from the manifest)");
  train->add_option("--freq-threshold", train_args.freq_threshold,
                    "vocabulary frequency threshold");
  auto* seed_opt =
      train->add_option("--seed", train_args.seed, "override train.seed");

  // infer
  InferArgs infer_args;
  auto* infer = app.add_subcommand("infer", "decode images to markup");
  infer->add_option("--checkpoint", infer_args.checkpoint, "checkpoint file")
      ->required();
  infer->add_option("--image", infer_args.images, "image file(s)")
      ->required()
      ->expected(-1);
  infer->add_option("--config", infer_args.config_path,
                    "run config (default: sibling of the checkpoint)");
  infer->add_option("--vocab", infer_args.vocab_path,
                    "vocabulary (default: sibling of the checkpoint)");
  infer->add_option("--beam-width", infer_args.beam_width, "beam width");
  infer->add_option("--max-len", infer_args.max_len, "decode length cap");
  infer->add_option("--emit-attention", infer_args.emit_attention,
                    "write the attention trace JSONL here");
  infer->add_option("--out", infer_args.out_path, "write predictions here");

  // evaluate
  EvaluateArgs eval_args;
  auto* evaluate = app.add_subcommand("evaluate", "score hypotheses");
  evaluate
      ->add_option("--hyp-file", eval_args.hyp_file, "hypotheses, one per line")
      ->required();
  evaluate
      ->add_option("--ref-file", eval_args.ref_file, "references, one per line")
      ->required();
  evaluate->add_option("--image-dir-a", eval_args.image_dir_a,
                       "rendered hypothesis images");
  evaluate->add_option("--image-dir-b", eval_args.image_dir_b,
                       "rendered reference images");
  evaluate->add_option("--out", eval_args.out_path, "write the JSON report");

  // heatmap
  HeatmapArgs heatmap_args;
  auto* heatmap = app.add_subcommand("heatmap", "render attention overlays");
  heatmap->add_option("--trace", heatmap_args.trace_path, "attention trace")
      ->required();
  heatmap->add_option("--image", heatmap_args.image_path, "source image")
      ->required();
  heatmap->add_option("--config", heatmap_args.config_path, "run config JSON")
      ->required();
  heatmap->add_option("--out", heatmap_args.out_dir, "output directory")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return run_dataset_gen(gen_args);
    if (stats->parsed()) return run_dataset_stats(stats_manifest);
    if (train->parsed()) {
      train_args.seed_set = seed_opt->count() > 0;
      return run_train(train_args);
    }
    if (infer->parsed()) return run_infer(infer_args);
    if (evaluate->parsed()) return run_evaluate(eval_args);
    if (heatmap->parsed()) return run_heatmap(heatmap_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
