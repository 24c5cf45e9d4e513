#include "ecgtext/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "ecgtext/error.hpp"
#include "ecgtext/signal_io.hpp"
#include "ecgtext/text_embed.hpp"
#include "ecgtext/trainer.hpp"
#include "ecgtext/zeroshot.hpp"

namespace ecgtext::cli {

namespace fs = std::filesystem;

nlohmann::json to_json(const RunConfig& c) {
  return nlohmann::json{{"manifest", c.manifest},
                        {"embeddings", c.embeddings},
                        {"checkpoint", c.checkpoint},
                        {"catalog", c.catalog},
                        {"out", c.out},
                        {"split", c.split},
                        {"stub_text", c.stub_text},
                        {"stub_dim", c.stub_dim},
                        {"stub_seed", c.stub_seed},
                        {"seed", c.seed},
                        {"epochs", c.epochs},
                        {"batch_size", c.batch_size},
                        {"learning_rate", c.learning_rate},
                        {"weight_decay", c.weight_decay},
                        {"shuffle", c.shuffle},
                        {"decoupled_weight_decay", c.decoupled_weight_decay},
                        {"clip_norm", c.clip_norm},
                        {"checkpoint_every", c.checkpoint_every},
                        {"tau_init", c.tau_init},
                        {"projection_dim", c.projection_dim},
                        {"in_leads", c.in_leads},
                        {"stage_channels", c.stage_channels},
                        {"blocks_per_stage", c.blocks_per_stage},
                        {"sample_rate_hz", c.sample_rate_hz},
                        {"window_seconds", c.window_seconds},
                        {"zscore", c.zscore}};
}

void apply_config_file(RunConfig& c, const nlohmann::json& file) {
  if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
  static const std::set<std::string> known{
      "manifest",      "embeddings",    "checkpoint",      "catalog",
      "out",           "split",         "stub_text",       "stub_dim",
      "stub_seed",     "seed",          "epochs",          "batch_size",
      "learning_rate", "weight_decay",  "shuffle",         "decoupled_weight_decay",
      "clip_norm",     "checkpoint_every", "tau_init",     "projection_dim",
      "in_leads",      "stage_channels", "blocks_per_stage", "sample_rate_hz",
      "window_seconds", "zscore"};
  for (const auto& [key, value] : file.items()) {
    if (!known.count(key)) throw ConfigError("config file: unknown key '" + key + "'");
  }
  try {
    if (file.contains("manifest")) c.manifest = file["manifest"].get<std::string>();
    if (file.contains("embeddings")) c.embeddings = file["embeddings"].get<std::string>();
    if (file.contains("checkpoint")) c.checkpoint = file["checkpoint"].get<std::string>();
    if (file.contains("catalog")) c.catalog = file["catalog"].get<std::string>();
    if (file.contains("out")) c.out = file["out"].get<std::string>();
    if (file.contains("split")) c.split = file["split"].get<std::string>();
    if (file.contains("stub_text")) c.stub_text = file["stub_text"].get<bool>();
    if (file.contains("stub_dim")) c.stub_dim = file["stub_dim"].get<int>();
    if (file.contains("stub_seed")) c.stub_seed = file["stub_seed"].get<std::uint64_t>();
    if (file.contains("seed")) c.seed = file["seed"].get<std::uint64_t>();
    if (file.contains("epochs")) c.epochs = file["epochs"].get<int>();
    if (file.contains("batch_size")) c.batch_size = file["batch_size"].get<int>();
    if (file.contains("learning_rate")) c.learning_rate = file["learning_rate"].get<double>();
    if (file.contains("weight_decay")) c.weight_decay = file["weight_decay"].get<double>();
    if (file.contains("shuffle")) c.shuffle = file["shuffle"].get<bool>();
    if (file.contains("decoupled_weight_decay"))
      c.decoupled_weight_decay = file["decoupled_weight_decay"].get<bool>();
    if (file.contains("clip_norm")) c.clip_norm = file["clip_norm"].get<double>();
    if (file.contains("checkpoint_every"))
      c.checkpoint_every = file["checkpoint_every"].get<int>();
    if (file.contains("tau_init")) c.tau_init = file["tau_init"].get<double>();
    if (file.contains("projection_dim")) c.projection_dim = file["projection_dim"].get<int>();
    if (file.contains("in_leads")) c.in_leads = file["in_leads"].get<int>();
    if (file.contains("stage_channels"))
      c.stage_channels = file["stage_channels"].get<std::vector<int>>();
    if (file.contains("blocks_per_stage"))
      c.blocks_per_stage = file["blocks_per_stage"].get<std::vector<int>>();
    if (file.contains("sample_rate_hz")) c.sample_rate_hz = file["sample_rate_hz"].get<double>();
    if (file.contains("window_seconds")) c.window_seconds = file["window_seconds"].get<double>();
    if (file.contains("zscore")) c.zscore = file["zscore"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config file: ") + e.what());
  }
}

namespace {

using Scalar = float;  // training-mode precision

struct FlagSet {
  RunConfig values;
  std::string config_file;
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> appliers;

  template <typename T>
  void track(CLI::Option* opt, T RunConfig::*field) {
    appliers.emplace_back(opt, [this, field](RunConfig& c) { c.*field = values.*field; });
  }

  RunConfig resolve() const {
    RunConfig resolved;
    if (!config_file.empty()) {
      std::ifstream f(config_file);
      if (!f) throw LoadError("config file not found: " + config_file);
      nlohmann::json j;
      try {
        f >> j;
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + config_file + ": " + e.what());
      }
      apply_config_file(resolved, j);
    }
    for (const auto& [opt, apply] : appliers) {
      if (opt->count() > 0) apply(resolved);
    }
    return resolved;
  }
};

void add_common_flags(CLI::App* cmd, FlagSet& flags) {
  cmd->add_option("--config", flags.config_file, "JSON config file; flags override");
  flags.track(cmd->add_option("--manifest", flags.values.manifest, "dataset manifest (JSONL)"),
              &RunConfig::manifest);
  flags.track(cmd->add_option("--embeddings", flags.values.embeddings,
                              "precomputed text-embedding table"),
              &RunConfig::embeddings);
  flags.track(cmd->add_flag("--stub-text", flags.values.stub_text,
                            "use the deterministic stub text encoder"),
              &RunConfig::stub_text);
  flags.track(cmd->add_option("--stub-dim", flags.values.stub_dim, "stub embedding dimension"),
              &RunConfig::stub_dim);
  flags.track(cmd->add_option("--stub-seed", flags.values.stub_seed, "stub encoder seed"),
              &RunConfig::stub_seed);
  flags.track(cmd->add_option("--checkpoint", flags.values.checkpoint, "model checkpoint path"),
              &RunConfig::checkpoint);
  flags.track(cmd->add_option("--catalog", flags.values.catalog, "class catalog (JSON)"),
              &RunConfig::catalog);
  flags.track(cmd->add_option("--out", flags.values.out, "output directory (or file)"),
              &RunConfig::out);
  flags.track(cmd->add_option("--seed", flags.values.seed, "run seed"), &RunConfig::seed);
  flags.track(cmd->add_option("--epochs", flags.values.epochs, "training epochs"),
              &RunConfig::epochs);
  flags.track(cmd->add_option("--batch-size", flags.values.batch_size, "contrastive batch size"),
              &RunConfig::batch_size);
  flags.track(cmd->add_option("--lr", flags.values.learning_rate, "learning rate"),
              &RunConfig::learning_rate);
  flags.track(cmd->add_option("--weight-decay", flags.values.weight_decay, "weight decay"),
              &RunConfig::weight_decay);
  flags.track(cmd->add_option("--split", flags.values.split,
                              "evaluation split (auto|train|test_superclass|test_form|test_rhythm)"),
              &RunConfig::split);
}

text::EmbeddingProvider make_provider(const RunConfig& c) {
  if (c.stub_text && !c.embeddings.empty()) {
    throw ConfigError("choose either --stub-text or --embeddings, not both");
  }
  if (c.stub_text) return text::EmbeddingProvider::stub(c.stub_dim, c.stub_seed);
  if (c.embeddings.empty()) {
    throw ConfigError("a text source is required: --embeddings <file> or --stub-text");
  }
  return text::load_precomputed(c.embeddings);
}

EncoderConfig encoder_config_of(const RunConfig& c) {
  EncoderConfig cfg;
  cfg.in_leads = c.in_leads;
  cfg.stage_channels = c.stage_channels;
  cfg.blocks_per_stage = c.blocks_per_stage;
  cfg.projection_dim = c.projection_dim;
  cfg.validate();
  return cfg;
}

io::LoadOptions load_options_of(const RunConfig& c) {
  io::LoadOptions opt;
  if (c.sample_rate_hz > 0.0) opt.resample_hz = c.sample_rate_hz;
  if (c.window_seconds > 0.0 && c.sample_rate_hz > 0.0) {
    opt.window_samples = static_cast<std::int64_t>(std::llround(c.sample_rate_hz * c.window_seconds));
  }
  opt.zscore = c.zscore;
  opt.target_leads = c.in_leads;
  return opt;
}

void echo_config(const RunConfig& c) {
  fs::create_directories(c.out);
  std::ofstream f(fs::path(c.out) / "resolved_config.json");
  if (!f) throw LoadError("cannot write resolved config under: " + c.out);
  f << to_json(c).dump(2) << "\n";
}

int cmd_pretrain(RunConfig c) {
  if (c.manifest.empty()) throw ConfigError("pretrain needs --manifest");
  if (c.out.empty()) c.out = "ecgtext_out";
  if (!fs::exists(c.manifest)) throw LoadError("manifest not found: " + c.manifest);
  auto provider = make_provider(c);

  echo_config(c);

  const auto items = io::load_dataset(c.manifest, load_options_of(c));
  const auto train_items = io::filter_split(items, io::Split::train);
  if (train_items.empty()) throw ConfigError("manifest has no train-split entries");

  const auto cfg = encoder_config_of(c);
  text::TextAdapter adapter =
      provider.dimension() == cfg.projection_dim
          ? text::TextAdapter::identity(cfg.projection_dim)
          : text::TextAdapter::random_frozen(provider.dimension(), cfg.projection_dim, c.seed);
  CheckpointExtras extras;
  if (!adapter.is_identity()) {
    extras.text_adapter_in_dim = static_cast<std::uint32_t>(adapter.in_dim());
    extras.text_adapter_seed = adapter.seed();
  }

  auto params = build_encoder<Scalar>(cfg, c.seed, c.tau_init);

  train::TrainConfig tc;
  tc.learning_rate = c.learning_rate;
  tc.weight_decay = c.weight_decay;
  tc.batch_size = c.batch_size;
  tc.epochs = c.epochs;
  tc.seed = c.seed;
  tc.shuffle = c.shuffle;
  tc.decoupled_weight_decay = c.decoupled_weight_decay;
  tc.clip_norm = c.clip_norm;
  tc.checkpoint_every = c.checkpoint_every;
  tc.checkpoint_dir = c.out;
  tc.checkpoint_extras = extras;

  const auto log = train::pretrain<Scalar>(train_items, provider, adapter, params, tc);

  {
    std::ofstream f(fs::path(c.out) / "train_log.jsonl");
    if (!f) throw LoadError("cannot write train log under: " + c.out);
    log.write_jsonl(f);
  }
  const fs::path ckpt = c.checkpoint.empty() ? fs::path(c.out) / "checkpoint.bin"
                                             : fs::path(c.checkpoint);
  save_checkpoint(params, ckpt, extras);

  std::cout << "pretrained " << c.epochs << " epoch(s), " << log.records.size()
            << " step(s) on " << train_items.size() << " pairs\n";
  if (!log.records.empty()) {
    std::cout << "final batch_loss " << log.records.back().batch_loss << ", tau "
              << log.records.back().temperature << "\n";
  }
  std::cout << "checkpoint: " << ckpt.string() << "\n";
  return 0;
}

io::Split eval_split_of(const RunConfig& c, const zeroshot::ClassCatalog& catalog,
                        bool* use_all_test) {
  *use_all_test = false;
  if (c.split == "auto") {
    switch (catalog.task) {
      case zeroshot::Task::diagnostic: return io::Split::test_superclass;
      case zeroshot::Task::form: return io::Split::test_form;
      case zeroshot::Task::rhythm: return io::Split::test_rhythm;
      case zeroshot::Task::external:
        *use_all_test = true;
        return io::Split::test_superclass;
    }
  }
  return io::split_from_string(c.split);
}

int cmd_eval_zeroshot(RunConfig c) {
  if (c.checkpoint.empty()) throw ConfigError("eval-zeroshot needs --checkpoint");
  if (c.catalog.empty()) throw ConfigError("eval-zeroshot needs --catalog");
  if (c.manifest.empty()) throw ConfigError("eval-zeroshot needs --manifest");
  if (c.out.empty()) c.out = "ecgtext_out";
  for (const auto& p : {c.checkpoint, c.catalog, c.manifest}) {
    if (!fs::exists(p)) throw LoadError("input not found: " + p);
  }
  auto catalog = zeroshot::ClassCatalog::from_file(c.catalog);
  auto loaded = load_checkpoint<Scalar>(c.checkpoint);
  auto provider = make_provider(c);

  echo_config(c);

  text::TextAdapter adapter = text::TextAdapter::identity(loaded.params.config.projection_dim);
  if (loaded.extras.text_adapter_in_dim > 0) {
    if (provider.dimension() != static_cast<int>(loaded.extras.text_adapter_in_dim)) {
      throw ConfigError("provider dimension " + std::to_string(provider.dimension()) +
                        " does not match the checkpoint's text adapter input " +
                        std::to_string(loaded.extras.text_adapter_in_dim));
    }
    adapter = text::TextAdapter::random_frozen(static_cast<int>(loaded.extras.text_adapter_in_dim),
                                               loaded.params.config.projection_dim,
                                               loaded.extras.text_adapter_seed);
  } else if (provider.dimension() != loaded.params.config.projection_dim) {
    throw ConfigError("provider dimension " + std::to_string(provider.dimension()) +
                      " does not match the model's embedding dimension " +
                      std::to_string(loaded.params.config.projection_dim));
  }

  RunConfig ingest = c;
  ingest.in_leads = loaded.params.config.in_leads;
  auto items = io::load_dataset(c.manifest, load_options_of(ingest));
  bool use_all_test = false;
  const io::Split split = eval_split_of(c, catalog, &use_all_test);
  std::vector<io::DatasetItem> chosen;
  for (auto& item : items) {
    const bool take = use_all_test ? item.split != io::Split::train : item.split == split;
    if (take) chosen.push_back(std::move(item));
  }
  if (chosen.empty()) throw ConfigError("no evaluation items in the requested split");

  const auto report = zeroshot::evaluate<Scalar>(chosen, loaded.params, catalog, provider, adapter);

  {
    std::ofstream f(fs::path(c.out) / "eval_report.json");
    if (!f) throw LoadError("cannot write eval report under: " + c.out);
    f << report.to_json().dump(2) << "\n";
  }
  {
    std::ofstream f(fs::path(c.out) / "metrics.txt");
    f << report.summary_text();
  }
  std::cout << report.summary_text();
  return 0;
}

int cmd_embed_text(const RunConfig& c) {
  if (c.input.empty()) throw ConfigError("embed-text needs --input");
  if (c.out.empty()) throw ConfigError("embed-text needs --out (target file)");
  std::ifstream f(c.input);
  if (!f) throw LoadError("input not found: " + c.input);

  std::map<std::string, std::vector<double>> table;
  int dim = c.stub_dim;
  if (!c.merge.empty()) {
    auto existing = text::load_precomputed(c.merge);
    dim = existing.dimension();
    table = existing.table();
  }
  auto provider = text::EmbeddingProvider::stub(dim, c.stub_seed);

  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    text::PromptedText prompt =
        c.template_kind == "report"
            ? text::render_report_prompt(line)
            : text::render_label_prompt(line, text::label_task_from_string(c.template_kind));
    if (table.count(prompt.rendered)) {
      throw ConfigError("duplicate rendered prompt: \"" + prompt.rendered + "\"");
    }
    table.emplace(prompt.rendered, provider.embed_one(prompt.rendered));
  }
  text::save_embedding_file(c.out, table, dim);
  std::cout << "wrote " << table.size() << " embeddings (dim " << dim << ") to " << c.out << "\n";
  return 0;
}

int cmd_inspect_record(const RunConfig& c) {
  if (c.record.empty()) throw ConfigError("inspect-record needs --record");
  const fs::path path(c.record);
  if (!fs::exists(path)) throw LoadError("record not found: " + path.string());

  io::EcgRecord rec;
  if (path.extension() == ".csv") {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    rec = io::parse_csv_record(ss.str());
  } else {
    std::ifstream hf(path, std::ios::binary);
    std::stringstream hs;
    hs << hf.rdbuf();
    const auto header = io::parse_header(hs.str());
    const auto dat = path.parent_path() / header.lead_filenames.front();
    std::ifstream df(dat, std::ios::binary);
    if (!df) throw LoadError("signal file not found: " + dat.string());
    std::stringstream ds;
    ds << df.rdbuf();
    rec = io::parse_signal(header, ds.str());
  }

  const auto& h = rec.header;
  std::cout << "record_id: " << h.record_id << "\n"
            << "format: " << (h.format == io::StorageFormat::csv ? "csv" : "int16le") << "\n"
            << "leads: " << h.num_leads << "\n"
            << "sampling_rate: " << h.sampling_rate << "\n"
            << "samples_per_lead: " << h.samples_per_lead << "\n";
  const auto sig = rec.signal.data();
  for (int l = 0; l < h.num_leads; ++l) {
    double mn = sig[l * h.samples_per_lead];
    double mx = mn;
    double sum = 0.0;
    for (std::int64_t i = 0; i < h.samples_per_lead; ++i) {
      const double v = sig[l * h.samples_per_lead + i];
      mn = std::min(mn, v);
      mx = std::max(mx, v);
      sum += v;
    }
    std::cout << "lead " << l << ": min=" << mn << " max=" << mx
              << " mean=" << sum / static_cast<double>(h.samples_per_lead) << "\n";
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"contrastive ECG-report pretraining and zero-shot evaluation"};
  app.require_subcommand(1);

  FlagSet pretrain_flags, eval_flags, embed_flags, inspect_flags;

  auto* pre = app.add_subcommand("pretrain", "contrastive pretraining of the signal encoder");
  add_common_flags(pre, pretrain_flags);

  auto* ev = app.add_subcommand("eval-zeroshot", "zero-shot classification of a test split");
  add_common_flags(ev, eval_flags);

  auto* emb = app.add_subcommand("embed-text", "build an embedding table from prompt lines");
  add_common_flags(emb, embed_flags);
  embed_flags.track(emb->add_option("--input", embed_flags.values.input,
                                    "text file, one raw report/label per line"),
                    &RunConfig::input);
  embed_flags.track(emb->add_option("--template", embed_flags.values.template_kind,
                                    "prompt template: report|diagnostic|form|rhythm"),
                    &RunConfig::template_kind);
  embed_flags.track(emb->add_option("--merge", embed_flags.values.merge,
                                    "existing embedding file to merge"),
                    &RunConfig::merge);

  auto* ins = app.add_subcommand("inspect-record", "print header fields and per-lead stats");
  add_common_flags(ins, inspect_flags);
  inspect_flags.track(ins->add_option("--record", inspect_flags.values.record,
                                      "record file (.csv or header)"),
                      &RunConfig::record);

  std::vector<const char*> argv;
  argv.push_back("ecgtext");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (pre->parsed()) return cmd_pretrain(pretrain_flags.resolve());
    if (ev->parsed()) return cmd_eval_zeroshot(eval_flags.resolve());
    if (emb->parsed()) return cmd_embed_text(embed_flags.resolve());
    if (ins->parsed()) return cmd_inspect_record(inspect_flags.resolve());
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const CatalogError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const MissingEmbeddingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ManifestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace ecgtext::cli
