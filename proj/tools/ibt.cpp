// ibt: command-line front end. Every command writes into --out-dir only and
// finishes by writing manifest.json there.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ibt/ablation.hpp"
#include "ibt/config.hpp"
#include "ibt/eval.hpp"
#include "ibt/kernels.hpp"
#include "ibt/negatives.hpp"
#include "ibt/training.hpp"

namespace fs = std::filesystem;
using namespace ibt;
using config::Json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- manifest

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string git_describe() {
  std::string out;
  if (FILE* p = popen("git describe --always --dirty 2>/dev/null", "r")) {
    char buf[128];
    while (std::fgets(buf, sizeof buf, p)) out += buf;
    pclose(p);
  }
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out.empty() ? "unknown" : out;
}

std::string fnv1a(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot hash " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

void write_atomic(const fs::path& path, const std::string& text) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// State shared by every command.
struct Run {
  std::string command;
  fs::path out_dir;
  config::RunConfig cfg;
  std::uint64_t seed = 0;
  std::vector<std::string> argv;  // normalized, replayable
  std::vector<std::string> outputs;
  std::string started;
  Json extra = Json::object();

  fs::path output(const std::string& name) {
    outputs.push_back(name);
    return out_dir / name;
  }

  void write_manifest() const {
    Json m;
    m["command"] = command;
    m["argv"] = argv;
    m["seed"] = seed;
    m["config"] = config::to_json(cfg);
    m["git_describe"] = git_describe();
    m["started"] = started;
    m["finished"] = utc_now();
    Json outs = Json::object();
    for (const auto& o : outputs) outs[o] = fnv1a(out_dir / o);
    m["outputs"] = outs;
    if (!extra.empty()) m["summary"] = extra;
    write_atomic(out_dir / "manifest.json", m.dump(2) + "\n");
  }
};

// ---------------------------------------------------------------- options

struct Common {
  std::string out_dir;
  std::string config_path;
  bool full_scale = false;
  int threads = 0;
  std::uint64_t seed = 0;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--out-dir", c.out_dir, "Directory receiving every output of the command")->required();
  sub->add_option("--config", c.config_path, "JSON config overlaid on the defaults")->check(CLI::ExistingFile);
  sub->add_flag("--full-scale", c.full_scale, "Start from the full-size hyperparameters");
  sub->add_option("--threads", c.threads, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
  sub->add_option("--seed", c.seed, "Seed (flag > config > IBT_SEED > 0)");
}

/// Options copied into the manifest argv: everything except the common ones,
/// with paths made absolute.
std::vector<std::string> normalized_argv(const CLI::App* sub, const std::set<std::string>& path_options) {
  static const std::set<std::string> common{"--out-dir", "--config", "--full-scale", "--threads", "--seed", "--help"};
  std::vector<std::string> argv{sub->get_name()};
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_name(false, true);
    if (opt->count() == 0 || common.count(name)) continue;
    const std::string flag = opt->get_lnames().empty() ? name : "--" + opt->get_lnames().front();
    if (opt->get_expected_max() == 0) {
      argv.push_back(flag);
      continue;
    }
    for (const auto& value : opt->results()) {
      argv.push_back(flag);
      argv.push_back(path_options.count(flag) ? fs::absolute(value).lexically_normal().string() : value);
    }
  }
  return argv;
}

Run start_run(const CLI::App* sub, const Common& c, const std::set<std::string>& path_options) {
  Run run;
  run.command = sub->get_name();
  run.started = utc_now();
  run.out_dir = c.out_dir;
  fs::create_directories(run.out_dir);
  run.cfg = c.full_scale ? config::RunConfig::full() : config::RunConfig::toy();
  bool config_seed = false;
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    Json j;
    try {
      j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::invalid_argument("config " + c.config_path + ": " + e.what());
    }
    config::overlay(run.cfg, j);
    config_seed = j.contains("train") && j["train"].is_object() && j["train"].contains("seed");
  }
  if (sub->get_option("--seed")->count()) {
    run.seed = c.seed;
  } else if (config_seed) {
    run.seed = run.cfg.train.seed;
  } else if (const char* env = std::getenv("IBT_SEED")) {
    try {
      run.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError("IBT_SEED is not an unsigned integer: " + std::string(env));
    }
  }
  run.cfg.train.seed = run.seed;
  if (c.threads > 0) kernels::set_num_threads(c.threads);
  run.argv = normalized_argv(sub, path_options);
  return run;
}

// ---------------------------------------------------------------- helpers

data::Corpus load_data(const std::string& corpus, const std::string& vocab) {
  return data::load_corpus(corpus, data::load_vocabulary(vocab));
}

/// Model dimensions that follow from the data.
void fit_model_to(config::RunConfig& cfg, const data::Corpus& corpus) {
  cfg.model.vocab_size = static_cast<std::size_t>(corpus.vocab().size);
  cfg.model.object_feature_dim = corpus.feature_dim();
  int max_label = -1;
  for (const auto& p : corpus.pairs())
    for (const auto& o : p.objects) max_label = std::max(max_label, o.label);
  if (static_cast<std::size_t>(max_label + 1) > cfg.model.num_object_classes) {
    throw std::invalid_argument("corpus has object class " + std::to_string(max_label) + " but num_object_classes is " +
                                std::to_string(cfg.model.num_object_classes));
  }
}

fs::path sidecar(const fs::path& checkpoint) { return fs::path(checkpoint).replace_extension(".json"); }

void save_model(Run& run, const model::InterBert& net, const std::string& name) {
  save_checkpoint(net.parameters(), run.output(name + ".bin"));
  Json j;
  j["model"] = config::to_json(config::RunConfig{net.config(), {}})["model"];
  std::ofstream out(run.output(name + ".json"), std::ios::trunc);
  out << j.dump(2) << "\n";
}

model::InterBert load_model(const std::string& checkpoint) {
  const auto meta = sidecar(checkpoint);
  std::ifstream in(meta);
  if (!in) throw std::runtime_error("missing model description " + meta.string());
  config::RunConfig cfg;
  cfg.model = model::ModelConfig{};
  config::overlay(cfg, Json::parse(in));
  return model::InterBert(cfg.model, load_checkpoint(checkpoint));
}

// ---------------------------------------------------------------- commands

struct SynthArgs {
  data::SynthOptions opt;
  std::size_t heldout_images = 0;
};

void cmd_synth(Run& run, SynthArgs a) {
  a.opt.seed = run.seed;
  const auto corpus = data::synth_corpus(a.opt);
  data::save_corpus(corpus, run.output("corpus.jsonl"));
  data::save_vocabulary(corpus.vocab(), run.output("vocab.json"));
  run.extra["pairs"] = corpus.size();
  if (a.heldout_images > 0) {
    auto h = a.opt;
    h.seed = run.seed + 1;
    h.num_images = a.heldout_images;
    const auto held = data::synth_corpus(h);
    data::save_corpus(held, run.output("heldout.jsonl"));
    run.extra["heldout_pairs"] = held.size();
  }
  std::cout << "wrote " << corpus.size() << " pairs to " << run.out_dir.string() << "\n";
}

struct DataArgs {
  std::string corpus, vocab;
};

void cmd_mine(Run& run, const DataArgs& d, const negatives::MiningOptions& opt) {
  const auto corpus = load_data(d.corpus, d.vocab);
  const auto index = negatives::TfIdfIndex::build(corpus);
  const auto table = negatives::HardNegativeTable::build(index, opt);
  negatives::save_table(table, run.output("negatives.jsonl"));
  std::size_t total = 0;
  for (const auto& [_, row] : table.rows()) total += row.size();
  run.extra["images"] = table.rows().size();
  run.extra["negatives"] = total;
  run.extra["skipped_captions"] = index.skipped().size();
  std::cout << "mined " << total << " hard negatives for " << table.rows().size() << " images\n";
}

void print_step(const training::StepMetrics& m, std::size_t total) {
  if (m.step == 1 || m.step % 50 == 0 || m.step == total) {
    std::printf("step %5zu lr %.3e msm %.4f mrm %.4f itm %.4f total %.4f itm_acc %.3f\n", m.step, m.lr, m.msm_loss,
                m.mrm_loss, m.itm_loss, m.total, m.itm_acc);
    std::fflush(stdout);
  }
}

void cmd_pretrain(Run& run, const DataArgs& d, const std::string& negatives_path) {
  const auto corpus = load_data(d.corpus, d.vocab);
  fit_model_to(run.cfg, corpus);
  run.cfg.model.validate();
  std::optional<negatives::HardNegativeTable> table;
  if (!negatives_path.empty()) table = negatives::load_table(negatives_path);
  auto net = model::InterBert::initialize(run.cfg.model, run.seed);
  const auto total = run.cfg.train.total_steps;
  const auto log = training::pretrain(net, corpus, table ? &*table : nullptr, run.cfg.train,
                                      [&](const training::StepMetrics& m) { print_step(m, total); });
  training::save_metrics_csv(log, run.output("metrics.csv"));
  save_model(run, net, "checkpoint");
  run.extra["first_total"] = log.front().total;
  run.extra["last_total"] = log.back().total;
}

void cmd_finetune(Run& run, const DataArgs& d, const std::string& checkpoint) {
  const auto corpus = load_data(d.corpus, d.vocab);
  auto net = load_model(checkpoint);
  run.cfg.model = net.config();
  const auto total = run.cfg.train.total_steps;
  auto result = training::finetune_retrieval(net, corpus, run.cfg.train, [&](const training::StepMetrics& m) {
    if (m.step == 1 || m.step % 50 == 0 || m.step == total)
      std::printf("step %5zu lr %.3e choice_loss %.4f choice_acc %.3f\n", m.step, m.lr, m.itm_loss, m.itm_acc);
  });
  training::save_metrics_csv(result.metrics, run.output("metrics.csv"));
  save_model(run, net, "finetuned");
  save_model(run, model::InterBert(net.config(), std::move(result.ema)), "ema");
}

void cmd_eval(Run& run, const DataArgs& d, const std::string& checkpoint, std::size_t pool_size,
              const std::string& split) {
  const auto corpus = load_data(d.corpus, d.vocab);
  const auto net = load_model(checkpoint);
  run.cfg.model = net.config();
  const auto r = eval::zero_shot_eval(net, corpus, pool_size);
  const double itm = eval::heldout_itm_accuracy(net, corpus, run.seed);
  const double mc = eval::multiple_choice_accuracy(net, corpus, run.seed);
  std::printf("%-10s %9s %7s %7s %7s\n", "split", "N_images", "R@1", "R@5", "R@10");
  std::printf("%-10s %9zu %7.4f %7.4f %7.4f\n", split.c_str(), r.pool_size, r.r1, r.r5, r.r10);
  std::printf("pools %zu captions %zu itm_acc %.4f choice4_acc %.4f\n", r.pools, r.captions, itm, mc);
  Json j;
  j["split"] = split;
  j["pool_size"] = r.pool_size;
  j["pools"] = r.pools;
  j["captions"] = r.captions;
  j["r1"] = r.r1;
  j["r5"] = r.r5;
  j["r10"] = r.r10;
  j["itm_accuracy"] = itm;
  j["choice4_accuracy"] = mc;
  std::ofstream(run.output("eval.json"), std::ios::trunc) << j.dump(2) << "\n";
  run.extra = j;
}

void cmd_gradcheck(Run& run, std::size_t samples, double step, double tolerance) {
  GradCheckOptions opt;
  opt.sample_count = samples;
  opt.step = static_cast<Real>(step);
  opt.seed = run.seed;
  const auto report = training::tiny_gradient_check(opt);
  Json j;
  j["max_rel_error"] = report.max_rel_error;
  j["tolerance"] = tolerance;
  j["worst"] = report.worst().parameter;
  j["samples"] = Json::array();
  for (const auto& s : report.samples)
    j["samples"].push_back({{"parameter", s.parameter}, {"index", s.index}, {"analytic", s.analytic},
                            {"numeric", s.numeric}, {"rel_error", s.rel_error}});
  std::ofstream(run.output("gradcheck.json"), std::ios::trunc) << j.dump(2) << "\n";
  run.extra["max_rel_error"] = report.max_rel_error;
  std::printf("gradcheck: %zu coordinates, max relative error %.3e (%s)\n", report.samples.size(),
              report.max_rel_error, report.worst().parameter.c_str());
  if (!(report.max_rel_error < tolerance)) {
    run.write_manifest();
    throw std::runtime_error("max relative error " + std::to_string(report.max_rel_error) + " exceeds tolerance");
  }
}

void cmd_embed(Run& run, const DataArgs& d, const std::string& checkpoint, const std::string& kind) {
  const auto corpus = load_data(d.corpus, d.vocab);
  const auto net = load_model(checkpoint);
  run.cfg.model = net.config();
  const auto e = eval::item_embeddings(net, corpus, eval::parse_embedding_kind(kind));
  eval::save_embeddings(e, run.output("embeddings.bin"));
  std::printf("wrote %zu x %zu embeddings\n", e.count, e.dim);
}

void cmd_knn(Run& run, const std::string& embeddings, std::size_t trigger, std::size_t k) {
  const auto e = eval::load_embeddings(embeddings);
  const auto n = eval::knn_items(e, trigger, k);
  std::ofstream out(run.output("neighbors.csv"), std::ios::trunc);
  out << "rank,id,similarity\n";
  char buf[96];
  for (std::size_t i = 0; i < n.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g\n", i + 1, n[i].id, n[i].similarity);
    out << buf;
    std::fputs(buf, stdout);
  }
}

void cmd_ablate(Run& run, const DataArgs& d, const std::string& heldout, const std::string& negatives_path) {
  const auto corpus = load_data(d.corpus, d.vocab);
  const auto held = data::load_corpus(heldout, corpus.vocab());
  fit_model_to(run.cfg, corpus);
  const auto table = negatives_path.empty()
                         ? negatives::HardNegativeTable::build(negatives::TfIdfIndex::build(corpus))
                         : negatives::load_table(negatives_path);
  const auto results = ablation::run(run.cfg, corpus, held, table, run.out_dir, run.seed);
  for (const auto& r : results) run.outputs.push_back(fs::relative(r.metrics_csv, run.out_dir).string());
  run.outputs.push_back("ablation_summary.csv");
  ablation::write_summary_csv(results, std::cout);
}

// ---------------------------------------------------------------- replay

int dispatch(std::vector<std::string> args);

int cmd_replay(const std::string& manifest_path, const std::string& out_dir) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest_path);
  const auto m = Json::parse(in);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  const auto cfg_path = dir / "replay_config.json";
  std::ofstream(cfg_path, std::ios::trunc) << m.at("config").dump(2) << "\n";

  std::vector<std::string> args = m.at("argv").get<std::vector<std::string>>();
  args.insert(args.end(), {"--out-dir", dir.string(), "--config", cfg_path.string(), "--seed",
                           std::to_string(m.at("seed").get<std::uint64_t>())});
  if (const int rc = dispatch(args); rc != 0) return rc;

  std::size_t differing = 0;
  for (const auto& [name, hash] : m.at("outputs").items()) {
    const auto replayed = dir / name;
    const bool same = fs::exists(replayed) && fnv1a(replayed) == hash.get<std::string>();
    if (!same) ++differing;
    std::printf("%s %s\n", same ? "identical" : "DIFFERS  ", name.c_str());
  }
  if (differing) throw std::runtime_error(std::to_string(differing) + " replayed outputs differ");
  std::printf("replay: all %zu outputs bit-identical\n", m.at("outputs").size());
  return 0;
}

// ---------------------------------------------------------------- main

void print_error(const std::string& command, const std::string& message) {
  Json e;
  e["status"] = "error";
  e["command"] = command;
  e["message"] = message;
  std::cerr << e.dump() << "\n";
}

int dispatch(std::vector<std::string> args) {
  CLI::App app{"Multimodal masked-group pretraining at desk scale", "ibt"};
  app.require_subcommand(1);
  Common c;

  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic image-text corpus");
  SynthArgs sa;
  synth->add_option("--num-images", sa.opt.num_images)->capture_default_str();
  synth->add_option("--captions-per-image", sa.opt.captions_per_image)->capture_default_str();
  synth->add_option("--num-classes", sa.opt.num_classes)->capture_default_str();
  synth->add_option("--feature-dim", sa.opt.feature_dim)->capture_default_str();
  synth->add_option("--noise-std", sa.opt.noise_std)->capture_default_str();
  synth->add_option("--max-fillers", sa.opt.max_fillers)->capture_default_str();
  synth->add_option("--heldout-images", sa.heldout_images, "Also write heldout.jsonl drawn with seed + 1");

  DataArgs d;
  std::string checkpoint, negatives_path, heldout, embeddings, kind = "product", split = "heldout";
  auto data_opts = [&](CLI::App* s) {
    s->add_option("--corpus", d.corpus, "Corpus JSONL")->required()->check(CLI::ExistingFile);
    s->add_option("--vocab", d.vocab, "Vocabulary JSON")->required()->check(CLI::ExistingFile);
  };

  auto* mine = app.add_subcommand("mine-negatives", "Build the TF-IDF hard-negative table");
  data_opts(mine);
  negatives::MiningOptions mo;
  mine->add_option("--max-similarity", mo.max_similarity)->capture_default_str();
  mine->add_option("--top-k", mo.top_k)->capture_default_str();

  std::size_t steps = 0, batch = 0, warmup = 0;
  double lr = 0, hard = 0, ema = 0;
  std::string masking_preset, variant;
  auto train_opts = [&](CLI::App* s) {
    s->add_option("--steps", steps, "total_steps");
    s->add_option("--batch-size", batch);
    s->add_option("--warmup", warmup, "warmup_steps");
    s->add_option("--lr", lr, "learning_rate");
  };

  auto* pre = app.add_subcommand("pretrain", "Pretrain with MSM + MRM + ITM");
  data_opts(pre);
  train_opts(pre);
  pre->add_option("--negatives", negatives_path, "Hard-negative table; random negatives only when absent")
      ->check(CLI::ExistingFile);
  pre->add_option("--hard-prob", hard, "hard_negative_prob");
  pre->add_option("--masking", masking_preset, "group or single_unit")->check(CLI::IsMember({"group", "single_unit"}));
  pre->add_option("--variant", variant, "interbert or single_stream")
      ->check(CLI::IsMember({"interbert", "single_stream"}));

  auto* fine = app.add_subcommand("finetune", "4-way multiple-choice retrieval finetuning");
  data_opts(fine);
  train_opts(fine);
  fine->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  fine->add_option("--ema-rate", ema, "ema_rate");

  auto* ev = app.add_subcommand("eval", "Caption-to-image retrieval, ITM and 4-way accuracy");
  data_opts(ev);
  ev->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  std::size_t pool = 50;
  ev->add_option("--pool-size", pool)->capture_default_str();
  ev->add_option("--split", split, "Label printed in the table")->capture_default_str();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the tiny model");
  std::size_t samples = 200;
  double fd_step = 1e-5, tolerance = 1e-4;
  gc->add_option("--samples", samples)->capture_default_str();
  gc->add_option("--step", fd_step)->capture_default_str();
  gc->add_option("--tolerance", tolerance)->capture_default_str();

  auto* emb = app.add_subcommand("embed", "Export per-pair item embeddings");
  data_opts(emb);
  emb->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  emb->add_option("--kind", kind, "product, image or text")->capture_default_str();

  auto* knn = app.add_subcommand("knn", "Nearest items by cosine similarity");
  std::size_t trigger = 0, k = 5;
  knn->add_option("--embeddings", embeddings)->required()->check(CLI::ExistingFile);
  knn->add_option("--trigger", trigger)->required();
  knn->add_option("-k,--k", k)->capture_default_str();

  auto* abl = app.add_subcommand("ablate", "Pretrain the four masking x negative-sampling arms");
  data_opts(abl);
  train_opts(abl);
  abl->add_option("--heldout", heldout, "Held-out corpus JSONL (same vocabulary)")->required()->check(CLI::ExistingFile);
  abl->add_option("--negatives", negatives_path)->check(CLI::ExistingFile);

  auto* rep = app.add_subcommand("replay", "Re-run a command from its manifest and compare outputs");
  std::string manifest, replay_dir;
  rep->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  rep->add_option("--out-dir", replay_dir)->required();

  for (auto* s : {synth, mine, pre, fine, ev, gc, emb, knn, abl}) add_common(s, c);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  std::string command = args.empty() ? "" : args.front();
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    print_error(command, e.what());
    return 2;
  }

  const CLI::App* sub = app.get_subcommands().front();
  command = sub->get_name();
  const std::set<std::string> paths{"--corpus", "--vocab", "--negatives", "--checkpoint", "--heldout", "--embeddings"};
  try {
    if (sub == rep) return cmd_replay(manifest, replay_dir);
    Run run = start_run(sub, c, paths);
    auto& t = run.cfg.train;
    if (sub->get_option_no_throw("--steps") && sub->get_option("--steps")->count()) t.total_steps = steps;
    if (sub->get_option_no_throw("--batch-size") && sub->get_option("--batch-size")->count()) t.batch_size = batch;
    if (sub->get_option_no_throw("--warmup") && sub->get_option("--warmup")->count()) t.warmup_steps = warmup;
    if (sub->get_option_no_throw("--lr") && sub->get_option("--lr")->count()) t.learning_rate = lr;
    if (sub->get_option_no_throw("--hard-prob") && sub->get_option("--hard-prob")->count()) t.hard_negative_prob = hard;
    if (sub->get_option_no_throw("--ema-rate") && sub->get_option("--ema-rate")->count()) t.ema_rate = ema;
    if (!masking_preset.empty())
      t.masking = masking_preset == "group" ? masking::MaskingConfig::group() : masking::MaskingConfig::single_unit();
    if (!variant.empty()) run.cfg.model.variant = model::parse_variant(variant);
    t.validate();

    if (sub == synth) cmd_synth(run, sa);
    else if (sub == mine) cmd_mine(run, d, mo);
    else if (sub == pre) cmd_pretrain(run, d, negatives_path);
    else if (sub == fine) cmd_finetune(run, d, checkpoint);
    else if (sub == ev) cmd_eval(run, d, checkpoint, pool, split);
    else if (sub == gc) cmd_gradcheck(run, samples, fd_step, tolerance);
    else if (sub == emb) cmd_embed(run, d, checkpoint, kind);
    else if (sub == knn) cmd_knn(run, embeddings, trigger, k);
    else if (sub == abl) cmd_ablate(run, d, heldout, negatives_path);
    run.write_manifest();
    return 0;
  } catch (const UsageError& e) {
    print_error(command, e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error(command, e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) { return dispatch(std::vector<std::string>(argv + 1, argv + argc)); }
