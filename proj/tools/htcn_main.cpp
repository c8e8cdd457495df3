// SPDX-License-Identifier: Apache-2.0
//
// htcn: command-line front end.
//
//   htcn generate  --config synth.json --out DIR [--seed N]
//   htcn train     --config train.json [--dataset DIR] --out DIR
//                  [--seed N] [--mode cold|warm]
//   htcn eval      --checkpoint ck.bin [--dataset DIR] [--config train.json]
//                  [--out DIR] [--seed N] [--mode cold|warm]
//                  [--pool impressions|catalog|sample] [--threads N]
//   htcn recommend --checkpoint ck.bin [--dataset DIR] --history FILE
//                  [--k N] [--out FILE]
//   htcn serve     --checkpoint ck.bin [--dataset DIR] [--host H] [--port P]
//                  [--idle-seconds N]
//
// `--dataset` falls back to $HTCN_DATA_DIR.  A dataset directory holds
// interactions.tsv and embeddings.bin (plus meta.json when generated here).
// Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 data
// error.  All commands are deterministic under a fixed seed in
// single-worker mode.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <hiertcn/checkpoint.hpp>
#include <hiertcn/embedding_table.hpp>
#include <hiertcn/evaluate.hpp>
#include <hiertcn/http_server.hpp>
#include <hiertcn/serving.hpp>
#include <hiertcn/synthetic.hpp>
#include <hiertcn/trainer.hpp>

namespace {

using namespace hiertcn;

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << body;
  if (!out) throw DataError("write failed: " + path);
}

// --dataset flag if present, else $HTCN_DATA_DIR.
std::string resolve_dataset(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("HTCN_DATA_DIR"); env != nullptr && *env != '\0')
    return env;
  throw ConfigError("no dataset: pass --dataset or set HTCN_DATA_DIR");
}

struct Dataset {
  std::vector<Interaction> log;
  std::unique_ptr<EmbeddingTable> table;
  std::string dir;
};

Dataset load_dataset(const std::string& flag) {
  Dataset d;
  d.dir = resolve_dataset(flag);
  d.log = read_interactions(d.dir + "/interactions.tsv");
  d.table = std::make_unique<EmbeddingTable>(d.dir + "/embeddings.bin");
  return d;
}

DenseEmbeddings<double> widen(const EmbeddingTable& table) {
  DenseEmbeddings<double> emb(table.dim());
  for (auto id : table.ids()) {
    const float* r = table.row(id);
    emb.put(id, std::vector<double>(r, r + table.dim()));
  }
  return emb;
}

std::vector<std::uint64_t> user_ids(const std::vector<Interaction>& log) {
  std::vector<std::uint64_t> users;
  for (const auto& e : log) users.push_back(e.user);
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  return users;
}

// Train/validation/test event slices under either split mode.
struct Slices {
  std::vector<Interaction> train, val, test;
};

Slices split_events(const std::vector<Interaction>& log, const std::string& mode,
                    double val_frac, double test_frac, std::uint64_t seed) {
  Slices s;
  if (mode == "cold") {
    auto split = cold_user_split(user_ids(log), val_frac, test_frac, seed);
    s.train = filter_by_users(log, split.train);
    s.val = filter_by_users(log, split.val);
    s.test = filter_by_users(log, split.test);
  } else if (mode == "warm") {
    auto ws = warm_time_split(log, val_frac, test_frac);
    const std::int64_t lo = std::numeric_limits<std::int64_t>::min();
    const std::int64_t hi = std::numeric_limits<std::int64_t>::max();
    s.train = filter_by_time(log, lo, ws.val_start);
    s.val = filter_by_time(log, ws.val_start, ws.test_start);
    s.test = filter_by_time(log, ws.test_start, hi);
  } else {
    throw ConfigError("--mode must be cold or warm");
  }
  return s;
}

MetricsReport eval_report(const Model<float>& model, const EmbeddingTable& table,
                          const std::vector<Interaction>& events, std::int64_t idle_seconds,
                          const EvalConfig& ecfg) {
  auto users = build_eval_users(events, idle_seconds);
  ScorerFactory factory = [&] {
    return std::unique_ptr<UserScorer>(new ModelScorer(model, table));
  };
  return evaluate(factory, users, table, ecfg);
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_generate(const std::string& config_path, const std::string& out_dir,
                 std::int64_t seed_flag) {
  SyntheticConfig cfg = config_path.empty() ? SyntheticConfig{}
                                            : SyntheticConfig::from_json(read_json_file(config_path));
  if (seed_flag >= 0) cfg.seed = static_cast<std::uint64_t>(seed_flag);
  cfg.validate();
  if (out_dir.empty()) throw ConfigError("generate: --out directory required");
  std::filesystem::create_directories(out_dir);
  auto sum = generate_synthetic(cfg, out_dir);
  nlohmann::json j = {{"dataset", out_dir},
                      {"users", cfg.users},
                      {"sessions", sum.sessions},
                      {"events", sum.events},
                      {"impressions", sum.impressions}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& dataset_flag,
              const std::string& out_dir, std::int64_t seed_flag, const std::string& mode,
              const std::string& resume_path) {
  if (config_path.empty()) throw ConfigError("train: --config required");
  if (out_dir.empty()) throw ConfigError("train: --out directory required");
  TrainConfig cfg = TrainConfig::from_json(read_json_file(config_path));
  if (seed_flag >= 0) cfg.seed = static_cast<std::uint64_t>(seed_flag);
  cfg.validate();

  Dataset data = load_dataset(dataset_flag);
  auto emb = widen(*data.table);
  auto slices =
      split_events(data.log, mode, cfg.validation_fraction, cfg.test_fraction, cfg.seed);
  auto train_users = load_user_works(slices.train, cfg.idle_threshold_seconds);
  auto val_users = load_user_works(slices.val, cfg.idle_threshold_seconds);
  if (train_users.empty() || val_users.empty())
    throw DataError("train: empty train or validation slice after the " + mode + " split");

  Trainer trainer(cfg, emb);
  if (!resume_path.empty()) trainer.load_state(resume_path);
  while (trainer.step_epoch(train_users, val_users)) {
    const auto& e = trainer.epochs().back();
    std::cerr << "epoch " << trainer.epochs_done() << ": train " << e.train_loss << "  val "
              << e.val_loss << "  (" << e.seconds << " s)\n";
  }
  if (!trainer.epochs().empty()) {
    const auto& e = trainer.epochs().back();
    std::cerr << "epoch " << trainer.epochs_done() << ": train " << e.train_loss << "  val "
              << e.val_loss << "  (" << e.seconds << " s)\n";
  }
  TrainResult result = trainer.result();

  std::filesystem::create_directories(out_dir);
  const std::string ck_path = out_dir + "/checkpoint.bin";
  Model<float> deploy = cast_model<double, float>(result.best);
  save_checkpoint(deploy, ck_path);
  trainer.save_state(out_dir + "/trainer_state.bin");
  write_text_file(out_dir + "/config.json", cfg.canonical_json() + "\n");

  RunManifest manifest;
  manifest.config_fingerprint = cfg.fingerprint();
  manifest.dataset_fingerprint = file_fingerprint(data.dir + "/interactions.tsv");
  manifest.checkpoint_path = ck_path;
  for (const auto& e : result.epochs) {
    manifest.train_losses.push_back(e.train_loss);
    manifest.val_losses.push_back(e.val_loss);
    manifest.seconds_total += e.seconds;
  }
  manifest.best_epoch = result.best_epoch;
  manifest.best_val_loss = result.best_val_loss;
  manifest.early_stopped = result.early_stopped;
  if (!slices.test.empty()) {
    EvalConfig ecfg;
    ecfg.seed = cfg.seed;
    auto report = eval_report(deploy, *data.table, slices.test, cfg.idle_threshold_seconds, ecfg);
    manifest.metrics = report.to_json();
    manifest.metrics["mode"] = mode;
  }
  const std::string manifest_json = manifest.to_json().dump(2) + "\n";
  write_text_file(out_dir + "/manifest.json", manifest_json);
  std::cout << manifest_json;
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset_flag,
             const std::string& config_path, const std::string& out_dir, std::int64_t seed_flag,
             const std::string& mode, const std::string& pool, std::size_t threads) {
  if (checkpoint.empty()) throw ConfigError("eval: --checkpoint required");
  Model<float> model = load_checkpoint(checkpoint);
  Dataset data = load_dataset(dataset_flag);

  double val_frac = 0.1, test_frac = 0.1;
  std::uint64_t seed = 1;
  std::int64_t idle_seconds = 1800;
  if (!config_path.empty()) {
    TrainConfig cfg = TrainConfig::from_json(read_json_file(config_path));
    val_frac = cfg.validation_fraction;
    test_frac = cfg.test_fraction;
    seed = cfg.seed;
    idle_seconds = cfg.idle_threshold_seconds;
  }
  if (seed_flag >= 0) seed = static_cast<std::uint64_t>(seed_flag);

  EvalConfig ecfg;
  ecfg.seed = seed;
  ecfg.threads = threads;
  if (pool == "impressions")
    ecfg.pool = PoolKind::Impressions;
  else if (pool == "catalog")
    ecfg.pool = PoolKind::FullCatalog;
  else if (pool == "sample")
    ecfg.pool = PoolKind::UniformSample;
  else
    throw ConfigError("--pool must be impressions, catalog, or sample");

  auto slices = split_events(data.log, mode, val_frac, test_frac, seed);
  if (slices.test.empty()) throw DataError("eval: empty test slice after the " + mode + " split");
  auto report = eval_report(model, *data.table, slices.test, idle_seconds, ecfg);

  nlohmann::json j = report.to_json();
  j["mode"] = mode;
  j["checkpoint"] = checkpoint;
  const std::string body = j.dump(2) + "\n";
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir + "/report.json", body);
    write_text_file(out_dir + "/report.csv", report.to_csv());
  }
  std::cout << body;
  return 0;
}

int cmd_recommend(const std::string& checkpoint, const std::string& dataset_flag,
                  const std::string& history_path, std::size_t k, const std::string& out_path) {
  if (checkpoint.empty()) throw ConfigError("recommend: --checkpoint required");
  if (history_path.empty()) throw ConfigError("recommend: --history file required");
  if (k == 0) throw ConfigError("recommend: --k must be positive");
  Model<float> model = load_checkpoint(checkpoint);
  Dataset data = load_dataset(dataset_flag);

  auto events = read_interactions(history_path);
  auto by_user = group_by_user(events);
  if (by_user.size() != 1)
    throw DataError("recommend: history file must contain exactly one user");
  const auto& [user, evs] = *by_user.begin();

  // The trailing session counts as still open, matching the serving path.
  auto us = segment_sessions(evs, 1800);
  if (us.sessions.empty()) throw DataError("recommend: history has no interactions");
  auto hist = to_history(evs, us);
  SessionizedHistory closed(hist.begin(), hist.end() - 1);
  auto u = model.predict_next(closed, hist.back(), *data.table);

  auto catalog = data.table->ids();
  auto top = rank_candidates(u, catalog, *data.table, std::min(k, catalog.size()));
  nlohmann::json items = nlohmann::json::array();
  for (const auto& s : top) items.push_back({{"item_id", s.id}, {"score", s.score}});
  nlohmann::json j = {{"user_id", user}, {"items", items}};
  const std::string body = j.dump(2) + "\n";
  if (!out_path.empty()) write_text_file(out_path, body);
  std::cout << body;
  return 0;
}

int cmd_serve(const std::string& checkpoint, const std::string& dataset_flag,
              const std::string& host, int port, std::int64_t idle_seconds) {
  if (checkpoint.empty()) throw ConfigError("serve: --checkpoint required");
  Model<float> model = load_checkpoint(checkpoint);
  Dataset data = load_dataset(dataset_flag);

  ServingEngine engine(std::move(model), *data.table, idle_seconds);
  ServingHttp http(engine);
  std::cout << "listening on " << host << ":" << port << '\n' << std::flush;
  if (!http.listen(host, port)) throw ConfigError("serve: cannot listen on " + host + ":" +
                                                  std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical sequence recommendation toolkit"};
  app.require_subcommand(1);

  std::string config_path, dataset_flag, checkpoint, out_path, history_path;
  std::string mode = "cold", pool = "impressions", host = "127.0.0.1";
  std::int64_t seed_flag = -1, idle_seconds = 1800;
  std::size_t k = 10, threads = 1;
  int port = 8080;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON configuration file");
    cmd->add_option("--dataset", dataset_flag, "dataset directory (default $HTCN_DATA_DIR)");
    cmd->add_option("--checkpoint", checkpoint, "model checkpoint file");
    cmd->add_option("--out", out_path, "output directory or file");
    cmd->add_option("--seed", seed_flag, "seed override");
    cmd->add_option("--mode", mode, "split mode: cold (by user) or warm (by time)")
        ->check(CLI::IsMember({"cold", "warm"}));
  };

  CLI::App* generate = app.add_subcommand("generate", "write a synthetic dataset");
  add_common(generate);
  CLI::App* train = app.add_subcommand("train", "train a model with early stopping");
  add_common(train);
  std::string resume_path;
  train->add_option("--resume", resume_path, "trainer state file to continue from");
  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on the test split");
  add_common(eval);
  eval->add_option("--pool", pool, "candidate pool: impressions, catalog, or sample")
      ->check(CLI::IsMember({"impressions", "catalog", "sample"}));
  eval->add_option("--threads", threads, "evaluation worker threads");
  CLI::App* recommend = app.add_subcommand("recommend", "top-k items for one user history");
  add_common(recommend);
  recommend->add_option("--history", history_path, "single-user interaction file");
  recommend->add_option("--k", k, "number of items to return");
  CLI::App* serve = app.add_subcommand("serve", "run the HTTP recommendation service");
  add_common(serve);
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "bind port");
  serve->add_option("--idle-seconds", idle_seconds, "session idle threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (generate->parsed()) return cmd_generate(config_path, out_path, seed_flag);
    if (train->parsed())
      return cmd_train(config_path, dataset_flag, out_path, seed_flag, mode, resume_path);
    if (eval->parsed())
      return cmd_eval(checkpoint, dataset_flag, config_path, out_path, seed_flag, mode, pool,
                      threads);
    if (recommend->parsed())
      return cmd_recommend(checkpoint, dataset_flag, history_path, k, out_path);
    if (serve->parsed()) return cmd_serve(checkpoint, dataset_flag, host, port, idle_seconds);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
