// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training loop: deterministic cold (user-disjoint) and warm (time-split)
// protocols, mini-batched optimization with Adam, early stopping on a
// validation plateau, best-checkpoint retention, and a bit-identical
// resume path (optimizer moments + RNG travel in a sidecar).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include <hiertcn/adam.hpp>
#include <hiertcn/batch_types.hpp>
#include <hiertcn/checkpoint.hpp>
#include <hiertcn/interactions.hpp>
#include <hiertcn/io.hpp>
#include <hiertcn/minibatch.hpp>
#include <hiertcn/model.hpp>
#include <hiertcn/objectives.hpp>
#include <hiertcn/train_step.hpp>

namespace hiertcn {

inline std::string to_string(NegativeSource s) {
  return s == NegativeSource::Impressions ? "impressions" : "uniform";
}

inline NegativeSource negative_source_from_string(const std::string& s) {
  if (s == "impressions") return NegativeSource::Impressions;
  if (s == "uniform") return NegativeSource::UniformRandom;
  throw ConfigError("unknown negative source: " + s);
}

struct TrainConfig {
  ModelConfig model;
  ObjectiveConfig objective;

  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t batch_size = 32;

  std::size_t max_epochs = 20;
  std::size_t patience = 3;
  double min_rel_improvement = 1e-4;
  double validation_fraction = 0.1;
  double test_fraction = 0.1;

  std::size_t max_unroll_sessions = 4;
  std::size_t pad_limit = 64;
  std::int64_t idle_threshold_seconds = 1800;
  std::uint64_t seed = 1;

  void validate() const {
    model.validate();
    objective.validate();
    if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("train: betas must lie in [0, 1)");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw ConfigError("train: validation_fraction must lie in (0, 1)");
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
      throw ConfigError("train: test_fraction must lie in (0, 1)");
    if (validation_fraction + test_fraction >= 1.0)
      throw ConfigError("train: validation + test fractions must leave room for training");
    if (max_unroll_sessions < 1) throw ConfigError("train: max_unroll_sessions must be >= 1");
    if (idle_threshold_seconds <= 0) throw ConfigError("train: idle threshold must be > 0");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["model"] = model.to_json();
    j["objective"] = {{"kind", to_string(objective.kind)},
                      {"margin", objective.margin},
                      {"negatives", objective.negatives},
                      {"source", to_string(objective.source)}};
    j["lr"] = lr;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["batch_size"] = batch_size;
    j["max_epochs"] = max_epochs;
    j["patience"] = patience;
    j["min_rel_improvement"] = min_rel_improvement;
    j["validation_fraction"] = validation_fraction;
    j["test_fraction"] = test_fraction;
    j["max_unroll_sessions"] = max_unroll_sessions;
    j["pad_limit"] = pad_limit;
    j["idle_threshold_seconds"] = idle_threshold_seconds;
    j["seed"] = seed;
    return j;
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
      if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
      if (j.contains("objective")) {
        const auto& o = j.at("objective");
        if (o.contains("kind"))
          c.objective.kind = objective_from_string(o.at("kind").get<std::string>());
        if (o.contains("margin")) c.objective.margin = o.at("margin").get<double>();
        if (o.contains("negatives"))
          c.objective.negatives = o.at("negatives").get<std::size_t>();
        if (o.contains("source"))
          c.objective.source = negative_source_from_string(o.at("source").get<std::string>());
      }
      if (j.contains("lr")) c.lr = j.at("lr").get<double>();
      if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
      if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
      if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
      if (j.contains("max_epochs")) c.max_epochs = j.at("max_epochs").get<std::size_t>();
      if (j.contains("patience")) c.patience = j.at("patience").get<std::size_t>();
      if (j.contains("min_rel_improvement"))
        c.min_rel_improvement = j.at("min_rel_improvement").get<double>();
      if (j.contains("validation_fraction"))
        c.validation_fraction = j.at("validation_fraction").get<double>();
      if (j.contains("test_fraction")) c.test_fraction = j.at("test_fraction").get<double>();
      if (j.contains("max_unroll_sessions"))
        c.max_unroll_sessions = j.at("max_unroll_sessions").get<std::size_t>();
      if (j.contains("pad_limit")) c.pad_limit = j.at("pad_limit").get<std::size_t>();
      if (j.contains("idle_threshold_seconds"))
        c.idle_threshold_seconds = j.at("idle_threshold_seconds").get<std::int64_t>();
      if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
  }

  std::string canonical_json() const { return to_json().dump(); }
  std::uint64_t fingerprint() const { return fnv1a(canonical_json()); }

  AdamConfig adam() const {
    AdamConfig a;
    a.lr = lr;
    a.beta1 = beta1;
    a.beta2 = beta2;
    return a;
  }
};

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

// Cold start: disjoint user sets, shuffled deterministically by seed.
struct ColdSplit {
  std::vector<std::uint64_t> train, val, test;
};

inline ColdSplit cold_user_split(std::vector<std::uint64_t> users, double val_frac,
                                 double test_frac, std::uint64_t seed) {
  if (users.size() < 3) throw DataError("cold split: need at least 3 users");
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  Rng rng(seed);
  std::shuffle(users.begin(), users.end(), rng.engine());

  const std::size_t n = users.size();
  std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                   std::llround(val_frac * double(n))));
  std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                    std::llround(test_frac * double(n))));
  if (n_val + n_test >= n) throw DataError("cold split: fractions leave no training users");

  ColdSplit s;
  s.test.assign(users.begin(), users.begin() + std::ptrdiff_t(n_test));
  s.val.assign(users.begin() + std::ptrdiff_t(n_test),
               users.begin() + std::ptrdiff_t(n_test + n_val));
  s.train.assign(users.begin() + std::ptrdiff_t(n_test + n_val), users.end());

  // Disjointness assertion (user-disjoint by construction).
  std::unordered_set<std::uint64_t> seen;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (auto u : *part)
      if (!seen.insert(u).second) throw DataError("cold split: overlapping user sets");
  return s;
}

// Warm start: earlier interactions train, later ones validate/test.
struct WarmSplit {
  std::int64_t val_start = 0;   // first timestamp of the validation window
  std::int64_t test_start = 0;  // first timestamp of the test window
};

inline WarmSplit warm_time_split(const std::vector<Interaction>& log, double val_frac,
                                 double test_frac) {
  if (log.size() < 3) throw DataError("warm split: need at least 3 events");
  std::vector<std::int64_t> ts;
  ts.reserve(log.size());
  for (const auto& e : log) ts.push_back(e.timestamp);
  std::sort(ts.begin(), ts.end());
  auto quantile = [&](double q) {
    const auto i = static_cast<std::size_t>(q * double(ts.size()));
    return ts[std::min(i, ts.size() - 1)];
  };
  WarmSplit s;
  s.val_start = quantile(1.0 - val_frac - test_frac);
  s.test_start = quantile(1.0 - test_frac);
  if (!(s.val_start <= s.test_start)) throw DataError("warm split: windows out of order");

  // Time-disjointness assertion over the actual partition.
  std::int64_t train_max = std::numeric_limits<std::int64_t>::min();
  std::int64_t val_min = std::numeric_limits<std::int64_t>::max();
  std::int64_t val_max = train_max, test_min = val_min;
  for (const auto& e : log) {
    if (e.timestamp < s.val_start)
      train_max = std::max(train_max, e.timestamp);
    else if (e.timestamp < s.test_start) {
      val_min = std::min(val_min, e.timestamp);
      val_max = std::max(val_max, e.timestamp);
    } else {
      test_min = std::min(test_min, e.timestamp);
    }
  }
  if (train_max >= s.val_start || val_max >= s.test_start ||
      (val_min < s.val_start && val_min != std::numeric_limits<std::int64_t>::max()) ||
      (test_min < s.test_start && test_min != std::numeric_limits<std::int64_t>::max()))
    throw DataError("warm split: time windows overlap");
  return s;
}

inline std::vector<Interaction> filter_by_users(const std::vector<Interaction>& log,
                                                const std::vector<std::uint64_t>& users) {
  std::unordered_set<std::uint64_t> keep(users.begin(), users.end());
  std::vector<Interaction> out;
  for (const auto& e : log)
    if (keep.count(e.user) != 0) out.push_back(e);
  return out;
}

inline std::vector<Interaction> filter_by_time(const std::vector<Interaction>& log,
                                               std::int64_t lo, std::int64_t hi) {
  std::vector<Interaction> out;
  for (const auto& e : log)
    if (e.timestamp >= lo && e.timestamp < hi) out.push_back(e);
  return out;
}

// ---------------------------------------------------------------------------
// Epoch runner
// ---------------------------------------------------------------------------

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
  BatchCounters counters;  // aggregated over the epoch's steps
};

namespace detail {

template <class S>
struct EpochOutcome {
  double mean_loss = 0.0;
  BatchCounters counters;
};

// One pass over `users`.  In optimize mode every mini-batch is followed by
// an Adam step; otherwise gradients are discarded and parameters stay
// untouched (validation).
template <class S>
inline EpochOutcome<S> run_epoch(Model<S>& model, Model<S>& grads, AdamState<S>& adam,
                                 const TrainConfig& cfg, std::vector<UserWork> users,
                                 const TrainContext<S>& ctx, Rng& rng, bool optimize) {
  EpochOutcome<S> out;
  double loss_sum = 0.0;
  std::size_t targets = 0;
  ParamRefs<S> params = model.params();
  ParamRefs<S> grad_refs = grads.params();
  const AdamConfig adam_cfg = cfg.adam();

  auto consume = [&](const StepResult& r) {
    if (!std::isfinite(r.loss_sum))
      throw NumericError("train: non-finite loss (diverged)");
    loss_sum += r.loss_sum;
    targets += r.targets;
    out.counters.raw_input_floats += r.counters.raw_input_floats;
    out.counters.peak_block_floats =
        std::max(out.counters.peak_block_floats, r.counters.peak_block_floats);
    if (optimize && r.targets > 0) {
      scale_grads(grads, S(1) / static_cast<S>(r.targets));
      adam_step(params, grad_refs, adam, adam_cfg);
    }
  };

  if (model.cfg.hierarchical()) {
    MiniBatchGenerator gen(std::move(users), cfg.batch_size, cfg.max_unroll_sessions,
                           cfg.pad_limit);
    std::unordered_map<std::uint64_t, GruStates<S>> carried;
    std::vector<HierRowTask> rows;
    while (gen.next(rows)) {
      zero_grads(grads);
      consume(train_step_hier(model, grads, rows, carried, ctx, rng));
    }
  } else {
    for (auto& batch : flat_row_batches(users, cfg.batch_size)) {
      zero_grads(grads);
      consume(train_step_flat(model, grads, batch, ctx, rng));
    }
  }
  out.mean_loss = targets == 0 ? 0.0 : loss_sum / double(targets);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

struct RunManifest {
  std::uint64_t config_fingerprint = 0;
  std::uint64_t dataset_fingerprint = 0;
  std::string checkpoint_path;
  std::vector<double> train_losses;
  std::vector<double> val_losses;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool early_stopped = false;
  double seconds_total = 0.0;
  nlohmann::json metrics;  // final MetricsReport, when evaluation ran

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "htcn-run-manifest-v1";
    j["config_fingerprint"] = config_fingerprint;
    j["dataset_fingerprint"] = dataset_fingerprint;
    j["checkpoint_path"] = checkpoint_path;
    j["train_losses"] = train_losses;
    j["val_losses"] = val_losses;
    j["best_epoch"] = best_epoch;
    j["best_val_loss"] = best_val_loss;
    j["early_stopped"] = early_stopped;
    j["seconds_total"] = seconds_total;
    if (!metrics.is_null()) j["metrics"] = metrics;
    return j;
  }
};

inline std::uint64_t file_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a(ss.str());
}

// ---------------------------------------------------------------------------
// Parameter copy across scalar types (checkpoints are float)
// ---------------------------------------------------------------------------

template <class A, class B>
inline Model<B> cast_model(Model<A>& src) {
  Model<B> dst = Model<B>::build(src.cfg);
  std::vector<Tensor<A>*> sp;
  std::vector<Tensor<B>*> dp;
  src.visit([&](const std::string&, Tensor<A>& t) { sp.push_back(&t); });
  dst.visit([&](const std::string&, Tensor<B>& t) { dp.push_back(&t); });
  require_shape(sp.size() == dp.size(), "cast_model: tensor list mismatch");
  for (std::size_t i = 0; i < sp.size(); ++i) *dp[i] = sp[i]->template cast<B>();
  if (src.cfg.batchnorm) {
    dst.bn.run_mean.clear();
    dst.bn.run_var.clear();
    for (const auto& m : src.bn.run_mean) {
      std::vector<B> r(m.size());
      for (std::size_t i = 0; i < m.size(); ++i) r[i] = static_cast<B>(m[i]);
      dst.bn.run_mean.push_back(std::move(r));
    }
    for (const auto& v : src.bn.run_var) {
      std::vector<B> r(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) r[i] = static_cast<B>(v[i]);
      dst.bn.run_var.push_back(std::move(r));
    }
  }
  return dst;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct TrainResult {
  Model<double> best;  // parameters at the best validation epoch
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool early_stopped = false;
};

// Resumable training driver.  Per-epoch work draws from one RNG stream, so
// (save after epoch k, load, continue) is bit-identical to an uninterrupted
// run in single-worker mode.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const EmbeddingSource<double>& emb)
      : cfg_(cfg), emb_(&emb), rng_(cfg.seed) {
    cfg_.validate();
    model_ = Model<double>::build(cfg_.model);
    Rng init_rng = rng_.split(0x51);
    model_.init(init_rng);
    grads_ = Model<double>::build(cfg_.model);
    adam_ = AdamState<double>::for_params(params_ref());
    best_ = model_;
    ctx_.emb = emb_;
    ctx_.objective = cfg_.objective;
    ctx_.catalog = emb.ids();
  }

  const TrainConfig& config() const { return cfg_; }
  Model<double>& model() { return model_; }
  std::size_t epochs_done() const { return epochs_.size(); }
  const std::vector<EpochStats>& epochs() const { return epochs_; }

  // Runs one optimization epoch followed by a validation pass.  Returns
  // false once training should stop (budget exhausted or plateau).
  bool step_epoch(const std::vector<UserWork>& train_users,
                  const std::vector<UserWork>& val_users) {
    if (epochs_.size() >= cfg_.max_epochs || stopped_) return false;
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<UserWork> order = train_users;
    {
      Rng shuffle_rng = rng_.split(0x100 + epochs_.size());
      std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    }
    TrainContext<double> train_ctx = ctx_;
    train_ctx.train_mode = true;
    auto train_out =
        detail::run_epoch(model_, grads_, adam_, cfg_, std::move(order), train_ctx, rng_, true);

    TrainContext<double> val_ctx = ctx_;
    val_ctx.train_mode = false;
    Rng val_rng(cfg_.seed + 0xe0a1);  // isolated: validation must not disturb the train stream
    auto val_out =
        detail::run_epoch(model_, grads_, adam_, cfg_, val_users, val_ctx, val_rng, false);

    EpochStats st;
    st.train_loss = train_out.mean_loss;
    st.val_loss = val_out.mean_loss;
    st.counters = train_out.counters;
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    epochs_.push_back(st);

    const double improvement =
        epochs_.size() == 1
            ? 1.0
            : (best_val_ - st.val_loss) / std::max(std::abs(best_val_), 1e-12);
    if (epochs_.size() == 1 || improvement > cfg_.min_rel_improvement) {
      best_val_ = st.val_loss;
      best_epoch_ = epochs_.size() - 1;
      best_ = model_;
      bad_epochs_ = 0;
    } else {
      ++bad_epochs_;
      if (bad_epochs_ >= cfg_.patience) stopped_ = true;
    }
    return !stopped_ && epochs_.size() < cfg_.max_epochs;
  }

  TrainResult result() const {
    TrainResult r;
    r.best = best_;
    r.epochs = epochs_;
    r.best_epoch = best_epoch_;
    r.best_val_loss = best_val_;
    r.early_stopped = stopped_;
    return r;
  }

  // ---- resume sidecar ----

  void save_state(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out.write("HTCNTRS1", 8);
    io::write_string(out, cfg_.canonical_json());
    auto write_model = [&](Model<double>& m) {
      m.visit([&](const std::string& name, Tensor<double>& t) {
        io::write_tensor(out, name, t);
      });
    };
    write_model(model_);
    write_model(best_);
    io::write_pod(out, std::uint64_t(adam_.step));
    for (const auto& t : adam_.m) io::write_tensor(out, "adam.m", t);
    for (const auto& t : adam_.v) io::write_tensor(out, "adam.v", t);
    {
      std::ostringstream ss;
      ss << rng_.engine();
      io::write_string(out, ss.str());
    }
    io::write_pod(out, std::uint64_t(epochs_.size()));
    for (const auto& e : epochs_) {
      io::write_pod(out, e.train_loss);
      io::write_pod(out, e.val_loss);
      io::write_pod(out, e.seconds);
    }
    io::write_pod(out, std::uint64_t(best_epoch_));
    io::write_pod(out, best_val_);
    io::write_pod(out, std::uint64_t(bad_epochs_));
    io::write_pod(out, std::uint8_t(stopped_ ? 1 : 0));
    if (!out) throw DataError("short write to " + path);
  }

  void load_state(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != "HTCNTRS1")
      throw DataError("not a trainer state file: " + path);
    const std::string stored_cfg = io::read_string(in, "trainer config");
    // The epoch budget may grow between runs; everything else must match.
    auto budgetless = [](nlohmann::json j) {
      j.erase("max_epochs");
      return j.dump();
    };
    if (budgetless(nlohmann::json::parse(stored_cfg)) != budgetless(cfg_.to_json()))
      throw ConfigError("trainer state was produced by a different config");
    auto read_model = [&](Model<double>& m) {
      m.visit([&](const std::string& name, Tensor<double>& t) {
        auto [stored, tens] = io::read_tensor<double>(in);
        if (stored != name) throw DataError("trainer state tensor order mismatch: " + stored);
        require_shape(tens.shape == t.shape, "trainer state tensor shape mismatch: " + name);
        t = std::move(tens);
      });
    };
    read_model(model_);
    read_model(best_);
    adam_.step = io::read_pod<std::uint64_t>(in, "adam step");
    for (auto& t : adam_.m) t = io::read_tensor<double>(in).second;
    for (auto& t : adam_.v) t = io::read_tensor<double>(in).second;
    {
      std::istringstream ss(io::read_string(in, "rng state"));
      ss >> rng_.engine();
      if (!ss) throw DataError("trainer state: bad RNG payload");
    }
    const auto n_epochs = io::read_pod<std::uint64_t>(in, "epoch count");
    epochs_.assign(n_epochs, EpochStats{});
    for (auto& e : epochs_) {
      e.train_loss = io::read_pod<double>(in, "train loss");
      e.val_loss = io::read_pod<double>(in, "val loss");
      e.seconds = io::read_pod<double>(in, "epoch seconds");
    }
    best_epoch_ = io::read_pod<std::uint64_t>(in, "best epoch");
    best_val_ = io::read_pod<double>(in, "best val loss");
    bad_epochs_ = io::read_pod<std::uint64_t>(in, "bad epochs");
    stopped_ = io::read_pod<std::uint8_t>(in, "stop flag") != 0;
  }

 private:
  ParamRefs<double> params_ref() { return model_.params(); }

  TrainConfig cfg_;
  const EmbeddingSource<double>* emb_;
  TrainContext<double> ctx_;
  Model<double> model_, grads_, best_;
  AdamState<double> adam_;
  Rng rng_;
  std::vector<EpochStats> epochs_;
  double best_val_ = 0.0;
  std::size_t best_epoch_ = 0;
  std::size_t bad_epochs_ = 0;
  bool stopped_ = false;
};

// Convenience driver: epochs until stop, returning the final result.
inline TrainResult train_model(const TrainConfig& cfg, const std::vector<UserWork>& train_users,
                               const std::vector<UserWork>& val_users,
                               const EmbeddingSource<double>& emb) {
  Trainer t(cfg, emb);
  while (t.step_epoch(train_users, val_users)) {
  }
  return t.result();
}

}  // namespace hiertcn
