// SPDX-License-Identifier: Apache-2.0
// mmfuse: train, evaluate and run the multimodal antivaccine-post classifier.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error, 3 data error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "mmfuse/checkpoint.hpp"
#include "mmfuse/data.hpp"
#include "mmfuse/ensemble.hpp"
#include "mmfuse/errors.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/synthetic.hpp"
#include "mmfuse/train.hpp"

namespace fs = std::filesystem;
using namespace mmfuse;

namespace {

enum Exit { kOk = 0, kRuntime = 1, kConfig = 2, kData = 3 };

void log(const std::string& msg) { std::cerr << "mmfuse: " << msg << '\n'; }

// Where a command reads its posts: a whole file, or one part of a seeded
// 7:1:2 split of it.
struct DataArgs {
  std::string path;
  std::string part = "all";
  std::optional<std::uint64_t> split_seed;
  bool skip_bad = false;

  void add(CLI::App* cmd, bool part_option = true) {
    cmd->add_option("--data", path, "JSONL dataset")->required();
    if (part_option) {
      cmd->add_option("--part", part, "all, train, val or test")
          ->check(CLI::IsMember({"all", "train", "val", "test"}));
      cmd->add_option("--split-seed", split_seed, "seed of the 7:1:2 split (default: the one used in training)");
    }
    cmd->add_flag("--skip-bad", skip_bad, "drop malformed lines instead of failing");
  }
};

Dataset load(const DataArgs& a, bool labeled, std::uint64_t default_seed = 0) {
  if (!fs::exists(a.path)) throw DataError("dataset not found: " + a.path);
  LoadReport report;
  Dataset d = load_jsonl(a.path, {a.skip_bad, true, labeled}, &report);
  for (const auto& w : report.warnings) log("warning: " + w);
  for (const auto& e : report.errors) log("skipped " + e);
  if (a.part == "all") return d;
  std::string warning;
  Splits s = split(d, a.split_seed.value_or(default_seed), {7, 1, 2}, &warning);
  if (!warning.empty()) log("warning: " + warning);
  if (a.part == "train") return s.train;
  if (a.part == "val") return s.val;
  return s.test;
}

// Training metadata stored next to the checkpoint.
nlohmann::ordered_json read_train_info(const fs::path& dir) {
  std::ifstream in(dir / "train.json");
  if (!in) return {};
  try {
    return nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception&) {
    return {};
  }
}

std::uint64_t trained_split_seed(const fs::path& dir) {
  auto info = read_train_info(dir);
  return info.contains("split_seed") ? info["split_seed"].get<std::uint64_t>() : 0;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

// --- train --------------------------------------------------------------

struct TrainArgs {
  DataArgs data;
  std::string val_path;
  std::string out;
  std::string history;
  std::string preset = "desk";
  std::string variant;
  std::string modalities;
  bool no_fusion = false, no_projection = false, no_attention = false, no_ocr = false;
  bool train_embeddings = false, fusion_anchor = false, zero_init_scse = false;
  std::optional<double> dropout;
  std::optional<std::size_t> embed_dim, hashtag_hidden, gru_hidden, proj_dim, image_size, scse_ratio;
  std::optional<std::size_t> max_hashtags, max_text, vocab_max, buckets;
  std::vector<std::size_t> backbone, classifier, feature_map;
  std::string anchor_tags;
  TrainOptions opts;
  bool use_double = false;
  bool quiet = false;
};

ModelConfig build_config(const TrainArgs& a) {
  ModelConfig c = a.preset == "full" ? ModelConfig::full() : ModelConfig::desk();
  if (!a.variant.empty()) apply_variant(c, a.variant);
  if (!a.modalities.empty()) c.modalities = ModalitySet::parse(a.modalities);
  c.ablations.no_fusion |= a.no_fusion;
  c.ablations.no_projection |= a.no_projection;
  c.ablations.no_attention |= a.no_attention;
  c.ablations.no_ocr |= a.no_ocr;
  c.train_embeddings = a.train_embeddings;
  c.fusion_anchor = a.fusion_anchor;
  c.zero_init_scse = a.zero_init_scse;
  auto set = [](auto& field, const auto& opt) {
    if (opt) field = *opt;
  };
  set(c.dropout, a.dropout);
  set(c.embed_dim, a.embed_dim);
  set(c.hashtag_hidden, a.hashtag_hidden);
  set(c.gru_hidden, a.gru_hidden);
  set(c.proj_dim, a.proj_dim);
  set(c.image_size, a.image_size);
  set(c.scse_ratio, a.scse_ratio);
  set(c.max_hashtags, a.max_hashtags);
  set(c.max_text, a.max_text);
  set(c.vocab_max, a.vocab_max);
  set(c.buckets, a.buckets);
  if (!a.backbone.empty()) c.backbone = a.backbone;
  if (!a.classifier.empty()) c.classifier = a.classifier;
  if (!a.feature_map.empty()) c.feature_map = a.feature_map;
  if (!a.anchor_tags.empty()) {
    std::stringstream ss(a.anchor_tags);
    std::string t;
    while (std::getline(ss, t, ',')) c.anchor_hashtags.push_back(t);
  }
  c.validate();
  return c;
}

void add_train(CLI::App& app, TrainArgs& a, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("train", "train a model and write a checkpoint directory");
  a.data.add(cmd, false);
  cmd->add_option("--val", a.val_path, "validation JSONL; without it --data is split 7:1:2");
  cmd->add_option("--split-seed", a.data.split_seed, "split seed (default: --seed)");
  cmd->add_option("--out", a.out, "checkpoint directory")->required();
  cmd->add_option("--history", a.history, "history CSV (default: <out>/history.csv)");
  cmd->add_option("--preset", a.preset, "desk or full widths")->check(CLI::IsMember({"desk", "full"}));
  cmd->add_option("--variant", a.variant, "ablation row name, e.g. caption_only, ours_noF")
      ->check(CLI::IsMember(variant_names()));
  cmd->add_option("--modalities", a.modalities, "comma list of image, caption, tag");
  cmd->add_flag("--no-fusion", a.no_fusion, "drop the fused feature");
  cmd->add_flag("--no-projection", a.no_projection, "fuse raw branch features");
  cmd->add_flag("--no-attention", a.no_attention, "uniform weights everywhere, no scSE");
  cmd->add_flag("--no-ocr", a.no_ocr, "ignore OCR text");
  cmd->add_flag("--train-embeddings", a.train_embeddings, "update the embedding table");
  cmd->add_flag("--fusion-anchor", a.fusion_anchor, "task-level scores at the fusion site");
  cmd->add_flag("--zero-init-scse", a.zero_init_scse, "start scSE as the identity");
  cmd->add_option("--dropout", a.dropout, "classifier dropout rate");
  cmd->add_option("--embed-dim", a.embed_dim);
  cmd->add_option("--hashtag-hidden", a.hashtag_hidden);
  cmd->add_option("--gru-hidden", a.gru_hidden);
  cmd->add_option("--proj-dim", a.proj_dim);
  cmd->add_option("--image-size", a.image_size);
  cmd->add_option("--scse-ratio", a.scse_ratio);
  cmd->add_option("--max-hashtags", a.max_hashtags);
  cmd->add_option("--max-text", a.max_text);
  cmd->add_option("--vocab-max", a.vocab_max);
  cmd->add_option("--buckets", a.buckets);
  cmd->add_option("--backbone", a.backbone, "conv stage widths")->delimiter(',');
  cmd->add_option("--classifier", a.classifier, "hidden layer widths")->delimiter(',');
  cmd->add_option("--feature-map", a.feature_map, "h,w,c of precomputed image maps")->delimiter(',');
  cmd->add_option("--anchor-tags", a.anchor_tags, "comma list replacing the default anchor hashtags");
  cmd->add_option("--lr", a.opts.lr, "RMSprop learning rate")->capture_default_str();
  cmd->add_option("--decay", a.opts.decay, "RMSprop decay")->capture_default_str();
  cmd->add_option("--batch-size", a.opts.batch_size)->capture_default_str();
  cmd->add_option("--epochs", a.opts.epochs)->capture_default_str();
  cmd->add_option("--seed", a.opts.seed)->capture_default_str();
  cmd->add_option("--threads", a.opts.threads, "evaluation threads (0: all cores)");
  cmd->add_flag("--double", a.use_double, "train in 64-bit precision");
  cmd->add_flag("--quiet", a.quiet, "no per-epoch log lines");

  run = [&a]() -> int {
    const ModelConfig config = build_config(a);
    const std::uint64_t split_seed = a.data.split_seed.value_or(a.opts.seed);
    Dataset train_set, val_set;
    if (a.val_path.empty()) {
      DataArgs whole = a.data;
      whole.part = "all";
      Dataset all = load(whole, true);
      std::string warning;
      Splits s = split(all, split_seed, {7, 1, 2}, &warning);
      if (!warning.empty()) log("warning: " + warning);
      train_set = std::move(s.train);
      val_set = std::move(s.val);
    } else {
      train_set = load(a.data, true);
      DataArgs v = a.data;
      v.path = a.val_path;
      v.part = "all";
      val_set = load(v, true);
    }
    if (train_set.empty()) throw DataError("training set is empty");
    log("training " + config.modalities.str() + " on " + std::to_string(train_set.size()) + " posts, validating on " +
        std::to_string(val_set.size()));

    auto report = [&a](const EpochStats& s) {
      if (a.quiet) return;
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %zu  train loss %.4f acc %.4f  val loss %.4f acc %.4f", s.epoch,
                    s.train_loss, s.train_acc, s.val_loss, s.val_acc);
      log(buf);
    };
    std::vector<EpochStats> history;
    std::size_t best = 0;
    if (a.use_double) {
      auto r = train<double>(train_set, &val_set, config, a.opts, report);
      save_checkpoint(a.out, r.model, a.opts.seed);
      history = r.history, best = r.best_epoch;
    } else {
      auto r = train<float>(train_set, &val_set, config, a.opts, report);
      save_checkpoint(a.out, r.model, a.opts.seed);
      history = r.history, best = r.best_epoch;
    }
    const fs::path hist = a.history.empty() ? fs::path(a.out) / "history.csv" : fs::path(a.history);
    std::ostringstream csv;
    write_history(csv, history);
    write_text(hist, csv.str());

    nlohmann::ordered_json info;
    info["split_seed"] = split_seed;
    info["lr"] = a.opts.lr;
    info["decay"] = a.opts.decay;
    info["batch_size"] = a.opts.batch_size;
    info["epochs"] = a.opts.epochs;
    info["best_epoch"] = best;
    info["train_size"] = train_set.size();
    info["val_size"] = val_set.size();
    write_text(fs::path(a.out) / "train.json", info.dump(2) + "\n");
    log("best epoch " + std::to_string(best) + ", checkpoint written to " + a.out);
    return kOk;
  };
}

// --- eval ---------------------------------------------------------------

struct EvalArgs {
  DataArgs data;
  std::string model;
  bool json = false;
  std::size_t threads = 0;
};

void add_eval(CLI::App& app, EvalArgs& a, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("eval", "accuracy, precision, recall and F1 on a labeled dataset");
  a.data.add(cmd);
  cmd->add_option("--model", a.model, "checkpoint directory")->required();
  cmd->add_flag("--json", a.json, "print metrics as JSON");
  cmd->add_option("--threads", a.threads);
  run = [&a]() -> int {
    Model<float> model = load_checkpoint<float>(a.model);
    Dataset d = load(a.data, true, trained_split_seed(a.model));
    if (d.empty()) throw DataError("evaluation set is empty");
    Evaluation e = evaluate(model, d, a.threads);
    if (a.json)
      std::cout << metrics_json(e.metrics) << '\n';
    else
      std::cout << metrics_table({{fs::path(a.model).filename().string(), e.metrics}});
    return kOk;
  };
}

// --- predict ------------------------------------------------------------

struct PredictArgs {
  DataArgs data;
  std::string model, out, attention, daily;
  bool daily_counts = false;
  std::size_t threads = 0;
};

void add_predict(CLI::App& app, PredictArgs& a, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("predict", "score a stream of posts");
  a.data.add(cmd);
  cmd->add_option("--model", a.model, "checkpoint directory")->required();
  cmd->add_option("--out", a.out, "CSV id,probability,decision (default: stdout)");
  cmd->add_option("--dump-attention", a.attention, "JSONL of attention weights and scSE gates per post");
  cmd->add_flag("--daily-counts", a.daily_counts, "count posts and positives per date");
  cmd->add_option("--daily-out", a.daily, "CSV for --daily-counts (default: stderr)");
  cmd->add_option("--threads", a.threads);
  run = [&a]() -> int {
    Model<float> model = load_checkpoint<float>(a.model);
    Dataset d = load(a.data, false, trained_split_seed(a.model));
    const std::vector<double> p = predict_proba(model, d, a.threads);

    std::ostringstream csv;
    csv << "id,probability,decision\n";
    char buf[64];
    for (std::size_t i = 0; i < d.size(); ++i) {
      std::snprintf(buf, sizeof buf, ",%.9g,%d\n", p[i], decide(p[i]));
      csv << d.posts[i].id << buf;
    }
    if (a.out.empty())
      std::cout << csv.str();
    else
      write_text(a.out, csv.str());

    if (!a.attention.empty()) {
      std::ostringstream dump;
      for (const auto& post : d.posts) dump << attention_json(forward_full(post, model)) << '\n';
      write_text(a.attention, dump.str());
    }
    if (a.daily_counts) {
      std::map<std::string, std::pair<std::size_t, std::size_t>> days;
      for (std::size_t i = 0; i < d.size(); ++i) {
        auto& c = days[d.posts[i].date.value_or("unknown")];
        ++c.first;
        c.second += decide(p[i]);
      }
      std::ostringstream out;
      out << "date,posts,antivaccine\n";
      for (const auto& [day, c] : days) out << day << ',' << c.first << ',' << c.second << '\n';
      if (a.daily.empty())
        std::cerr << out.str();
      else
        write_text(a.daily, out.str());
    }
    return kOk;
  };
}

// --- ensemble -----------------------------------------------------------

struct EnsembleArgs {
  std::string data, fused, image, caption, tag;
  std::optional<std::uint64_t> split_seed;
  bool on_val = false, tie_negative = false, rules_only = false, skip_bad = false;
  std::string scores_in, scores_out, svm_out;
  std::vector<double> quad;
  SvmOptions svm;
  double gamma = 0;
  std::size_t threads = 0;
};

std::vector<ScoreRow> score_rows(const Dataset& d, const std::vector<ScoreQuadruple>& q) {
  std::vector<ScoreRow> rows;
  for (std::size_t i = 0; i < d.size(); ++i) rows.push_back({d.posts[i].id, q[i], d.posts[i].label});
  return rows;
}

std::vector<std::pair<std::string, Metrics>> rule_metrics(const std::vector<ScoreRow>& rows, bool tie_negative) {
  std::vector<int> y, mean, max, vote;
  for (const auto& r : rows) {
    if (!r.label) throw DataError("score row '" + r.id + "' has no label");
    y.push_back(*r.label);
    mean.push_back(ensemble_mean(r.q));
    max.push_back(ensemble_max(r.q));
    vote.push_back(ensemble_vote(r.q, tie_negative));
  }
  return {{"mean", compute_metrics(mean, y)}, {"max", compute_metrics(max, y)}, {"vote", compute_metrics(vote, y)}};
}

SvmModel fit_svm(const std::vector<ScoreRow>& rows, const SvmOptions& opts) {
  std::vector<Feature4> x;
  std::vector<int> y;
  for (const auto& r : rows) {
    x.push_back(r.q.vec());
    y.push_back(r.label.value());
  }
  SvmModel m = svm_train(x, y, opts);
  if (!m.converged)
    log("warning: SVM stopped after " + std::to_string(m.iterations) + " iterations with " +
        std::to_string(m.violations) + " KKT violations");
  return m;
}

Metrics svm_metrics(const SvmModel& m, const std::vector<ScoreRow>& rows) {
  std::vector<int> y, pred;
  for (const auto& r : rows) {
    y.push_back(r.label.value());
    pred.push_back(svm_predict(m, r.q.vec()));
  }
  return compute_metrics(pred, y);
}

void add_ensemble(CLI::App& app, EnsembleArgs& a, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("ensemble", "SVM over four model scores vs mean/max/vote rules");
  cmd->add_option("--data", a.data, "labeled JSONL, split 7:1:2");
  cmd->add_option("--fused", a.fused, "three-branch checkpoint");
  cmd->add_option("--image", a.image, "image-only checkpoint");
  cmd->add_option("--caption", a.caption, "caption-only checkpoint");
  cmd->add_option("--tag", a.tag, "tag-only checkpoint");
  cmd->add_option("--split-seed", a.split_seed, "split seed (default: the fused model's)");
  cmd->add_flag("--ensemble-on-val", a.on_val, "fit the SVM on validation scores instead of training scores");
  cmd->add_flag("--tie-to-negative", a.tie_negative, "equal-deviation vote ties go to class 0");
  cmd->add_flag("--rules-only", a.rules_only, "apply mean/max/vote to --quad or --scores, no models");
  cmd->add_option("--quad", a.quad, "s_F,s_V,s_C,s_H")->delimiter(',')->expected(4);
  cmd->add_option("--scores", a.scores_in, "score CSV id,s_F,s_V,s_C,s_H,label");
  cmd->add_option("--scores-out", a.scores_out, "write test-set score CSV");
  cmd->add_option("--svm-out", a.svm_out, "write the SVM as JSON");
  cmd->add_option("--C", a.svm.C, "SVM regularization")->capture_default_str();
  cmd->add_option("--gamma", a.gamma, "RBF width (default: 1/(4 var))");
  cmd->add_option("--threads", a.threads);
  cmd->add_flag("--skip-bad", a.skip_bad);

  run = [&a]() -> int {
    if (a.gamma > 0) a.svm.gamma = a.gamma;
    if (a.rules_only) {
      std::vector<ScoreRow> rows;
      if (!a.quad.empty()) {
        rows.push_back({"quad", ScoreQuadruple::from({a.quad[0], a.quad[1], a.quad[2], a.quad[3]}), {}});
      } else if (!a.scores_in.empty()) {
        std::ifstream in(a.scores_in);
        if (!in) throw DataError("cannot open " + a.scores_in);
        rows = read_scores(in);
      } else {
        throw ConfigError("--rules-only needs --quad or --scores");
      }
      std::cout << "id,mean,max,vote\n";
      for (const auto& r : rows)
        std::cout << r.id << ',' << ensemble_mean(r.q) << ',' << ensemble_max(r.q) << ','
                  << ensemble_vote(r.q, a.tie_negative) << '\n';
      return kOk;
    }

    for (const auto* p : {&a.fused, &a.image, &a.caption, &a.tag})
      if (p->empty()) throw ConfigError("ensemble needs --fused, --image, --caption and --tag checkpoints");
    if (a.data.empty()) throw ConfigError("ensemble needs --data");
    const Model<float> fused = load_checkpoint<float>(a.fused);
    const Model<float> image = load_checkpoint<float>(a.image);
    const Model<float> caption = load_checkpoint<float>(a.caption);
    const Model<float> tag = load_checkpoint<float>(a.tag);
    const std::array<const Model<float>*, 4> models{&fused, &image, &caption, &tag};

    DataArgs da;
    da.path = a.data;
    da.skip_bad = a.skip_bad;
    Dataset all = load(da, true);
    std::string warning;
    Splits s = split(all, a.split_seed.value_or(trained_split_seed(a.fused)), {7, 1, 2}, &warning);
    if (!warning.empty()) log("warning: " + warning);
    if (s.test.empty()) throw DataError("test split is empty");

    const auto train_rows = score_rows(s.train, collect_scores(s.train, models, a.threads));
    const auto val_rows = score_rows(s.val, collect_scores(s.val, models, a.threads));
    const auto test_rows = score_rows(s.test, collect_scores(s.test, models, a.threads));

    const auto& fit_rows = a.on_val ? val_rows : train_rows;
    const auto& alt_rows = a.on_val ? train_rows : val_rows;
    const SvmModel svm = fit_svm(fit_rows, a.svm);
    auto rows = rule_metrics(test_rows, a.tie_negative);
    rows.emplace_back("svm", svm_metrics(svm, test_rows));
    std::cout << metrics_table(rows);
    try {
      const SvmModel alt = fit_svm(alt_rows, a.svm);
      log(std::string("svm fit on ") + (a.on_val ? "training" : "validation") + " scores: test accuracy " +
          std::to_string(svm_metrics(alt, test_rows).accuracy));
    } catch (const ConfigError& e) {
      log(std::string("alternative SVM fit skipped: ") + e.what());
    }
    if (!a.svm_out.empty()) write_text(a.svm_out, svm_to_json(svm) + "\n");
    if (!a.scores_out.empty()) {
      std::ostringstream out;
      write_scores(out, test_rows);
      write_text(a.scores_out, out.str());
    }
    return kOk;
  };
}

// --- gensynth -----------------------------------------------------------

struct SynthArgs {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string spec = "xor";
  std::string out;
  SynthOptions opts;
};

void add_gensynth(CLI::App& app, SynthArgs& a, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("gensynth", "write a synthetic multimodal dataset");
  cmd->add_option("--n", a.n, "number of posts (even, >= 8)")->required();
  cmd->add_option("--seed", a.seed)->capture_default_str();
  cmd->add_option("--spec", a.spec, "uni or xor")->capture_default_str();
  cmd->add_option("--noise", a.opts.noise, "label-flip rate of the uni cues")->capture_default_str();
  cmd->add_option("--out", a.out, "output directory")->required();
  run = [&a]() -> int {
    Dataset d = gen_synthetic(a.n, a.seed, parse_synth_spec(a.spec), a.opts);
    const fs::path file = write_dataset(d, a.out);
    log("wrote " + std::to_string(d.size()) + " posts to " + file.string());
    return kOk;
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal antivaccine-post classifier"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key=value file; command-line flags take precedence");

  TrainArgs train_args;
  EvalArgs eval_args;
  PredictArgs predict_args;
  EnsembleArgs ensemble_args;
  SynthArgs synth_args;
  std::map<std::string, std::function<int()>> runs;
  add_train(app, train_args, runs["train"]);
  add_eval(app, eval_args, runs["eval"]);
  add_predict(app, predict_args, runs["predict"]);
  add_ensemble(app, ensemble_args, runs["ensemble"]);
  add_gensynth(app, synth_args, runs["gensynth"]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return runs.at(name)();
  } catch (const ConfigError& e) {
    log("config error: " + std::string(e.what()));
    return kConfig;
  } catch (const DataError& e) {
    log("data error: " + std::string(e.what()));
    return kData;
  } catch (const InvalidHashtagError& e) {
    log("data error: " + std::string(e.what()));
    return kData;
  } catch (const std::exception& e) {
    log("error: " + std::string(e.what()));
    return kRuntime;
  }
}
