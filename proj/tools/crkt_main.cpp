// Command-line front end: ingest, synth, build-map, train, cv, ablate, eval
// and explain. Exit codes: 0 ok, 1 usage, 2 validation, 3 runtime.

#include "crkt/checkpoint.hpp"
#include "crkt/concept_map.hpp"
#include "crkt/config.hpp"
#include "crkt/data.hpp"
#include "crkt/eval.hpp"
#include "crkt/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#ifndef CRKT_VERSION
#define CRKT_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace crkt;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

// Input problems that are not DataError/ConfigError, e.g. a missing file.
struct ValidationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationFailure("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Directories hash their regular files in name order, names included. A
// manifest inside the directory records paths of an earlier run, not data,
// and is skipped.
std::string hash_input(const fs::path& p) {
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(p)) {
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& f : files) h = fnv1a(slurp(f), fnv1a(f.filename().string(), h));
    return "fnv1a64:" + hex64(h);
  }
  return "fnv1a64:" + hex64(fnv1a(slurp(p)));
}

void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << content;
  if (!out) throw std::runtime_error("write failed: " + p.string());
}

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw ValidationFailure(what + " not found: " + p.string());
}

struct RunManifest {
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, fs::path>> inputs;
  std::vector<fs::path> artifacts;
  std::vector<std::string> argv;

  void write(const fs::path& path) const {
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["seed"] = seed;
    j["tool_version"] = CRKT_VERSION;
    json in = json::object();
    for (const auto& [role, p] : inputs) in[role] = {{"path", p.string()}, {"hash", hash_input(p)}};
    j["inputs"] = in;
    json out = json::array();
    for (const auto& p : artifacts) out.push_back(p.string());
    j["artifacts"] = out;
    write_file(path, j.dump(2) + "\n");
  }
};

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  require_exists(path, "config");
  return run_config_from_json(read_text_file(path));
}

json config_json(const RunConfig& c) { return json::parse(run_config_to_json(c)); }

ConceptMap load_map(const std::string& path, const DatasetBundle& bundle) {
  require_exists(path, "concept map");
  return ConceptMap::from_edges(bundle.concept_count, load_edge_csv(path));
}

DatasetBundle load_bundle(const std::string& dir) {
  require_exists(dir, "bundle");
  return load_bundle_dir(dir);
}

std::vector<int> question_ids_of(const DatasetBundle& b) {
  std::vector<int> ids;
  for (const auto& q : b.questions) ids.push_back(q.question_id);
  return ids;
}

// Deterministic train/validation split of a bundle's students.
std::pair<std::vector<std::string>, std::vector<std::string>> holdout(const DatasetBundle& b, double fraction,
                                                                     std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& s : b.sequences) ids.push_back(s.student_id);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size())));
  std::vector<std::string> val(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::string> tr(ids.begin() + static_cast<std::ptrdiff_t>(n_val), ids.end());
  return {tr, val};
}

std::string metrics_json(const MetricReport& m) {
  json j{{"acc", m.acc}, {"n", m.n}};
  j["auc"] = m.auc ? json(*m.auc) : json(nullptr);
  return j.dump(2) + "\n";
}

std::vector<MetricRow> rows_from(const std::vector<FoldResult>& folds, const std::string& model,
                                 const std::string& dataset) {
  std::vector<MetricRow> rows;
  for (const auto& f : folds) {
    if (f.ok) rows.push_back({model, dataset, f.fold, f.test.acc, f.test.auc.value_or(0.5)});
  }
  return rows;
}

int failed_folds(const std::vector<FoldResult>& folds) {
  return static_cast<int>(std::count_if(folds.begin(), folds.end(), [](const FoldResult& f) { return !f.ok; }));
}

// ---- commands ---------------------------------------------------------------

struct Args {
  std::string interactions, questions, edges_in, config, bundle, map, out, checkpoint, student, dataset_name;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool infer = false;
  bool prior_correct = false;
  bool plot = false;
  int folds = 5;
  int jobs = 1;
  int buckets = 10;
  int target = -1;
  int prefix = -1;
};

int cmd_ingest(const Args& a, RunManifest& m) {
  DatasetBundle b = load_dataset(a.interactions, a.questions);
  m.inputs = {{"interactions", a.interactions}, {"questions", a.questions}};
  if (!a.edges_in.empty()) {
    require_exists(a.edges_in, "edge file");
    b.concept_edges = ConceptMap::from_edges(b.concept_count, load_edge_csv(a.edges_in)).edges();
    m.inputs.emplace_back("edges", a.edges_in);
  }
  validate(b);
  write_dataset(b, a.out);
  const fs::path stats = fs::path(a.out) / "stats.json";
  write_file(stats, stats_to_json(dataset_stats(b)) + "\n");
  m.artifacts = {a.out, stats};
  std::cout << "ok: " << b.sequences.size() << " students, " << b.interaction_count() << " interactions\n";
  return 0;
}

int cmd_synth(const Args& a, RunManifest& m) {
  SynthConfig sc;
  if (!a.config.empty()) {
    require_exists(a.config, "config");
    sc = synth_config_from_json(read_text_file(a.config));
    m.inputs = {{"config", a.config}};
  }
  const auto d = generate_synthetic(sc, a.seed);
  write_dataset(d.bundle, a.out);
  json truth{{"edges", d.truth.edges},
             {"difficulties", d.truth.difficulties},
             {"distractor_concepts", d.truth.distractor_concepts},
             {"abilities", d.truth.abilities}};
  const fs::path truth_path = fs::path(a.out) / "truth.json";
  write_file(truth_path, truth.dump() + "\n");
  m.config = json::parse(a.config.empty() ? "{}" : read_text_file(a.config));
  m.artifacts = {a.out, truth_path};
  return 0;
}

int cmd_build_map(const Args& a, RunManifest& m) {
  const DatasetBundle b = load_bundle(a.bundle);
  m.inputs = {{"bundle", a.bundle}};
  m.artifacts = {a.out};
  if (!a.edges_in.empty()) {
    require_exists(a.edges_in, "edge file");
    std::vector<std::string> warnings;
    const auto map = ConceptMap::from_edges(b.concept_count, load_edge_csv(a.edges_in), MapSource::authored, &warnings);
    write_edge_csv(map.edges(), a.out);
    m.inputs.emplace_back("edges", a.edges_in);
    m.config = {{"mode", "edges"}};
    return 0;
  }
  StatisticalMapOptions opts;
  opts.require_prior_correct = a.prior_correct;
  const InferredMap inferred = infer_statistical_map(b, opts);
  const fs::path stats = a.out + ".stats.json";
  write_file(stats, transition_stats_to_json(inferred) + "\n");
  m.config = {{"mode", "infer"}, {"require_prior_correct", a.prior_correct}};
  m.artifacts.push_back(stats);
  if (inferred.stats.degenerate) {
    throw ValidationFailure("cannot infer a concept map: " + inferred.stats.diagnostic);
  }
  write_edge_csv(inferred.map.edges(), a.out);
  std::cout << inferred.map.edges().size() << " edges, threshold " << inferred.stats.threshold << "\n";
  return 0;
}

int cmd_train(const Args& a, RunManifest& m) {
  RunConfig rc = load_run_config(a.config);
  if (a.seed_given) rc.train.seed = a.seed;
  const DatasetBundle raw = load_bundle(a.bundle);
  const ConceptMap map = load_map(a.map, raw);
  m.inputs = {{"bundle", a.bundle}, {"map", a.map}};
  if (!a.config.empty()) m.inputs.emplace_back("config", a.config);
  m.config = config_json(rc);
  m.seed = rc.train.seed;
  validate(rc.model, raw.concept_count);

  const auto [tr_ids, val_ids] = holdout(raw, rc.train.validation_fraction, rc.train.seed);
  const DatasetBundle train_raw = select_students(raw, tr_ids);
  const DatasetBundle tr = preprocess(train_raw, rc.train.max_len, rc.train.min_len);
  const DatasetBundle val = preprocess(select_students(raw, val_ids), rc.train.max_len, rc.train.min_len);
  Model model(rc.model, Vocabulary::from_bundle(raw), map, rc.train.seed);
  const TrainResult r = train(model, tr, val, rc);

  const QuestionStats stats = compute_question_stats(tr);
  CheckpointExtras extras;
  extras.question_ids = question_ids_of(raw);
  extras.metadata_json = json{{"run_config", config_json(rc)},
                              {"question_rate", stats.rate},
                              {"question_count", stats.count},
                              {"best_epoch", r.best_epoch}}
                             .dump();
  const fs::path ckpt = fs::path(a.out) / "model.ckpt";
  const fs::path hist = fs::path(a.out) / "history.csv";
  fs::create_directories(a.out);
  save_checkpoint(model, ckpt, extras);
  write_file(hist, history_csv(r.history));
  m.artifacts = {ckpt, hist};
  std::cout << "best epoch " << r.best_epoch << ", validation loss " << r.best_val_loss << "\n";
  return 0;
}

int cmd_cv(const Args& a, RunManifest& m) {
  RunConfig rc = load_run_config(a.config);
  if (a.seed_given) rc.train.seed = a.seed;
  const DatasetBundle raw = load_bundle(a.bundle);
  const ConceptMap map = load_map(a.map, raw);
  validate(rc.model, raw.concept_count);
  m.inputs = {{"bundle", a.bundle}, {"map", a.map}};
  if (!a.config.empty()) m.inputs.emplace_back("config", a.config);
  m.config = config_json(rc);
  m.config["folds"] = a.folds;
  m.seed = rc.train.seed;

  CvOptions opts;
  opts.folds = a.folds;
  opts.seed = rc.train.seed;
  opts.jobs = a.jobs;
  opts.checkpoint_dir = fs::path(a.out) / "checkpoints";
  opts.model_name = "CRKT";
  fs::create_directories(*opts.checkpoint_dir);
  const auto folds = run_cv(raw, map, rc, opts);
  const fs::path table = fs::path(a.out) / "metrics.csv";
  write_file(table, metric_table_csv(rows_from(folds, opts.model_name, a.dataset_name)));
  m.artifacts = {table, *opts.checkpoint_dir};
  const int failed = failed_folds(folds);
  if (failed > 0) {
    for (const auto& f : folds) {
      if (!f.ok) std::cerr << "fold " << f.fold << " failed: " << f.error << "\n";
    }
    return kExitRuntime;
  }
  std::cout << slurp(table);
  return 0;
}

int cmd_ablate(const Args& a, RunManifest& m) {
  RunConfig rc = load_run_config(a.config);
  if (a.seed_given) rc.train.seed = a.seed;
  const DatasetBundle raw = load_bundle(a.bundle);
  const ConceptMap map = load_map(a.map, raw);
  m.inputs = {{"bundle", a.bundle}, {"map", a.map}};
  if (!a.config.empty()) m.inputs.emplace_back("config", a.config);
  m.config = config_json(rc);
  m.config["folds"] = a.folds;
  m.seed = rc.train.seed;

  const Ablation kinds[] = {Ablation::none, Ablation::no_opt, Ablation::no_unc, Ablation::no_map, Ablation::no_topk};
  std::vector<MetricRow> rows;
  std::vector<std::vector<FoldResult>> all;
  int failed = 0;
  for (Ablation kind : kinds) {
    RunConfig variant = rc;
    variant.model = build_variant(rc.model, kind);
    validate(variant.model, raw.concept_count);
    CvOptions opts;
    opts.folds = a.folds;
    opts.seed = rc.train.seed;
    opts.jobs = a.jobs;
    opts.model_name = kind == Ablation::none ? "CRKT" : to_string(kind);
    auto folds = run_cv(raw, map, variant, opts);
    failed += failed_folds(folds);
    const auto r = rows_from(folds, opts.model_name, a.dataset_name);
    rows.insert(rows.end(), r.begin(), r.end());
    all.push_back(std::move(folds));
  }
  const fs::path table = fs::path(a.out) / "ablation.csv";
  write_file(table, metric_table_csv(rows));

  // Paired t-tests of each variant against the full model on fold AUC.
  std::ostringstream tests;
  tests << "variant,delta_auc,t,df,p_value\n";
  for (std::size_t v = 1; v < all.size(); ++v) {
    std::vector<double> full_auc, var_auc;
    for (std::size_t f = 0; f < all[v].size(); ++f) {
      if (all[0][f].ok && all[v][f].ok && all[0][f].test.auc && all[v][f].test.auc) {
        full_auc.push_back(*all[0][f].test.auc);
        var_auc.push_back(*all[v][f].test.auc);
      }
    }
    tests << to_string(kinds[v]) << ',';
    if (full_auc.size() >= 2) {
      const auto t = paired_t_test(var_auc, full_auc);
      const double delta = (std::accumulate(var_auc.begin(), var_auc.end(), 0.0) -
                            std::accumulate(full_auc.begin(), full_auc.end(), 0.0)) /
                           static_cast<double>(full_auc.size());
      tests << delta << ',' << t.t << ',' << t.df << ',' << t.p_value << '\n';
    } else {
      tests << "nan,nan,0,nan\n";
    }
  }
  const fs::path tests_path = fs::path(a.out) / "ablation_ttest.csv";
  write_file(tests_path, tests.str());
  m.artifacts = {table, tests_path};
  std::cout << slurp(table);
  return failed > 0 ? kExitRuntime : 0;
}

struct LoadedRun {
  LoadedCheckpoint ckpt;
  json meta;
  RunConfig config;
};

LoadedRun open_checkpoint(const std::string& path, const DatasetBundle& bundle) {
  require_exists(path, "checkpoint");
  LoadedRun r{load_checkpoint(path), {}, {}};
  r.meta = json::parse(r.ckpt.extras.metadata_json);
  if (r.meta.contains("run_config")) r.config = run_config_from_json(r.meta["run_config"].dump());
  if (!r.ckpt.extras.question_ids.empty() && r.ckpt.extras.question_ids != question_ids_of(bundle)) {
    throw ValidationFailure("bundle questions do not match the checkpoint vocabulary");
  }
  if (r.ckpt.model.concept_count() != bundle.concept_count) {
    throw ValidationFailure("bundle concept count does not match the checkpoint");
  }
  return r;
}

int cmd_eval(const Args& a, RunManifest& m) {
  const DatasetBundle raw = load_bundle(a.bundle);
  const LoadedRun run = open_checkpoint(a.checkpoint, raw);
  m.inputs = {{"checkpoint", a.checkpoint}, {"bundle", a.bundle}};
  m.config = {{"buckets", a.buckets}, {"run_config", config_json(run.config)}};
  if (a.buckets < 1) throw ValidationFailure("--buckets must be >= 1");
  const DatasetBundle data = preprocess(raw, run.config.train.max_len, run.config.train.min_len);
  const EvalResult ev = evaluate(run.ckpt.model, data);
  const MetricReport report = compute_metrics(ev.targets);

  // Bands use the training-split correct rates stored at train time.
  QuestionStats stats;
  if (run.meta.contains("question_rate")) {
    stats.rate = run.meta["question_rate"].get<std::vector<double>>();
    stats.count = run.meta["question_count"].get<std::vector<std::size_t>>();
  } else {
    stats = compute_question_stats(data);
  }
  const BucketReport br = bucket_by_correct_rate(ev.targets, stats, uniform_edges(a.buckets));
  std::ostringstream csv;
  csv << "low,high,count,share,accuracy\n";
  for (const auto& b : br.buckets) {
    csv << b.low << ',' << b.high << ',' << b.count << ',' << b.share << ',';
    if (b.accuracy) {
      csv << *b.accuracy;
    } else {
      csv << "nan";
    }
    csv << '\n';
  }
  const fs::path metrics = fs::path(a.out) / "metrics.json";
  const fs::path buckets = fs::path(a.out) / "buckets.csv";
  write_file(metrics, metrics_json(report));
  write_file(buckets, csv.str());
  m.artifacts = {metrics, buckets};
  if (br.unassigned > 0) spdlog::warn("{} targets on questions without a training correct rate", br.unassigned);
  std::cout << slurp(metrics);
  return 0;
}

int cmd_explain(const Args& a, RunManifest& m) {
  const DatasetBundle raw = load_bundle(a.bundle);
  const LoadedRun run = open_checkpoint(a.checkpoint, raw);
  m.inputs = {{"checkpoint", a.checkpoint}, {"bundle", a.bundle}};
  m.config = {{"student", a.student}, {"target", a.target}, {"prefix", a.prefix}, {"plot", a.plot}};
  const auto seq = std::find_if(raw.sequences.begin(), raw.sequences.end(),
                                [&](const StudentSequence& s) { return s.student_id == a.student; });
  if (seq == raw.sequences.end()) throw ValidationFailure("unknown student " + a.student);
  const int target = raw.question_index(a.target);
  if (target < 0) throw ValidationFailure("unknown question id " + std::to_string(a.target));
  const auto& all = seq->interactions;
  std::size_t end = all.size();
  if (a.prefix >= 0) {
    if (static_cast<std::size_t>(a.prefix) > all.size()) throw ValidationFailure("--prefix exceeds the history length");
    end = static_cast<std::size_t>(a.prefix);
  }
  if (end == 0) throw ValidationFailure("explain needs at least one past interaction");
  // Only the most recent max_len interactions are visible, as in training.
  const std::size_t window = static_cast<std::size_t>(run.config.train.max_len);
  const std::size_t begin = end > window ? end - window : 0;
  ExplainReport report = explain(run.ckpt.model, std::span(all).subspan(begin, end - begin), target);
  report.student_id = a.student;
  report.target_question_id = a.target;

  const fs::path json_path = fs::path(a.out) / "explain.json";
  write_file(json_path, explain_to_json(report) + "\n");
  m.artifacts = {json_path};
  if (a.plot) {
    const fs::path dot = fs::path(a.out) / "explain.dot";
    const fs::path svg = fs::path(a.out) / "explain.svg";
    write_file(dot, explain_to_dot(report, run.ckpt.model.concept_map()));
    write_file(svg, explain_to_svg(report));
    m.artifacts.push_back(dot);
    m.artifacts.push_back(svg);
  }
  std::cout << "y_hat " << report.prediction.y_hat << "\n";
  return 0;
}

void configure_logging() {
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("CRKT_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only accept real names.
    if (level != spdlog::level::off || std::string(env) == "off") {
      spdlog::set_level(level);
    } else {
      spdlog::warn("ignoring unknown CRKT_LOG value '{}'", env);
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"CRKT knowledge tracing"};
  app.set_version_flag("--version", CRKT_VERSION);
  app.require_subcommand(1);
  Args a;

  auto seed_opt = [&](CLI::App* sub) {
    sub->add_option("--seed", a.seed, "random seed")->each([&](const std::string&) { a.seed_given = true; });
  };

  auto* ingest = app.add_subcommand("ingest", "validate raw logs and write a bundle");
  ingest->add_option("--interactions", a.interactions)->required();
  ingest->add_option("--questions", a.questions)->required();
  ingest->add_option("--edges", a.edges_in, "optional authored concept map CSV");
  ingest->add_option("--out", a.out)->required();

  auto* synth = app.add_subcommand("synth", "generate a synthetic bundle");
  synth->add_option("--config", a.config, "synthetic generator JSON");
  seed_opt(synth);
  synth->add_option("--out", a.out)->required();

  auto* build_map = app.add_subcommand("build-map", "write a concept map edge CSV");
  auto* edges_flag = build_map->add_option("--edges", a.edges_in, "authored edge CSV");
  auto* infer_flag = build_map->add_flag("--infer", a.infer, "infer edges from the bundle");
  edges_flag->excludes(infer_flag);
  infer_flag->excludes(edges_flag);
  build_map->add_flag("--require-prior-correct", a.prior_correct, "count a transition only after a correct answer");
  build_map->add_option("--bundle", a.bundle)->required();
  build_map->add_option("--out", a.out)->required();

  auto add_training = [&](CLI::App* sub) {
    sub->add_option("--bundle", a.bundle)->required();
    sub->add_option("--map", a.map, "concept map edge CSV")->required();
    sub->add_option("--config", a.config, "run config JSON");
    seed_opt(sub);
    sub->add_option("--out", a.out)->required();
  };
  auto* train_cmd = app.add_subcommand("train", "train one model");
  add_training(train_cmd);
  auto* cv = app.add_subcommand("cv", "k-fold cross-validation");
  add_training(cv);
  auto* ablate = app.add_subcommand("ablate", "full model and the four ablation variants");
  add_training(ablate);
  for (auto* sub : {cv, ablate}) {
    sub->add_option("--folds", a.folds)->check(CLI::Range(2, 100));
    sub->add_option("--jobs", a.jobs, "parallel folds")->check(CLI::PositiveNumber);
    sub->add_option("--dataset", a.dataset_name, "dataset label for the metric table")->default_val("data");
  }

  auto* eval = app.add_subcommand("eval", "metrics and correct-rate buckets");
  eval->add_option("--checkpoint", a.checkpoint)->required();
  eval->add_option("--bundle", a.bundle)->required();
  eval->add_option("--buckets", a.buckets)->default_val(10);
  eval->add_option("--out", a.out)->required();

  auto* explain_cmd = app.add_subcommand("explain", "explain one prediction");
  explain_cmd->add_option("--checkpoint", a.checkpoint)->required();
  explain_cmd->add_option("--bundle", a.bundle)->required();
  explain_cmd->add_option("--student", a.student)->required();
  explain_cmd->add_option("--target", a.target, "external question id")->required();
  explain_cmd->add_option("--prefix", a.prefix, "number of past interactions (default: whole history)");
  explain_cmd->add_flag("--plot", a.plot, "also write DOT and SVG");
  explain_cmd->add_option("--out", a.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  if (build_map->parsed() && a.edges_in.empty() && !a.infer) {
    std::cerr << "build-map: one of --edges or --infer is required\n";
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  RunManifest manifest;
  manifest.command = sub->get_name();
  manifest.seed = a.seed;
  for (int i = 0; i < argc; ++i) manifest.argv.emplace_back(argv[i]);

  int code = 0;
  try {
    if (sub == ingest) code = cmd_ingest(a, manifest);
    if (sub == synth) code = cmd_synth(a, manifest);
    if (sub == build_map) code = cmd_build_map(a, manifest);
    if (sub == train_cmd) code = cmd_train(a, manifest);
    if (sub == cv) code = cmd_cv(a, manifest);
    if (sub == ablate) code = cmd_ablate(a, manifest);
    if (sub == eval) code = cmd_eval(a, manifest);
    if (sub == explain_cmd) code = cmd_explain(a, manifest);
    const fs::path out(a.out);
    manifest.write(sub == build_map ? fs::path(a.out + ".manifest.json") : out / "manifest.json");
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ValidationFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return code;
}
