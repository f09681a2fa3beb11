#include "crkt/data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace crkt {
namespace {

using json = nlohmann::json;

std::string with_location(const std::string& message, std::size_t line, const std::string& file) {
  if (line == 0) return message;
  std::ostringstream os;
  if (!file.empty()) os << file << ":";
  os << "line " << line << ": " << message;
  return os.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && issp(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && issp(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

std::optional<long long> parse_int(const std::string& text) {
  long long v = 0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || text.empty()) return std::nullopt;
  return v;
}

// Option letters A..Z map to 0..25; plain integers pass through.
std::optional<long long> parse_option(const std::string& text) {
  if (text.size() == 1 && text[0] >= 'A' && text[0] <= 'Z') return text[0] - 'A';
  return parse_int(text);
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

constexpr const char* kInteractionsHeader = "student_id,position,question_id,chosen_option,correct";
constexpr const char* kEdgeHeader = "source_concept,target_concept";

std::vector<QuestionMeta> load_questions(const std::filesystem::path& path) {
  auto in = open_input(path);
  const std::string file = path.filename().string();
  std::vector<QuestionMeta> questions;
  std::set<int> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed JSON: ") + e.what(), lineno, file);
    }
    QuestionMeta q;
    try {
      q.question_id = j.at("question_id").get<int>();
      q.option_count = j.at("option_count").get<int>();
      q.correct_option = j.at("correct_option").get<int>();
      q.concept_ids = j.at("concept_ids").get<std::vector<int>>();
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed question record: ") + e.what(), lineno, file);
    }
    if (q.option_count < 2) throw DataError("option_count must be >= 2", lineno, file);
    if (q.correct_option < 0 || q.correct_option >= q.option_count) {
      throw DataError("correct_option out of range", lineno, file);
    }
    if (q.concept_ids.empty()) throw DataError("concept_ids must be non-empty", lineno, file);
    for (int c : q.concept_ids) {
      if (c < 0) throw DataError("negative concept id", lineno, file);
    }
    std::sort(q.concept_ids.begin(), q.concept_ids.end());
    q.concept_ids.erase(std::unique(q.concept_ids.begin(), q.concept_ids.end()), q.concept_ids.end());
    if (!seen.insert(q.question_id).second) {
      throw DataError("duplicate question_id " + std::to_string(q.question_id), lineno, file);
    }
    questions.push_back(std::move(q));
  }
  std::sort(questions.begin(), questions.end(),
            [](const QuestionMeta& a, const QuestionMeta& b) { return a.question_id < b.question_id; });
  return questions;
}

}  // namespace

DataError::DataError(const std::string& message, std::size_t line, std::string file)
    : std::runtime_error(with_location(message, line, file)), line_(line), file_(std::move(file)) {}

int DatasetBundle::question_index(int question_id) const {
  auto it = std::lower_bound(questions.begin(), questions.end(), question_id,
                             [](const QuestionMeta& q, int id) { return q.question_id < id; });
  if (it == questions.end() || it->question_id != question_id) return -1;
  return static_cast<int>(it - questions.begin());
}

std::size_t DatasetBundle::interaction_count() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.interactions.size();
  return n;
}

std::vector<int> derive_unchosen(const InteractionRecord& record, const QuestionMeta& meta) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(std::max(0, meta.option_count - 1)));
  for (int o = 0; o < meta.option_count; ++o) {
    if (o != record.chosen_option) out.push_back(o);
  }
  return out;
}

void validate(const DatasetBundle& bundle) {
  for (std::size_t i = 0; i < bundle.questions.size(); ++i) {
    const auto& q = bundle.questions[i];
    if (i > 0 && bundle.questions[i - 1].question_id >= q.question_id) {
      throw DataError("questions must be sorted by unique question_id");
    }
    if (q.option_count < 2 || q.correct_option < 0 || q.correct_option >= q.option_count) {
      throw DataError("question " + std::to_string(q.question_id) + " has invalid options");
    }
    if (q.concept_ids.empty()) {
      throw DataError("question " + std::to_string(q.question_id) + " has no concepts");
    }
    for (int c : q.concept_ids) {
      if (c < 0 || c >= bundle.concept_count) {
        throw DataError("question " + std::to_string(q.question_id) + " concept out of range");
      }
    }
  }
  for (const auto& s : bundle.sequences) {
    for (std::size_t t = 0; t < s.interactions.size(); ++t) {
      const auto& r = s.interactions[t];
      if (r.position != static_cast<int>(t)) {
        throw DataError("student " + s.student_id + ": positions are not consecutive from 0");
      }
      if (r.question < 0 || r.question >= static_cast<int>(bundle.questions.size())) {
        throw DataError("student " + s.student_id + ": unknown question");
      }
      const auto& q = bundle.questions[r.question];
      if (r.chosen_option < 0 || r.chosen_option >= q.option_count) {
        throw DataError("student " + s.student_id + ": chosen_option out of range");
      }
      if (r.correct != (r.chosen_option == q.correct_option)) {
        throw DataError("student " + s.student_id + ": correct flag disagrees with correct_option");
      }
    }
  }
  if (bundle.concept_edges) {
    for (const auto& [i, j] : *bundle.concept_edges) {
      if (i < 0 || j < 0 || i >= bundle.concept_count || j >= bundle.concept_count) {
        throw DataError("concept edge out of range");
      }
    }
  }
}

DatasetBundle load_dataset(const std::filesystem::path& interactions_path,
                           const std::filesystem::path& questions_path) {
  DatasetBundle bundle;
  bundle.questions = load_questions(questions_path);
  int max_concept = -1;
  for (const auto& q : bundle.questions) max_concept = std::max(max_concept, q.concept_ids.back());
  bundle.concept_count = max_concept + 1;

  auto in = open_input(interactions_path);
  const std::string file = interactions_path.filename().string();
  std::string line;
  std::size_t lineno = 0;
  std::unordered_map<std::string, std::size_t> student_slot;
  std::vector<std::map<int, InteractionRecord>> per_student;

  if (std::getline(in, line)) {
    ++lineno;
    if (trim(line) != kInteractionsHeader) {
      throw DataError(std::string("expected header '") + kInteractionsHeader + "'", lineno, file);
    }
  }
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 5) throw DataError("expected 5 fields", lineno, file);
    const std::string student = trim(fields[0]);
    if (student.empty()) throw DataError("empty student_id", lineno, file);
    const auto position = parse_int(trim(fields[1]));
    const auto question_id = parse_int(trim(fields[2]));
    const auto chosen = parse_option(trim(fields[3]));
    const auto correct = parse_int(trim(fields[4]));
    if (!position || *position < 0) throw DataError("malformed position", lineno, file);
    if (!question_id) throw DataError("malformed question_id", lineno, file);
    if (!chosen) throw DataError("malformed chosen_option", lineno, file);
    if (!correct || (*correct != 0 && *correct != 1)) {
      throw DataError("correct must be 0 or 1", lineno, file);
    }
    const int qidx = bundle.question_index(static_cast<int>(*question_id));
    if (qidx < 0) {
      throw DataError("unknown question_id " + std::to_string(*question_id), lineno, file);
    }
    const auto& meta = bundle.questions[qidx];
    if (*chosen < 0 || *chosen >= meta.option_count) {
      throw DataError("chosen_option " + std::to_string(*chosen) + " out of range for question " +
                          std::to_string(meta.question_id) + " with " +
                          std::to_string(meta.option_count) + " options",
                      lineno, file);
    }
    const bool is_correct = *correct == 1;
    if (is_correct != (*chosen == meta.correct_option)) {
      throw DataError("correct flag disagrees with correct_option of question " +
                          std::to_string(meta.question_id),
                      lineno, file);
    }
    auto [it, inserted] = student_slot.try_emplace(student, per_student.size());
    if (inserted) {
      per_student.emplace_back();
      bundle.sequences.push_back(StudentSequence{student, {}});
    }
    InteractionRecord rec{qidx, static_cast<int>(*chosen), is_correct, static_cast<int>(*position)};
    if (!per_student[it->second].emplace(rec.position, rec).second) {
      throw DataError("duplicate (student_id, position) = (" + student + ", " +
                          std::to_string(*position) + ")",
                      lineno, file);
    }
  }
  // Positions are ordinal; gaps are closed when renumbering from 0.
  for (std::size_t s = 0; s < per_student.size(); ++s) {
    auto& seq = bundle.sequences[s].interactions;
    for (const auto& [pos, rec] : per_student[s]) {
      seq.push_back(rec);
      seq.back().position = static_cast<int>(seq.size() - 1);
    }
  }
  validate(bundle);
  return bundle;
}

std::vector<std::pair<int, int>> load_edge_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  const std::string file = path.filename().string();
  std::vector<std::pair<int, int>> edges;
  std::string line;
  std::size_t lineno = 0;
  if (std::getline(in, line)) {
    ++lineno;
    if (trim(line) != kEdgeHeader) {
      throw DataError(std::string("expected header '") + kEdgeHeader + "'", lineno, file);
    }
  }
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 2) throw DataError("expected 2 fields", lineno, file);
    const auto a = parse_int(trim(fields[0]));
    const auto b = parse_int(trim(fields[1]));
    if (!a || !b || *a < 0 || *b < 0) throw DataError("malformed concept index", lineno, file);
    edges.emplace_back(static_cast<int>(*a), static_cast<int>(*b));
  }
  return edges;
}

void write_edge_csv(const std::vector<std::pair<int, int>>& edges, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kEdgeHeader << "\n";
  for (const auto& [i, j] : edges) out << i << "," << j << "\n";
}

void write_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "questions.jsonl");
    if (!out) throw std::runtime_error("cannot write " + (dir / "questions.jsonl").string());
    for (const auto& q : bundle.questions) {
      json j;
      j["question_id"] = q.question_id;
      j["option_count"] = q.option_count;
      j["correct_option"] = q.correct_option;
      j["concept_ids"] = q.concept_ids;
      out << j.dump() << "\n";
    }
  }
  {
    std::ofstream out(dir / "interactions.csv");
    if (!out) throw std::runtime_error("cannot write " + (dir / "interactions.csv").string());
    out << kInteractionsHeader << "\n";
    for (const auto& s : bundle.sequences) {
      for (const auto& r : s.interactions) {
        out << s.student_id << "," << r.position << "," << bundle.questions[r.question].question_id
            << "," << r.chosen_option << "," << (r.correct ? 1 : 0) << "\n";
      }
    }
  }
  const auto map_path = dir / "concept_map.csv";
  if (bundle.concept_edges) {
    write_edge_csv(*bundle.concept_edges, map_path);
  } else if (std::filesystem::exists(map_path)) {
    std::filesystem::remove(map_path);
  }
}

DatasetBundle load_bundle_dir(const std::filesystem::path& dir) {
  DatasetBundle bundle = load_dataset(dir / "interactions.csv", dir / "questions.jsonl");
  const auto map_path = dir / "concept_map.csv";
  if (std::filesystem::exists(map_path)) {
    bundle.concept_edges = load_edge_csv(map_path);
    for (const auto& [i, j] : *bundle.concept_edges) {
      bundle.concept_count = std::max({bundle.concept_count, i + 1, j + 1});
    }
  }
  validate(bundle);
  return bundle;
}

DatasetBundle preprocess(const DatasetBundle& bundle, int max_len, int min_len) {
  if (min_len < 1 || max_len < min_len) throw std::invalid_argument("preprocess: need max_len >= min_len >= 1");
  DatasetBundle out;
  out.questions = bundle.questions;
  out.concept_count = bundle.concept_count;
  out.concept_edges = bundle.concept_edges;
  for (const auto& seq : bundle.sequences) {
    const auto n = static_cast<int>(seq.interactions.size());
    for (int start = 0; start < n; start += max_len) {
      const int len = std::min(max_len, n - start);
      if (len < min_len) continue;
      StudentSequence window{seq.student_id, {}};
      window.interactions.assign(seq.interactions.begin() + start, seq.interactions.begin() + start + len);
      for (int t = 0; t < len; ++t) window.interactions[t].position = t;
      out.sequences.push_back(std::move(window));
    }
  }
  return out;
}

namespace {

std::vector<std::string> unique_students(const DatasetBundle& bundle) {
  std::vector<std::string> ids;
  std::unordered_set<std::string> seen;
  for (const auto& s : bundle.sequences) {
    if (seen.insert(s.student_id).second) ids.push_back(s.student_id);
  }
  return ids;
}

}  // namespace

SplitPlan make_folds(const DatasetBundle& bundle, int k, std::uint64_t seed, double validation_fraction) {
  if (k < 2) throw std::invalid_argument("make_folds: k must be >= 2");
  auto students = unique_students(bundle);
  if (static_cast<int>(students.size()) < k) {
    throw DataError("make_folds: " + std::to_string(students.size()) + " students is fewer than k = " +
                    std::to_string(k));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(students.begin(), students.end(), rng);

  SplitPlan plan{k, seed, {}};
  const std::size_t n = students.size();
  const std::size_t base = n / static_cast<std::size_t>(k);
  const std::size_t extra = n % static_cast<std::size_t>(k);
  std::size_t start = 0;
  for (int f = 0; f < k; ++f) {
    const std::size_t size = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
    Fold fold;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= start && i < start + size) {
        fold.test.push_back(students[i]);
      } else {
        rest.push_back(students[i]);
      }
    }
    const auto n_val = static_cast<std::size_t>(std::lround(validation_fraction * static_cast<double>(rest.size())));
    fold.validation.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(std::min(n_val, rest.size())));
    fold.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(std::min(n_val, rest.size())), rest.end());
    plan.folds.push_back(std::move(fold));
    start += size;
  }
  return plan;
}

DatasetBundle select_students(const DatasetBundle& bundle, const std::vector<std::string>& students) {
  const std::unordered_set<std::string> keep(students.begin(), students.end());
  DatasetBundle out;
  out.questions = bundle.questions;
  out.concept_count = bundle.concept_count;
  out.concept_edges = bundle.concept_edges;
  for (const auto& s : bundle.sequences) {
    if (keep.count(s.student_id)) out.sequences.push_back(s);
  }
  return out;
}

StatsReport dataset_stats(const DatasetBundle& bundle) {
  StatsReport r;
  r.students = unique_students(bundle).size();
  r.concepts = bundle.concept_count;
  r.questions = bundle.questions.size();
  r.interactions = bundle.interaction_count();
  if (!bundle.questions.empty()) {
    r.min_options = bundle.questions.front().option_count;
    r.max_options = r.min_options;
    double concepts = 0.0;
    for (const auto& q : bundle.questions) {
      r.min_options = std::min(r.min_options, q.option_count);
      r.max_options = std::max(r.max_options, q.option_count);
      concepts += static_cast<double>(q.concept_ids.size());
    }
    r.avg_concepts_per_question = concepts / static_cast<double>(bundle.questions.size());
  }
  std::size_t correct = 0;
  std::unordered_map<std::string, std::unordered_set<int>> attempted;
  for (const auto& s : bundle.sequences) {
    auto& set = attempted[s.student_id];
    for (const auto& rec : s.interactions) {
      correct += rec.correct ? 1 : 0;
      set.insert(rec.question);
    }
  }
  if (r.interactions > 0) r.correct_rate = static_cast<double>(correct) / static_cast<double>(r.interactions);
  const double cells = static_cast<double>(r.students) * static_cast<double>(r.questions);
  if (cells > 0) {
    std::size_t pairs = 0;
    for (const auto& [_, set] : attempted) pairs += set.size();
    r.sparsity = 1.0 - static_cast<double>(pairs) / cells;
  }
  r.relations = bundle.concept_edges ? bundle.concept_edges->size() : 0;
  return r;
}

std::string stats_to_json(const StatsReport& s) {
  json j;
  j["students"] = s.students;
  j["concepts"] = s.concepts;
  j["questions"] = s.questions;
  j["interactions"] = s.interactions;
  j["options_per_question"] = {s.min_options, s.max_options};
  j["avg_concepts_per_question"] = s.avg_concepts_per_question;
  j["correct_rate"] = s.correct_rate;
  j["sparsity"] = s.sparsity;
  j["relations"] = s.relations;
  return j.dump(2);
}

SynthConfig synth_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("synthetic config: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("synthetic config: expected an object");
  static const std::set<std::string> known{"students", "questions", "concepts", "options", "min_length", "max_length",
                                           "max_concepts_per_question", "edge_probability", "ability_std",
                                           "difficulty_std", "prerequisite_weight", "distractor_informativeness",
                                           "distractors_span_all_concepts", "distractor_rule",
                                           "general_ability_std", "flat"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("synthetic config: unknown key '" + key + "'");
  }
  SynthConfig c;
  c.students = j.value("students", c.students);
  c.questions = j.value("questions", c.questions);
  c.concepts = j.value("concepts", c.concepts);
  c.options = j.value("options", c.options);
  c.min_length = j.value("min_length", c.min_length);
  c.max_length = j.value("max_length", c.max_length);
  c.max_concepts_per_question = j.value("max_concepts_per_question", c.max_concepts_per_question);
  c.edge_probability = j.value("edge_probability", c.edge_probability);
  c.ability_std = j.value("ability_std", c.ability_std);
  c.difficulty_std = j.value("difficulty_std", c.difficulty_std);
  c.prerequisite_weight = j.value("prerequisite_weight", c.prerequisite_weight);
  c.distractor_informativeness = j.value("distractor_informativeness", c.distractor_informativeness);
  c.distractors_span_all_concepts = j.value("distractors_span_all_concepts", c.distractors_span_all_concepts);
  c.distractor_rule = j.value("distractor_rule", c.distractor_rule);
  c.general_ability_std = j.value("general_ability_std", c.general_ability_std);
  c.flat = j.value("flat", c.flat);
  return c;
}

SyntheticDataset generate_synthetic(const SynthConfig& config, std::uint64_t seed) {
  if (config.students <= 0 || config.questions <= 0 || config.concepts <= 0 || config.options < 2 ||
      config.min_length <= 0 || config.max_length < config.min_length ||
      config.max_concepts_per_question <= 0 || config.general_ability_std < 0.0) {
    throw std::invalid_argument("generate_synthetic: invalid config");
  }
  if (config.distractor_rule != "weakest_concept" && config.distractor_rule != "deficit_severity") {
    throw std::invalid_argument("generate_synthetic: unknown distractor_rule '" + config.distractor_rule + "'");
  }
  const bool by_severity = config.distractor_rule == "deficit_severity";
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  SyntheticDataset out;
  auto& truth = out.truth;
  auto& bundle = out.bundle;
  const int nc = config.concepts;

  // Random DAG: edges only go forward along a shuffled topological order.
  std::vector<int> order(nc);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> parents(nc);
  for (int a = 0; a < nc; ++a) {
    for (int b = a + 1; b < nc; ++b) {
      if (unit(rng) < config.edge_probability) {
        truth.edges.emplace_back(order[a], order[b]);
        parents[order[b]].push_back(order[a]);
      }
    }
  }
  std::sort(truth.edges.begin(), truth.edges.end());
  bundle.concept_count = nc;
  bundle.concept_edges = truth.edges;

  for (int q = 0; q < config.questions; ++q) {
    QuestionMeta meta;
    meta.question_id = q;
    meta.option_count = config.options;
    meta.correct_option = static_cast<int>(rng() % static_cast<std::uint64_t>(config.options));
    const int n_concepts = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(std::min(config.max_concepts_per_question, nc)));
    std::vector<int> pool(nc);
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    meta.concept_ids.assign(pool.begin(), pool.begin() + n_concepts);
    std::sort(meta.concept_ids.begin(), meta.concept_ids.end());

    // Distractors are tied to the question's concepts and their prerequisites.
    std::vector<int> related = meta.concept_ids;
    for (int c : meta.concept_ids) related.insert(related.end(), parents[c].begin(), parents[c].end());
    if (config.distractors_span_all_concepts) {
      related.resize(static_cast<std::size_t>(nc));
      std::iota(related.begin(), related.end(), 0);
    }
    std::sort(related.begin(), related.end());
    related.erase(std::unique(related.begin(), related.end()), related.end());
    std::shuffle(related.begin(), related.end(), rng);
    std::vector<int> tied(config.options, -1);
    int slot = 0;
    for (int o = 0; o < config.options; ++o) {
      if (o == meta.correct_option) continue;
      tied[o] = related[static_cast<std::size_t>(slot++) % related.size()];
    }
    truth.distractor_concepts.push_back(std::move(tied));
    truth.difficulties.push_back(config.flat ? 0.0 : config.difficulty_std * normal(rng));
    bundle.questions.push_back(std::move(meta));
  }

  std::vector<int> topo = order;
  for (int s = 0; s < config.students; ++s) {
    std::vector<double> ability(nc, 0.0);
    if (!config.flat) {
      const double general = config.general_ability_std > 0.0 ? config.general_ability_std * normal(rng) : 0.0;
      std::vector<double> base(nc);
      for (int c = 0; c < nc; ++c) base[c] = general + config.ability_std * normal(rng);
      for (int c : topo) {
        double prior = 0.0;
        for (int p : parents[c]) prior += ability[p];
        if (!parents[c].empty()) prior /= static_cast<double>(parents[c].size());
        ability[c] = base[c] + config.prerequisite_weight * prior;
      }
    }
    char id[32];
    std::snprintf(id, sizeof(id), "s%05d", s);
    StudentSequence seq{id, {}};
    std::vector<double> probs;
    const int len = config.min_length +
                    static_cast<int>(rng() % static_cast<std::uint64_t>(config.max_length - config.min_length + 1));
    for (int t = 0; t < len; ++t) {
      const int q = static_cast<int>(rng() % static_cast<std::uint64_t>(config.questions));
      const auto& meta = bundle.questions[q];
      double theta = 0.0;
      for (int c : meta.concept_ids) theta += ability[c];
      theta /= static_cast<double>(meta.concept_ids.size());
      const double p = 1.0 / (1.0 + std::exp(-(theta - truth.difficulties[q])));
      const bool correct = unit(rng) < p;
      int chosen = meta.correct_option;
      if (!correct) {
        const auto& tied = truth.distractor_concepts[q];
        std::vector<int> distractors;
        for (int o = 0; o < meta.option_count; ++o) {
          if (o != meta.correct_option) distractors.push_back(o);
        }
        if (unit(rng) < config.distractor_informativeness) {
          if (by_severity) {
            const auto n = static_cast<double>(distractors.size());
            chosen = distractors[static_cast<std::size_t>(std::min(n - 1.0, std::floor((1.0 - p) * n)))];
          } else {
            chosen = distractors.front();
            for (int o : distractors) {
              if (ability[tied[o]] < ability[tied[chosen]]) chosen = o;
            }
          }
        } else {
          chosen = distractors[rng() % distractors.size()];
        }
      }
      seq.interactions.push_back(InteractionRecord{q, chosen, correct, t});
      probs.push_back(p);
    }
    truth.abilities.push_back(std::move(ability));
    truth.probabilities.push_back(std::move(probs));
    bundle.sequences.push_back(std::move(seq));
  }
  validate(bundle);
  return out;
}

}  // namespace crkt
