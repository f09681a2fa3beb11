#include "crkt/eval.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace crkt {

double accuracy(std::span<const double> y_hat, std::span<const int> labels, double threshold) {
  if (y_hat.size() != labels.size()) throw std::invalid_argument("accuracy: size mismatch");
  if (y_hat.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y_hat.size(); ++i) {
    if ((y_hat[i] >= threshold) == (labels[i] == 1)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(y_hat.size());
}

std::optional<double> auc(std::span<const double> y_hat, std::span<const int> labels) {
  if (y_hat.size() != labels.size()) throw std::invalid_argument("auc: size mismatch");
  const std::size_t n = y_hat.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return y_hat[a] < y_hat[b]; });
  // Twice the average rank keeps every quantity an exact integer.
  std::uint64_t pos = 0;
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && y_hat[order[j + 1]] == y_hat[order[i]]) ++j;
    const std::uint64_t twice_rank = i + j + 2;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) {
        ++pos;
        twice_rank_sum += twice_rank;
      }
    }
    i = j + 1;
  }
  const std::uint64_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const std::uint64_t twice_u = twice_rank_sum - pos * (pos + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

MetricReport compute_metrics(std::span<const ScoredTarget> targets) {
  std::vector<double> p;
  std::vector<int> y;
  for (const auto& t : targets) {
    p.push_back(t.y_hat);
    y.push_back(t.label);
  }
  MetricReport r;
  r.n = targets.size();
  if (r.n == 0) return r;
  r.acc = accuracy(p, y);
  r.auc = auc(p, y);
  return r;
}

EvalResult evaluate(const Model& model, const DatasetBundle& data) {
  EvalResult out;
  std::size_t sequences = 0;
  double total = 0.0;
  for (const auto& seq : data.sequences) {
    if (seq.interactions.size() < 2) continue;
    const auto preds = model.predict_sequence(seq.interactions);
    double loss = 0.0;
    for (std::size_t t = 1; t < seq.interactions.size(); ++t) {
      const auto& p = preds[t - 1];
      const auto& r = seq.interactions[t];
      const double z = p.ability - p.difficulty;
      loss += r.correct ? ad::softplus(-z) : ad::softplus(z);
      out.targets.push_back(ScoredTarget{p.y_hat, r.correct ? 1 : 0, r.question});
    }
    total += loss;
    ++sequences;
  }
  out.kt_loss = sequences ? total / static_cast<double>(sequences) : 0.0;
  return out;
}

std::vector<double> uniform_edges(int n) {
  if (n < 1) throw std::invalid_argument("bucket count must be >= 1");
  std::vector<double> e;
  for (int i = 0; i <= n; ++i) e.push_back(static_cast<double>(i) / n);
  return e;
}

BucketReport bucket_by_correct_rate(std::span<const ScoredTarget> targets, const QuestionStats& stats,
                                    const std::vector<double>& edges) {
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end())) {
    throw std::invalid_argument("bucket edges must be ascending with at least two entries");
  }
  BucketReport report;
  std::vector<std::size_t> hits(edges.size() - 1, 0);
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
    Bucket bucket;
    bucket.low = edges[b];
    bucket.high = edges[b + 1];
    report.buckets.push_back(bucket);
  }
  std::size_t assigned = 0;
  for (const auto& t : targets) {
    if (t.question < 0 || static_cast<std::size_t>(t.question) >= stats.rate.size() || !stats.seen(t.question)) {
      ++report.unassigned;
      continue;
    }
    const double r = stats.rate[t.question];
    auto it = std::upper_bound(edges.begin(), edges.end(), r);
    std::size_t b = static_cast<std::size_t>(it - edges.begin());
    if (b == 0 || (b == edges.size() && r > edges.back())) {
      ++report.unassigned;
      continue;
    }
    b = std::min(b - 1, report.buckets.size() - 1);
    ++report.buckets[b].count;
    if ((t.y_hat >= 0.5) == (t.label == 1)) ++hits[b];
    ++assigned;
  }
  for (std::size_t b = 0; b < report.buckets.size(); ++b) {
    auto& bucket = report.buckets[b];
    if (bucket.count) bucket.accuracy = static_cast<double>(hits[b]) / static_cast<double>(bucket.count);
    bucket.share = assigned ? static_cast<double>(bucket.count) / static_cast<double>(assigned) : 0.0;
  }
  return report;
}

ModelConfig build_variant(ModelConfig base, Ablation kind) {
  base.ablation = kind;
  if (kind == Ablation::no_unc) base.lambda = 0.0;
  return base;
}

ExplainReport explain(const Model& model, std::span<const InteractionRecord> prefix, int target_question) {
  ExplainReport r;
  r.target_question = target_question;
  r.prefix_length = prefix.size();
  r.prediction = model.predict(prefix, target_question);
  r.tags = model.vocabulary().question_concepts[static_cast<std::size_t>(target_question)];
  std::set<int> selected(r.prediction.selected_concepts.begin(), r.prediction.selected_concepts.end());
  std::set<int> nodes = selected;
  nodes.insert(r.tags.begin(), r.tags.end());
  for (const auto& [i, j] : model.concept_map().edges()) {
    if (selected.count(i) || selected.count(j)) {
      nodes.insert(i);
      nodes.insert(j);
    }
  }
  r.nodes.assign(nodes.begin(), nodes.end());
  for (const auto& e : model.concept_map().edges()) {
    if (nodes.count(e.first) && nodes.count(e.second)) r.edges.push_back(e);
  }
  return r;
}

std::string explain_to_json(const ExplainReport& r) {
  using nlohmann::json;
  const auto& p = r.prediction;
  json concepts = json::array();
  for (int c : r.nodes) {
    const bool sel = std::find(p.selected_concepts.begin(), p.selected_concepts.end(), c) != p.selected_concepts.end();
    concepts.push_back({{"concept", c},
                        {"mastery", p.mastery(c)},
                        {"relevance", p.relevance(c)},
                        {"raw_relevance", p.raw_relevance(c)},
                        {"selected", sel}});
  }
  json j{{"student_id", r.student_id},
         {"target_question", r.target_question_id},
         {"target_index", r.target_question},
         {"prefix_length", r.prefix_length},
         {"y_hat", p.y_hat},
         {"ability", p.ability},
         {"difficulty", p.difficulty},
         {"selected_concepts", p.selected_concepts},
         {"question_concepts", r.tags},
         {"concepts", concepts},
         {"nodes", r.nodes},
         {"edges", r.edges},
         {"mastery", std::vector<double>(p.mastery.data(), p.mastery.data() + p.mastery.size())}};
  return j.dump(2);
}

namespace {

std::string mastery_color(double mastery) {
  const double t = ad::sigmoid(mastery);
  const int r = static_cast<int>(std::lround(215 + t * (26 - 215)));
  const int g = static_cast<int>(std::lround(48 + t * (152 - 48)));
  const int b = static_cast<int>(std::lround(31 + t * (80 - 31)));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string explain_to_dot(const ExplainReport& r, const ConceptMap& map) {
  std::map<int, DotNodeStyle> styles;
  const auto& p = r.prediction;
  for (int c : r.nodes) {
    const bool sel = std::find(p.selected_concepts.begin(), p.selected_concepts.end(), c) != p.selected_concepts.end();
    styles[c] = DotNodeStyle{"c" + std::to_string(c) + "\\nm=" + fixed(p.mastery(c)), mastery_color(p.mastery(c)), sel};
  }
  return to_dot(map, r.nodes, styles);
}

std::string explain_to_svg(const ExplainReport& r) {
  const auto& p = r.prediction;
  const double cx = 220, cy = 230, radius = r.nodes.size() > 1 ? 150 : 0;
  std::map<int, std::pair<double, double>> at;
  const double pi = std::acos(-1.0);
  for (std::size_t i = 0; i < r.nodes.size(); ++i) {
    const double a = 2 * pi * static_cast<double>(i) / static_cast<double>(r.nodes.size()) - pi / 2;
    at[r.nodes[i]] = {cx + radius * std::cos(a), cy + radius * std::sin(a)};
  }
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"460\" font-family=\"sans-serif\">\n"
     << "<defs><marker id=\"arrow\" viewBox=\"0 0 10 10\" refX=\"10\" refY=\"5\" markerWidth=\"7\" "
        "markerHeight=\"7\" orient=\"auto\"><path d=\"M0,0 L10,5 L0,10 z\" fill=\"#555\"/></marker></defs>\n"
     << "<rect width=\"760\" height=\"460\" fill=\"#ffffff\"/>\n"
     << "<text x=\"20\" y=\"30\" font-size=\"18\">Concept neighbourhood of question " << r.target_question_id
     << "</text>\n";
  constexpr double node_r = 26;
  for (const auto& [i, j] : r.edges) {
    auto [x1, y1] = at[i];
    auto [x2, y2] = at[j];
    const double len = std::hypot(x2 - x1, y2 - y1);
    if (len <= 2 * node_r) continue;
    const double ux = (x2 - x1) / len, uy = (y2 - y1) / len;
    os << "<line x1=\"" << fixed(x1 + ux * node_r, 1) << "\" y1=\"" << fixed(y1 + uy * node_r, 1) << "\" x2=\""
       << fixed(x2 - ux * node_r, 1) << "\" y2=\"" << fixed(y2 - uy * node_r, 1)
       << "\" stroke=\"#555\" stroke-width=\"1.5\" marker-end=\"url(#arrow)\"/>\n";
  }
  for (int c : r.nodes) {
    auto [x, y] = at[c];
    const bool sel = std::find(p.selected_concepts.begin(), p.selected_concepts.end(), c) != p.selected_concepts.end();
    const bool tag = std::find(r.tags.begin(), r.tags.end(), c) != r.tags.end();
    os << "<circle cx=\"" << fixed(x, 1) << "\" cy=\"" << fixed(y, 1) << "\" r=\"" << node_r << "\" fill=\""
       << mastery_color(p.mastery(c)) << "\" stroke=\"" << (sel ? "#e0a800" : "#333") << "\" stroke-width=\""
       << (sel ? 4 : 1) << "\"" << (tag ? " stroke-dasharray=\"5,3\"" : "") << "/>\n";
    os << "<text x=\"" << fixed(x, 1) << "\" y=\"" << fixed(y - 3, 1)
       << "\" font-size=\"12\" text-anchor=\"middle\" fill=\"#fff\">c" << c << "</text>\n";
    os << "<text x=\"" << fixed(x, 1) << "\" y=\"" << fixed(y + 12, 1)
       << "\" font-size=\"10\" text-anchor=\"middle\" fill=\"#fff\">" << fixed(p.mastery(c), 2) << "</text>\n";
  }
  double y = 80;
  const double px = 460;
  auto line = [&](const std::string& text, int size = 14) {
    os << "<text x=\"" << px << "\" y=\"" << fixed(y, 1) << "\" font-size=\"" << size << "\">" << text << "</text>\n";
    y += size + 10;
  };
  line("P(correct) = " + fixed(p.y_hat), 16);
  line("ability = " + fixed(p.ability));
  line("difficulty = " + fixed(p.difficulty));
  line("history length = " + std::to_string(r.prefix_length));
  y += 10;
  line("top-k relevance", 14);
  for (int c : p.selected_concepts) {
    const double w = 200 * p.relevance(c);
    os << "<rect x=\"" << px + 40 << "\" y=\"" << fixed(y - 12, 1) << "\" width=\"" << fixed(w, 1)
       << "\" height=\"14\" fill=\"" << mastery_color(p.mastery(c)) << "\"/>\n";
    os << "<text x=\"" << px << "\" y=\"" << fixed(y, 1) << "\" font-size=\"12\">c" << c << "</text>\n";
    os << "<text x=\"" << fixed(px + 46 + w, 1) << "\" y=\"" << fixed(y, 1) << "\" font-size=\"12\">"
       << fixed(p.relevance(c)) << "</text>\n";
    y += 22;
  }
  os << "</svg>\n";
  return os.str();
}

std::pair<double, double> mean_std(std::span<const double> v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::string metric_table_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os << "model,dataset,fold,acc,auc\n";
  std::vector<std::pair<std::string, std::string>> groups;
  for (const auto& r : rows) {
    os << r.model << ',' << r.dataset << ',' << r.fold << ',' << fixed(r.acc, 6) << ',' << fixed(r.auc, 6) << '\n';
    const std::pair key{r.model, r.dataset};
    if (std::find(groups.begin(), groups.end(), key) == groups.end()) groups.push_back(key);
  }
  for (const auto& [model, dataset] : groups) {
    std::vector<double> acc, area;
    for (const auto& r : rows) {
      if (r.model == model && r.dataset == dataset) {
        acc.push_back(100 * r.acc);
        area.push_back(100 * r.auc);
      }
    }
    const auto [am, as] = mean_std(acc);
    const auto [um, us] = mean_std(area);
    os << model << ',' << dataset << ",mean±std," << fixed(am, 2) << "±" << fixed(as, 2) << ',' << fixed(um, 2)
       << "±" << fixed(us, 2) << '\n';
  }
  return os.str();
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("paired t-test needs two equal samples of size >= 2");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) d.push_back(a[i] - b[i]);
  const auto [mean, sd] = mean_std(d);
  TTestResult r;
  r.df = static_cast<int>(d.size()) - 1;
  if (sd == 0.0) {
    r.t = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
    r.p_value = mean == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(d.size())));
  const boost::math::students_t dist(r.df);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

}  // namespace crkt
