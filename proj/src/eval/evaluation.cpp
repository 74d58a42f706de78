#include "sqac/eval/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "sqac/error.hpp"
#include "sqac/log.hpp"
#include "sqac/model/checkpoint.hpp"

namespace sqac::eval {
namespace {

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(9);
  return out;
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("pearson: sequences differ in length");
  if (x.size() < 3) throw Error("pearson: need at least 3 pairs, got " + std::to_string(x.size()));
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw UndefinedCorrelation("pearson: undefined correlation (zero variance)");
  // sxx * syy keeps the expression symmetric under swapping x and y.
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

EvalReport report_from_predictions(const std::string& model_id, double effective_params,
                                   const std::vector<synth::ManifestEntry>& test,
                                   std::span<const double> predictions) {
  if (predictions.size() != test.size()) throw Error("evaluate: prediction count does not match clip count");
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (!test[i].mos) throw Error("evaluate: test clip without a MOS label: " + test[i].clip_path);
    auto& g = groups[test[i].dataset_id];
    g.first.push_back(predictions[i]);
    g.second.push_back(*test[i].mos);
  }
  EvalReport r;
  r.model_id = model_id;
  r.effective_params = effective_params;
  double wsum = 0.0, wn = 0.0, usum = 0.0, un = 0.0;
  for (const auto& [id, g] : groups) {
    DatasetScore s{id, g.first.size(), std::nullopt};
    if (s.clips < 3) {
      log::warn("evaluate: dataset '" + id + "' has " + std::to_string(s.clips) + " clips; excluded");
    } else {
      try {
        s.pcc = pearson(g.first, g.second);
      } catch (const Error& e) {
        log::warn("evaluate: dataset '" + id + "' excluded: " + e.what());
      }
    }
    if (s.pcc) {
      wsum += static_cast<double>(s.clips) * *s.pcc;
      wn += static_cast<double>(s.clips);
      usum += *s.pcc;
      un += 1.0;
    }
    r.datasets.push_back(std::move(s));
  }
  if (un == 0.0) throw UndefinedCorrelation("evaluate: no dataset has a defined correlation");
  r.weighted_mean = wsum / wn;
  r.unweighted_mean = usum / un;
  return r;
}

EvalReport evaluate(const model::QualityModel& m, const std::vector<synth::ManifestEntry>& test, BiasMode mode,
                    train::FeatureStore& features, const std::string& model_id) {
  std::vector<double> pred;
  pred.reserve(test.size());
  for (const auto& e : test) {
    const double logit = m.forward(features.features(e.clip_path)).item();
    const auto [a, b] = mode == BiasMode::kPerDataset ? m.bias().params(e.dataset_id) : m.bias().params(std::nullopt);
    pred.push_back(model::to_mos(logit, a, b));
  }
  return report_from_predictions(model_id, model::count_parameters(m, true), test, pred);
}

EvalReport evaluate_teacher(train::Teacher& teacher, const std::vector<synth::ManifestEntry>& test) {
  std::vector<double> pred;
  pred.reserve(test.size());
  for (const auto& e : test) pred.push_back(teacher.score(e));
  return report_from_predictions("teacher", 0.0, test, pred);
}

void write_report(const std::filesystem::path& path, const EvalReport& r) {
  auto out = open_for_write(path);
  out << "dataset_id,n_clips,pcc\n";
  for (const auto& d : r.datasets) {
    out << d.dataset_id << ',' << d.clips << ',';
    if (d.pcc) {
      out << *d.pcc;
    } else {
      out << "NA";
    }
    out << '\n';
  }
  out << "weighted_mean," << r.weighted_mean << '\n';
  out << "unweighted_mean," << r.unweighted_mean << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

const char* method_name(Method m) {
  switch (m) {
    case Method::kBaseline: return "baseline";
    case Method::kDistilled: return "distilled";
    case Method::kPrunedTaylor: return "pruned_taylor";
    case Method::kPrunedMagnitude: return "pruned_magnitude";
    case Method::kTeacher: return "teacher";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::kBaseline, Method::kDistilled, Method::kPrunedTaylor, Method::kPrunedMagnitude,
                   Method::kTeacher})
    if (name == method_name(m)) return m;
  throw ConfigError("unknown method tag '" + name + "'");
}

std::vector<SweepRow> size_sweep(const std::vector<SweepInput>& inputs,
                                 const std::vector<synth::ManifestEntry>& test, train::FeatureStore& features,
                                 train::Teacher* teacher) {
  std::vector<SweepRow> rows;
  for (const auto& in : inputs) {
    if (in.method == Method::kTeacher) continue;
    const model::QualityModel m = model::load_checkpoint(in.checkpoint);
    const std::string id = in.model_id.empty() ? in.checkpoint.stem().string() : in.model_id;
    try {
      const EvalReport r = evaluate(m, test, BiasMode::kUniversal, features, id);
      rows.push_back({id, in.method, r.effective_params, r.weighted_mean});
    } catch (const UndefinedCorrelation& e) {
      log::warn("size_sweep: leaving out " + id + ": " + e.what());
    }
  }
  if (teacher != nullptr) rows.push_back({"teacher", Method::kTeacher, 0.0, evaluate_teacher(*teacher, test).weighted_mean});
  if (rows.size() < 2) throw Error("size_sweep: need at least two models, got " + std::to_string(rows.size()));
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    if (a.effective_params != b.effective_params) return a.effective_params < b.effective_params;
    return a.model_id < b.model_id;
  });
  return rows;
}

void write_sweep(const std::filesystem::path& csv, const std::filesystem::path& dat,
                 const std::vector<SweepRow>& rows) {
  {
    auto out = open_for_write(csv);
    out << "model_id,method,effective_params,weighted_pcc\n";
    for (const auto& r : rows)
      out << r.model_id << ',' << method_name(r.method) << ',' << r.effective_params << ',' << r.weighted_pcc << '\n';
    if (!out) throw IoError("write failed for " + csv.string());
  }
  auto out = open_for_write(dat);
  out << "# effective_params weighted_pcc; one block per method\n";
  bool first = true;
  for (Method m : {Method::kBaseline, Method::kDistilled, Method::kPrunedTaylor, Method::kPrunedMagnitude,
                   Method::kTeacher}) {
    bool any = false;
    for (const auto& r : rows) {
      if (r.method != m) continue;
      if (!any) {
        out << (first ? "" : "\n\n") << "# " << method_name(m) << '\n';
        first = false;
        any = true;
      }
      out << r.effective_params << ' ' << r.weighted_pcc << '\n';
    }
  }
  if (!out) throw IoError("write failed for " + dat.string());
}

}  // namespace sqac::eval
