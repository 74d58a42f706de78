#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sqac/error.hpp"
#include "sqac/model/quality_model.hpp"
#include "sqac/synth/corpus.hpp"
#include "sqac/train/data.hpp"
#include "sqac/train/teacher.hpp"

namespace sqac::eval {

// A correlation that cannot be defined: a side with zero variance, or a
// report where no dataset could be scored.
class UndefinedCorrelation : public Error {
 public:
  using Error::Error;
};

// Sample Pearson correlation, two-pass and mean-centred in 64-bit. Needs
// equal lengths >= 3; throws UndefinedCorrelation when either side has zero variance.
// Symmetric in its arguments bit for bit.
double pearson(std::span<const double> x, std::span<const double> y);

struct DatasetScore {
  std::string dataset_id;
  std::size_t clips = 0;
  std::optional<double> pcc;  // empty: excluded from the means
};

struct EvalReport {
  std::string model_id;
  double effective_params = 0.0;
  std::vector<DatasetScore> datasets;  // ordered by id
  double weighted_mean = 0.0;          // sum(n_i pcc_i) / sum(n_i) over scored datasets
  double unweighted_mean = 0.0;
};

enum class BiasMode { kUniversal, kPerDataset };

// Per-dataset PCC of predictions against labels. Datasets with fewer than 3
// clips or constant predictions are kept with an empty pcc and a warning.
// Throws UndefinedCorrelation when no dataset can be scored and Error when an
// entry lacks a label.
EvalReport report_from_predictions(const std::string& model_id, double effective_params,
                                   const std::vector<synth::ManifestEntry>& test,
                                   std::span<const double> predictions);

EvalReport evaluate(const model::QualityModel& model, const std::vector<synth::ManifestEntry>& test,
                    BiasMode mode, train::FeatureStore& features, const std::string& model_id = "model");

// Teacher scores as predictions; the parameter count is reported as 0.
EvalReport evaluate_teacher(train::Teacher& teacher, const std::vector<synth::ManifestEntry>& test);

// dataset_id,n_clips,pcc rows then weighted_mean and unweighted_mean lines.
// Excluded datasets print "NA".
void write_report(const std::filesystem::path& path, const EvalReport& report);

enum class Method { kBaseline, kDistilled, kPrunedTaylor, kPrunedMagnitude, kTeacher };
const char* method_name(Method m);
Method parse_method(const std::string& name);  // throws ConfigError

struct SweepInput {
  std::filesystem::path checkpoint;  // ignored for the teacher row
  Method method = Method::kDistilled;
  std::string model_id;              // defaults to the checkpoint file stem
};

struct SweepRow {
  std::string model_id;
  Method method = Method::kDistilled;
  double effective_params = 0.0;
  double weighted_pcc = 0.0;
};

// Evaluates every checkpoint (universal bias) and, when given, the teacher.
// Models without a defined correlation are left out with a warning. Rows are
// sorted by effective size, ties by model id. Needs >= 2 rows.
std::vector<SweepRow> size_sweep(const std::vector<SweepInput>& inputs,
                                 const std::vector<synth::ManifestEntry>& test, train::FeatureStore& features,
                                 train::Teacher* teacher = nullptr);

// CSV (model_id,method,effective_params,weighted_pcc) plus a whitespace
// separated .dat file with one block per method for plotting.
void write_sweep(const std::filesystem::path& csv, const std::filesystem::path& dat,
                 const std::vector<SweepRow>& rows);

}  // namespace sqac::eval
