#pragma once

#include "leafbench/records.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace leafbench::eval {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Rows are true classes; columns are predicted classes followed by one
/// `unparseable` column.
struct ConfusionMatrix {
    std::vector<std::string> classes;
    std::vector<std::vector<long>> counts; // K x (K + 1)

    std::size_t size() const noexcept { return classes.size(); }
    long total() const;
    long row_sum(std::size_t row) const;
    long column_sum(std::size_t col) const;
    long trace() const;
    long at(std::string_view true_label, std::string_view predicted) const;
    std::size_t index_of(std::string_view label) const; // throws EvalError

    bool operator==(const ConfusionMatrix&) const = default;
};

/// Zero-filled matrix; throws EvalError on an empty or duplicated class list.
ConfusionMatrix empty_matrix(std::vector<std::string> classes);

/// Records without a parsed category (or with one outside `classes`) count as
/// unparseable. Throws EvalError when a true label is not in `classes`.
ConfusionMatrix build_confusion(const std::vector<PredictionRecord>& records, const std::vector<std::string>& classes);

struct ClassMetrics {
    std::string label;
    long tp = 0;
    long fp = 0;
    long fn = 0;
    long tn = 0;
    double accuracy = 0.0; // (TP + TN) / total, the one-vs-rest form
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct MetricsReport {
    double accuracy = 0.0; // trace / total
    double precision = 0.0; // macro
    double recall = 0.0;
    double f1 = 0.0;
    std::vector<ClassMetrics> per_class;
    long total = 0;
    double duration_s = 0.0;
    double cost_usd = 0.0;
};

/// Empty denominators give 0. Throws EvalError on a matrix with no counts.
MetricsReport compute_metrics(const ConfusionMatrix& cm);

/// A finished sweep: its identity, matrix and metrics (with latency and cost
/// sums filled in).
struct SweepReport {
    SweepSpec spec;
    ConfusionMatrix cm;
    MetricsReport metrics;
};

SweepReport summarize_sweep(const SweepSpec& spec, const std::vector<PredictionRecord>& records);

/// Highest-accuracy fine-tuned model evaluated on its own (plant, resolution)
/// test set. Ties prefer the full fine-tune, then the earlier phase.
const SweepReport* select_best(const std::vector<SweepReport>& sweeps, dataset::Plant plant, int resolution);

enum class Axis { resolution, plant };

struct CrossCell {
    std::string train_key;
    std::string test_key;
    std::string model_id;
    std::optional<MetricsReport> report; // empty = hole
};

struct CrossMatrix {
    Axis axis = Axis::resolution;
    std::vector<std::string> train_keys;
    std::vector<std::string> test_keys;
    std::vector<CrossCell> cells; // row-major over train_keys x test_keys

    const CrossCell& at(std::string_view train_key, std::string_view test_key) const;
    std::size_t holes() const;
};

struct CrossInput {
    Axis axis = Axis::resolution;
    std::string train_key;
    std::string test_key;
    std::string model_id;
    MetricsReport report;
};

/// Places each input in its cell; cells without input stay holes. Throws
/// EvalError when an input has the other axis, an unknown key, or a cell is
/// given twice.
CrossMatrix build_cross_matrix(Axis axis, std::vector<std::string> train_keys, std::vector<std::string> test_keys,
                               const std::vector<CrossInput>& inputs);

/// `true_label,<class...>,unparseable` header, one row per true class.
std::string heatmap_csv(const ConfusionMatrix& cm);
ConfusionMatrix parse_heatmap_csv(std::string_view text);

/// One cell per count, shaded linearly from white (0) to full colour at the
/// row maximum; zero cells stay white. Row sums are annotated on the right.
std::string heatmap_svg(const ConfusionMatrix& cm, std::string_view title = {});

void emit_heatmap(const ConfusionMatrix& cm, const std::filesystem::path& svg_path,
                  const std::filesystem::path& csv_path, std::string_view title = {});

/// Fine-tuned minus zero-shot accuracy, in percentage points.
double improvement_points(double fine_tuned_accuracy, double zero_shot_accuracy);

inline constexpr std::string_view kFinetuneLedgerHeader =
    "plant,subset,epochs,batch_size,training_loss,full_validation_loss,training_duration_s,training_cost_usd,"
    "base_model,output_model,status";
inline constexpr std::string_view kFewShotHeader =
    "plant,prediction_column,fine_tuned_model,accuracy,precision,recall,f1,prediction_duration_s,"
    "prediction_cost_usd";
inline constexpr std::string_view kProgressiveLedgerHeader =
    "plant,subset,trained_tokens,trained_samples,training_loss,full_validation_loss,training_duration_s,"
    "training_cost_usd,base_model,output_model,errors,status";
inline constexpr std::string_view kProgressiveResultsHeader = kFewShotHeader;
inline constexpr std::string_view kZeroShotHeader =
    "plant,prediction_column,base_model,accuracy,precision,recall,f1,prediction_duration_s,prediction_cost_usd";
inline constexpr std::string_view kCrossResolutionHeader =
    "plant,train_resolution,test_resolution,prediction_column,best_model,accuracy,precision,recall,f1,"
    "prediction_duration_s,prediction_cost_usd";
inline constexpr std::string_view kCrossPlantHeader =
    "train_plant,test_plant,resolution,prediction_column,best_model,accuracy,precision,recall,f1,"
    "prediction_duration_s,prediction_cost_usd";

struct ReportInput {
    std::vector<JobLedgerEntry> jobs;
    std::vector<SweepReport> sweeps;
};

struct ReportOutput {
    std::vector<std::filesystem::path> tables; // the seven CSVs, in header order above
    std::filesystem::path summary;
    std::vector<std::filesystem::path> heatmaps; // SVG and CSV per sweep
    std::vector<CrossMatrix> cross_resolution; // one per plant
    std::vector<CrossMatrix> cross_plant;      // one per resolution
};

/// Writes the tables, `summary.md` and `heatmaps/` under `out_dir`. Throws
/// EvalError("nothing to report") without sweeps.
ReportOutput emit_report(const ReportInput& input, const std::filesystem::path& out_dir);

} // namespace leafbench::eval
