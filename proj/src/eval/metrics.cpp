#include "leafbench/eval.hpp"

#include <algorithm>
#include <set>

namespace leafbench::eval {

long ConfusionMatrix::total() const
{
    long sum = 0;
    for (const auto& row : counts) {
        for (long c : row) {
            sum += c;
        }
    }
    return sum;
}

long ConfusionMatrix::row_sum(std::size_t row) const
{
    long sum = 0;
    for (long c : counts.at(row)) {
        sum += c;
    }
    return sum;
}

long ConfusionMatrix::column_sum(std::size_t col) const
{
    long sum = 0;
    for (const auto& row : counts) {
        sum += row.at(col);
    }
    return sum;
}

long ConfusionMatrix::trace() const
{
    long sum = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        sum += counts[i][i];
    }
    return sum;
}

std::size_t ConfusionMatrix::index_of(std::string_view label) const
{
    auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end()) {
        throw EvalError("label '" + std::string(label) + "' is not one of the matrix classes");
    }
    return static_cast<std::size_t>(it - classes.begin());
}

long ConfusionMatrix::at(std::string_view true_label, std::string_view predicted) const
{
    const auto row = index_of(true_label);
    if (predicted == "unparseable") {
        return counts[row].back();
    }
    return counts[row][index_of(predicted)];
}

ConfusionMatrix empty_matrix(std::vector<std::string> classes)
{
    if (classes.empty()) {
        throw EvalError("confusion matrix needs at least one class");
    }
    std::set<std::string> seen(classes.begin(), classes.end());
    if (seen.size() != classes.size()) {
        throw EvalError("confusion matrix classes must be distinct");
    }
    if (seen.count("unparseable") > 0) {
        throw EvalError("'unparseable' is reserved for the extra column");
    }
    ConfusionMatrix cm;
    cm.counts.assign(classes.size(), std::vector<long>(classes.size() + 1, 0));
    cm.classes = std::move(classes);
    return cm;
}

ConfusionMatrix build_confusion(const std::vector<PredictionRecord>& records, const std::vector<std::string>& classes)
{
    auto cm = empty_matrix(classes);
    const std::size_t k = cm.size();
    for (const auto& r : records) {
        auto row = std::find(cm.classes.begin(), cm.classes.end(), r.true_label);
        if (row == cm.classes.end()) {
            throw EvalError("record '" + r.sample_id + "' has true label '" + r.true_label +
                            "' outside the class list");
        }
        std::size_t col = k;
        if (r.parsed_category) {
            auto it = std::find(cm.classes.begin(), cm.classes.end(), *r.parsed_category);
            if (it != cm.classes.end()) {
                col = static_cast<std::size_t>(it - cm.classes.begin());
            }
        }
        ++cm.counts[static_cast<std::size_t>(row - cm.classes.begin())][col];
    }
    return cm;
}

namespace {

double ratio(long num, long den)
{
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

} // namespace

MetricsReport compute_metrics(const ConfusionMatrix& cm)
{
    const std::size_t k = cm.size();
    if (k == 0 || cm.counts.size() != k) {
        throw EvalError("malformed confusion matrix");
    }
    for (const auto& row : cm.counts) {
        if (row.size() != k + 1) {
            throw EvalError("malformed confusion matrix");
        }
        for (long c : row) {
            if (c < 0) {
                throw EvalError("negative count in confusion matrix");
            }
        }
    }
    const long total = cm.total();
    if (total == 0) {
        throw EvalError("confusion matrix is empty");
    }

    MetricsReport report;
    report.total = total;
    report.accuracy = ratio(cm.trace(), total);
    for (std::size_t c = 0; c < k; ++c) {
        ClassMetrics m;
        m.label = cm.classes[c];
        m.tp = cm.counts[c][c];
        m.fp = cm.column_sum(c) - m.tp;
        m.fn = cm.row_sum(c) - m.tp;
        m.tn = total - m.tp - m.fp - m.fn;
        m.accuracy = ratio(m.tp + m.tn, total);
        m.precision = ratio(m.tp, m.tp + m.fp);
        m.recall = ratio(m.tp, m.tp + m.fn);
        m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
        report.precision += m.precision;
        report.recall += m.recall;
        report.f1 += m.f1;
        report.per_class.push_back(std::move(m));
    }
    const auto n = static_cast<double>(k);
    report.precision /= n;
    report.recall /= n;
    report.f1 /= n;
    return report;
}

SweepReport summarize_sweep(const SweepSpec& spec, const std::vector<PredictionRecord>& records)
{
    SweepReport out;
    out.spec = spec;
    out.cm = build_confusion(records, dataset::class_labels(spec.test_plant));
    out.metrics = compute_metrics(out.cm);
    for (const auto& r : records) {
        out.metrics.duration_s += r.latency_s;
        out.metrics.cost_usd += r.cost_usd;
    }
    return out;
}

const SweepReport* select_best(const std::vector<SweepReport>& sweeps, dataset::Plant plant, int resolution)
{
    const SweepReport* best = nullptr;
    auto rank = [](const SweepReport& s) { return s.spec.kind == SweepKind::few_shot ? 0 : s.spec.phase.value_or(0); };
    for (const auto& s : sweeps) {
        const auto& sp = s.spec;
        if ((sp.kind != SweepKind::few_shot && sp.kind != SweepKind::progressive) || sp.train_plant != plant ||
            sp.test_plant != plant || sp.train_resolution != resolution || sp.test_resolution != resolution) {
            continue;
        }
        if (best == nullptr || s.metrics.accuracy > best->metrics.accuracy ||
            (s.metrics.accuracy == best->metrics.accuracy && rank(s) < rank(*best))) {
            best = &s;
        }
    }
    return best;
}

const CrossCell& CrossMatrix::at(std::string_view train_key, std::string_view test_key) const
{
    for (const auto& cell : cells) {
        if (cell.train_key == train_key && cell.test_key == test_key) {
            return cell;
        }
    }
    throw EvalError("no cross-matrix cell " + std::string(train_key) + " -> " + std::string(test_key));
}

std::size_t CrossMatrix::holes() const
{
    return static_cast<std::size_t>(
        std::count_if(cells.begin(), cells.end(), [](const CrossCell& c) { return !c.report.has_value(); }));
}

CrossMatrix build_cross_matrix(Axis axis, std::vector<std::string> train_keys, std::vector<std::string> test_keys,
                               const std::vector<CrossInput>& inputs)
{
    CrossMatrix m;
    m.axis = axis;
    for (const auto& tr : train_keys) {
        for (const auto& te : test_keys) {
            m.cells.push_back(CrossCell{tr, te, {}, std::nullopt});
        }
    }
    m.train_keys = std::move(train_keys);
    m.test_keys = std::move(test_keys);
    for (const auto& in : inputs) {
        if (in.axis != axis) {
            throw EvalError("cross input " + in.train_key + " -> " + in.test_key + " belongs to the other axis");
        }
        auto it = std::find_if(m.cells.begin(), m.cells.end(), [&](const CrossCell& c) {
            return c.train_key == in.train_key && c.test_key == in.test_key;
        });
        if (it == m.cells.end()) {
            throw EvalError("cross input " + in.train_key + " -> " + in.test_key + " is off the matrix axes");
        }
        if (it->report) {
            throw EvalError("cross cell " + in.train_key + " -> " + in.test_key + " given twice");
        }
        it->model_id = in.model_id;
        it->report = in.report;
    }
    return m;
}

double improvement_points(double fine_tuned_accuracy, double zero_shot_accuracy)
{
    return (fine_tuned_accuracy - zero_shot_accuracy) * 100.0;
}

} // namespace leafbench::eval
