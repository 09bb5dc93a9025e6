#pragma once

// Writers shared by run() and report(); not part of the public API.

#include <filesystem>
#include <string>
#include <vector>

#include "eqxai/harness.hpp"

namespace eqxai::detail {

/// Shortest decimal text that reads back to the same double.
std::string format_value(double v);

struct Quantiles {
    double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};
Quantiles quantiles(std::vector<double> values);

/// Rows grouped by (dataset, model, method, metric) in first-seen order.
struct RowGroup {
    std::string dataset, model, method, metric;
    std::vector<double> values;
};
std::vector<RowGroup> group_rows(const std::vector<ReportRow>& rows, bool explanations_only);

void write_boxplot_csv(const std::filesystem::path& path, const std::vector<RowGroup>& groups);
void write_verdict_csv(const std::filesystem::path& path, const std::vector<Verdict>& verdicts);
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepPoint>& sweep, std::uint64_t seed);
void write_sensitivity_csv(const std::filesystem::path& path, const std::vector<CorrelationResult>& results);
/// Mean model invariance against mean explanation robustness, per method.
void write_scatter_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows);

void write_boxplot_svg(const std::filesystem::path& path, const std::vector<RowGroup>& groups);
void write_sweep_svg(const std::filesystem::path& path, const std::vector<SweepPoint>& sweep);
void write_scatter_svg(const std::filesystem::path& path, const std::vector<ReportRow>& rows);

std::string verdict_table(const std::vector<Verdict>& verdicts);

} // namespace eqxai::detail
