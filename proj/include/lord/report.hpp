#pragma once

#include <string>
#include <vector>

#include "lord/adapters.hpp"
#include "lord/evaluation.hpp"

namespace lord {

struct ReportLabels {
    std::string method;
    std::string strategy;
    std::string data_mode;
    std::string domain;
    std::string split;
};

// One row per (method, strategy, data mode, domain, split); the meta line is
// embedded as a leading comment so artifacts carry their provenance.
void write_metrics_csv(const std::string& path, const std::vector<std::pair<ReportLabels, MetricRow>>& rows,
                       const std::string& meta);

std::string cross_domain_report_json(const std::vector<CrossDomainReport>& reports, const OverheadReport* overhead,
                                     const std::string& meta);

struct SvgSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

// Minimal polyline chart; no plotting dependency.
void write_svg_curve(const std::string& path, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<SvgSeries>& series, const std::string& meta);

}  // namespace lord
