#include "lord/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lord/errors.hpp"

namespace lord {

void write_metrics_csv(const std::string& path, const std::vector<std::pair<ReportLabels, MetricRow>>& rows,
                       const std::string& meta) {
    // Union of metric keys, sorted, so every row aligns.
    std::set<std::string> keys;
    for (const auto& [labels, row] : rows) {
        for (const auto& [k, v] : row.values) keys.insert(k);
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write report: " + path);
    out << "# " << meta << "\n";
    out << "method,strategy,data_mode,domain,split";
    for (const auto& k : keys) out << "," << k;
    out << "\n";
    out.precision(12);
    for (const auto& [labels, row] : rows) {
        out << labels.method << "," << labels.strategy << "," << labels.data_mode << "," << labels.domain << ","
            << labels.split;
        for (const auto& k : keys) {
            auto it = row.values.find(k);
            out << ",";
            if (it != row.values.end()) out << it->second;
        }
        out << "\n";
    }
}

namespace {

nlohmann::json row_json(const MetricRow& row) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : row.values) j[k] = v;
    return j;
}

}  // namespace

std::string cross_domain_report_json(const std::vector<CrossDomainReport>& reports, const OverheadReport* overhead,
                                     const std::string& meta) {
    nlohmann::json j;
    j["meta"] = meta;
    j["reports"] = nlohmann::json::array();
    for (const auto& rep : reports) {
        nlohmann::json r;
        r["method"] = rep.method;
        r["config_hash"] = rep.config_hash;
        r["id"] = row_json(rep.id);
        r["ood"] = row_json(rep.ood);
        r["averaged"] = row_json(rep.averaged);
        r["recovered_id"] = row_json(rep.recovered_id);
        if (rep.has_forgetting) r["forgetting"] = row_json(rep.forgetting);
        j["reports"].push_back(std::move(r));
    }
    if (overhead) {
        j["overhead"] = {{"base_params", overhead->base_params},
                         {"adapter_params", overhead->adapter_params},
                         {"param_fraction", overhead->param_fraction},
                         {"time_fraction", overhead->time_fraction}};
    }
    return j.dump(2) + "\n";
}

void write_svg_curve(const std::string& path, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<SvgSeries>& series, const std::string& meta) {
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series) {
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (xmin > xmax) {
        xmin = 0.0;
        xmax = 1.0;
        ymin = 0.0;
        ymax = 1.0;
    }
    if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
    if (ymax - ymin < 1e-12) ymax = ymin + 1.0;
    const double W = 640, Hg = 420, ml = 70, mr = 20, mt = 40, mb = 50;
    auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto sy = [&](double y) { return Hg - mb - (y - ymin) / (ymax - ymin) * (Hg - mt - mb); };

    const char* colors[] = {"#3572b0", "#d85155", "#4c9f70", "#b07ab8", "#c98a2e", "#555555"};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write svg: " + path);
    out.precision(6);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << Hg << "'>\n";
    out << "<!-- " << meta << " -->\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << W / 2 << "' y='22' text-anchor='middle' font-size='15'>" << title << "</text>\n";
    out << "<line x1='" << ml << "' y1='" << Hg - mb << "' x2='" << W - mr << "' y2='" << Hg - mb
        << "' stroke='black'/>\n";
    out << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << Hg - mb << "' stroke='black'/>\n";
    out << "<text x='" << W / 2 << "' y='" << Hg - 12 << "' text-anchor='middle' font-size='12'>" << x_label
        << "</text>\n";
    out << "<text x='16' y='" << Hg / 2 << "' text-anchor='middle' font-size='12' transform='rotate(-90 16 "
        << Hg / 2 << ")'>" << y_label << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        out << "<text x='" << sx(xv) << "' y='" << Hg - mb + 16 << "' text-anchor='middle' font-size='10'>" << xv
            << "</text>\n";
        out << "<text x='" << ml - 6 << "' y='" << sy(yv) + 3 << "' text-anchor='end' font-size='10'>" << yv
            << "</text>\n";
    }
    int ci = 0;
    for (const auto& s : series) {
        const char* color = colors[ci % 6];
        out << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
        for (const auto& [x, y] : s.points) out << sx(x) << "," << sy(y) << " ";
        out << "'/>\n";
        for (const auto& [x, y] : s.points) {
            out << "<circle cx='" << sx(x) << "' cy='" << sy(y) << "' r='3.5' fill='" << color << "'/>\n";
        }
        out << "<text x='" << W - mr - 8 << "' y='" << mt + 16 * ci << "' text-anchor='end' font-size='11' fill='"
            << color << "'>" << s.name << "</text>\n";
        ++ci;
    }
    out << "</svg>\n";
}

}  // namespace lord
