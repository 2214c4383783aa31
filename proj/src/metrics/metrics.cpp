#include "fedcpc/metrics/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fedcpc/core/error.hpp"

namespace fedcpc::metrics {

namespace {

const char* kNames[kClasses] = {"HC", "MCI", "AD"};

double ratio(std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double harmonic(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

} // namespace

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t n = 0;
    for (const auto& row : counts)
        for (auto v : row) n += v;
    return n;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.size() != predicted.size())
        throw ContractViolation("label sequences differ in length: " + std::to_string(truth.size()) + " vs " +
                                std::to_string(predicted.size()));
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = truth[i], p = predicted[i];
        if (t < 0 || t >= 3 || p < 0 || p >= 3)
            throw ContractViolation("label out of range at position " + std::to_string(i));
        ++cm.counts[t][p];
    }
    return cm;
}

MetricsReport macro_metrics(const ConfusionMatrix& cm) {
    MetricsReport r;
    r.n_examples = cm.total();
    if (r.n_examples == 0) throw ContractViolation("confusion matrix is empty");
    for (std::size_t c = 0; c < kClasses; ++c) {
        std::uint64_t row = 0, col = 0;
        for (std::size_t j = 0; j < kClasses; ++j) {
            row += cm.counts[c][j];
            col += cm.counts[j][c];
        }
        auto& s = r.per_class[c];
        s.precision = ratio(cm.counts[c][c], col);
        s.recall = ratio(cm.counts[c][c], row);
        s.f1 = harmonic(s.precision, s.recall);
        const double w = ratio(row, r.n_examples);
        r.weighted.precision += w * s.precision;
        r.weighted.recall += w * s.recall;
        r.weighted.f1 += w * s.f1;
    }
    for (const auto& s : r.per_class) {
        r.macro.precision += s.precision;
        r.macro.recall += s.recall;
        r.macro.f1 += s.f1;
    }
    r.macro.precision /= kClasses;
    r.macro.recall /= kClasses;
    r.macro.f1 /= kClasses;
    return r;
}

std::string percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", fraction * 100.0);
    return buf;
}

void write_report_csv(const std::filesystem::path& path, const MetricsReport& report, bool include_weighted) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    // 17 significant digits so a re-parse reproduces every double exactly.
    os.precision(17);
    os << "class,precision,recall,f1\n";
    auto row = [&](const char* name, const ClassScores& s) {
        os << name << ',' << s.precision << ',' << s.recall << ',' << s.f1 << '\n';
    };
    for (std::size_t c = 0; c < kClasses; ++c) row(kNames[c], report.per_class[c]);
    row("macro", report.macro);
    if (include_weighted) row("weighted", report.weighted);
    if (!os) throw IoError("failed writing " + path.string());
}

MetricsReport read_report_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read " + path.string());
    MetricsReport r;
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        std::istringstream ss(line);
        std::string name, p, rc, f;
        std::getline(ss, name, ',');
        std::getline(ss, p, ',');
        std::getline(ss, rc, ',');
        std::getline(ss, f, ',');
        ClassScores s{std::stod(p), std::stod(rc), std::stod(f)};
        if (name == "macro") r.macro = s;
        else if (name == "weighted") r.weighted = s;
        else {
            const auto it = std::find(std::begin(kNames), std::end(kNames), name);
            if (it == std::end(kNames)) throw IoError("unknown row '" + name + "' in " + path.string());
            r.per_class[static_cast<std::size_t>(it - std::begin(kNames))] = s;
        }
    }
    return r;
}

std::string confusion_svg(const ConfusionMatrix& cm, const std::string& title) {
    const int cell = 90, left = 80, top = 60;
    std::uint64_t peak = 1;
    for (const auto& row : cm.counts)
        for (auto v : row) peak = std::max(peak, v);
    std::ostringstream os;
    const int width = left + cell * 3 + 20, height = top + cell * 3 + 50;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" font-family=\"sans-serif\">\n";
    if (!title.empty())
        os << "  <text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
           << "</text>\n";
    for (std::size_t i = 0; i < kClasses; ++i) {
        os << "  <text x=\"" << left - 10 << "\" y=\"" << top + cell * i + cell / 2 + 5
           << "\" text-anchor=\"end\" font-size=\"12\">" << kNames[i] << "</text>\n";
        os << "  <text x=\"" << left + cell * i + cell / 2 << "\" y=\"" << top - 8
           << "\" text-anchor=\"middle\" font-size=\"12\">" << kNames[i] << "</text>\n";
    }
    for (std::size_t t = 0; t < kClasses; ++t)
        for (std::size_t p = 0; p < kClasses; ++p) {
            const double shade = static_cast<double>(cm.counts[t][p]) / static_cast<double>(peak);
            const int blue = 255 - static_cast<int>(shade * 180);
            const int x = left + cell * static_cast<int>(p), y = top + cell * static_cast<int>(t);
            os << "  <rect class=\"cell\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
               << "\" fill=\"rgb(" << blue << ',' << blue << ",255)\" stroke=\"#333\"/>\n";
            os << "  <text class=\"count\" x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 6
               << "\" text-anchor=\"middle\" font-size=\"16\">" << cm.counts[t][p] << "</text>\n";
        }
    os << "  <text x=\"" << left + cell * 3 / 2 << "\" y=\"" << height - 12
       << "\" text-anchor=\"middle\" font-size=\"12\">predicted</text>\n";
    os << "</svg>\n";
    return os.str();
}

void emit_report(const MetricsReport& report, const ConfusionMatrix& cm, const std::filesystem::path& stem,
                 bool include_weighted) {
    auto csv = stem;
    csv += ".csv";
    auto svg = stem;
    svg += ".svg";
    write_report_csv(csv, report, include_weighted);
    std::ofstream os(svg);
    if (!os) throw IoError("cannot write " + svg.string());
    os << confusion_svg(cm);
    if (!os) throw IoError("failed writing " + svg.string());
}

} // namespace fedcpc::metrics
