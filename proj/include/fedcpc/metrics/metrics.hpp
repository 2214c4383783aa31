#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace fedcpc::metrics {

constexpr std::size_t kClasses = 3;

// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, kClasses>, kClasses> counts{};

    std::uint64_t total() const;
};

struct ClassScores {
    double precision = 0, recall = 0, f1 = 0;
};

struct MetricsReport {
    std::array<ClassScores, kClasses> per_class{};
    ClassScores macro;
    ClassScores weighted; // support-weighted means, reported alongside
    std::uint64_t n_examples = 0;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted);

// Zero denominators give 0 for that metric; macro values are unweighted class means.
MetricsReport macro_metrics(const ConfusionMatrix& cm);

// Percent with one decimal, e.g. 0.7531 -> "75.3".
std::string percent(double fraction);

void write_report_csv(const std::filesystem::path& path, const MetricsReport& report, bool include_weighted = false);
MetricsReport read_report_csv(const std::filesystem::path& path);
std::string confusion_svg(const ConfusionMatrix& cm, const std::string& title = "");
// Writes <stem>.csv and <stem>.svg; throws IoError when the location is unwritable.
void emit_report(const MetricsReport& report, const ConfusionMatrix& cm, const std::filesystem::path& stem,
                 bool include_weighted = false);

} // namespace fedcpc::metrics
