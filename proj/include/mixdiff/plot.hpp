#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mixdiff {

// A CSV file with a header row whose first column holds row labels.
struct LabelledGrid {
    std::string corner;
    std::vector<std::string> columns;
    std::vector<std::string> rows;
    std::vector<std::vector<std::optional<double>>> values;

    static LabelledGrid parse(std::string_view csv);
};

std::vector<std::string> split_csv_line(std::string_view line);

enum class ColorScale { Diverging, Sequential };

// Diverging maps [-1, 1]; sequential maps [0, max].
std::string svg_heatmap(const LabelledGrid& grid, const std::string& title, ColorScale scale);

// One polyline per column against the first column, log-scaled y.
std::string svg_loss_curve(const LabelledGrid& grid, const std::string& title);

void plot_heatmap_csv(const std::filesystem::path& csv, const std::filesystem::path& svg, const std::string& title,
                      ColorScale scale);
void plot_loss_csv(const std::filesystem::path& csv, const std::filesystem::path& svg);

}  // namespace mixdiff
