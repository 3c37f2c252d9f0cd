#pragma once

#include <filesystem>
#include <string>

#include "mixdiff/rng.hpp"
#include "mixdiff/schema.hpp"

namespace testing {

inline std::filesystem::path source_dir() { return MIXDIFF_SOURCE_DIR; }

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("mixdiff_unit_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

// numeric x, binary flag, categorical colour(3)
inline mixdiff::DatasetSchema small_schema(std::size_t L = 4) {
    mixdiff::DatasetSchema s;
    s.name = "small";
    s.max_length = L;
    s.variables = {mixdiff::VariableSpec::numeric("x", 0.0, 10.0),
                   mixdiff::VariableSpec::binary("flag", {"no", "yes"}),
                   mixdiff::VariableSpec::categorical("colour", {"red", "green", "blue"})};
    return s;
}

inline mixdiff::RecordTable random_table(const mixdiff::DatasetSchema& s, std::size_t patients, std::uint64_t seed,
                                         const std::string& prefix = "p") {
    mixdiff::Rng rng(seed);
    mixdiff::RecordTable t(s);
    for (std::size_t p = 0; p < patients; ++p) {
        const std::size_t len = 1 + rng.uniform_int(0, s.max_length - 1);
        for (std::size_t i = 0; i < len; ++i) {
            std::vector<std::variant<double, std::string>> row;
            for (const auto& v : s.variables) {
                if (v.is_numeric())
                    row.emplace_back(*v.min + (*v.max - *v.min) * rng.uniform());
                else
                    row.emplace_back(v.levels[rng.uniform_int(0, v.levels.size() - 1)]);
            }
            t.append(prefix + std::to_string(p), static_cast<long>(i), row);
        }
    }
    t.normalize();
    return t;
}

}  // namespace testing
