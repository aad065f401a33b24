#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "calrecall/ingestion.hpp"

namespace calrecall {

struct RunLogEntry {
    std::size_t iteration = 0;
    std::string doc_id;
    double first_stage_score = 0.0;
    double final_score = 0.0;
    Judgment judgment = Judgment::nonrelevant;

    friend bool operator==(const RunLogEntry&, const RunLogEntry&) = default;
};

/// Append-only review record; iterations run 1, 2, 3, ...
using RunLog = std::vector<RunLogEntry>;

/// `iteration<TAB>doc_id<TAB>first_stage<TAB>final<TAB>{1|0}`
std::string format_runlog_line(const RunLogEntry& entry);
RunLogEntry parse_runlog_line(std::string_view line, std::string_view source, std::size_t number);

void write_runlog(const RunLog& log, std::ostream& out);
void write_runlog(const RunLog& log, const std::filesystem::path& path);
/// Validates that iterations increase by one from 1 and that no document
/// appears twice.
RunLog load_runlog(const std::filesystem::path& path);

}  // namespace calrecall
