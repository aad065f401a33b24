#include "calrecall/runlog.hpp"

#include <ostream>
#include <unordered_set>

#include "calrecall/error.hpp"
#include "calrecall/text_io.hpp"

namespace calrecall {

std::string format_runlog_line(const RunLogEntry& entry)
{
    std::string line = std::to_string(entry.iteration);
    line += '\t';
    line += entry.doc_id;
    line += '\t';
    line += format_double(entry.first_stage_score);
    line += '\t';
    line += format_double(entry.final_score);
    line += '\t';
    line += entry.judgment == Judgment::relevant ? '1' : '0';
    return line;
}

RunLogEntry parse_runlog_line(std::string_view line, std::string_view source_name, std::size_t number)
{
    const std::string source(source_name);
    auto fields = split(line, '\t');
    if (fields.size() != 5) {
        throw ParseError(source, number, "expected 5 tab-separated fields, got " + std::to_string(fields.size()));
    }
    RunLogEntry entry;
    auto iteration = parse_int(fields[0]);
    auto first = parse_double(fields[2]);
    auto final_score = parse_double(fields[3]);
    if (!iteration || *iteration < 1) {
        throw ParseError(source, number, "bad iteration '" + std::string(fields[0]) + "'");
    }
    if (fields[1].empty()) {
        throw ParseError(source, number, "empty doc_id");
    }
    if (!first || !final_score) {
        throw ParseError(source, number, "bad score");
    }
    if (fields[4] != "0" && fields[4] != "1") {
        throw ParseError(source, number, "judgment must be 0 or 1");
    }
    entry.iteration = static_cast<std::size_t>(*iteration);
    entry.doc_id = std::string(fields[1]);
    entry.first_stage_score = *first;
    entry.final_score = *final_score;
    entry.judgment = fields[4] == "1" ? Judgment::relevant : Judgment::nonrelevant;
    return entry;
}

void write_runlog(const RunLog& log, std::ostream& out)
{
    for (const auto& entry : log) {
        out << format_runlog_line(entry) << '\n';
    }
}

void write_runlog(const RunLog& log, const std::filesystem::path& path)
{
    auto out = open_for_write(path);
    write_runlog(log, out);
}

RunLog load_runlog(const std::filesystem::path& path)
{
    RunLog log;
    std::unordered_set<std::string> seen;
    const std::string source = path.string();
    for_each_line(path, [&](std::string_view line, std::size_t number) {
        if (line.empty()) {
            return;
        }
        auto entry = parse_runlog_line(line, source, number);
        if (entry.iteration != log.size() + 1) {
            throw ParseError(source, number, "iteration " + std::to_string(entry.iteration) + " out of sequence");
        }
        if (!seen.insert(entry.doc_id).second) {
            throw ParseError(source, number, "document '" + entry.doc_id + "' shown twice");
        }
        log.push_back(std::move(entry));
    });
    return log;
}

}  // namespace calrecall
