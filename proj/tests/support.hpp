#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "calrecall/ingestion.hpp"
#include "calrecall/runlog.hpp"

namespace test_support {

namespace fs = std::filesystem;

/// Scratch folder removed on scope exit.
struct TempDir {
    fs::path path;

    TempDir()
    {
        std::random_device rd;
        path = fs::temp_directory_path() / ("calrecall-test-" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    fs::path operator/(const std::string& name) const { return path / name; }
};

inline void write_text(const fs::path& path, const std::string& content)
{
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << content;
}

inline std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Six short documents over a handful of words.
inline calrecall::Corpus tiny_corpus()
{
    return calrecall::Corpus::build({
        {"d1", "apple banana apple"},
        {"d2", "banana cherry"},
        {"d3", "cherry durian elder"},
        {"d4", "apple fig"},
        {"d5", "grape grape grape"},
        {"d6", "banana apple cherry fig"},
    });
}

/// RunLog from a judgment pattern; ids are "d{i}" and scores descend.
inline calrecall::RunLog make_log(const std::vector<bool>& relevant)
{
    calrecall::RunLog log;
    for (std::size_t i = 0; i < relevant.size(); ++i) {
        log.push_back({i + 1, "d" + std::to_string(i + 1), -static_cast<double>(i), -static_cast<double>(i),
                       relevant[i] ? calrecall::Judgment::relevant : calrecall::Judgment::nonrelevant});
    }
    return log;
}

}  // namespace test_support
