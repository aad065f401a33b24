#include <doctest.h>

#include <sstream>

#include "calrecall/error.hpp"
#include "calrecall/runlog.hpp"
#include "support.hpp"

using namespace calrecall;
using test_support::TempDir;
using test_support::write_text;

TEST_CASE("runlog lines round trip doubles exactly")
{
    RunLogEntry e{7, "doc42", -4700.903870733658, 0.1 + 0.2, Judgment::relevant};
    auto line = format_runlog_line(e);
    CHECK(line == "7\tdoc42\t-4700.903870733658\t0.30000000000000004\t1");
    CHECK(parse_runlog_line(line, "x", 1) == e);
}

TEST_CASE("write and load a log")
{
    TempDir dir;
    auto log = test_support::make_log({true, false, true});
    write_runlog(log, dir / "a" / "runlog.tsv");
    CHECK(load_runlog(dir / "a" / "runlog.tsv") == log);
}

TEST_CASE("load_runlog rejects gaps, repeats and bad fields")
{
    TempDir dir;
    write_text(dir / "gap.tsv", "1\ta\t0\t0\t1\n3\tb\t0\t0\t0\n");
    try {
        load_runlog(dir / "gap.tsv");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    write_text(dir / "dup.tsv", "1\ta\t0\t0\t1\n2\ta\t0\t0\t0\n");
    CHECK_THROWS_WITH_AS(load_runlog(dir / "dup.tsv"), doctest::Contains("'a'"), ParseError);
    write_text(dir / "judg.tsv", "1\ta\t0\t0\t2\n");
    CHECK_THROWS_AS(load_runlog(dir / "judg.tsv"), ParseError);
    write_text(dir / "short.tsv", "1\ta\t0\n");
    CHECK_THROWS_AS(load_runlog(dir / "short.tsv"), ParseError);
    write_text(dir / "empty.tsv", "");
    CHECK(load_runlog(dir / "empty.tsv").empty());
}
