#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace calrecall {

/// Input that does not follow its file format. Carries the 1-based line.
class ParseError : public std::runtime_error {
  public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line)
    {}

    std::size_t line() const { return line_; }

  private:
    std::size_t line_;
};

class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
  public:
    ConfigError(std::string field, const std::string& what)
        : std::invalid_argument(field + ": " + what), field_(std::move(field))
    {}

    const std::string& field() const { return field_; }

  private:
    std::string field_;
};

}  // namespace calrecall
