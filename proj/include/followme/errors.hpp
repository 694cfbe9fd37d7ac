#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace followme {

// Every failure raised by the library derives from Error so callers (the CLI in
// particular) can catch one type and still discriminate when they need to.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct WindowOutOfRange : Error { using Error::Error; };
struct MalformedScene : Error { using Error::Error; };
struct SimulationDiverged : Error { using Error::Error; };
struct DatasetWriteError : Error { using Error::Error; };
struct TrainingDiverged : Error { using Error::Error; };
struct EmptySplit : Error { using Error::Error; };
struct NumericalError : Error { using Error::Error; };
struct InsufficientObservation : Error { using Error::Error; };
struct PlotWriteError : Error { using Error::Error; };

struct ParseError : Error {
    ParseError(const std::string& path, std::size_t line, const std::string& what)
        : Error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace followme
