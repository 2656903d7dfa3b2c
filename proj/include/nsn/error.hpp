#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace nsn {

/// Base of every domain failure raised by the library. The CLI maps these to exit status 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(const std::filesystem::path& file, std::size_t line, const std::string& what)
        : Error(file.string() + ":" + std::to_string(line) + ": " + what), file_(file), line_(line) {}

    const std::filesystem::path& file() const { return file_; }
    std::size_t line() const { return line_; }

private:
    std::filesystem::path file_;
    std::size_t line_;
};

class NotFoundError : public Error {
public:
    explicit NotFoundError(const std::filesystem::path& p)
        : Error("not found: " + p.string()), path_(p) {}
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

class IoError : public Error {
public:
    using Error::Error;
};

class SizeError : public Error {
public:
    using Error::Error;
};

class PlacementError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public Error {
public:
    ConvergenceError(double residual, std::size_t iterations)
        : Error("poisson solve did not converge: relative residual " + std::to_string(residual) +
                " after " + std::to_string(iterations) + " iterations"),
          residual_(residual), iterations_(iterations) {}

    double residual() const { return residual_; }
    std::size_t iterations() const { return iterations_; }

private:
    double residual_;
    std::size_t iterations_;
};

class DegenerateBoxError : public Error {
public:
    using Error::Error;
};

class UndefinedGainError : public Error {
public:
    using Error::Error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class StageError : public Error {
public:
    using Error::Error;
};

}  // namespace nsn
