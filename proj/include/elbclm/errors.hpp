#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace elbclm {

/// Base of every error raised by the library. `category()` selects the CLI
/// exit code: data problems, numeric failures, or caller misuse.
class Error : public std::runtime_error {
public:
    enum class Category { Usage, Data, Numeric };

    Error(Category category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    Category category() const noexcept { return category_; }

private:
    Category category_;
};

#define ELBCLM_DEFINE_ERROR(Name, Cat)                                  \
    class Name : public Error {                                         \
    public:                                                             \
        explicit Name(const std::string& what)                          \
            : Error(Category::Cat, #Name ": " + what) {}                \
    };

ELBCLM_DEFINE_ERROR(DimensionMismatch, Usage)
ELBCLM_DEFINE_ERROR(InvalidArgument, Usage)
ELBCLM_DEFINE_ERROR(InvalidBBox, Usage)
ELBCLM_DEFINE_ERROR(DegenerateShape, Numeric)
ELBCLM_DEFINE_ERROR(RankDeficient, Numeric)
ELBCLM_DEFINE_ERROR(SingularHessian, Numeric)
ELBCLM_DEFINE_ERROR(SingularSystem, Numeric)
ELBCLM_DEFINE_ERROR(ZeroIOD, Numeric)
ELBCLM_DEFINE_ERROR(InsufficientData, Data)
ELBCLM_DEFINE_ERROR(EmptyDataset, Data)
ELBCLM_DEFINE_ERROR(EmptyErrors, Data)
ELBCLM_DEFINE_ERROR(IoError, Data)

#undef ELBCLM_DEFINE_ERROR

/// Malformed annotation text. `line()` is 1-based.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error(Category::Data, "ParseError: line " + std::to_string(line) + ": " + what),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Corrupt or incompatible model file. `offset()` is the byte position at
/// which decoding failed.
class FormatError : public Error {
public:
    FormatError(std::size_t offset, const std::string& what)
        : Error(Category::Data,
                "FormatError: at byte offset " + std::to_string(offset) + ": " + what),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

}  // namespace elbclm
