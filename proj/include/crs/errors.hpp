#pragma once
#include <stdexcept>
#include <string>
#include <utility>

namespace crs {

/// Base class of every library error. `category()` is a short stable tag the
/// CLI prints as `error: <category>: <message>`.
class error : public std::runtime_error {
public:
    error(std::string category, const std::string& what)
        : std::runtime_error(category + ": " + what), category_(std::move(category)) {}
    [[nodiscard]] const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

class storage_error : public error {
public:
    explicit storage_error(const std::string& w) : error("storage", w) {}
};

class format_error : public error {
public:
    explicit format_error(const std::string& w) : error("format", w) {}
};

class encoding_error : public error {
public:
    explicit encoding_error(const std::string& w) : error("encoding", w) {}
};

class bounds_error : public error {
public:
    explicit bounds_error(const std::string& w) : error("bounds", w) {}
};

class shape_error : public error {
public:
    explicit shape_error(const std::string& w) : error("shape", w) {}
};

class generation_error : public error {
public:
    explicit generation_error(const std::string& w) : error("generation", w) {}
};

class mode_error : public error {
public:
    explicit mode_error(const std::string& w) : error("mode", w) {}
};

class state_error : public error {
public:
    explicit state_error(const std::string& w) : error("state", w) {}
};

class seed_error : public error {
public:
    explicit seed_error(const std::string& w) : error("seed", w) {}
};

class metric_error : public error {
public:
    explicit metric_error(const std::string& w) : error("metric", w) {}
};

class parse_error : public error {
public:
    explicit parse_error(const std::string& w) : error("parse", w) {}
};

class config_error : public error {
public:
    explicit config_error(const std::string& w) : error("config", w) {}
};

class usage_error : public error {
public:
    explicit usage_error(const std::string& w) : error("usage", w) {}
};

} // namespace crs
