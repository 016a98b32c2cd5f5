#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sumkit {

// Base class for all toolkit errors. The CLI maps subclasses onto exit codes.
class error : public std::runtime_error {
public:
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

// --- tokenizer ---
class corpus_empty_error : public error {
public:
    corpus_empty_error() : error("corpus is empty") {}
};

class vocab_too_small_error : public error {
public:
    explicit vocab_too_small_error(const std::string& what) : error(what) {}
};

class unknown_token_id_error : public error {
public:
    explicit unknown_token_id_error(const std::string& what) : error(what) {}
};

// --- data ---
class parse_error : public error {
public:
    parse_error(std::size_t line, const std::string& what)
        : error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class schema_error : public error {
public:
    schema_error(std::size_t line, const std::string& what)
        : error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class too_short_error : public error {
public:
    explicit too_short_error(const std::string& what) : error(what) {}
};

class too_few_examples_error : public error {
public:
    explicit too_few_examples_error(const std::string& what) : error(what) {}
};

// --- model ---
class config_error : public error {
public:
    explicit config_error(const std::string& what) : error(what) {}
};

class context_overflow_error : public error {
public:
    explicit context_overflow_error(const std::string& what) : error(what) {}
};

class empty_loss_mask_error : public error {
public:
    empty_loss_mask_error() : error("loss mask selects no target position") {}
};

class divergence_error : public error {
public:
    divergence_error(std::size_t step, const std::string& what)
        : error("step " + std::to_string(step) + ": " + what), step_(step) {}
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

// --- decoding ---
class invalid_penalty_error : public error {
public:
    explicit invalid_penalty_error(const std::string& what) : error(what) {}
};

class invalid_k_error : public error {
public:
    invalid_k_error() : error("top-k filter requires k >= 1") {}
};

// --- metrics ---
class dimension_error : public error {
public:
    explicit dimension_error(const std::string& what) : error(what) {}
};

// --- io ---
class io_error : public error {
public:
    explicit io_error(const std::string& what) : error(what) {}
};

}  // namespace sumkit
