#pragma once

#include <stdexcept>
#include <string>

namespace dppasgd {

// Bad user input or budgets that admit no plan. CLI exit code 2.
class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Malformed input file; the message carries the offending row number.
class ParseError : public ConfigError {
   public:
    using ConfigError::ConfigError;
};

// A caller broke a documented precondition (dimension mismatch, empty batch, ...).
class ContractViolation : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

// Training produced non-finite or exploding parameters. CLI exit code 3.
class DivergenceError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

#define DPPASGD_REQUIRE(cond, msg)                              \
    do {                                                        \
        if (!(cond)) throw ::dppasgd::ContractViolation(msg);   \
    } while (0)

}  // namespace dppasgd
