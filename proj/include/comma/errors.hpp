#pragma once

#include <stdexcept>
#include <string>

namespace comma {

// Error hierarchy mirrored by CLI exit codes:
//   0 ok, 2 config error, 3 data error, 4 runtime error.
class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
    virtual int exit_code() const { return 4; }
    virtual const char* category() const { return "runtime"; }
};

// Bad configuration: invalid flags, unusable hyperparameters, lineage
// mismatches, refusal to overwrite.
class config_error : public error {
public:
    using error::error;
    int exit_code() const override { return 2; }
    const char* category() const override { return "config"; }
};

// Bad input data: unparsable files, schema violations, tampered artifacts.
class data_error : public error {
public:
    using error::error;
    int exit_code() const override { return 3; }
    const char* category() const override { return "data"; }
};

// A caller violated an operation precondition (shape mismatch, missing
// required field, empty mask).
class contract_error : public error {
public:
    using error::error;
    const char* category() const override { return "contract"; }
};

// Non-finite values where finite ones are required.
class numeric_error : public error {
public:
    using error::error;
    const char* category() const override { return "numeric"; }
};

}  // namespace comma
