#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace reg {

// Shape/dimension violations and bad arguments. CLI maps these to exit code 1.
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// File format / filesystem problems. CLI maps these to exit code 1.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf detected, or an optimization diverged. CLI maps these to exit code 2.
class NumericsError : public std::runtime_error {
public:
    explicit NumericsError(const std::string& msg) : std::runtime_error(msg) {}
};

// When enabled, every op output (and backward gradient) is scanned for
// NaN/Inf and a NumericsError is thrown on the first hit. Off by default;
// tests and debugging sessions switch it on.
void set_debug_checks(bool enabled);
bool debug_checks();

// Caps internal parallelism (currently the BLAS backend). Reads REG_THREADS
// from the environment on first use; explicit calls override it.
void set_max_threads(int n);
void init_threads_from_env();

}  // namespace reg
