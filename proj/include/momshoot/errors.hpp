#pragma once

#include <stdexcept>
#include <string>

namespace momshoot {

// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad arguments, malformed files, unknown config keys.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

class GeometryMismatch : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

// Numerical failures: recoverable by callers that retry (line search), exit code 2 in the CLI.
class NumericalError : public Error {
public:
    using Error::Error;
};

class BlowUpError : public NumericalError {
public:
    BlowUpError(double time, const std::string &what)
        : NumericalError("geodesic blow-up at t=" + std::to_string(time) + ": " + what), time_(time) {}
    double time() const noexcept { return time_; }

private:
    double time_;
};

class NonConvergenceError : public NumericalError {
public:
    NonConvergenceError(double residual, const std::string &what)
        : NumericalError(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

class DivergenceError : public NumericalError {
public:
    DivergenceError(int epoch, int batch)
        : NumericalError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                         std::to_string(batch)),
          epoch_(epoch), batch_(batch) {}
    int epoch() const noexcept { return epoch_; }
    int batch() const noexcept { return batch_; }

private:
    int epoch_;
    int batch_;
};

} // namespace momshoot
