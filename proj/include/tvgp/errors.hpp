#pragma once

#include <stdexcept>
#include <string>

namespace tvgp {

/// Numerical failure (non-PD factorization, non-finite loss, failed oracle).
/// The CLI maps this to exit code 2; user/config errors map to exit code 1.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tvgp
