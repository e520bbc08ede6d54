#ifndef UGF_ERRORS_HPP
#define UGF_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace ugf {

/// Contract or configuration violation: bad shapes, invalid config values,
/// malformed input files. Maps to process exit code 1.
class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical abort: non-finite losses, failed numeric preconditions during
/// iteration. Maps to process exit code 2.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace ugf

#define UGF_REQUIRE(cond, msg)                          \
    do {                                                \
        if (!(cond)) throw ::ugf::ContractError((msg)); \
    } while (0)

#define UGF_REQUIRE_NUMERIC(cond, msg)                 \
    do {                                               \
        if (!(cond)) throw ::ugf::NumericError((msg)); \
    } while (0)

#endif
