#ifndef SEGFLOW_ERRORS_HPP_
#define SEGFLOW_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace segflow {

class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Precondition violations: bad shapes, non-finite inputs, invalid configs.
class invalid_input : public error {
public:
    explicit invalid_input(const std::string& msg) : error(msg) {}
};

// Mask channel with (near-)zero mass handed to the strict pooling API.
class degenerate_mask : public error {
public:
    explicit degenerate_mask(const std::string& msg) : error(msg) {}
};

// Metric evaluated on inputs for which it has no defined value.
class undefined_metric : public error {
public:
    explicit undefined_metric(const std::string& msg) : error(msg) {}
};

// Filesystem problems; message names the offending path.
class io_error : public error {
public:
    explicit io_error(const std::string& msg) : error(msg) {}
};

// A training step produced a non-finite loss; carries diagnostics.
class aborted_step : public error {
public:
    explicit aborted_step(const std::string& msg) : error(msg) {}
};

}  // namespace segflow

#endif  // SEGFLOW_ERRORS_HPP_
