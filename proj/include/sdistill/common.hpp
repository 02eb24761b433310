#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace sdistill {

using Eigen::ArrayXd;

// Contract check; throws std::invalid_argument so callers can distinguish
// bad inputs from runtime failures.
inline void require(bool cond, const std::string& msg) {
    if (!cond) {
        throw std::invalid_argument(msg);
    }
}

inline void require_same_shape(const ArrayXd& a, const ArrayXd& b, const char* what) {
    if (a.size() != b.size()) {
        throw std::invalid_argument(std::string("shape mismatch in ") + what + ": " +
                                    std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
}

inline double l2_norm(const ArrayXd& a) {
    return std::sqrt((a * a).sum());
}

}  // namespace sdistill
