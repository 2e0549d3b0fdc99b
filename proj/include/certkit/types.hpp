#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace certkit {

using Index = Eigen::Index;

// Row-major so that a batch of flattened activations is one contiguous row
// per sample, matching the C,H,W flatten order.
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using Labels = std::vector<int>;

/// Activation shape of a single sample. Dense features use channels=D, h=w=1.
struct Shape {
    Index channels = 1;
    Index height = 1;
    Index width = 1;

    Index spatial() const { return height * width; }
    Index size() const { return channels * height * width; }
    bool operator==(const Shape&) const = default;
};

/// Error with a stable machine-readable code; the CLI serializes both fields.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

/// Valid raw input range (pixel space, before normalization).
struct InputDomain {
    double lower = 0.0;
    double upper = 1.0;
};

}  // namespace certkit
