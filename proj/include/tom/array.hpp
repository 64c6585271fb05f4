#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace tom {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major f64 matrix. Vectors are rows x 1.
class Array {
public:
    Array() = default;
    Array(int rows, int cols) : rows_(rows), cols_(cols), v_(static_cast<size_t>(rows) * cols, 0.0) {}

    static Array zeros(int rows, int cols = 1) { return Array(rows, cols); }

    static Array filled(int rows, int cols, double value) {
        Array a(rows, cols);
        for (double& x : a.v_) x = value;
        return a;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return v_.size(); }

    double& at(int i, int j) { return v_[static_cast<size_t>(i) * cols_ + j]; }
    double at(int i, int j) const { return v_[static_cast<size_t>(i) * cols_ + j]; }
    double& operator[](size_t k) { return v_[k]; }
    double operator[](size_t k) const { return v_[k]; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }

    std::vector<double>& values() { return v_; }
    const std::vector<double>& values() const { return v_; }

    void fill(double value) {
        for (double& x : v_) x = value;
    }

    bool same_shape(const Array& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    bool operator==(const Array& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && v_ == o.v_;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> v_;
};

inline void require_shape(const Array& a, int rows, int cols, const char* what) {
    if (a.rows() != rows || a.cols() != cols) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", got " + a.shape_str());
    }
}

}  // namespace tom
