#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace nf {

// Dense row-major float32 tensor. The only invariant is product(shape) == data.size();
// every public producer of tensors keeps entries finite.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<float> data);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, float value);

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t numel() const { return data_.size(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& raw() { return data_; }
    const std::vector<float>& raw() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    float& at(int a, int b) { return data_[static_cast<std::size_t>(a) * su(1) + static_cast<std::size_t>(b)]; }
    float at(int a, int b) const { return data_[static_cast<std::size_t>(a) * su(1) + static_cast<std::size_t>(b)]; }
    float& at(int a, int b, int c) {
        return data_[(static_cast<std::size_t>(a) * su(1) + static_cast<std::size_t>(b)) * su(2) + static_cast<std::size_t>(c)];
    }
    float at(int a, int b, int c) const {
        return data_[(static_cast<std::size_t>(a) * su(1) + static_cast<std::size_t>(b)) * su(2) + static_cast<std::size_t>(c)];
    }
    float& at(int a, int b, int c, int d) {
        return data_[((static_cast<std::size_t>(a) * su(1) + static_cast<std::size_t>(b)) * su(2) +
                      static_cast<std::size_t>(c)) * su(3) + static_cast<std::size_t>(d)];
    }
    float at(int a, int b, int c, int d) const {
        return data_[((static_cast<std::size_t>(a) * su(1) + static_cast<std::size_t>(b)) * su(2) +
                      static_cast<std::size_t>(c)) * su(3) + static_cast<std::size_t>(d)];
    }

    // pointer to the start of row (a, b, ...) for rank-3/4 tensors
    float* plane(int a, int b) { return data_.data() + (static_cast<std::size_t>(a) * su(1) + static_cast<std::size_t>(b)) * plane_size(); }
    const float* plane(int a, int b) const {
        return data_.data() + (static_cast<std::size_t>(a) * su(1) + static_cast<std::size_t>(b)) * plane_size();
    }
    std::size_t plane_size() const {
        std::size_t s = 1;
        for (int i = 2; i < rank(); ++i) s *= su(i);
        return s;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    void fill(float v);
    bool all_finite() const;

private:
    std::size_t su(int i) const { return static_cast<std::size_t>(shape_[static_cast<std::size_t>(i)]); }

    std::vector<int> shape_;
    std::vector<float> data_;
};

}  // namespace nf
