#include "fatseg/tensor.hpp"

#include <numeric>
#include <sstream>

namespace fatseg {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) {
        if (e <= 0) throw std::invalid_argument("shape " + shape_str(shape) + " has non-positive extent");
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& t, std::int64_t axis, std::int64_t start, std::int64_t length) {
    const Shape& s = t.shape();
    if (axis < 0 || axis >= t.rank()) throw std::invalid_argument("narrow: axis out of range");
    if (start < 0 || length <= 0 || start + length > s[static_cast<std::size_t>(axis)])
        throw std::invalid_argument("narrow: range [" + std::to_string(start) + "," +
                                    std::to_string(start + length) + ") exceeds extent " +
                                    std::to_string(s[static_cast<std::size_t>(axis)]));
    Shape out_shape = s;
    out_shape[static_cast<std::size_t>(axis)] = length;
    Tensor<T> out(out_shape);

    std::int64_t outer = 1, inner = 1;
    for (std::int64_t a = 0; a < axis; ++a) outer *= s[static_cast<std::size_t>(a)];
    for (std::int64_t a = axis + 1; a < t.rank(); ++a) inner *= s[static_cast<std::size_t>(a)];
    const std::int64_t in_axis = s[static_cast<std::size_t>(axis)];

    auto src = t.data();
    auto dst = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t a = 0; a < length; ++a) {
            const T* from = src.data() + ((o * in_axis) + start + a) * inner;
            T* to = dst.data() + ((o * length) + a) * inner;
            std::copy(from, from + inner, to);
        }
    return out;
}

template Tensor<float> narrow(const Tensor<float>&, std::int64_t, std::int64_t, std::int64_t);
template Tensor<double> narrow(const Tensor<double>&, std::int64_t, std::int64_t, std::int64_t);

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace fatseg
