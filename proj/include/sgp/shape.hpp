#pragma once

#include <cstddef>

namespace sgp {

// Shape of one input sample. Flat vector data uses channels=dim, height=width=1.
struct InputShape {
    std::size_t channels = 0;
    std::size_t height = 1;
    std::size_t width = 1;
    std::size_t flat() const { return channels * height * width; }
};

} // namespace sgp
