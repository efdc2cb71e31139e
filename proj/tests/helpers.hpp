#pragma once

#include <torch/torch.h>

#include "comics/types.hpp"

namespace testing {

inline comics::Mask rect_mask(int h, int w, int x1, int y1, int x2, int y2) {
    comics::Mask m(h, w);
    for (int y = y1; y < y2; ++y)
        for (int x = x1; x < x2; ++x) m.at(y, x) = 1;
    return m;
}

inline comics::FaceAnnotation rect_face(int h, int w, int x1, int y1, int x2, int y2,
                                        comics::FaceLabel label = comics::FaceLabel::Real) {
    comics::FaceAnnotation f;
    f.box = {double(x1), double(y1), double(x2), double(y2)};
    f.mask = rect_mask(h, w, x1, y1, x2, y2);
    f.label = label;
    return f;
}

inline bool bitwise_equal(const torch::Tensor& a, const torch::Tensor& b) {
    return a.sizes() == b.sizes() && a.scalar_type() == b.scalar_type() && torch::equal(a, b);
}

}  // namespace testing
