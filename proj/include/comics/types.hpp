#pragma once

#include <string>
#include <vector>

#include "comics/geometry.hpp"

namespace comics {

enum class FaceLabel : int { Real = 0, Fake = 1 };
inline constexpr int kNumClasses = 2;

inline int class_index(FaceLabel l) { return static_cast<int>(l); }
inline const char* label_name(FaceLabel l) { return l == FaceLabel::Real ? "real" : "fake"; }

/// One annotated face. `source_index` links a face in an augmented view back
/// to its index in the source image's annotation list.
struct FaceAnnotation {
    Box box;
    Mask mask;
    FaceLabel label = FaceLabel::Real;
    int source_index = -1;
};

using Annotations = std::vector<FaceAnnotation>;

}  // namespace comics
