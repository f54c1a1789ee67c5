#pragma once

#include "elbclm/image.hpp"
#include "elbclm/shape.hpp"

#include <string>

namespace elbclm {

/// One annotated face: image, ground-truth landmarks and the face box.
struct Sample {
    GrayImage image;
    Shape gt_shape;
    BBox bbox;
    std::string id;
};

}  // namespace elbclm
