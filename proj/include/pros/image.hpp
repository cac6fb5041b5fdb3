#pragma once

#include <vector>

#include "pros/errors.hpp"

namespace pros {

// Channel-major [C,H,W] f64 image, values in [0,1] for pipeline data.
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> pix;

    Image() = default;
    Image(int c, int h, int w) : channels(c), height(h), width(w) {
        pix.assign(static_cast<size_t>(c) * h * w, 0.0);
    }

    double& at(int c, int y, int x) {
        return pix[(static_cast<size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return pix[(static_cast<size_t>(c) * height + y) * width + x];
    }
    size_t size() const { return pix.size(); }
};

}  // namespace pros
