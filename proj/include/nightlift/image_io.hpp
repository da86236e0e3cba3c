#pragma once

#include <string>

#include "nightlift/image.hpp"

namespace nightlift {

// Reads an 8-bit PNG or JPEG (by extension) into [0,1] via v/255. Grayscale
// files load as C=1, everything else as C=3 (palette expanded, alpha dropped).
// The image id is set to the filename stem. Throws IoError / DataError.
Image load_image(const std::string& path);

// Writes 8-bit PNG or JPEG (by extension) as round(255 * clamped value).
void save_image(const Image& img, const std::string& path);

}  // namespace nightlift
