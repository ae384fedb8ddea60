#pragma once

#include <string>
#include <vector>

#include "deepdose/volume.hpp"

namespace deepdose::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 2, kDataError = 3, kNumericError = 4 };

// Entry point behind the `deepdose` binary. argv[0] is the program name.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

// 8-bit binary PGM (P5). Values are mapped linearly from [lo, hi] to
// [0, 255] and clamped. `pixels` is row-major, `rows * cols` long.
std::string pgm_image(std::size_t rows, std::size_t cols, const std::vector<double>& pixels, double lo, double hi);

// Middle axial (k = D/2, rows i, cols j), coronal (j = W/2, rows i, cols k)
// and sagittal (i = H/2, rows j, cols k) slices as
// <prefix>_axial.pgm, <prefix>_coronal.pgm, <prefix>_sagittal.pgm.
// Returns the written paths.
std::vector<std::string> write_slices(const DoseVolume& v, double lo, double hi, const std::string& prefix);

// Message listing which models and depths accept `extents`, or an empty
// string when the default desk model (proposed, 3 down) already does.
std::string divisibility_warning(const Triple& extents);

}  // namespace deepdose::cli
