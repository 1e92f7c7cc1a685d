#pragma once

#include <string>
#include <vector>

#include "dsat/synthetic.hpp"

namespace dsat {

// On disk: `<id>.bin` per sample (int32 LE height, int32 LE width, then
// float32 LE pixels row-major) and `index.json` listing id, file, label,
// seed and landmarks in image pixel coordinates.

void write_dataset(const std::string& dir, const std::vector<SyntheticSample>& samples);
/// Throws Error on a missing file, a size mismatch or a malformed index.
std::vector<SyntheticSample> read_dataset(const std::string& dir);

}  // namespace dsat
