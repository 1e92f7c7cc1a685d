#pragma once

#include <memory>
#include <string>

#include "dsat/model.hpp"

namespace dsat {

// A checkpoint is a JSON manifest (format tag, canonical config text and its
// hash, ordered parameter names and shapes) next to a flat float32
// little-endian weight file holding the parameters in manifest order.

/// Writes `manifest_path` and `<manifest_path minus .json>.bin`.
void save_checkpoint(const DsatModel& model, const std::string& manifest_path);

/// Loads weights into an existing model. Throws ManifestError naming the
/// first parameter whose name or shape disagrees with the model, or when the
/// weight file length is wrong.
void load_checkpoint(DsatModel& model, const std::string& manifest_path);

/// Rebuilds the model from the embedded config, then loads the weights.
std::unique_ptr<DsatModel> load_model(const std::string& manifest_path);

/// Path of the weight file that belongs to a manifest.
std::string weights_path(const std::string& manifest_path);

}  // namespace dsat
