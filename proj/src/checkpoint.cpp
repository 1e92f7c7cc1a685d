#include "dsat/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "dsat/binary_io.hpp"
#include "dsat/error.hpp"

namespace dsat {

namespace {

constexpr const char* kFormat = "dsat-checkpoint-1";

nlohmann::json read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ManifestError("cannot open checkpoint manifest " + path);
  try {
    nlohmann::json j = nlohmann::json::parse(f);
    if (j.value("format", "") != kFormat) throw ManifestError("checkpoint " + path + ": unrecognised format tag");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("checkpoint " + path + ": " + e.what());
  }
}

}  // namespace

std::string weights_path(const std::string& manifest_path) {
  std::filesystem::path p(manifest_path);
  if (p.extension() == ".json") p.replace_extension(".bin");
  else p += ".bin";
  return p.string();
}

void save_checkpoint(const DsatModel& model, const std::string& manifest_path) {
  const std::string bin = weights_path(manifest_path);
  nlohmann::ordered_json j;
  j["format"] = kFormat;
  j["config_hash"] = config_hash(model.config());
  j["config"] = to_text(model.config());
  j["weights"] = std::filesystem::path(bin).filename().string();
  auto& params = j["parameters"] = nlohmann::ordered_json::array();

  std::ofstream w(bin, std::ios::binary);
  if (!w) throw Error("cannot write " + bin);
  for (const auto& p : model.parameters().entries()) {
    params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"trainable", p.trainable}});
    for (Real v : p.value.data()) io::write_f32(w, static_cast<float>(v));
  }
  if (!w) throw Error("failed writing " + bin);

  std::ofstream m(manifest_path);
  if (!m) throw Error("cannot write " + manifest_path);
  m << j.dump(2) << '\n';
}

void load_checkpoint(DsatModel& model, const std::string& manifest_path) {
  const nlohmann::json j = read_manifest(manifest_path);
  const auto& entries = model.parameters().entries();
  const auto& listed = j.at("parameters");
  const std::size_t n = std::min(entries.size(), listed.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = listed[i].at("name").get<std::string>();
    const Shape shape = listed[i].at("shape").get<Shape>();
    if (name != entries[i].name) {
      throw ManifestError("checkpoint parameter " + std::to_string(i) + " is '" + name + "' but the model expects '" +
                          entries[i].name + "'");
    }
    if (shape != entries[i].value.shape()) {
      throw ManifestError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) +
                          " but the model expects " + shape_str(entries[i].value.shape()));
    }
  }
  if (listed.size() < entries.size()) {
    throw ManifestError("checkpoint lacks parameter '" + entries[listed.size()].name + "'");
  }
  if (listed.size() > entries.size()) {
    throw ManifestError("checkpoint has unexpected parameter '" + listed[entries.size()].at("name").get<std::string>() +
                        "'");
  }

  const std::filesystem::path bin = std::filesystem::path(manifest_path).parent_path() / j.at("weights").get<std::string>();
  std::size_t total = 0;
  for (const auto& p : entries) total += p.value.numel();
  std::error_code ec;
  const auto bytes = std::filesystem::file_size(bin, ec);
  if (ec || bytes != total * 4) {
    throw ManifestError("weight file " + bin.string() + " should hold " + std::to_string(total) + " float32 values");
  }
  std::ifstream r(bin, std::ios::binary);
  for (const auto& p : entries)
    for (auto& v : Tensor(p.value).data()) v = io::read_f32(r);
}

std::unique_ptr<DsatModel> load_model(const std::string& manifest_path) {
  const nlohmann::json j = read_manifest(manifest_path);
  const TrainConfig cfg = parse_config(j.at("config").get<std::string>());
  if (config_hash(cfg) != j.at("config_hash").get<std::string>()) {
    throw ManifestError("checkpoint " + manifest_path + ": config hash does not match the embedded config");
  }
  auto model = build_model(cfg);
  load_checkpoint(*model, manifest_path);
  return model;
}

}  // namespace dsat
