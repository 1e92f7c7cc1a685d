#include "dsat/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "dsat/binary_io.hpp"
#include "dsat/error.hpp"

namespace dsat {

namespace fs = std::filesystem;

void write_dataset(const std::string& dir, const std::vector<SyntheticSample>& samples) {
  fs::create_directories(dir);
  nlohmann::ordered_json index;
  index["samples"] = nlohmann::ordered_json::array();
  for (const auto& s : samples) {
    if (s.image.rank() != 3 || s.image.dim(0) != 1) throw ShapeError("write_dataset: sample " + s.id + " is not 1×H×W");
    const std::string file = s.id + ".bin";
    std::ofstream f(fs::path(dir) / file, std::ios::binary);
    if (!f) throw Error("write_dataset: cannot write " + file);
    io::write_i32(f, static_cast<std::int32_t>(s.image.dim(1)));
    io::write_i32(f, static_cast<std::int32_t>(s.image.dim(2)));
    for (Real v : s.image.data()) io::write_f32(f, static_cast<float>(v));

    nlohmann::ordered_json entry;
    entry["id"] = s.id;
    entry["file"] = file;
    entry["label"] = to_string(s.label);
    entry["seed"] = s.seed;
    auto& pts = entry["landmarks"] = nlohmann::ordered_json::array();
    for (const auto& p : s.landmarks) pts.push_back({p.x, p.y});
    index["samples"].push_back(std::move(entry));
  }
  std::ofstream out(fs::path(dir) / "index.json");
  out << index.dump(2) << '\n';
}

std::vector<SyntheticSample> read_dataset(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "index.json");
  if (!in) throw Error("read_dataset: no index.json in " + dir);
  std::vector<SyntheticSample> out;
  try {
    const auto index = nlohmann::json::parse(in);
    for (const auto& e : index.at("samples")) {
      SyntheticSample s;
      s.id = e.at("id").get<std::string>();
      s.label = parse_difficulty(e.at("label").get<std::string>());
      s.seed = e.at("seed").get<std::uint64_t>();
      for (const auto& p : e.at("landmarks")) s.landmarks.push_back({p.at(0).get<Real>(), p.at(1).get<Real>()});

      const fs::path file = fs::path(dir) / e.at("file").get<std::string>();
      std::ifstream f(file, std::ios::binary);
      if (!f) throw Error("read_dataset: missing image " + file.string());
      const auto h = io::read_i32(f), w = io::read_i32(f);
      if (h <= 0 || w <= 0) throw Error("read_dataset: bad header in " + file.string());
      std::error_code ec;
      if (fs::file_size(file, ec) != 8 + 4 * static_cast<std::uintmax_t>(h) * static_cast<std::uintmax_t>(w)) {
        throw Error("read_dataset: size of " + file.string() + " disagrees with its header");
      }
      std::vector<Real> px(static_cast<std::size_t>(h) * static_cast<std::size_t>(w));
      for (auto& v : px) v = io::read_f32(f);
      s.image = Tensor::from({1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)}, std::move(px));
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("read_dataset: malformed index.json: " + std::string(e.what()));
  }
  return out;
}

}  // namespace dsat
