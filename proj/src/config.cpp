#include "dsat/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "dsat/error.hpp"

namespace dsat {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
  return out;
}

Real parse_real(const std::string& key, const std::string& v) {
  Real out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + key + " expects true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty() || trim(v) == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
  return out;
}

std::string real_text(Real v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto sz = [&t](const char* k, std::size_t TrainConfig::*m) {
      t[k] = [m](TrainConfig& c, const std::string& key, const std::string& v) { c.*m = parse_size(key, v); };
    };
    auto re = [&t](const char* k, Real TrainConfig::*m) {
      t[k] = [m](TrainConfig& c, const std::string& key, const std::string& v) { c.*m = parse_real(key, v); };
    };
    auto bo = [&t](const char* k, bool TrainConfig::*m) {
      t[k] = [m](TrainConfig& c, const std::string& key, const std::string& v) { c.*m = parse_bool(key, v); };
    };
    sz("image_size", &TrainConfig::image_size);
    sz("heatmap_size", &TrainConfig::heatmap_size);
    sz("downsample", &TrainConfig::downsample);
    sz("channels", &TrainConfig::channels);
    sz("block_convs", &TrainConfig::block_convs);
    sz("stacks", &TrainConfig::stacks);
    bo("post_block", &TrainConfig::post_block);
    sz("head_channels", &TrainConfig::head_channels);
    t["dsa_placement"] = [](TrainConfig& c, const std::string& key, const std::string& v) {
      c.dsa_placement = parse_list(key, v);
    };
    sz("cca_depth", &TrainConfig::cca_depth);
    sz("cca_heads", &TrainConfig::cca_heads);
    sz("cca_head_dim", &TrainConfig::cca_head_dim);
    re("dropout", &TrainConfig::dropout);
    re("sigma_gt", &TrainConfig::sigma_gt);
    sz("landmarks", &TrainConfig::landmarks);
    sz("boundaries", &TrainConfig::boundaries);
    re("lr", &TrainConfig::lr);
    re("beta1", &TrainConfig::beta1);
    re("beta2", &TrainConfig::beta2);
    re("eps", &TrainConfig::eps);
    sz("halve_every", &TrainConfig::halve_every);
    sz("iterations", &TrainConfig::iterations);
    sz("batch_size", &TrainConfig::batch_size);
    t["seed"] = [](TrainConfig& c, const std::string& key, const std::string& v) { c.seed = parse_size(key, v); };
    bo("enable_dsa", &TrainConfig::enable_dsa);
    bo("enable_cca", &TrainConfig::enable_cca);
    bo("gate_noise", &TrainConfig::gate_noise);
    bo("augment", &TrainConfig::augment);
    sz("train_samples", &TrainConfig::train_samples);
    t["norm_kind"] = [](TrainConfig& c, const std::string&, const std::string& v) { c.norm_kind = parse_norm_kind(v); };
    re("fr_threshold", &TrainConfig::fr_threshold);
    return t;
  }();
  return table;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  if (downsample != 1 && downsample != 2 && downsample != 4) fail("downsample must be 1, 2 or 4");
  if (image_size == 0 || image_size % downsample) fail("image_size must be a multiple of downsample");
  if (feature_size() % 8) fail("image_size / downsample must be divisible by 8");
  if (heatmap_size != 2 * feature_size()) fail("heatmap_size must equal 2 * image_size / downsample");
  if (channels == 0) fail("channels must be positive");
  if (head_channels == 0) fail("head_channels must be positive");
  if (block_convs == 0) fail("block_convs must be positive");
  if (stacks == 0) fail("stacks must be positive");
  for (auto s : dsa_placement)
    if (s >= stacks) fail("dsa_placement index " + std::to_string(s) + " outside 0.." + std::to_string(stacks - 1));
  if (std::set<std::size_t>(dsa_placement.begin(), dsa_placement.end()).size() != dsa_placement.size())
    fail("dsa_placement has duplicate indices");
  if (cca_depth == 0 || cca_heads == 0) fail("cca_depth and cca_heads must be positive");
  if ((cca_head_dim ? cca_head_dim : channels / cca_heads) == 0) fail("cca_heads exceeds channels");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
  if (!(sigma_gt > 0.0)) fail("sigma_gt must be positive");
  if (landmarks != 12 || boundaries != 3) fail("the synthetic face layout has 12 landmarks and 3 boundaries");
  if (!(lr > 0.0) || !(eps > 0.0) || beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    fail("optimizer settings out of range");
  if (halve_every == 0) fail("halve_every must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(fr_threshold > 0.0)) fail("fr_threshold must be positive");
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    it->second(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const TrainConfig& c) {
  std::ostringstream os;
  std::string placement;
  for (std::size_t i = 0; i < c.dsa_placement.size(); ++i) placement += (i ? "," : "") + std::to_string(c.dsa_placement[i]);
  if (placement.empty()) placement = "none";
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "image_size = " << c.image_size << '\n'
     << "heatmap_size = " << c.heatmap_size << '\n'
     << "downsample = " << c.downsample << '\n'
     << "channels = " << c.channels << '\n'
     << "block_convs = " << c.block_convs << '\n'
     << "stacks = " << c.stacks << '\n'
     << "post_block = " << b(c.post_block) << '\n'
     << "head_channels = " << c.head_channels << '\n'
     << "dsa_placement = " << placement << '\n'
     << "cca_depth = " << c.cca_depth << '\n'
     << "cca_heads = " << c.cca_heads << '\n'
     << "cca_head_dim = " << c.cca_head_dim << '\n'
     << "dropout = " << real_text(c.dropout) << '\n'
     << "sigma_gt = " << real_text(c.sigma_gt) << '\n'
     << "landmarks = " << c.landmarks << '\n'
     << "boundaries = " << c.boundaries << '\n'
     << "lr = " << real_text(c.lr) << '\n'
     << "beta1 = " << real_text(c.beta1) << '\n'
     << "beta2 = " << real_text(c.beta2) << '\n'
     << "eps = " << real_text(c.eps) << '\n'
     << "halve_every = " << c.halve_every << '\n'
     << "iterations = " << c.iterations << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "seed = " << c.seed << '\n'
     << "enable_dsa = " << b(c.enable_dsa) << '\n'
     << "enable_cca = " << b(c.enable_cca) << '\n'
     << "gate_noise = " << b(c.gate_noise) << '\n'
     << "augment = " << b(c.augment) << '\n'
     << "train_samples = " << c.train_samples << '\n'
     << "norm_kind = " << to_string(c.norm_kind) << '\n'
     << "fr_threshold = " << real_text(c.fr_threshold) << '\n';
  return os.str();
}

std::string config_hash(const TrainConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : to_text(cfg)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace dsat
