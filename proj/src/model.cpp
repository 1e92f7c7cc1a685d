#include "dsat/model.hpp"

#include <algorithm>

#include "dsat/error.hpp"

namespace dsat {

Stem::Stem(ParameterStore& store, const std::string& name, std::size_t channels, std::size_t downsample,
           std::size_t block_convs, Rng& rng)
    : conv(store, name + ".conv", 1, channels, 7, downsample >= 2 ? 2 : 1, 3, rng),
      norm(store, name + ".bn", channels),
      block(store, name + ".block", channels, rng, block_convs),
      pool_(downsample == 4) {}

Tensor Stem::operator()(const Tensor& image, bool training) {
  Tensor h = relu(norm(conv(image), training));
  if (pool_) h = max_pool2d(h, 2);
  return block(h, training);
}

DsatModel::DsatModel(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  stem = Stem(store_, "stem", cfg_.channels, cfg_.downsample, cfg_.block_convs, rng);
  DssConfig dss;
  dss.channels = cfg_.channels;
  dss.height = dss.width = cfg_.feature_size();
  dss.block_convs = cfg_.block_convs;
  dss.enable_cca = cfg_.enable_cca;
  dss.cca.heads = cfg_.cca_heads;
  dss.cca.depth = cfg_.cca_depth;
  dss.cca.head_dim = cfg_.cca_head_dim;
  dss.cca.dropout = cfg_.dropout;
  for (std::size_t i = 0; i < cfg_.stacks; ++i) {
    const std::string prefix = "stack" + std::to_string(i);
    hourglasses.emplace_back(store_, prefix + ".dss", dss, rng);
    if (cfg_.post_block) post.emplace_back(store_, prefix + ".post", cfg_.channels, rng, cfg_.block_convs);
    heads.emplace_back(store_, prefix + ".heads", cfg_.channels, cfg_.head_channels, cfg_.landmarks, cfg_.boundaries, rng);
  }
}

std::vector<std::size_t> DsatModel::gate_indices() const {
  if (!cfg_.enable_dsa) return {};
  std::vector<std::size_t> out = cfg_.dsa_placement;
  std::sort(out.begin(), out.end());
  return out;
}

ForwardResult DsatModel::forward(const Tensor& images, const ForwardOptions& opts, Rng& rng) {
  const std::size_t S = cfg_.image_size;
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != S || images.dim(3) != S) {
    throw ShapeError("model: expected N×1×" + std::to_string(S) + "×" + std::to_string(S) + " images, got " +
                     shape_str(images.shape()));
  }
  GateMode mode = opts.gate;
  mode.training = opts.training;
  const auto gated = gate_indices();

  ForwardResult result;
  Tensor x = stem(images, opts.training);
  for (std::size_t i = 0; i < cfg_.stacks; ++i) {
    if (std::find(gated.begin(), gated.end(), i) != gated.end()) {
      GateOutput g = dsa_forward(x, mode, rng);
      x = g.output;
      result.gates.emplace(i, std::move(g.decisions));
    }
    x = hourglasses[i](x, opts.training, rng);
    if (!post.empty()) x = post[i](x, opts.training);
    result.stacks.push_back(heads[i](x, opts.training));
  }
  return result;
}

std::unique_ptr<DsatModel> build_model(const TrainConfig& cfg) { return std::make_unique<DsatModel>(cfg); }

Tensor batch_images(const std::vector<const Tensor*>& images) {
  if (images.empty()) throw ContractError("batch_images: empty batch");
  const Shape& one = images[0]->shape();
  Shape shape{images.size()};
  shape.insert(shape.end(), one.begin(), one.end());
  std::vector<Real> data;
  data.reserve(shape_numel(shape));
  for (const Tensor* t : images) {
    if (t->shape() != one) throw ShapeError("batch_images: mixed image shapes " + shape_str(one) + " and " + shape_str(t->shape()));
    data.insert(data.end(), t->data().begin(), t->data().end());
  }
  return Tensor::from(shape, std::move(data));
}

}  // namespace dsat
