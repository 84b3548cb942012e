#include "pengcde/model.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <random>
#include <stdexcept>

#include "pengcde/rng.hpp"

namespace pengcde {

using nlohmann::json;

Variant variant_from_string(const std::string& name) {
  if (name == "constant") return Variant::Constant;
  if (name == "gnode") return Variant::Gnode;
  if (name == "adjacency") return Variant::Adjacency;
  if (name == "premult") return Variant::PreMult;
  if (name == "original") return Variant::Original;
  if (name == "peng") return Variant::Peng;
  if (name == "peng-features" || name == "peng_features") return Variant::PengFeatures;
  throw std::invalid_argument("unknown model variant: " + name);
}

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::Constant: return "constant";
    case Variant::Gnode: return "gnode";
    case Variant::Adjacency: return "adjacency";
    case Variant::PreMult: return "premult";
    case Variant::Original: return "original";
    case Variant::Peng: return "peng";
    case Variant::PengFeatures: return "peng-features";
  }
  return "?";
}

std::size_t ModelParams::fusion_parameter_count() const {
  std::size_t count = 0;
  for (const Tensor& w : fusion_a) count += w.size();
  for (const Tensor& w : fusion_da) count += w.size();
  if (premult_w1.defined()) count += premult_w1.size();
  if (premult_w2.defined()) count += premult_w2.size();
  return count;
}

namespace {

Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor w = Tensor::zeros({fan_in, fan_out});
  for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  return w;
}

bool is_peng(Variant v) { return v == Variant::Peng || v == Variant::PengFeatures; }
bool uses_conv_stack(Variant v) { return v != Variant::Constant; }

}  // namespace

ModelParams init_params(Variant variant, std::size_t nodes, std::size_t dz, std::size_t dx,
                        std::size_t dy, std::size_t layers, std::uint64_t seed,
                        bool per_layer_fusion) {
  if (layers < 1) throw std::invalid_argument("init_params: need at least one layer");
  if (variant == Variant::PengFeatures && dx == 0) {
    throw std::invalid_argument("init_params: peng-features needs feature channels");
  }
  ModelParams p;
  p.variant = variant;
  p.nodes = nodes;
  p.dz = dz;
  p.dx = dx;
  p.dy = dy;
  p.layers = layers;
  p.per_layer_fusion = per_layer_fusion;

  auto rng = make_rng(derive_seed(seed, "model-init"));

  if (is_peng(variant)) {
    const std::size_t sets = per_layer_fusion ? layers : 1;
    for (std::size_t s = 0; s < sets; ++s) {
      p.fusion_a.push_back(identity_weights());
      p.fusion_da.push_back(identity_weights());
    }
  } else if (variant == Variant::PreMult) {
    p.premult_w1 = glorot(nodes, nodes, rng);
    p.premult_w2 = glorot(nodes, nodes, rng);
  }

  if (variant == Variant::Constant) {
    p.const_field = glorot(nodes, dz, rng);
  }
  if (uses_conv_stack(variant)) {
    for (std::size_t l = 0; l < layers; ++l) {
      const bool last = l + 1 == layers;
      const std::size_t out =
          (last && variant == Variant::PengFeatures) ? dz * (dx + 1) : dz;
      p.conv_w.push_back(glorot(dz, out, rng));
      if (!last) {
        p.ln_gain.push_back(Tensor::ones({dz}));
        p.ln_bias.push_back(Tensor::zeros({dz}));
      }
    }
  }
  p.init_w = glorot(2, dz, rng);
  p.readout_w = glorot(dz, dy, rng);
  p.readout_b = Tensor::zeros({dy});
  return p;
}

std::vector<NamedParam> collect_parameters(ModelParams& p) {
  std::vector<NamedParam> out;
  auto push = [&out](std::string name, Tensor& t) {
    if (t.defined()) out.push_back({std::move(name), &t});
  };
  for (std::size_t s = 0; s < p.fusion_a.size(); ++s) {
    push("fusion_a." + std::to_string(s), p.fusion_a[s]);
  }
  for (std::size_t s = 0; s < p.fusion_da.size(); ++s) {
    push("fusion_da." + std::to_string(s), p.fusion_da[s]);
  }
  push("premult_w1", p.premult_w1);
  push("premult_w2", p.premult_w2);
  push("const_field", p.const_field);
  for (std::size_t l = 0; l < p.conv_w.size(); ++l) {
    push("conv_w." + std::to_string(l), p.conv_w[l]);
  }
  for (std::size_t l = 0; l < p.ln_gain.size(); ++l) {
    push("ln_gain." + std::to_string(l), p.ln_gain[l]);
    push("ln_bias." + std::to_string(l), p.ln_bias[l]);
  }
  push("init_w", p.init_w);
  push("readout_w", p.readout_w);
  push("readout_b", p.readout_b);
  return out;
}

ControlPaths build_paths(const DynamicGraphSeries& series, bool with_features) {
  ControlPaths paths;
  paths.a_path = CubicPath::fit(series.times, series.adjacency);
  if (with_features) {
    if (series.features.empty()) {
      throw std::invalid_argument("build_paths: series carries no node features");
    }
    paths.x_path = CubicPath::fit(
        series.times, augment_time(series.features, series.times, TimeAugment::ExtendChannels));
  }
  paths.series = &series;
  return paths;
}

namespace {

Tensor apply_activation(Activation act, const Tensor& x) {
  return act == Activation::Tanh ? tanh(x) : x;
}

/// Shared convolutional field: layered graph convolutions with the supplied
/// effective adjacency, followed by one final convolution whose output is the
/// rate of change.
Tensor conv_field(const ModelParams& p, const Tensor& a_eff, const Tensor& z) {
  Tensor h = z;
  for (std::size_t l = 0; l + 1 < p.layers; ++l) {
    h = apply_activation(p.activation, matmul(matmul(a_eff, h), p.conv_w[l]));
    if (p.use_layer_norm) h = layer_norm(h, p.ln_gain[l], p.ln_bias[l]);
  }
  return apply_activation(p.activation, matmul(matmul(a_eff, h), p.conv_w[p.layers - 1]));
}

/// Per-layer fusion recomputes the effective adjacency before every
/// convolution; the default shares one fused matrix across the stack.
Tensor conv_field_per_layer(const ModelParams& p, const Tensor& a, const Tensor& da,
                            const Tensor& z) {
  Tensor h = z;
  for (std::size_t l = 0; l + 1 < p.layers; ++l) {
    Tensor a_eff = fuse(p.fusion_a[l], p.fusion_da[l], a, da);
    h = apply_activation(p.activation, matmul(matmul(a_eff, h), p.conv_w[l]));
    if (p.use_layer_norm) h = layer_norm(h, p.ln_gain[l], p.ln_bias[l]);
  }
  Tensor a_eff = fuse(p.fusion_a[p.layers - 1], p.fusion_da[p.layers - 1], a, da);
  return apply_activation(p.activation, matmul(matmul(a_eff, h), p.conv_w[p.layers - 1]));
}

}  // namespace

Tensor vector_field_values(const ModelParams& p, const Tensor& z, const Tensor& a_value,
                           const Tensor& a_deriv, const Tensor* x_deriv) {
  Tensor raw;
  switch (p.variant) {
    case Variant::Constant:
      return p.const_field;
    case Variant::Gnode:
    case Variant::Adjacency:
      raw = conv_field(p, a_value, z);
      break;
    case Variant::PreMult:
      raw = conv_field(p, add(matmul(p.premult_w1, a_value), matmul(p.premult_w2, a_deriv)), z);
      break;
    case Variant::Original:
      raw = conv_field(p, add(a_value, a_deriv), z);
      break;
    case Variant::Peng:
    case Variant::PengFeatures:
      raw = p.per_layer_fusion
                ? conv_field_per_layer(p, a_value, a_deriv, z)
                : conv_field(p, fuse(p.fusion_a[0], p.fusion_da[0], a_value, a_deriv), z);
      break;
  }
  if (p.variant == Variant::PengFeatures) {
    if (x_deriv == nullptr) {
      throw std::invalid_argument("vector_field: peng-features needs the control derivative");
    }
    // n x (dz*(dx+1)) against n x (dx+1), contracted per node.
    return node_contract(raw, *x_deriv, p.dz);
  }
  return raw;
}

Tensor vector_field(const ModelParams& p, double t, const Tensor& z, const ControlPaths& paths) {
  if (p.variant == Variant::Constant) return p.const_field;
  if (p.variant == Variant::Gnode) {
    if (paths.series == nullptr) {
      throw std::invalid_argument("vector_field: gnode needs snapshot access");
    }
    const Tensor& snap = paths.series->adjacency[paths.series->snapshot_index(t)];
    return vector_field_values(p, z, snap, snap, nullptr);
  }
  const Tensor a = paths.a_path.eval(t);
  const Tensor da = paths.a_path.deriv(t);
  if (p.variant == Variant::PengFeatures) {
    if (!paths.x_path.has_value()) {
      throw std::invalid_argument("vector_field: peng-features needs a feature path");
    }
    const Tensor dx = paths.x_path->deriv(t);
    return vector_field_values(p, z, a, da, &dx);
  }
  return vector_field_values(p, z, a, da, nullptr);
}

Tensor init_state(const ModelParams& p, const ControlPaths& paths, double t0) {
  const Tensor a0 = paths.a_path.eval(t0);
  const std::size_t n = a0.dim(0);
  Tensor summary = Tensor::zeros({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += a0.at(i, j);
    summary.at(i, 0) = t0;
    summary.at(i, 1) = n > 1 ? deg / static_cast<double>(n - 1) : 0.0;
  }
  return apply_activation(p.activation, matmul(matmul(a0, summary), p.init_w));
}

Tensor readout(const ModelParams& p, const Tensor& z) {
  return add(matmul(z, p.readout_w), p.readout_b);
}

ForwardResult forward(const ModelParams& p, const ControlPaths& paths,
                      std::vector<double> save_times, const SolverConfig& config) {
  const double t0 = paths.t_begin();
  const double t1 = paths.t_end();
  Tensor z0 = init_state(p, paths, t0);
  VectorField field = [&p, &paths](double t, const Tensor& z) {
    return vector_field(p, t, z, paths);
  };
  LatentPath latent = solve(field, z0, t0, t1, std::move(save_times), config);
  ForwardResult result;
  result.times = latent.times;
  result.stats = latent.stats;
  result.latents = std::move(latent.states);
  result.predictions.reserve(result.latents.size());
  for (const Tensor& z : result.latents) result.predictions.push_back(readout(p, z));
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

json tensor_to_json(const Tensor& t) {
  json j;
  j["shape"] = t.shape();
  j["data"] = std::vector<double>(t.data(), t.data() + t.size());
  return j;
}

Tensor tensor_from_json(const json& j) {
  return Tensor::from(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

}  // namespace

std::string checkpoint_to_json(const ModelParams& params, const SolverConfig& config,
                               std::uint64_t seed) {
  ModelParams p = params;  // tensor copies share buffers; collect needs mutability
  json j;
  j["variant"] = to_string(params.variant);
  j["dims"] = {{"nodes", params.nodes}, {"dz", params.dz},     {"dx", params.dx},
               {"dy", params.dy},       {"layers", params.layers}};
  j["flags"] = {{"per_layer_fusion", params.per_layer_fusion},
                {"layer_norm", params.use_layer_norm},
                {"activation", params.activation == Activation::Tanh ? "tanh" : "identity"}};
  j["solver"] = {{"method", config.method == SolverMethod::Tsit5 ? "tsit5" : "rk4"},
                 {"rtol", config.rtol},
                 {"atol", config.atol},
                 {"dt0", config.dt0},
                 {"rk4_steps", config.rk4_steps}};
  j["seed"] = seed;
  json tensors = json::object();
  for (const NamedParam& np : collect_parameters(p)) {
    tensors[np.name] = tensor_to_json(*np.tensor);
  }
  j["params"] = std::move(tensors);
  return j.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
  const json j = json::parse(text);
  Checkpoint ck;
  const json& dims = j.at("dims");
  const json& flags = j.at("flags");
  ck.params = init_params(variant_from_string(j.at("variant").get<std::string>()),
                          dims.at("nodes").get<std::size_t>(), dims.at("dz").get<std::size_t>(),
                          dims.at("dx").get<std::size_t>(), dims.at("dy").get<std::size_t>(),
                          dims.at("layers").get<std::size_t>(), 0,
                          flags.at("per_layer_fusion").get<bool>());
  ck.params.use_layer_norm = flags.at("layer_norm").get<bool>();
  ck.params.activation = flags.at("activation").get<std::string>() == "tanh"
                             ? Activation::Tanh
                             : Activation::Identity;
  const json& tensors = j.at("params");
  for (const NamedParam& np : collect_parameters(ck.params)) {
    *np.tensor = tensor_from_json(tensors.at(np.name));
  }
  const json& solver = j.at("solver");
  ck.solver.method = solver.at("method").get<std::string>() == "tsit5" ? SolverMethod::Tsit5
                                                                       : SolverMethod::RK4;
  ck.solver.rtol = solver.at("rtol").get<double>();
  ck.solver.atol = solver.at("atol").get<double>();
  ck.solver.dt0 = solver.at("dt0").get<double>();
  ck.solver.rk4_steps = solver.at("rk4_steps").get<std::size_t>();
  ck.seed = j.at("seed").get<std::uint64_t>();
  return ck;
}

void save_checkpoint(const ModelParams& params, const SolverConfig& config, std::uint64_t seed,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
  out << checkpoint_to_json(params, config, seed);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot read " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checkpoint_from_json(text);
}

}  // namespace pengcde
