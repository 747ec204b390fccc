#include "hca/model.hpp"

#include <cmath>
#include <fstream>
#include <unordered_map>

#include "json.hpp"

#include "hca/config.hpp"
#include "hca/data.hpp"

namespace hca {

using nlohmann::json;

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::None: return "none";
    case AttentionKind::Transformer: return "transformer";
    case AttentionKind::Hopfield: return "hopfield";
  }
  throw InternalError("bad attention kind");
}

std::string to_string(HeadKind kind) {
  return kind == HeadKind::Pretrain15 ? "pretrain_15" : "severity_2";
}

std::string to_string(TrainingPhase phase) {
  switch (phase) {
    case TrainingPhase::Random: return "random";
    case TrainingPhase::Pretrained: return "pretrained";
    case TrainingPhase::Finetuned: return "finetuned";
  }
  throw InternalError("bad training phase");
}

AttentionKind attention_kind_from(const std::string& s) {
  if (s == "none") return AttentionKind::None;
  if (s == "transformer") return AttentionKind::Transformer;
  if (s == "hopfield") return AttentionKind::Hopfield;
  throw ConfigError("unknown attention kind '" + s + "'");
}

HeadKind head_kind_from(const std::string& s) {
  if (s == "pretrain_15") return HeadKind::Pretrain15;
  if (s == "severity_2") return HeadKind::Severity2;
  throw ConfigError("unknown head kind '" + s + "'");
}

TrainingPhase phase_from(const std::string& s) {
  if (s == "random") return TrainingPhase::Random;
  if (s == "pretrained") return TrainingPhase::Pretrained;
  if (s == "finetuned") return TrainingPhase::Finetuned;
  throw ConfigError("unknown training phase '" + s + "'");
}

std::int64_t head_output_dim(HeadKind kind) {
  return kind == HeadKind::Pretrain15 ? 15 : 2;
}

std::int64_t ffn_hidden_width(const ModelSpec& spec) {
  return spec.ffn_hidden > 0 ? spec.ffn_hidden : 4 * spec.d;
}

double hopfield_beta(const ModelSpec& spec) {
  if (spec.beta > 0.0) return spec.beta;
  return 1.0 / std::sqrt(static_cast<double>(spec.d / spec.heads));
}

void validate(const ModelSpec& spec) {
  check_config(!spec.backbone.stages.empty(), "model: backbone needs at least one stage");
  check_config(spec.backbone.in_channels >= 1 && spec.backbone.in_height >= 1 &&
                   spec.backbone.in_width >= 1,
               "model: bad input geometry");
  for (const ConvStageSpec& s : spec.backbone.stages)
    check_config(s.channels >= 1 && s.kernel >= 1 && s.stride >= 1 && s.padding >= 0,
                 "model: bad backbone stage");
  check_config(spec.backbone.projection_channels == spec.d,
               "model: backbone projection channels must equal d");
  check_config(spec.dropout >= 0.0 && spec.dropout < 1.0, "model: dropout must be in [0, 1)");
  if (spec.attention_kind != AttentionKind::None) {
    check_config(spec.heads >= 1, "model: heads must be >= 1");
    check_config(spec.d % spec.heads == 0, "model: d must be divisible by heads");
    check_config(spec.d % 2 == 0, "model: d must be even for positional encoding");
    check_config(spec.m >= 1, "model: at least one image representation query required");
    check_config(spec.encoder_layers >= 0 && spec.decoder_layers >= 0,
                 "model: negative layer count");
    check_config(spec.n_steps >= 1, "model: n_steps must be >= 1");
    check_config(spec.beta >= 0.0, "model: beta must be >= 0");
    check_config(spec.ffn_hidden >= 0, "model: ffn_hidden must be >= 0");
  }
  try {
    backbone_entity_count(spec.backbone);
  } catch (const DimensionError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

std::vector<WeightSlot> weight_plan(const ModelSpec& spec) {
  validate(spec);
  std::vector<WeightSlot> plan;
  auto push = [&plan](std::string name, Shape shape, WeightInit init) {
    plan.push_back(WeightSlot{std::move(name), std::move(shape), init});
  };

  std::int64_t c_in = spec.backbone.in_channels;
  for (std::size_t i = 0; i < spec.backbone.stages.size(); ++i) {
    const ConvStageSpec& s = spec.backbone.stages[i];
    const std::string base = "backbone.stage" + std::to_string(i);
    push(base + ".kernel", {s.channels, c_in, s.kernel, s.kernel}, WeightInit::XavierUniform);
    push(base + ".bias", {s.channels}, WeightInit::Zero);
    c_in = s.channels;
  }
  push("backbone.proj.kernel", {spec.backbone.projection_channels, c_in, 1, 1},
       WeightInit::XavierUniform);
  push("backbone.proj.bias", {spec.backbone.projection_channels}, WeightInit::Zero);

  if (spec.attention_kind != AttentionKind::None) {
    const std::int64_t d = spec.d;
    const std::int64_t dh = d / spec.heads;  // d_q = d_k = d_v per head
    const std::int64_t hidden = ffn_hidden_width(spec);
    auto push_mha = [&](const std::string& base) {
      for (int h = 0; h < spec.heads; ++h) {
        const std::string hb = base + ".h" + std::to_string(h);
        push(hb + ".wq", {d, dh}, WeightInit::XavierUniform);
        push(hb + ".wk", {d, dh}, WeightInit::XavierUniform);
        push(hb + ".wv", {d, dh}, WeightInit::XavierUniform);
      }
      push(base + ".wo", {static_cast<std::int64_t>(spec.heads) * dh, d},
           WeightInit::XavierUniform);
    };
    auto push_ffn_norms = [&](const std::string& base, int norms) {
      push(base + ".ffn.w1", {d, hidden}, WeightInit::XavierUniform);
      push(base + ".ffn.b1", {hidden}, WeightInit::Zero);
      push(base + ".ffn.w2", {hidden, d}, WeightInit::XavierUniform);
      push(base + ".ffn.b2", {d}, WeightInit::Zero);
      for (int n = 1; n <= norms; ++n) {
        push(base + ".norm" + std::to_string(n) + ".gain", {d}, WeightInit::One);
        push(base + ".norm" + std::to_string(n) + ".bias", {d}, WeightInit::Zero);
      }
    };
    for (int l = 0; l < spec.encoder_layers; ++l) {
      const std::string base = "encoder" + std::to_string(l);
      push_mha(base + ".self");
      push_ffn_norms(base, 2);
    }
    for (int l = 0; l < spec.decoder_layers; ++l) {
      const std::string base = "decoder" + std::to_string(l);
      push_mha(base + ".self");
      push_mha(base + ".cross");
      push_ffn_norms(base, 3);
    }
    push("irq", {spec.m, d}, WeightInit::QueryNormal);
  }

  const std::int64_t out = head_output_dim(spec.head_kind);
  push("head.w1", {spec.d, spec.d}, WeightInit::XavierUniform);
  push("head.b1", {spec.d}, WeightInit::Zero);
  push("head.w2", {spec.d, out}, WeightInit::XavierUniform);
  push("head.b2", {out}, WeightInit::Zero);
  return plan;
}

namespace {

double xavier_bound(const Shape& shape) {
  double fan_in = 0.0, fan_out = 0.0;
  if (shape.size() == 2) {
    fan_in = static_cast<double>(shape[0]);
    fan_out = static_cast<double>(shape[1]);
  } else if (shape.size() == 4) {
    const double rf = static_cast<double>(shape[2] * shape[3]);
    fan_in = static_cast<double>(shape[1]) * rf;
    fan_out = static_cast<double>(shape[0]) * rf;
  } else {
    throw InternalError("xavier init on unexpected rank " + std::to_string(shape.size()));
  }
  return std::sqrt(6.0 / (fan_in + fan_out));
}

Tensor init_slot(const WeightSlot& slot, std::mt19937_64& rng) {
  switch (slot.init) {
    case WeightInit::XavierUniform: {
      const double a = xavier_bound(slot.shape);
      return Tensor::uniform(slot.shape, -a, a, rng);
    }
    case WeightInit::Zero: return Tensor::zeros(slot.shape);
    case WeightInit::One: return Tensor::ones(slot.shape);
    case WeightInit::QueryNormal: return Tensor::randn(slot.shape, rng, 0.02);
  }
  throw InternalError("bad weight init kind");
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : weights)
    if (n == name) return t;
  throw ContractError("checkpoint has no weight '" + name + "'");
}

Tensor& Checkpoint::tensor(const std::string& name) {
  for (auto& [n, t] : weights)
    if (n == name) return t;
  throw ContractError("checkpoint has no weight '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : weights)
    if (n == name) return true;
  return false;
}

Checkpoint init(const ModelSpec& spec, std::uint64_t seed) {
  Checkpoint ckpt;
  ckpt.spec = spec;
  ckpt.seed = seed;
  ckpt.phase = TrainingPhase::Random;
  std::mt19937_64 rng(seed);
  for (const WeightSlot& slot : weight_plan(spec))
    ckpt.weights.emplace_back(slot.name, init_slot(slot, rng));
  return ckpt;
}

Checkpoint transplant(const Checkpoint& ckpt, HeadKind new_head, std::uint64_t seed) {
  Checkpoint out;
  out.spec = ckpt.spec;
  out.spec.head_kind = new_head;
  out.seed = seed;
  out.phase = ckpt.phase;
  std::mt19937_64 rng(seed);
  for (const WeightSlot& slot : weight_plan(out.spec)) {
    if (slot.name.rfind("head.", 0) == 0) {
      out.weights.emplace_back(slot.name, init_slot(slot, rng));
    } else {
      out.weights.emplace_back(slot.name, ckpt.tensor(slot.name));
    }
  }
  return out;
}

Checkpoint adopt_pretrained(Checkpoint dst, const Checkpoint& donor) {
  for (auto& [name, tensor] : dst.weights) {
    if (name.rfind("head.", 0) == 0) continue;
    if (!donor.has(name)) continue;
    const Tensor& src = donor.tensor(name);
    if (src.shape() != tensor.shape()) continue;
    tensor = src;
  }
  dst.phase = donor.phase;
  return dst;
}

BoundModel bind(const Checkpoint& ckpt, Graph* graph) {
  validate(ckpt.spec);
  const std::vector<WeightSlot> plan = weight_plan(ckpt.spec);
  check_contract(plan.size() == ckpt.weights.size(),
                 "checkpoint weight count does not match its spec");

  BoundModel model;
  model.spec = ckpt.spec;
  std::unordered_map<std::string, Tensor> by_name;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& [name, value] = ckpt.weights[i];
    check_contract(name == plan[i].name, "checkpoint weight order mismatch at '" + name + "'");
    check_contract(value.shape() == plan[i].shape,
                   "checkpoint weight '" + name + "' has shape " + shape_str(value.shape()) +
                       ", expected " + shape_str(plan[i].shape));
    Tensor bound = graph ? graph->parameter(value) : value.detached();
    model.params.push_back(bound);
    by_name.emplace(name, std::move(bound));
  }
  auto get = [&by_name](const std::string& name) -> const Tensor& {
    auto it = by_name.find(name);
    check_internal(it != by_name.end(), "bind: missing weight '" + name + "'");
    return it->second;
  };

  const ModelSpec& spec = ckpt.spec;
  for (std::size_t i = 0; i < spec.backbone.stages.size(); ++i) {
    const ConvStageSpec& s = spec.backbone.stages[i];
    const std::string base = "backbone.stage" + std::to_string(i);
    model.backbone.stages.push_back(
        ConvLayer{get(base + ".kernel"), get(base + ".bias"), s.stride, s.padding});
  }
  model.backbone.projection =
      ConvLayer{get("backbone.proj.kernel"), get("backbone.proj.bias"), 1, 0};

  if (spec.attention_kind != AttentionKind::None) {
    auto load_mha = [&](const std::string& base) {
      MultiHeadWeights w;
      for (int h = 0; h < spec.heads; ++h) {
        const std::string hb = base + ".h" + std::to_string(h);
        w.heads.push_back(
            AttentionHeadWeights{get(hb + ".wq"), get(hb + ".wk"), get(hb + ".wv")});
      }
      w.wo = get(base + ".wo");
      return w;
    };
    auto load_ffn = [&](const std::string& base) {
      return FeedForwardWeights{get(base + ".ffn.w1"), get(base + ".ffn.b1"),
                                get(base + ".ffn.w2"), get(base + ".ffn.b2")};
    };
    auto load_norm = [&](const std::string& base, int n) {
      const std::string nb = base + ".norm" + std::to_string(n);
      return LayerNormParams{get(nb + ".gain"), get(nb + ".bias")};
    };
    for (int l = 0; l < spec.encoder_layers; ++l) {
      const std::string base = "encoder" + std::to_string(l);
      EncoderLayer layer;
      layer.self_attn = load_mha(base + ".self");
      layer.ffn = load_ffn(base);
      layer.norm1 = load_norm(base, 1);
      layer.norm2 = load_norm(base, 2);
      layer.dropout_rate = spec.dropout;
      model.encoder.push_back(std::move(layer));
    }
    for (int l = 0; l < spec.decoder_layers; ++l) {
      const std::string base = "decoder" + std::to_string(l);
      DecoderLayer layer;
      layer.self_attn = load_mha(base + ".self");
      layer.cross_attn = load_mha(base + ".cross");
      layer.ffn = load_ffn(base);
      layer.norm1 = load_norm(base, 1);
      layer.norm2 = load_norm(base, 2);
      layer.norm3 = load_norm(base, 3);
      layer.dropout_rate = spec.dropout;
      model.decoder.push_back(std::move(layer));
    }
    model.irq = get("irq");
    model.pe = positional_encoding(backbone_entity_count(spec.backbone), spec.d);
  }

  model.head = FeedForwardWeights{get("head.w1"), get("head.b1"), get("head.w2"),
                                  get("head.b2")};
  return model;
}

Tensor model_forward(const BoundModel& model, const Tensor& image, std::mt19937_64& rng,
                     bool train_mode) {
  const ModelSpec& spec = model.spec;
  EntitySet entities = backbone_forward(image, spec.backbone, model.backbone);

  Tensor pooled;  // 1 x d
  if (spec.attention_kind == AttentionKind::None) {
    pooled = reshape(mean(entities, 0), {1, spec.d});
  } else {
    std::vector<EncoderLayer> enc = model.encoder;
    std::vector<DecoderLayer> dec = model.decoder;
    if (!train_mode) {
      for (EncoderLayer& l : enc) l.dropout_rate = 0.0;
      for (DecoderLayer& l : dec) l.dropout_rate = 0.0;
    }
    AttentionBlockFn block = default_attention_block();
    if (spec.attention_kind == AttentionKind::Hopfield) {
      const double beta = hopfield_beta(spec);
      const int n_steps = spec.n_steps;
      block = [beta, n_steps](const Tensor& q, const Tensor& mem, const MultiHeadWeights& w) {
        return hopfield_multi_head(q, mem, w, beta, n_steps);
      };
    }
    Tensor memory = encoder_forward(entities, enc, model.pe, rng, block);
    Tensor decoded = decoder_forward(model.irq, memory, dec, rng, block);
    pooled = reshape(mean(decoded, 0), {1, spec.d});
  }

  Tensor h = relu(add(matmul(pooled, model.head.w1), model.head.b1));
  Tensor out = add(matmul(h, model.head.w2), model.head.b2);
  if (spec.head_kind == HeadKind::Pretrain15) out = sigmoid(out);
  return reshape(out, {head_output_dim(spec.head_kind)});
}

void checkpoint_save(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json j;
  j["schema_version"] = 1;
  j["model"] = model_spec_to_json(ckpt.spec);
  j["phase"] = to_string(ckpt.phase);
  j["seed"] = ckpt.seed;
  {
    std::ofstream out(dir / "spec.json", std::ios::trunc);
    check_data(static_cast<bool>(out), "cannot write '" + (dir / "spec.json").string() + "'");
    out << j.dump(2) << "\n";
  }
  for (const auto& [name, tensor] : ckpt.weights) save_tensor(tensor, dir / (name + ".t64"));
}

Checkpoint checkpoint_load(const std::filesystem::path& dir) {
  const auto spec_path = dir / "spec.json";
  std::ifstream in(spec_path);
  if (!in) throw FormatError("cannot open '" + spec_path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("'" + spec_path.string() + "': " + e.what());
  }
  check_config(j.value("schema_version", 0) == 1,
               "'" + spec_path.string() + "': unsupported schema version");

  Checkpoint ckpt;
  ckpt.spec = model_spec_from_json(j.at("model"), "/model");
  ckpt.phase = phase_from(j.at("phase").get<std::string>());
  ckpt.seed = j.at("seed").get<std::uint64_t>();
  for (const WeightSlot& slot : weight_plan(ckpt.spec)) {
    Tensor t = load_tensor(dir / (slot.name + ".t64"));
    check_contract(t.shape() == slot.shape,
                   "checkpoint weight '" + slot.name + "' has shape " + shape_str(t.shape()) +
                       ", expected " + shape_str(slot.shape));
    ckpt.weights.emplace_back(slot.name, std::move(t));
  }
  return ckpt;
}

}  // namespace hca
