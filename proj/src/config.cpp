#include "hca/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace hca {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ConfigError("config " + where + ": " + what);
}

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) fail(where, "expected an object");
}

void reject_unknown(const json& j, const std::string& where,
                    std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&key](const char* a) { return key == a; }) == allowed.end())
      fail(where + "/" + key, "unknown key");
  }
}

const json* find(const json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

double get_number(const json& j, const std::string& where) {
  if (!j.is_number()) fail(where, "expected a number");
  return j.get<double>();
}

double number_or(const json& j, const char* key, double def, const std::string& where) {
  const json* v = find(j, key);
  return v ? get_number(*v, where + "/" + key) : def;
}

std::int64_t get_int(const json& j, const std::string& where) {
  if (!j.is_number_integer()) fail(where, "expected an integer");
  return j.get<std::int64_t>();
}

std::int64_t int_or(const json& j, const char* key, std::int64_t def,
                    const std::string& where) {
  const json* v = find(j, key);
  return v ? get_int(*v, where + "/" + key) : def;
}

std::string get_string(const json& j, const std::string& where) {
  if (!j.is_string()) fail(where, "expected a string");
  return j.get<std::string>();
}

ImageGeometry geometry_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) fail(where, "expected [channels, height, width]");
  ImageGeometry g;
  g.channels = get_int(j[0], where + "/0");
  g.height = get_int(j[1], where + "/1");
  g.width = get_int(j[2], where + "/2");
  return g;
}

}  // namespace

json model_spec_to_json(const ModelSpec& spec) {
  json backbone;
  backbone["input"] = {spec.backbone.in_channels, spec.backbone.in_height,
                       spec.backbone.in_width};
  backbone["projection_channels"] = spec.backbone.projection_channels;
  json stages = json::array();
  for (const ConvStageSpec& s : spec.backbone.stages) {
    json st;
    st["channels"] = s.channels;
    st["kernel"] = s.kernel;
    st["stride"] = s.stride;
    st["padding"] = s.padding;
    stages.push_back(st);
  }
  backbone["stages"] = stages;

  json j;
  j["backbone"] = backbone;
  j["attention_kind"] = to_string(spec.attention_kind);
  j["encoder_layers"] = spec.encoder_layers;
  j["decoder_layers"] = spec.decoder_layers;
  j["heads"] = spec.heads;
  j["d"] = spec.d;
  j["m"] = spec.m;
  j["ffn_hidden"] = spec.ffn_hidden;
  j["beta"] = spec.beta;
  j["n_steps"] = spec.n_steps;
  j["dropout"] = spec.dropout;
  j["head_kind"] = to_string(spec.head_kind);
  return j;
}

ModelSpec model_spec_from_json(const json& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j, where,
                 {"backbone", "attention_kind", "encoder_layers", "decoder_layers", "heads",
                  "d", "m", "ffn_hidden", "beta", "n_steps", "dropout", "head_kind"});
  ModelSpec spec;

  const json* backbone = find(j, "backbone");
  if (!backbone) fail(where, "missing backbone section");
  require_object(*backbone, where + "/backbone");
  reject_unknown(*backbone, where + "/backbone",
                 {"input", "stages", "projection_channels"});
  if (const json* input = find(*backbone, "input")) {
    const ImageGeometry g = geometry_from(*input, where + "/backbone/input");
    spec.backbone.in_channels = g.channels;
    spec.backbone.in_height = g.height;
    spec.backbone.in_width = g.width;
  }
  const json* stages = find(*backbone, "stages");
  if (!stages || !stages->is_array() || stages->empty())
    fail(where + "/backbone/stages", "expected a non-empty array");
  spec.backbone.stages.clear();
  for (std::size_t i = 0; i < stages->size(); ++i) {
    const json& st = (*stages)[i];
    const std::string sw = where + "/backbone/stages/" + std::to_string(i);
    require_object(st, sw);
    reject_unknown(st, sw, {"channels", "kernel", "stride", "padding"});
    ConvStageSpec s;
    s.channels = int_or(st, "channels", s.channels, sw);
    s.kernel = int_or(st, "kernel", s.kernel, sw);
    s.stride = int_or(st, "stride", s.stride, sw);
    s.padding = int_or(st, "padding", s.kernel / 2, sw);
    spec.backbone.stages.push_back(s);
  }

  if (const json* v = find(j, "attention_kind"))
    spec.attention_kind = attention_kind_from(get_string(*v, where + "/attention_kind"));
  spec.encoder_layers = static_cast<int>(int_or(j, "encoder_layers", spec.encoder_layers, where));
  spec.decoder_layers = static_cast<int>(int_or(j, "decoder_layers", spec.decoder_layers, where));
  spec.heads = static_cast<int>(int_or(j, "heads", spec.heads, where));
  spec.d = int_or(j, "d", spec.d, where);
  spec.m = int_or(j, "m", spec.m, where);
  spec.ffn_hidden = int_or(j, "ffn_hidden", spec.ffn_hidden, where);
  spec.beta = number_or(j, "beta", spec.beta, where);
  spec.n_steps = static_cast<int>(int_or(j, "n_steps", spec.n_steps, where));
  spec.dropout = number_or(j, "dropout", spec.dropout, where);
  if (const json* v = find(j, "head_kind"))
    spec.head_kind = head_kind_from(get_string(*v, where + "/head_kind"));
  spec.backbone.projection_channels =
      int_or(*backbone, "projection_channels", spec.d, where + "/backbone");

  validate(spec);
  return spec;
}

namespace {

DataSourceConfig data_source_from(const json& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j, where, {"manifest", "seed", "n", "noise_sd", "geometry"});
  DataSourceConfig c;
  if (const json* v = find(j, "manifest")) {
    c.manifest = get_string(*v, where + "/manifest");
    reject_unknown(j, where, {"manifest"});
    return c;
  }
  c.seed = static_cast<std::uint64_t>(int_or(j, "seed", 0, where));
  c.n = static_cast<int>(int_or(j, "n", 0, where));
  if (c.n < 1) fail(where + "/n", "generator needs n >= 1");
  c.noise_sd = number_or(j, "noise_sd", 0.0, where);
  if (c.noise_sd < 0.0) fail(where + "/noise_sd", "must be >= 0");
  if (const json* v = find(j, "geometry")) c.geometry = geometry_from(*v, where + "/geometry");
  return c;
}

PretrainConfig pretrain_from(const json& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j, where,
                 {"lr", "weight_decay", "epochs", "batch_size", "seed", "beta1", "beta2",
                  "eps"});
  PretrainConfig c;
  c.lr = number_or(j, "lr", c.lr, where);
  c.weight_decay = number_or(j, "weight_decay", c.weight_decay, where);
  c.epochs = static_cast<int>(int_or(j, "epochs", c.epochs, where));
  c.batch_size = static_cast<int>(int_or(j, "batch_size", c.batch_size, where));
  c.seed = static_cast<std::uint64_t>(int_or(j, "seed", 0, where));
  c.beta1 = number_or(j, "beta1", c.beta1, where);
  c.beta2 = number_or(j, "beta2", c.beta2, where);
  c.eps = number_or(j, "eps", c.eps, where);
  if (c.lr <= 0.0) fail(where + "/lr", "must be positive");
  if (c.epochs < 0) fail(where + "/epochs", "must be >= 0");
  if (c.batch_size < 1) fail(where + "/batch_size", "must be >= 1");
  return c;
}

FinetuneConfig finetune_from(const json& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j, where,
                 {"lr", "momentum", "weight_decay", "epochs", "lr_decay", "lr_decay_every",
                  "dropout", "loss_beta", "batch_size", "seed"});
  FinetuneConfig c;
  c.lr = number_or(j, "lr", c.lr, where);
  c.momentum = number_or(j, "momentum", c.momentum, where);
  c.weight_decay = number_or(j, "weight_decay", c.weight_decay, where);
  c.epochs = static_cast<int>(int_or(j, "epochs", c.epochs, where));
  c.lr_decay = number_or(j, "lr_decay", c.lr_decay, where);
  c.lr_decay_every = static_cast<int>(int_or(j, "lr_decay_every", c.lr_decay_every, where));
  c.dropout = number_or(j, "dropout", c.dropout, where);
  c.loss_beta = number_or(j, "loss_beta", c.loss_beta, where);
  c.batch_size = static_cast<int>(int_or(j, "batch_size", c.batch_size, where));
  c.seed = static_cast<std::uint64_t>(int_or(j, "seed", 0, where));
  if (c.lr <= 0.0) fail(where + "/lr", "must be positive");
  if (c.epochs < 0) fail(where + "/epochs", "must be >= 0");
  if (c.batch_size < 1) fail(where + "/batch_size", "must be >= 1");
  if (c.lr_decay <= 0.0 || c.lr_decay > 1.0) fail(where + "/lr_decay", "must be in (0, 1]");
  if (c.lr_decay_every < 1) fail(where + "/lr_decay_every", "must be >= 1");
  if (c.dropout < 0.0 || c.dropout >= 1.0) fail(where + "/dropout", "must be in [0, 1)");
  if (c.loss_beta <= 0.0) fail(where + "/loss_beta", "must be positive");
  return c;
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  require_object(j, "/");
  reject_unknown(j, "", {"label", "model", "pretrain", "finetune", "data", "eval", "out_dir"});
  RunConfig cfg;

  const json* model = find(j, "model");
  if (!model) fail("/model", "missing section");
  cfg.model = model_spec_from_json(*model, "/model");

  if (const json* v = find(j, "label")) cfg.label = get_string(*v, "/label");
  if (const json* v = find(j, "pretrain")) cfg.pretrain = pretrain_from(*v, "/pretrain");
  if (const json* v = find(j, "finetune")) cfg.finetune = finetune_from(*v, "/finetune");

  if (const json* data = find(j, "data")) {
    require_object(*data, "/data");
    reject_unknown(*data, "/data", {"proxy", "target", "pretrain_checkpoint"});
    if (const json* v = find(*data, "proxy")) cfg.proxy = data_source_from(*v, "/data/proxy");
    if (const json* v = find(*data, "target"))
      cfg.target = data_source_from(*v, "/data/target");
    if (const json* v = find(*data, "pretrain_checkpoint"))
      cfg.pretrain_checkpoint = get_string(*v, "/data/pretrain_checkpoint");
  }

  if (const json* eval = find(j, "eval")) {
    require_object(*eval, "/eval");
    reject_unknown(*eval, "/eval", {"k", "seeds", "jobs"});
    cfg.k = static_cast<int>(int_or(*eval, "k", cfg.k, "/eval"));
    if (cfg.k < 2) fail("/eval/k", "must be >= 2");
    if (const json* v = find(*eval, "seeds")) {
      if (!v->is_array() || v->empty()) fail("/eval/seeds", "expected a non-empty array");
      cfg.seeds.clear();
      for (std::size_t i = 0; i < v->size(); ++i)
        cfg.seeds.push_back(
            static_cast<std::uint64_t>(get_int((*v)[i], "/eval/seeds/" + std::to_string(i))));
    }
    cfg.jobs = static_cast<int>(int_or(*eval, "jobs", cfg.jobs, "/eval"));
    if (cfg.jobs < 1) fail("/eval/jobs", "must be >= 1");
  }

  if (const json* v = find(j, "out_dir")) cfg.out_dir = get_string(*v, "/out_dir");
  if (cfg.label.empty() && !cfg.out_dir.empty())
    cfg.label = std::filesystem::path(cfg.out_dir).filename().string();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return run_config_from_json(j);
}

std::string backbone_label(const BackboneSpec& spec) {
  std::string s = "conv";
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    s += (i == 0 ? "" : "-") + std::to_string(spec.stages[i].channels);
  }
  s += "-p" + std::to_string(spec.projection_channels);
  return s;
}

json aggregate_to_json(const std::string& label, const std::string& backbone,
                       AttentionKind attention, bool pretrained, std::uint64_t seed, int k,
                       const AggregateReport& report) {
  json j;
  j["label"] = label;
  j["backbone"] = backbone;
  j["attention"] = to_string(attention);
  j["pretrained"] = pretrained;
  j["seed"] = seed;
  j["k"] = k;
  json metrics;
  for (const auto& [name, stat] : report) {
    json m;
    m["mean"] = stat.mean;
    m["std"] = stat.std;
    m["per_fold"] = stat.per_fold;
    metrics[name] = m;
  }
  j["metrics"] = metrics;
  return j;
}

namespace {

std::string format_pm(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f ± %.3f", mean, std);
  return buf;
}

}  // namespace

std::string render_report_table(const std::vector<json>& aggregates) {
  check_param(!aggregates.empty(), "report: no aggregate inputs");
  const std::vector<std::string> metric_names = {
      "mae", "mse", "r2_geographic_extend", "rho_geographic_extend", "r2_opacity",
      "rho_opacity"};
  // Higher is better for correlation-style metrics, lower for errors.
  const std::set<std::string> maximize = {"r2_geographic_extend", "rho_geographic_extend",
                                          "r2_opacity", "rho_opacity"};

  for (const json& a : aggregates) {
    for (const std::string& name : metric_names)
      if (!a.contains("metrics") || !a["metrics"].contains(name))
        throw DataError("report: aggregate '" + a.value("label", std::string("?")) +
                        "' lacks metric '" + name + "'");
  }

  // Group rows into blocks by backbone identity, preserving input order.
  std::vector<std::string> blocks;
  for (const json& a : aggregates) {
    const std::string b = a.value("backbone", std::string("?"));
    if (std::find(blocks.begin(), blocks.end(), b) == blocks.end()) blocks.push_back(b);
  }

  std::string out =
      "| Model | Pre-trained | Attention Module | MAE | MSE | "
      "Geographic Extend R² | Geographic Extend ρ | Opacity R² | Opacity ρ |\n"
      "|---|---|---|---|---|---|---|---|---|\n";
  for (const std::string& block : blocks) {
    std::vector<const json*> rows;
    for (const json& a : aggregates)
      if (a.value("backbone", std::string("?")) == block) rows.push_back(&a);

    // Best cell per metric within the block.
    std::vector<std::size_t> best(metric_names.size(), 0);
    for (std::size_t mi = 0; mi < metric_names.size(); ++mi) {
      for (std::size_t r = 1; r < rows.size(); ++r) {
        const double v = (*rows[r])["metrics"][metric_names[mi]]["mean"].get<double>();
        const double b = (*rows[best[mi]])["metrics"][metric_names[mi]]["mean"].get<double>();
        if (maximize.count(metric_names[mi]) ? v > b : v < b) best[mi] = r;
      }
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const json& a = *rows[r];
      out += "| " + a.value("label", block);
      out += " | " + std::string(a.value("pretrained", false) ? "yes" : "-");
      const std::string att = a.value("attention", std::string("none"));
      out += " | " + (att == "none" ? std::string("-") : att);
      for (std::size_t mi = 0; mi < metric_names.size(); ++mi) {
        const json& m = a["metrics"][metric_names[mi]];
        std::string cell = format_pm(m["mean"].get<double>(), m["std"].get<double>());
        if (rows.size() > 1 && best[mi] == r) cell = "**" + cell + "**";
        out += " | " + cell;
      }
      out += " |\n";
    }
  }
  return out;
}

}  // namespace hca
