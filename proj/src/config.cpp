#include "lflow/config.hpp"

#include <fstream>
#include <set>

#include "lflow/cnf.hpp"
#include "lflow/realnvp.hpp"

namespace lflow {

void RunConfig::validate() const {
  if (side < 2) throw ConfigError("lattice side must be at least 2");
  if (model != "cnf" && model != "realnvp") {
    throw ConfigError("model must be 'cnf' or 'realnvp'");
  }
  cnf_variant_from_string(variant);  // throws on unknown names
  try {
    couplings().validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  if (workers < 1) throw ConfigError("workers must be positive");
  if (rk4_steps < 1 || time_dims < 2 || freq_count < 1 || horizon <= 0.0) {
    throw ConfigError("invalid flow hyperparameters");
  }
  if (nvp_layers < 1 || nvp_hidden < 1) {
    throw ConfigError("invalid coupling-stack hyperparameters");
  }
  if (chain_length < 1 || burn_in < 0 || burn_in >= chain_length ||
      chunk < 1) {
    throw ConfigError("invalid chain settings");
  }
  train.validate();
}

std::unique_ptr<FlowModel> RunConfig::make_model() const {
  validate();
  LatticeGeometry geo(side);
  if (model == "cnf") {
    return std::make_unique<CnfFlow>(geo, cnf_variant_from_string(variant),
                                     TimeKernel{time_dims, horizon},
                                     freq_count, seed, rk4_steps);
  }
  RealNvpConfig cfg;
  cfg.layers = nvp_layers;
  cfg.hidden = nvp_hidden;
  return std::make_unique<RealNvpFlow>(geo, cfg, seed);
}

RunConfig RunConfig::from_toml(const TomlTable& table) {
  RunConfig cfg;
  std::set<std::string> known;
  auto top_str = [&](const char* key, std::string& out) {
    known.insert(key);
    if (const auto* v = toml_find(table, key)) out = v->as_string();
  };
  auto get_int = [&](const char* key, auto& out) {
    known.insert(key);
    if (const auto* v = toml_find(table, key)) {
      out = static_cast<std::remove_reference_t<decltype(out)>>(v->as_int());
    }
  };
  auto get_dbl = [&](const char* key, double& out) {
    known.insert(key);
    if (const auto* v = toml_find(table, key)) out = v->as_double();
  };
  auto get_bool = [&](const char* key, bool& out) {
    known.insert(key);
    if (const auto* v = toml_find(table, key)) out = v->as_bool();
  };

  get_int("lattice", cfg.side);
  get_dbl("m_sq", cfg.m_sq);
  get_dbl("lambda", cfg.lambda);
  top_str("model", cfg.model);
  top_str("variant", cfg.variant);
  get_int("seed", cfg.seed);
  top_str("output_dir", cfg.output_dir);
  get_int("workers", cfg.workers);

  get_int("train.batch", cfg.train.batch);
  get_int("train.steps_per_epoch", cfg.train.steps_per_epoch);
  get_int("train.epochs", cfg.train.epochs);
  get_dbl("train.lr", cfg.train.lr);
  get_int("train.lr_drop_step", cfg.train.lr_drop_step);
  get_dbl("train.lr_drop_factor", cfg.train.lr_drop_factor);
  get_dbl("train.adam_beta1", cfg.train.adam_beta1);
  get_dbl("train.adam_beta2", cfg.train.adam_beta2);
  get_dbl("train.adam_eps", cfg.train.adam_eps);
  get_int("train.ess_samples", cfg.train.ess_samples);
  get_int("train.checkpoint_every", cfg.train.checkpoint_every);
  get_bool("train.train_omega", cfg.train.train_omega);
  get_dbl("train.stop_at_ess", cfg.train.stop_at_ess);
  get_dbl("train.budget_seconds", cfg.train.budget_seconds);
  get_int("train.rk4_steps", cfg.rk4_steps);
  get_int("train.time_dims", cfg.time_dims);
  get_dbl("train.horizon", cfg.horizon);
  get_int("train.frequencies", cfg.freq_count);

  get_int("realnvp.layers", cfg.nvp_layers);
  get_int("realnvp.hidden", cfg.nvp_hidden);

  get_int("sample.chain_length", cfg.chain_length);
  get_int("sample.burn_in", cfg.burn_in);
  get_int("sample.chunk", cfg.chunk);

  for (const auto& [key, value] : table) {
    if (!known.contains(key)) {
      throw ConfigError("unknown configuration key: " + key);
    }
  }
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

TomlTable RunConfig::to_toml() const {
  TomlTable t;
  t.emplace_back("lattice", TomlValue::of(side));
  t.emplace_back("m_sq", TomlValue::of(m_sq));
  t.emplace_back("lambda", TomlValue::of(lambda));
  t.emplace_back("model", TomlValue::of(model));
  t.emplace_back("variant", TomlValue::of(variant));
  t.emplace_back("seed", TomlValue::of(seed));
  t.emplace_back("output_dir", TomlValue::of(output_dir));
  t.emplace_back("workers", TomlValue::of(workers));

  t.emplace_back("train.batch", TomlValue::of(train.batch));
  t.emplace_back("train.steps_per_epoch", TomlValue::of(train.steps_per_epoch));
  t.emplace_back("train.epochs", TomlValue::of(train.epochs));
  t.emplace_back("train.lr", TomlValue::of(train.lr));
  t.emplace_back("train.lr_drop_step", TomlValue::of(train.lr_drop_step));
  t.emplace_back("train.lr_drop_factor", TomlValue::of(train.lr_drop_factor));
  t.emplace_back("train.adam_beta1", TomlValue::of(train.adam_beta1));
  t.emplace_back("train.adam_beta2", TomlValue::of(train.adam_beta2));
  t.emplace_back("train.adam_eps", TomlValue::of(train.adam_eps));
  t.emplace_back("train.ess_samples", TomlValue::of(train.ess_samples));
  t.emplace_back("train.checkpoint_every", TomlValue::of(train.checkpoint_every));
  t.emplace_back("train.train_omega", TomlValue::of(train.train_omega));
  t.emplace_back("train.stop_at_ess", TomlValue::of(train.stop_at_ess));
  t.emplace_back("train.budget_seconds", TomlValue::of(train.budget_seconds));
  t.emplace_back("train.rk4_steps", TomlValue::of(rk4_steps));
  t.emplace_back("train.time_dims", TomlValue::of(time_dims));
  t.emplace_back("train.horizon", TomlValue::of(horizon));
  t.emplace_back("train.frequencies", TomlValue::of(freq_count));

  t.emplace_back("realnvp.layers", TomlValue::of(nvp_layers));
  t.emplace_back("realnvp.hidden", TomlValue::of(nvp_hidden));

  t.emplace_back("sample.chain_length", TomlValue::of(static_cast<long long>(chain_length)));
  t.emplace_back("sample.burn_in", TomlValue::of(burn_in));
  t.emplace_back("sample.chunk", TomlValue::of(chunk));
  return t;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  return from_toml(parse_toml_file(path));
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config: " + path.string());
  out << serialize_toml(to_toml());
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  for (const auto& [key, value] : to_toml()) {
    switch (value.kind) {
      case TomlValue::Kind::kString: j[key] = value.str; break;
      case TomlValue::Kind::kBool: j[key] = value.boolean; break;
      case TomlValue::Kind::kInt: j[key] = value.integer; break;
      case TomlValue::Kind::kFloat: j[key] = value.number; break;
    }
  }
  return j;
}

}  // namespace lflow
