#pragma once

#include <memory>

#include "lflow/model.hpp"
#include "lflow/toml.hpp"
#include "lflow/training.hpp"

namespace lflow {

// Everything a run needs, round-trippable through a TOML file. Unknown keys
// in a file are rejected so typos cannot silently fall back to defaults.
struct RunConfig {
  int side = 6;
  double m_sq = -4.0;
  double lambda = 6.975;
  std::string model = "cnf";  // cnf | realnvp
  std::string variant = "full_equivariant";
  std::uint64_t seed = 1;
  std::string output_dir = "runs/out";
  int workers = 1;

  TrainConfig train;
  int rk4_steps = 50;
  int time_dims = 10;
  double horizon = 1.0;
  int freq_count = 9;

  int nvp_layers = 16;
  int nvp_hidden = 8;

  long chain_length = 10000;
  int burn_in = 0;
  int chunk = 100;

  void validate() const;
  Phi4Couplings couplings() const { return {m_sq, lambda}; }
  std::unique_ptr<FlowModel> make_model() const;

  static RunConfig from_toml(const TomlTable& table);
  TomlTable to_toml() const;
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  nlohmann::json to_json() const;
};

}  // namespace lflow
