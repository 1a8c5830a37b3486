#pragma once

#include <set>
#include <string>
#include <vector>

#include "swtr/ablation.hpp"
#include "swtr/phantom.hpp"
#include "swtr/trainer.hpp"

namespace swtr {

struct CohortSettings {
  std::size_t count = 20;

  template <typename V>
  void visit(V& v) {
    v("count", count);
  }
};

// Every tunable of the command-line tool under one dotted namespace:
// model.*, train.*, augment.*, preprocess.*, phantom.*, cohort.*, ablation.*.
struct RunConfig {
  ExperimentConfig experiment = phantom_experiment();
  PhantomSpec phantom = toy_phantom_spec();
  CohortSettings cohort;
  AblationOptions ablation;

  void validate() const {
    experiment.validate();
    phantom.validate();
    ablation.validate();
    if (cohort.count < 1) fail(ErrorCode::kConfig, "cohort.count must be at least 1");
  }

  KeyValueConfig to_kv() const {
    KeyValueConfig kv;
    experiment.write(kv);
    write_config(phantom, kv, "phantom.");
    write_config(cohort, kv, "cohort.");
    write_config(ablation, kv, "ablation.");
    return kv;
  }

  // Applies the keys present in `kv`; any key outside the known sections is an error.
  void apply(const KeyValueConfig& kv) {
    std::set<std::string> consumed;
    experiment.read(kv, consumed);
    read_config(phantom, kv, "phantom.", &consumed);
    read_config(cohort, kv, "cohort.", &consumed);
    read_config(ablation, kv, "ablation.", &consumed);
    reject_unknown_keys(kv, consumed);
  }

  void set_seed(std::uint64_t s) {
    experiment.set_seed(s);
    phantom.seed = s;
  }
};

// Defaults, then the config file, then overrides, then the seed flag.
inline RunConfig resolve_run_config(const std::string& config_path, const std::vector<std::string>& overrides,
                                    const std::uint64_t* seed) {
  RunConfig rc;
  KeyValueConfig kv;
  if (!config_path.empty()) kv = KeyValueConfig::load(config_path);
  for (const auto& o : overrides) kv.apply_override(o);
  rc.apply(kv);
  if (seed) rc.set_seed(*seed);
  rc.validate();
  return rc;
}

}  // namespace swtr
