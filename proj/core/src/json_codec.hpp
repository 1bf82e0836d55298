#pragma once

// JSON encoding of the spec and config structs, shared by the dataset and
// checkpoint files and the experiment config. Readers accept partial
// objects (missing keys keep their current value) and reject unknown keys.

#include <json.hpp>

#include <initializer_list>
#include <string>

#include "phydisc/errors.hpp"
#include "phydisc/model.hpp"
#include "phydisc/simulate.hpp"
#include "phydisc/train.hpp"

namespace phydisc::codec {

using json = nlohmann::json;

inline void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys,
                           const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw ConfigError("not a number");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer() && !it->is_number_unsigned()) {
        throw ConfigError("not an integer");
      }
      if constexpr (std::is_unsigned_v<T>) {
        if (it->is_number_integer() && it->template get<long long>() < 0) {
          throw ConfigError("must be non-negative");
        }
      }
    }
    out = it->template get<T>();
  } catch (const ConfigError& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline json to_json(const SystemSpec& s) {
  return json{{"system", to_string(s.system)},
              {"grid", s.grid},
              {"sample_count", s.sample_count},
              {"seed", s.seed},
              {"earth_radius", s.earth_radius},
              {"mars_radius", s.mars_radius},
              {"earth_period", s.earth_period},
              {"mars_period", s.mars_period},
              {"total_weeks", s.total_weeks},
              {"r0_low", s.r0_low},
              {"r0_high", s.r0_high},
              {"band_low", s.band.low},
              {"band_high", s.band.high},
              {"proposal_scale", s.proposal_scale},
              {"potential_offset", s.potential_offset},
              {"audit_points", s.audit_points},
              {"max_draws_per_sample", s.max_draws_per_sample},
              {"magnetic_field", s.magnetic_field},
              {"solver_tol", s.solver_tol}};
}

/// Overrides fields of `s`. A "system" key must match s.system.
inline void from_json(const json& j, SystemSpec& s, const std::string& where) {
  require_object(j, where);
  reject_unknown(j,
                 {"system", "grid", "sample_count", "seed", "earth_radius", "mars_radius",
                  "earth_period", "mars_period", "total_weeks", "r0_low", "r0_high",
                  "band_low", "band_high", "proposal_scale", "potential_offset",
                  "audit_points", "max_draws_per_sample", "magnetic_field", "solver_tol"},
                 where);
  if (j.contains("system")) {
    std::string name;
    read(j, "system", name, where);
    if (system_from_string(name) != s.system) {
      throw ConfigError(where + ": system '" + name + "' does not match");
    }
  }
  read(j, "grid", s.grid, where);
  read(j, "sample_count", s.sample_count, where);
  read(j, "seed", s.seed, where);
  read(j, "earth_radius", s.earth_radius, where);
  read(j, "mars_radius", s.mars_radius, where);
  read(j, "earth_period", s.earth_period, where);
  read(j, "mars_period", s.mars_period, where);
  read(j, "total_weeks", s.total_weeks, where);
  read(j, "r0_low", s.r0_low, where);
  read(j, "r0_high", s.r0_high, where);
  read(j, "band_low", s.band.low, where);
  read(j, "band_high", s.band.high, where);
  read(j, "proposal_scale", s.proposal_scale, where);
  read(j, "potential_offset", s.potential_offset, where);
  read(j, "audit_points", s.audit_points, where);
  read(j, "max_draws_per_sample", s.max_draws_per_sample, where);
  read(j, "magnetic_field", s.magnetic_field, where);
  read(j, "solver_tol", s.solver_tol, where);
}

inline json to_json(const ModelSpec& m) {
  return json{{"system", to_string(m.system)},
              {"mode", to_string(m.mode)},
              {"encoder_input_dim", m.encoder_input_dim},
              {"obs_dim", m.obs_dim},
              {"control_dim", m.control_dim},
              {"latent_dim", m.latent_dim},
              {"coder_hidden", m.coder_hidden},
              {"coder_activation", to_string(m.coder_activation)},
              {"field_hidden", m.field_hidden},
              {"field_activation", to_string(m.field_activation)}};
}

inline void from_json(const json& j, ModelSpec& m, const std::string& where) {
  require_object(j, where);
  reject_unknown(j,
                 {"system", "mode", "encoder_input_dim", "obs_dim", "control_dim",
                  "latent_dim", "coder_hidden", "coder_activation", "field_hidden",
                  "field_activation"},
                 where);
  std::string text;
  try {
    if (j.contains("system")) {
      read(j, "system", text, where);
      m.system = system_from_string(text);
    }
    if (j.contains("mode")) {
      read(j, "mode", text, where);
      m.mode = latent_mode_from_string(text);
    }
    if (j.contains("coder_activation")) {
      read(j, "coder_activation", text, where);
      m.coder_activation = activation_from_string(text);
    }
    if (j.contains("field_activation")) {
      read(j, "field_activation", text, where);
      m.field_activation = activation_from_string(text);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  read(j, "encoder_input_dim", m.encoder_input_dim, where);
  read(j, "obs_dim", m.obs_dim, where);
  read(j, "control_dim", m.control_dim, where);
  read(j, "latent_dim", m.latent_dim, where);
  read(j, "coder_hidden", m.coder_hidden, where);
  read(j, "field_hidden", m.field_hidden, where);
}

inline json to_json(const TrainConfig& c) {
  json phases = json::array();
  for (const auto& p : c.schedule) {
    phases.push_back({{"optimizer", to_string(p.optimizer)}, {"epochs", p.epochs}});
  }
  return json{{"beta", c.beta},
              {"sigma_h", c.sigma_h},
              {"batch_size", c.batch_size},
              {"lr_start", c.lr_start},
              {"lr_end", c.lr_end},
              {"schedule", phases},
              {"mre_weight", c.mre_weight},
              {"seed", c.seed},
              {"rel_tol", c.rel_tol},
              {"abs_tol", c.abs_tol},
              {"max_steps", c.max_steps}};
}

/// "epochs" replaces the schedule with the default split; "schedule" gives
/// the phases explicitly. Both at once is an error.
inline void from_json(const json& j, TrainConfig& c, const std::string& where) {
  require_object(j, where);
  reject_unknown(j,
                 {"beta", "sigma_h", "batch_size", "lr_start", "lr_end", "schedule", "epochs",
                  "mre_weight", "seed", "rel_tol", "abs_tol", "max_steps"},
                 where);
  read(j, "beta", c.beta, where);
  read(j, "sigma_h", c.sigma_h, where);
  read(j, "batch_size", c.batch_size, where);
  read(j, "lr_start", c.lr_start, where);
  read(j, "lr_end", c.lr_end, where);
  read(j, "mre_weight", c.mre_weight, where);
  read(j, "seed", c.seed, where);
  read(j, "rel_tol", c.rel_tol, where);
  read(j, "abs_tol", c.abs_tol, where);
  read(j, "max_steps", c.max_steps, where);
  if (j.contains("epochs") && j.contains("schedule")) {
    throw ConfigError(where + ": give either epochs or schedule, not both");
  }
  if (j.contains("epochs")) {
    std::size_t e = 0;
    read(j, "epochs", e, where);
    c.set_epochs(e);
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    if (!s.is_array()) throw ConfigError(where + ".schedule: expected an array");
    std::vector<PhaseSpec> phases;
    for (const auto& p : s) {
      const std::string w = where + ".schedule[]";
      require_object(p, w);
      reject_unknown(p, {"optimizer", "epochs"}, w);
      PhaseSpec ph;
      std::string name;
      read(p, "optimizer", name, w);
      try {
        ph.optimizer = optimizer_from_string(name);
      } catch (const Error& e) {
        throw ConfigError(w + ": " + e.what());
      }
      read(p, "epochs", ph.epochs, w);
      phases.push_back(ph);
    }
    c.schedule = std::move(phases);
  }
}

}  // namespace phydisc::codec
