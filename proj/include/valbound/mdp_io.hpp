#pragma once

#include <string>

#include <json.hpp>

#include "valbound/mdp.hpp"

namespace valbound {

/// {num_states, num_actions, gamma, absorbing, reward[s][a], transition[s][a][s']}
nlohmann::json mdp_to_json(const TabularMdp& mdp);
TabularMdp mdp_from_json(const nlohmann::json& j);

/// Text form with 17 significant digits per double.
std::string mdp_to_string(const TabularMdp& mdp);

}  // namespace valbound
