#include "valbound/mdp_io.hpp"

#include <stdexcept>

#include "valbound/format.hpp"

namespace valbound {

nlohmann::json mdp_to_json(const TabularMdp& mdp) {
    const auto S = mdp.num_states();
    const auto A = mdp.num_actions();
    nlohmann::json reward = nlohmann::json::array();
    nlohmann::json transition = nlohmann::json::array();
    for (std::size_t s = 0; s < S; ++s) {
        nlohmann::json rrow = nlohmann::json::array();
        nlohmann::json trow = nlohmann::json::array();
        for (std::size_t a = 0; a < A; ++a) {
            rrow.push_back(mdp.reward(s, a));
            nlohmann::json probs = nlohmann::json::array();
            for (std::size_t n = 0; n < S; ++n) probs.push_back(mdp.transition(s, a, n));
            trow.push_back(std::move(probs));
        }
        reward.push_back(std::move(rrow));
        transition.push_back(std::move(trow));
    }
    return {{"num_states", S},     {"num_actions", A},   {"gamma", mdp.gamma()},
            {"absorbing", mdp.absorbing()}, {"reward", reward}, {"transition", transition}};
}

TabularMdp mdp_from_json(const nlohmann::json& j) {
    for (const auto& [key, _] : j.items()) {
        if (key != "num_states" && key != "num_actions" && key != "gamma" && key != "absorbing" && key != "reward" &&
            key != "transition")
            throw std::invalid_argument("mdp: unknown key '" + key + "'");
    }
    const auto S = j.at("num_states").get<std::size_t>();
    const auto A = j.at("num_actions").get<std::size_t>();
    const auto& r = j.at("reward");
    const auto& t = j.at("transition");
    if (r.size() != S || t.size() != S) throw std::invalid_argument("mdp: reward/transition must have num_states rows");

    RewardTable reward(S, A);
    std::vector<double> transition(S * A * S);
    for (std::size_t s = 0; s < S; ++s) {
        if (r[s].size() != A || t[s].size() != A) throw std::invalid_argument("mdp: rows must have num_actions entries");
        for (std::size_t a = 0; a < A; ++a) {
            reward(s, a) = r[s][a].get<double>();
            if (t[s][a].size() != S) throw std::invalid_argument("mdp: transition rows must have num_states entries");
            for (std::size_t n = 0; n < S; ++n) transition[(s * A + a) * S + n] = t[s][a][n].get<double>();
        }
    }
    std::vector<std::size_t> absorbing;
    if (j.contains("absorbing")) absorbing = j.at("absorbing").get<std::vector<std::size_t>>();
    return TabularMdp(S, A, std::move(transition), std::move(reward), j.at("gamma").get<double>(),
                      std::move(absorbing));
}

std::string mdp_to_string(const TabularMdp& mdp) { return dump_json(mdp_to_json(mdp), 1); }

}  // namespace valbound
