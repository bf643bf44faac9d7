#include <doctest.h>

#include <cmath>

#include "support/gradient_check.hpp"
#include "support/oracles.hpp"
#include "valbound/dqn.hpp"

using namespace valbound;

namespace {

// Plain triple loop, no Eigen products.
Mlp<double>::Matrix naive_forward(const Mlp<double>& net, const Mlp<double>::Matrix& x) {
    Mlp<double>::Matrix h = x;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        const auto& w = net.weights[l];
        Mlp<double>::Matrix z(w.rows(), h.cols());
        for (Eigen::Index c = 0; c < h.cols(); ++c)
            for (Eigen::Index r = 0; r < w.rows(); ++r) {
                double acc = net.biases[l](r);
                for (Eigen::Index k = 0; k < w.cols(); ++k) acc += w(r, k) * h(k, c);
                z(r, c) = (l + 1 < net.num_layers() && acc < 0.0) ? 0.0 : acc;
            }
        h = z;
    }
    return h;
}

ReplayBuffer::Batch make_batch(const std::vector<std::array<float, 2>>& s, const std::vector<std::array<float, 2>>& s2,
                               const std::vector<int>& a, const std::vector<float>& r,
                               const std::vector<std::uint8_t>& done) {
    ReplayBuffer buf(s.size(), 2);
    for (std::size_t i = 0; i < s.size(); ++i) buf.push(s[i], a[i], r[i], s2[i], done[i] != 0);
    ReplayBuffer::Batch b;
    b.states.resize(2, static_cast<Eigen::Index>(s.size()));
    b.next_states.resize(2, static_cast<Eigen::Index>(s.size()));
    for (std::size_t i = 0; i < s.size(); ++i) {
        auto one = buf.at(i);
        b.states.col(static_cast<Eigen::Index>(i)) = one.states.col(0);
        b.next_states.col(static_cast<Eigen::Index>(i)) = one.next_states.col(0);
        b.actions.push_back(one.actions[0]);
        b.rewards.push_back(one.rewards[0]);
        b.dones.push_back(one.dones[0]);
    }
    return b;
}

DqnConfig small_config(ClipMethod method, std::uint64_t seed) {
    DqnConfig c;
    c.total_steps = 3000;
    c.learning_starts = 500;
    c.batch_size = 32;
    c.buffer_size = 2000;
    c.hidden = {16, 16};
    c.target_update_interval = 300;
    c.eval_interval = 1000;
    c.eval_episodes = 2;
    c.clip.method = method;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("mlp forward examples") {
    auto zero = Mlp<float>::zeros({2, 5, 3});
    Mlp<float>::Matrix x = Mlp<float>::Matrix::Random(2, 4);
    CHECK(mlp_forward(zero, x).isZero());

    auto id = Mlp<double>::zeros({3, 3});
    id.weights[0].setIdentity();
    Mlp<double>::Matrix y = Mlp<double>::Matrix::Random(3, 5);
    CHECK(mlp_forward(id, y) == y);

    Rng rng(601);
    for (int trial = 0; trial < 20; ++trial) {
        auto net = Mlp<double>::random({2, 7, 5, 3}, rng);
        Mlp<double>::Matrix in(2, 9);
        for (Eigen::Index k = 0; k < in.size(); ++k) in.data()[k] = uniform(rng, -2.0, 2.0);
        auto fast = mlp_forward(net, in);
        auto slow = naive_forward(net, in);
        CHECK((fast - slow).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK(mlp_forward_trace(net, in).output() == fast);
    }

    CHECK_THROWS_AS(mlp_forward(zero, Mlp<float>::Matrix::Zero(3, 1)), std::invalid_argument);
    auto bad = Mlp<float>::zeros({1, 1});
    bad.weights[0](0, 0) = std::numeric_limits<float>::infinity();
    Mlp<float>::Matrix one = Mlp<float>::Matrix::Ones(1, 1);
    CHECK_THROWS_AS(mlp_forward(bad, one), std::runtime_error);
    CHECK_THROWS(Mlp<float>::zeros({3}));
}

TEST_CASE("zero-error batch gives zero gradients") {
    Rng rng(602);
    auto net = Mlp<double>::random({2, 4, 3}, rng);
    Mlp<double>::Matrix x = Mlp<double>::Matrix::Random(2, 5);
    auto out = mlp_forward(net, x);
    std::vector<int> actions{0, 1, 2, 1, 0};
    std::vector<double> targets;
    for (int i = 0; i < 5; ++i) targets.push_back(out(actions[i], i));
    auto g = MlpGradients<double>::zeros_like(net);
    auto loss = mlp_gradients<double>(net, x, targets, actions, nullptr, g);
    CHECK(loss.bellman == 0.0);
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        CHECK(g.weights[l].isZero());
        CHECK(g.biases[l].isZero());
    }
}

TEST_CASE("property: analytic gradients match central differences") {
    Rng rng(603);
    for (int trial = 0; trial < 20; ++trial) {
        auto plain = gradcheck::small_net(rng, false);
        auto clipped = gradcheck::small_net(rng, true);
        CHECK(plain.components == 2 * 4 + 4 + 4 * 3 + 3);
        CHECK(plain.max_rel_error <= 1e-4);
        CHECK(clipped.max_rel_error <= 1e-4);
    }
}

TEST_CASE("clip penalty with no violation leaves gradients unchanged") {
    Rng rng(604);
    auto net = Mlp<double>::random({2, 4, 3}, rng);
    Mlp<double>::Matrix x = Mlp<double>::Matrix::Random(2, 6);
    auto out = mlp_forward(net, x);
    std::vector<int> actions{2, 0, 1, 1, 0, 2};
    std::vector<double> targets{0.3, -0.2, 1.0, 0.0, 0.5, -1.0}, lower, upper;
    for (int i = 0; i < 6; ++i) {
        lower.push_back(out(actions[i], i) - 0.1);
        upper.push_back(out(actions[i], i) + 0.1);
    }
    ClipPenalty<double> clip{lower, upper, 3.0};
    auto a = MlpGradients<double>::zeros_like(net), b = a;
    auto la = mlp_gradients<double>(net, x, targets, actions, nullptr, a);
    auto lb = mlp_gradients<double>(net, x, targets, actions, &clip, b);
    CHECK(la.bellman == lb.bellman);
    CHECK(lb.clip == 0.0);
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        CHECK(a.weights[l] == b.weights[l]);
        CHECK(a.biases[l] == b.biases[l]);
    }

    std::vector<int> short_actions{0};
    CHECK_THROWS(mlp_gradients<double>(net, x, targets, short_actions, nullptr, a));
    std::vector<int> wild{0, 0, 0, 0, 0, 7};
    CHECK_THROWS(mlp_gradients<double>(net, x, targets, wild, nullptr, a));
}

TEST_CASE("optimizers move against the gradient") {
    Rng rng(605);
    auto net = Mlp<double>::random({2, 4, 3}, rng);
    Mlp<double>::Matrix x = Mlp<double>::Matrix::Random(2, 8);
    std::vector<int> actions(8, 1);
    std::vector<double> targets(8, 2.0);
    auto g = MlpGradients<double>::zeros_like(net);
    const double before = mlp_gradients<double>(net, x, targets, actions, nullptr, g).bellman;
    auto sgd = net;
    sgd_step(sgd, g, 1e-3);
    CHECK(mlp_loss<double>(sgd, x, targets, actions, nullptr).bellman < before);
    auto adam_net = net;
    AdamOptimizer<double> adam(adam_net, 1e-3);
    adam.step(adam_net, g);
    CHECK(mlp_loss<double>(adam_net, x, targets, actions, nullptr).bellman < before);
}

TEST_CASE("mlp checkpoint json round trip") {
    Rng rng(606);
    auto net = MlpParams::random({2, 8, 3}, rng);
    auto j = mlp_to_json(net);
    CHECK(j.at("sizes") == nlohmann::json({2, 8, 3}));
    CHECK(j.at("weights")[0].size() == 16);
    CHECK(mlp_from_json<float>(j) == net);
    j["weights"][1].erase(0);
    CHECK_THROWS(mlp_from_json<float>(j));
}

TEST_CASE("replay buffer keeps the last capacity transitions") {
    ReplayBuffer buf(5, 2);
    const std::size_t k = 3;
    for (std::size_t i = 0; i < 5 + k; ++i) {
        const float f = static_cast<float>(i);
        std::array<float, 2> s{f, -f}, s2{f + 0.5f, 0.0f};
        buf.push(s, static_cast<int>(i % 3), f * 10.0f, s2, i % 2 == 0);
        CHECK(buf.size() == std::min<std::size_t>(i + 1, 5));
    }
    CHECK(buf.size() == buf.capacity());
    for (std::size_t j = 0; j < 5; ++j) {
        auto one = buf.at(j);
        const float f = static_cast<float>(j + k);
        CHECK(one.states(0, 0) == f);
        CHECK(one.states(1, 0) == -f);
        CHECK(one.next_states(0, 0) == f + 0.5f);
        CHECK(one.rewards[0] == f * 10.0f);
        CHECK(one.actions[0] == static_cast<int>((j + k) % 3));
        CHECK(one.dones[0] == ((j + k) % 2 == 0 ? 1 : 0));
    }
    CHECK_THROWS(buf.at(5));

    Rng rng(607);
    auto batch = buf.sample(64, rng);
    CHECK(batch.size() == 64);
    for (std::size_t i = 0; i < 64; ++i) {
        CHECK(batch.states(0, static_cast<Eigen::Index>(i)) >= 3.0f);
        CHECK(batch.rewards[i] == batch.states(0, static_cast<Eigen::Index>(i)) * 10.0f);
    }
    ReplayBuffer empty(4, 2);
    CHECK_THROWS(empty.sample(1, rng));
    std::array<float, 3> wrong{};
    std::array<float, 2> ok{};
    CHECK_THROWS(buf.push(wrong, 0, 0.0f, ok, false));
}

TEST_CASE("epsilon schedule endpoints") {
    DqnConfig c;
    CHECK(epsilon_at(0, c) == 1.0);
    const auto knee = static_cast<std::size_t>(c.epsilon_fraction * static_cast<double>(c.total_steps));
    CHECK(knee == 30000);
    CHECK(epsilon_at(knee, c) == 0.07);
    CHECK(epsilon_at(knee + 1, c) == 0.07);
    CHECK(epsilon_at(c.total_steps, c) == 0.07);
    CHECK(epsilon_at(15000, c) == 1.0 + 0.5 * (0.07 - 1.0));
    for (std::size_t t = 0; t < knee; t += 997) {
        const double expect = 1.0 + (static_cast<double>(t) / 30000.0) * (0.07 - 1.0);
        CHECK(epsilon_at(t, c) == doctest::Approx(expect).epsilon(1e-15));
        CHECK(epsilon_at(t + 1, c) <= epsilon_at(t, c));
    }
}

TEST_CASE("dqn config validation") {
    DqnConfig c;
    CHECK_NOTHROW(c.validate());
    c.epsilon_fraction = 0.0;
    CHECK_THROWS(c.validate());
    c = DqnConfig{};
    c.batch_size = 0;
    CHECK_THROWS(c.validate());
    c = DqnConfig{};
    c.gamma = 1.0;
    CHECK_THROWS(c.validate());
    CHECK(parse_optimizer("adam") == OptimizerKind::adam);
    CHECK_THROWS(parse_optimizer("rmsprop"));
}

TEST_CASE("function-approximation bounds examples") {
    Rng rng(608);
    auto net = MlpParams::random({2, 6, 3}, rng);
    std::vector<std::array<float, 2>> s{{0.1f, 0.2f}, {-0.4f, 0.3f}, {0.7f, -0.9f}, {0.0f, 0.5f}};
    std::vector<std::array<float, 2>> s2{{0.2f, 0.1f}, {-0.3f, 0.4f}, {0.6f, -0.8f}, {0.1f, 0.6f}};
    auto batch = make_batch(s, s2, {0, 1, 2, 1}, {-1.0f, -1.0f, -1.0f, -1.0f}, {0, 0, 1, 0});
    const double gamma = 0.9;

    SUBCASE("identical networks combine as a no-op") {
        auto both = fa_bounds(batch, net, net, gamma);
        CHECK(both.online_spread == both.target_spread);
        CHECK(both.fallbacks == 0);
        auto out_s = mlp_forward(net, batch.states), out_n = mlp_forward(net, batch.next_states);
        auto single = fa_bounds_from_outputs(batch, out_s, out_n, out_s, out_n, gamma);
        CHECK(single.lower == both.lower);
        CHECK(single.upper == both.upper);
        for (std::size_t i = 0; i < 4; ++i) CHECK(both.lower[i] <= both.upper[i]);
        // terminal rows collapse to the reward
        CHECK(both.lower[2] == -1.0f);
        CHECK(both.upper[2] == -1.0f);
    }

    SUBCASE("a batch of one collapses both sides") {
        auto one = make_batch({s[0]}, {s2[0]}, {0}, {-1.0f}, {0});
        auto b = fa_bounds(one, net, net, gamma);
        auto vs = mlp_forward(net, one.states).col(0).maxCoeff();
        auto vn = mlp_forward(net, one.next_states).col(0).maxCoeff();
        const float g = static_cast<float>(gamma), h = static_cast<float>(1.0 / (1.0 - gamma));
        const float d = -1.0f + g * vn - vs;
        const float expect = -1.0f + g * (vn + d * h);
        CHECK(b.lower[0] == doctest::Approx(expect).epsilon(1e-6));
        CHECK(b.upper[0] == b.lower[0]);
        CHECK(b.online_spread == 0.0f);
    }

    SUBCASE("inconsistent networks fall back to the narrower one") {
        // opposite-signed offsets on s and s' push the second net's Delta' far away
        auto far = net;
        far.biases.back().array() += 50.0f;
        auto out_s = mlp_forward(net, batch.states), out_n = mlp_forward(net, batch.next_states);
        Mlp<float>::Matrix far_s = mlp_forward(far, batch.states);
        Mlp<float>::Matrix far_n = mlp_forward(net, batch.next_states).array() - 50.0f;
        auto combined = fa_bounds_from_outputs(batch, out_s, out_n, far_s, far_n, gamma);
        auto alone = fa_bounds_from_outputs(batch, out_s, out_n, out_s, out_n, gamma);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(combined.lower[i] <= combined.upper[i]);
            if (!batch.dones[i]) CHECK(combined.lower[i] == alone.lower[i]);
        }
        CHECK(combined.fallbacks > 0);
    }

    ReplayBuffer::Batch empty;
    CHECK_THROWS(fa_bounds(empty, net, net, gamma));
}

TEST_CASE("tabular optimum embedded as a one-hot network sits inside the bounds") {
    Rng rng(609);
    for (int trial = 0; trial < 10; ++trial) {
        // deterministic random MDP, states fed as one-hot columns
        const std::size_t S = 2 + uniform_index(rng, 6), A = 2 + uniform_index(rng, 3);
        std::vector<double> p(S * A * S, 0.0);
        RewardTable r(S, A);
        std::vector<std::size_t> succ(S * A);
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < A; ++a) {
                succ[s * A + a] = uniform_index(rng, S);
                p[(s * A + a) * S + succ[s * A + a]] = 1.0;
                r(s, a) = uniform(rng, -1.0, 1.0);
            }
        const double gamma = uniform(rng, 0.5, 0.95);
        TabularMdp m(S, A, std::move(p), std::move(r), gamma);
        auto q = oracle::value_iteration(m, std::nullopt, 1e-12);

        auto net = MlpParams::zeros({static_cast<int>(S), static_cast<int>(A)});
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < A; ++a) net.weights[0](a, s) = static_cast<float>(q(s, a));

        ReplayBuffer::Batch b;
        b.states = Mlp<float>::Matrix::Zero(S, S * A);
        b.next_states = Mlp<float>::Matrix::Zero(S, S * A);
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < A; ++a) {
                const auto col = static_cast<Eigen::Index>(s * A + a);
                b.states(s, col) = 1.0f;
                b.next_states(succ[s * A + a], col) = 1.0f;
                b.actions.push_back(static_cast<int>(a));
                b.rewards.push_back(static_cast<float>(m.reward(s, a)));
                b.dones.push_back(0);
            }
        // absorbing states are pinned to their reward: they enter the batch as terminal rows
        for (std::size_t g : m.absorbing())
            for (std::size_t a = 0; a < A; ++a) b.dones[g * A + a] = 1;
        auto bounds = fa_bounds(b, net, net, gamma);
        const double h = 1.0 / (1.0 - gamma);
        for (std::size_t i = 0; i < S * A; ++i) {
            const double qs = q(i / A, i % A);
            CHECK(qs >= bounds.lower[i] - 1e-4 * h);
            CHECK(qs <= bounds.upper[i] + 1e-4 * h);
        }
        // the greedy transitions make the largest Delta' zero
        Eigen::RowVectorXf vs = mlp_forward(net, b.states).colwise().maxCoeff();
        Eigen::RowVectorXf vn = mlp_forward(net, b.next_states).colwise().maxCoeff();
        float top = -1e30f;
        for (std::size_t i = 0; i < S * A; ++i)
            top = std::max(top, b.rewards[i] + (b.dones[i] ? 0.0f : static_cast<float>(gamma) * vn(i)) - vs(i));
        CHECK(std::abs(top) <= 1e-5f);
    }
}

TEST_CASE("short dqn runs are deterministic and hard clipping stays inside") {
    MountainCarParams env;
    auto a = dqn_train(env, small_config(ClipMethod::hard, 3));
    auto b = dqn_train(env, small_config(ClipMethod::hard, 3));
    CHECK(a.log.to_csv().text() == b.log.to_csv().text());
    CHECK(a.online == b.online);
    CHECK(a.hard_clip_breaches == 0);
    CHECK(a.gradient_updates == (3000 - 500) / 16 * 8);
    REQUIRE(a.log.rows.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.log.rows[i].env_step == 1000 * (i + 1));
        CHECK(a.log.rows[i].mean_eval_reward >= -200.0);
        CHECK(a.log.rows[i].mean_eval_reward <= 0.0);
    }

    auto c = dqn_train(env, small_config(ClipMethod::hard, 4));
    CHECK_FALSE(c.online == a.online);

    for (auto method : {ClipMethod::none, ClipMethod::soft, ClipMethod::smoothed}) {
        auto run = dqn_train(env, small_config(method, 3));
        CHECK(run.log.rows.size() == 3);
        CHECK(run.hard_clip_breaches == 0);
    }

    auto wild = small_config(ClipMethod::none, 3);
    wild.learning_rate = 1e12;
    CHECK_THROWS_AS(dqn_train(env, wild), std::runtime_error);
}
