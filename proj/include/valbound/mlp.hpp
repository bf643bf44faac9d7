#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "valbound/rng.hpp"

namespace valbound {

/// Fully connected network: rectifier on hidden layers, linear output.
/// weights[l] is (sizes[l+1] x sizes[l]); inputs are column vectors.
template <typename T>
struct Mlp {
    using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

    std::vector<int> sizes;
    std::vector<Matrix> weights;
    std::vector<Vector> biases;

    static Mlp zeros(std::vector<int> sizes);
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
    static Mlp random(std::vector<int> sizes, Rng& rng);

    int input_size() const { return sizes.front(); }
    int output_size() const { return sizes.back(); }
    std::size_t num_layers() const { return weights.size(); }
    std::size_t num_parameters() const;

    /// Throws std::invalid_argument on broken dimensions or non-finite values.
    void validate() const;

    template <typename U>
    Mlp<U> cast() const {
        Mlp<U> out;
        out.sizes = sizes;
        for (const auto& w : weights) out.weights.push_back(w.template cast<U>());
        for (const auto& b : biases) out.biases.push_back(b.template cast<U>());
        return out;
    }

    bool operator==(const Mlp& other) const;
};

using MlpParams = Mlp<float>;

/// Output for a batch of inputs (input_size x batch). Throws
/// std::runtime_error on non-finite activations.
template <typename T>
typename Mlp<T>::Matrix mlp_forward(const Mlp<T>& net, const typename Mlp<T>::Matrix& inputs);

/// Layer outputs of one forward pass: h[0] is the input, h.back() the output.
template <typename T>
struct MlpTrace {
    std::vector<typename Mlp<T>::Matrix> h;
    const typename Mlp<T>::Matrix& output() const { return h.back(); }
};

template <typename T>
MlpTrace<T> mlp_forward_trace(const Mlp<T>& net, const typename Mlp<T>::Matrix& inputs);

/// Same, reusing the trace's buffers.
template <typename T>
void mlp_forward_into(const Mlp<T>& net, const typename Mlp<T>::Matrix& inputs, MlpTrace<T>& trace);

template <typename T>
struct MlpGradients {
    std::vector<typename Mlp<T>::Matrix> weights;
    std::vector<typename Mlp<T>::Vector> biases;
    std::vector<typename Mlp<T>::Matrix> deltas;  // backward workspace

    static MlpGradients zeros_like(const Mlp<T>& net);
};

/// Optional bound penalty eta * mean |q - clamp(q, lower, upper)| on the
/// acted action values.
template <typename T>
struct ClipPenalty {
    std::span<const T> lower;
    std::span<const T> upper;
    T eta;
};

struct LossTerms {
    double bellman;  // mean (q - target)^2
    double clip;     // mean |q - clamp(q, lower, upper)| before eta
};

/// Gradients of mean (Q(x_i)[a_i] - y_i)^2 (+ the clip penalty) with respect
/// to every parameter, written into `grads`.
template <typename T>
LossTerms mlp_gradients(const Mlp<T>& net, const typename Mlp<T>::Matrix& inputs, std::span<const T> targets,
                        std::span<const int> actions, const ClipPenalty<T>* clip, MlpGradients<T>& grads);

/// Same, reusing a forward pass of `net` on the batch inputs.
template <typename T>
LossTerms mlp_gradients(const Mlp<T>& net, const MlpTrace<T>& trace, std::span<const T> targets,
                        std::span<const int> actions, const ClipPenalty<T>* clip, MlpGradients<T>& grads);

/// Loss only; same definition as mlp_gradients.
template <typename T>
LossTerms mlp_loss(const Mlp<T>& net, const typename Mlp<T>::Matrix& inputs, std::span<const T> targets,
                   std::span<const int> actions, const ClipPenalty<T>* clip);

template <typename T>
void sgd_step(Mlp<T>& net, const MlpGradients<T>& grads, T learning_rate);

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
template <typename T>
class AdamOptimizer {
public:
    explicit AdamOptimizer(const Mlp<T>& net, T learning_rate, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8));
    void step(Mlp<T>& net, const MlpGradients<T>& grads);

private:
    T lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    MlpGradients<T> m_, v_;
};

/// {"sizes": [...], "weights": [[row-major entries], ...], "biases": [[...], ...]}
template <typename T>
nlohmann::json mlp_to_json(const Mlp<T>& net);
template <typename T>
Mlp<T> mlp_from_json(const nlohmann::json& j);

}  // namespace valbound
