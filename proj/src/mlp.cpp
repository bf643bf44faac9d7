#include "valbound/mlp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace valbound {

namespace {

void check_sizes(const std::vector<int>& sizes) {
    if (sizes.size() < 2) throw std::invalid_argument("mlp: need at least input and output sizes");
    for (int n : sizes)
        if (n <= 0) throw std::invalid_argument("mlp: layer sizes must be positive");
}

template <typename T>
LossTerms loss_and_output_grad(const typename Mlp<T>::Matrix& out, std::span<const T> targets,
                               std::span<const int> actions, const ClipPenalty<T>* clip,
                               typename Mlp<T>::Matrix* grad_out) {
    const auto batch = out.cols();
    if (static_cast<std::size_t>(batch) != targets.size() || targets.size() != actions.size())
        throw std::invalid_argument("mlp_gradients: batch, targets and actions differ in size");
    if (clip && (clip->lower.size() != targets.size() || clip->upper.size() != targets.size()))
        throw std::invalid_argument("mlp_gradients: clip bounds differ in size from the batch");
    if (batch == 0) throw std::invalid_argument("mlp_gradients: empty batch");

    if (grad_out) grad_out->setZero(out.rows(), out.cols());
    double bellman = 0.0, clip_sum = 0.0;
    const T inv_b = T(1) / static_cast<T>(batch);
    for (Eigen::Index i = 0; i < batch; ++i) {
        const int a = actions[i];
        if (a < 0 || a >= out.rows()) throw std::invalid_argument("mlp_gradients: action index out of range");
        const T q = out(a, i);
        const T err = q - targets[i];
        bellman += static_cast<double>(err) * static_cast<double>(err);
        T g = T(2) * err * inv_b;
        if (clip) {
            const T lo = clip->lower[i], hi = clip->upper[i];
            if (q > hi) {
                clip_sum += static_cast<double>(q - hi);
                g += clip->eta * inv_b;
            } else if (q < lo) {
                clip_sum += static_cast<double>(lo - q);
                g -= clip->eta * inv_b;
            }
        }
        if (grad_out) (*grad_out)(a, i) = g;
    }
    return {bellman / static_cast<double>(batch), clip_sum / static_cast<double>(batch)};
}

}  // namespace

template <typename T>
Mlp<T> Mlp<T>::zeros(std::vector<int> sizes) {
    check_sizes(sizes);
    Mlp net;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        net.weights.push_back(Matrix::Zero(sizes[l + 1], sizes[l]));
        net.biases.push_back(Vector::Zero(sizes[l + 1]));
    }
    net.sizes = std::move(sizes);
    return net;
}

template <typename T>
Mlp<T> Mlp<T>::random(std::vector<int> sizes, Rng& rng) {
    Mlp net = zeros(std::move(sizes));
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(net.sizes[l]));
        auto& w = net.weights[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<T>(uniform(rng, -bound, bound));
        for (Eigen::Index r = 0; r < net.biases[l].size(); ++r)
            net.biases[l](r) = static_cast<T>(uniform(rng, -bound, bound));
    }
    return net;
}

template <typename T>
std::size_t Mlp<T>::num_parameters() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
}

template <typename T>
void Mlp<T>::validate() const {
    check_sizes(sizes);
    if (weights.size() != sizes.size() - 1 || biases.size() != weights.size())
        throw std::invalid_argument("mlp: layer count does not match sizes");
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l].rows() != sizes[l + 1] || weights[l].cols() != sizes[l])
            throw std::invalid_argument("mlp: weight " + std::to_string(l) + " has the wrong shape");
        if (biases[l].size() != sizes[l + 1])
            throw std::invalid_argument("mlp: bias " + std::to_string(l) + " has the wrong size");
        if (!weights[l].allFinite() || !biases[l].allFinite())
            throw std::invalid_argument("mlp: non-finite parameters in layer " + std::to_string(l));
    }
}

template <typename T>
bool Mlp<T>::operator==(const Mlp& other) const {
    if (sizes != other.sizes || weights.size() != other.weights.size()) return false;
    for (std::size_t l = 0; l < weights.size(); ++l)
        if (weights[l] != other.weights[l] || biases[l] != other.biases[l]) return false;
    return true;
}

template <typename T>
typename Mlp<T>::Matrix mlp_forward(const Mlp<T>& net, const typename Mlp<T>::Matrix& inputs) {
    typename Mlp<T>::Matrix h = inputs;
    if (h.rows() != net.input_size())
        throw std::invalid_argument("mlp_forward: input has " + std::to_string(h.rows()) + " rows, expected " +
                                    std::to_string(net.input_size()));
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        typename Mlp<T>::Matrix z = net.weights[l] * h;
        z.colwise() += net.biases[l];
        if (l + 1 < net.num_layers()) z = z.cwiseMax(T(0));
        h = std::move(z);
    }
    if (!h.allFinite()) throw std::runtime_error("mlp_forward: non-finite activations");
    return h;
}

template <typename T>
void mlp_forward_into(const Mlp<T>& net, const typename Mlp<T>::Matrix& inputs, MlpTrace<T>& trace) {
    if (inputs.rows() != net.input_size())
        throw std::invalid_argument("mlp_forward: input has " + std::to_string(inputs.rows()) + " rows, expected " +
                                    std::to_string(net.input_size()));
    // assignments keep the existing storage when the shapes already match
    trace.h.resize(net.num_layers() + 1);
    trace.h[0] = inputs;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        auto& z = trace.h[l + 1];
        z.resize(net.weights[l].rows(), inputs.cols());
        z.noalias() = net.weights[l] * trace.h[l];
        z.colwise() += net.biases[l];
        if (l + 1 < net.num_layers()) z = z.cwiseMax(T(0));
    }
    if (!trace.h.back().allFinite()) throw std::runtime_error("mlp_forward: non-finite activations");
}

template <typename T>
MlpTrace<T> mlp_forward_trace(const Mlp<T>& net, const typename Mlp<T>::Matrix& inputs) {
    MlpTrace<T> trace;
    mlp_forward_into(net, inputs, trace);
    return trace;
}

template <typename T>
MlpGradients<T> MlpGradients<T>::zeros_like(const Mlp<T>& net) {
    MlpGradients g;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        g.weights.push_back(Mlp<T>::Matrix::Zero(net.weights[l].rows(), net.weights[l].cols()));
        g.biases.push_back(Mlp<T>::Vector::Zero(net.biases[l].size()));
    }
    return g;
}

template <typename T>
LossTerms mlp_gradients(const Mlp<T>& net, const typename Mlp<T>::Matrix& inputs, std::span<const T> targets,
                        std::span<const int> actions, const ClipPenalty<T>* clip, MlpGradients<T>& grads) {
    return mlp_gradients(net, mlp_forward_trace(net, inputs), targets, actions, clip, grads);
}

template <typename T>
LossTerms mlp_gradients(const Mlp<T>& net, const MlpTrace<T>& act, std::span<const T> targets,
                        std::span<const int> actions, const ClipPenalty<T>* clip, MlpGradients<T>& grads) {
    if (act.h.size() != net.num_layers() + 1) throw std::invalid_argument("mlp_gradients: trace does not match the net");
    auto& delta = grads.deltas;
    delta.resize(net.num_layers());
    const LossTerms loss = loss_and_output_grad<T>(act.h.back(), targets, actions, clip, &delta.back());

    grads.weights.resize(net.num_layers());
    grads.biases.resize(net.num_layers());
    for (std::size_t l = net.num_layers(); l-- > 0;) {
        grads.weights[l].resize(net.weights[l].rows(), net.weights[l].cols());
        grads.weights[l].noalias() = delta[l] * act.h[l].transpose();
        grads.biases[l] = delta[l].rowwise().sum();
        if (l == 0) break;
        delta[l - 1].resize(net.weights[l].cols(), delta[l].cols());
        delta[l - 1].noalias() = net.weights[l].transpose() * delta[l];
        delta[l - 1] = (act.h[l].array() > T(0)).select(delta[l - 1], T(0));
    }
    for (std::size_t l = 0; l < net.num_layers(); ++l)
        if (!grads.weights[l].allFinite() || !grads.biases[l].allFinite())
            throw std::runtime_error("mlp_gradients: non-finite gradients");
    return loss;
}

template <typename T>
LossTerms mlp_loss(const Mlp<T>& net, const typename Mlp<T>::Matrix& inputs, std::span<const T> targets,
                   std::span<const int> actions, const ClipPenalty<T>* clip) {
    auto out = mlp_forward(net, inputs);
    return loss_and_output_grad<T>(out, targets, actions, clip, nullptr);
}

template <typename T>
void sgd_step(Mlp<T>& net, const MlpGradients<T>& grads, T learning_rate) {
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        net.weights[l] -= learning_rate * grads.weights[l];
        net.biases[l] -= learning_rate * grads.biases[l];
    }
}

template <typename T>
AdamOptimizer<T>::AdamOptimizer(const Mlp<T>& net, T learning_rate, T beta1, T beta2, T eps)
    : lr_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      m_(MlpGradients<T>::zeros_like(net)),
      v_(MlpGradients<T>::zeros_like(net)) {}

template <typename T>
void AdamOptimizer<T>::step(Mlp<T>& net, const MlpGradients<T>& grads) {
    ++t_;
    const T c1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), static_cast<double>(t_)));
    const T c2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), static_cast<double>(t_)));
    const T step = lr_ * std::sqrt(c2) / c1;
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
        m = beta1_ * m + (T(1) - beta1_) * g;
        v = beta2_ * v + (T(1) - beta2_) * g.cwiseProduct(g);
        param.array() -= step * m.array() / (v.array().sqrt() + eps_ * std::sqrt(c2));
    };
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        update(net.weights[l], m_.weights[l], v_.weights[l], grads.weights[l]);
        update(net.biases[l], m_.biases[l], v_.biases[l], grads.biases[l]);
    }
}

template <typename T>
nlohmann::json mlp_to_json(const Mlp<T>& net) {
    nlohmann::json j;
    j["sizes"] = net.sizes;
    j["weights"] = nlohmann::json::array();
    j["biases"] = nlohmann::json::array();
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        std::vector<double> w;
        w.reserve(net.weights[l].size());
        for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r)
            for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c) w.push_back(net.weights[l](r, c));
        std::vector<double> b(net.biases[l].data(), net.biases[l].data() + net.biases[l].size());
        j["weights"].push_back(w);
        j["biases"].push_back(b);
    }
    return j;
}

template <typename T>
Mlp<T> mlp_from_json(const nlohmann::json& j) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "sizes" && it.key() != "weights" && it.key() != "biases")
            throw std::invalid_argument("mlp checkpoint: unknown key '" + it.key() + "'");
    Mlp<T> net = Mlp<T>::zeros(j.at("sizes").get<std::vector<int>>());
    const auto& ws = j.at("weights");
    const auto& bs = j.at("biases");
    if (ws.size() != net.num_layers() || bs.size() != net.num_layers())
        throw std::invalid_argument("mlp checkpoint: layer count does not match sizes");
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        auto w = ws[l].get<std::vector<double>>();
        auto b = bs[l].get<std::vector<double>>();
        auto& W = net.weights[l];
        if (w.size() != static_cast<std::size_t>(W.size()) || b.size() != static_cast<std::size_t>(net.biases[l].size()))
            throw std::invalid_argument("mlp checkpoint: layer " + std::to_string(l) + " has the wrong size");
        for (Eigen::Index r = 0; r < W.rows(); ++r)
            for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = static_cast<T>(w[r * W.cols() + c]);
        for (Eigen::Index r = 0; r < net.biases[l].size(); ++r) net.biases[l](r) = static_cast<T>(b[r]);
    }
    net.validate();
    return net;
}

#define VALBOUND_INSTANTIATE_MLP(T)                                                                               \
    template struct Mlp<T>;                                                                                       \
    template Mlp<T>::Matrix mlp_forward<T>(const Mlp<T>&, const Mlp<T>::Matrix&);                                 \
    template struct MlpGradients<T>;                                                                              \
    template LossTerms mlp_gradients<T>(const Mlp<T>&, const Mlp<T>::Matrix&, std::span<const T>,                 \
                                        std::span<const int>, const ClipPenalty<T>*, MlpGradients<T>&);           \
    template MlpTrace<T> mlp_forward_trace<T>(const Mlp<T>&, const Mlp<T>::Matrix&);                              \
    template void mlp_forward_into<T>(const Mlp<T>&, const Mlp<T>::Matrix&, MlpTrace<T>&);                        \
    template LossTerms mlp_gradients<T>(const Mlp<T>&, const MlpTrace<T>&, std::span<const T>,                    \
                                        std::span<const int>, const ClipPenalty<T>*, MlpGradients<T>&);           \
    template LossTerms mlp_loss<T>(const Mlp<T>&, const Mlp<T>::Matrix&, std::span<const T>, std::span<const int>, \
                                   const ClipPenalty<T>*);                                                        \
    template void sgd_step<T>(Mlp<T>&, const MlpGradients<T>&, T);                                                \
    template class AdamOptimizer<T>;                                                                              \
    template nlohmann::json mlp_to_json<T>(const Mlp<T>&);                                                        \
    template Mlp<T> mlp_from_json<T>(const nlohmann::json&);

VALBOUND_INSTANTIATE_MLP(float)
VALBOUND_INSTANTIATE_MLP(double)

}  // namespace valbound
