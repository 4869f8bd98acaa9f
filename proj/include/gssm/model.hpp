#pragma once

#include <cmath>
#include <string>
#include <variant>

#include "gssm/autodiff.hpp"
#include "gssm/errors.hpp"
#include "gssm/geometric.hpp"
#include "gssm/mamba.hpp"
#include "gssm/tasks.hpp"

namespace gssm {

using Model = std::variant<GeometricModel, MambaModel>;

inline std::string model_kind(const Model& m) {
    return std::holds_alternative<GeometricModel>(m) ? "geometric_ssm" : "selective_ssm";
}

inline ad::ParamList parameters(const Model& model) {
    return std::visit([](const auto& m) { return to_param_list(m.params); }, model);
}

inline void set_parameters(Model& model, const ad::ParamList& list) {
    std::visit([&](auto& m) { m.params = from_param_list(m.config, list); }, model);
}

inline std::size_t ssm_parameter_count(const Model& model) {
    return std::visit([](const auto& m) { return ssm_parameter_count(m.config); }, model);
}

inline std::size_t total_parameter_count(const Model& model) {
    return std::visit([](const auto& m) { return total_parameter_count(m.config); }, model);
}

inline std::size_t model_vocab(const Model& model) {
    return std::visit([](const auto& m) { return m.config.vocab; }, model);
}

inline std::size_t model_classes(const Model& model) {
    return std::visit([](const auto& m) { return m.config.classes; }, model);
}

/// Options for the differentiable forward pass.
struct GradOptions {
    ApplyMode mode = ApplyMode::fft;
    std::size_t pad = 2;
};

struct LossGrad {
    double loss = 0.0;
    double accuracy = 0.0;
    ad::ParamList grads;  // same order and shapes as parameters(model)
    std::size_t retained_elements = 0;
    std::size_t tape_ops = 0;
};

inline double accuracy(const MatrixXd& logits, const std::vector<int>& targets) {
    std::size_t hits = 0;
    for (Eigen::Index b = 0; b < logits.rows(); ++b) {
        Eigen::Index arg = 0;
        logits.row(b).maxCoeff(&arg);
        if (arg == targets[static_cast<std::size_t>(b)]) ++hits;
    }
    return logits.rows() ? static_cast<double>(hits) / static_cast<double>(logits.rows()) : 0.0;
}

namespace detail {

inline bool finite(const ad::Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

[[noreturn]] inline void report_non_finite(const ad::ParamList& params, const ad::ParamList& grads, double loss) {
    for (const auto& p : params)
        if (!finite(p.tensor))
            throw NonFiniteError(p.name, "non-finite values in parameter block '" + p.name + "'");
    for (const auto& g : grads)
        if (!finite(g.tensor))
            throw NonFiniteError(g.name, "non-finite gradient in parameter block '" + g.name + "'");
    throw NonFiniteError("loss", "non-finite loss " + std::to_string(loss));
}

}  // namespace detail

/// Mean final-step cross-entropy and its reverse-mode gradient.
inline LossGrad loss_and_grad(const Model& model, const SequenceBatch& batch, const GradOptions& opt = {}) {
    if (batch.batch == 0) throw ContractError("loss_and_grad: empty batch");
    if (batch.vocab != model_vocab(model) || batch.classes != model_classes(model))
        throw DimensionError("loss_and_grad: batch vocabulary does not match model");
    for (const auto& p : parameters(model))
        if (!detail::finite(p.tensor)) detail::report_non_finite(parameters(model), {}, std::nan(""));
    ad::Tape tape;
    ad::Var logits;
    if (const auto* g = std::get_if<GeometricModel>(&model)) {
        const auto vars = push_parameters(tape, g->params);
        logits = record_geometric(tape, vars, g->config, batch, opt.mode, opt.pad);
    } else {
        const auto& mm = std::get<MambaModel>(model);
        const auto vars = push_parameters(tape, mm.params);
        logits = record_mamba(tape, vars, mm.config, batch);
    }
    const ad::Var loss = ad::softmax_cross_entropy(tape, logits, batch.targets);
    LossGrad out;
    out.loss = tape.value(loss)[0];
    const ad::Tensor& z = tape.value(logits);
    out.accuracy = accuracy(detail::tensor_matrix(z), batch.targets);
    out.retained_elements = tape.retained_activation_elements();
    out.tape_ops = tape.size();
    if (!std::isfinite(out.loss)) detail::report_non_finite(parameters(model), {}, out.loss);
    tape.backward(loss);
    out.grads = tape.parameter_grads();
    for (const auto& g : out.grads)
        if (!detail::finite(g.tensor)) detail::report_non_finite(parameters(model), out.grads, out.loss);
    return out;
}

/// Inference logits (batch x classes), processed in chunks of `chunk` samples.
inline MatrixXd predict(const Model& model, const SequenceBatch& batch, std::size_t chunk = 256) {
    MatrixXd logits(static_cast<Eigen::Index>(batch.batch), static_cast<Eigen::Index>(model_classes(model)));
    for (std::size_t begin = 0; begin < batch.batch; begin += chunk) {
        const std::size_t count = std::min(chunk, batch.batch - begin);
        const SequenceBatch part = slice(batch, begin, count);
        MatrixXd z = std::holds_alternative<GeometricModel>(model)
                         ? geometric_forward(std::get<GeometricModel>(model), part).logits
                         : selective_forward(std::get<MambaModel>(model), part).logits;
        logits.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count)) = z;
    }
    return logits;
}

}  // namespace gssm
