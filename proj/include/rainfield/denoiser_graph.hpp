#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "rainfield/diffusion.hpp"

namespace rainfield {

struct DenoiserFormatError : DiffusionError {
    using DiffusionError::DiffusionError;
};

/// Node kinds of the serialized denoiser computation graph.
enum class GraphOp : std::uint32_t {
    Input = 0,
    Affine = 1,      ///< y = W x + b on the flattened input
    Conv2d = 2,      ///< stride 1, zero-padded 'same' convolution
    Relu = 3,
    Add = 4,         ///< elementwise sum of two inputs (skip connection)
    SigmaEmbed = 5,  ///< emits the embedding row of the nearest sigma level
    Mul = 6,         ///< elementwise product of two inputs
};

struct GraphNode {
    GraphOp op;
    std::vector<std::uint32_t> inputs;
    std::uint32_t out_c = 1, out_h = 1, out_w = 1;
    // payloads (unused fields stay empty)
    std::vector<float> weights;
    std::vector<float> bias;
    std::uint32_t aux0 = 0, aux1 = 0;  // Affine: out_dim/in_dim; Conv2d: kh/kw; SigmaEmbed: dim

    std::uint32_t out_size() const { return out_c * out_h * out_w; }
};

/// Evaluates a DNSR graph. Stateless per call, safe for concurrent evaluate().
class GraphDenoiser : public Denoiser {
public:
    GraphDenoiser(std::vector<double> sigma_levels, std::vector<GraphNode> nodes);

    Eigen::VectorXd evaluate(double sigma, const Eigen::VectorXd& x) const override;
    Eigen::Index dim() const override { return input_size_; }

    const std::vector<GraphNode>& nodes() const { return nodes_; }

private:
    std::vector<double> sigma_levels_;
    std::vector<GraphNode> nodes_;
    Eigen::Index input_size_ = 0;
};

/// Loads a serialized denoiser (magic "DNSR", node table, little-endian f32
/// weights). Throws DenoiserFormatError on malformed input; no partial state.
std::unique_ptr<Denoiser> load_external_denoiser(const std::filesystem::path& path);

/// Writes the same format; used to export analytic denoisers.
void save_denoiser_graph(const std::filesystem::path& path,
                         const std::vector<double>& sigma_levels,
                         const std::vector<GraphNode>& nodes);

}  // namespace rainfield
