#include "rainfield/denoiser_graph.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace rainfield {

namespace {

constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f, const char* what) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw DenoiserFormatError(std::string("truncated denoiser file at ") + what);
    return v;
}

void read_f32(std::ifstream& f, std::vector<float>& out, std::size_t n, const char* what) {
    if (n > (1u << 28)) throw DenoiserFormatError("denoiser payload too large");
    out.resize(n);
    f.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(n * 4));
    if (!f) throw DenoiserFormatError(std::string("truncated denoiser weights at ") + what);
}

void validate_graph(const std::vector<GraphNode>& nodes) {
    if (nodes.empty()) throw DenoiserFormatError("denoiser graph has no nodes");
    if (nodes.front().op != GraphOp::Input)
        throw DenoiserFormatError("first graph node must be the input");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const GraphNode& n = nodes[i];
        for (std::uint32_t in : n.inputs)
            if (in >= i) throw DenoiserFormatError("graph node references a later node");
        auto in_size = [&](int k) { return nodes[n.inputs[k]].out_size(); };
        switch (n.op) {
            case GraphOp::Input:
                if (!n.inputs.empty()) throw DenoiserFormatError("input node takes no inputs");
                break;
            case GraphOp::Affine:
                if (n.inputs.size() != 1) throw DenoiserFormatError("affine needs one input");
                if (n.aux0 != n.out_size() || n.aux1 != in_size(0))
                    throw DenoiserFormatError("affine shape mismatch");
                if (n.weights.size() != std::size_t(n.aux0) * n.aux1 ||
                    n.bias.size() != n.aux0)
                    throw DenoiserFormatError("affine payload size mismatch");
                break;
            case GraphOp::Conv2d: {
                if (n.inputs.size() != 1) throw DenoiserFormatError("conv needs one input");
                const GraphNode& p = nodes[n.inputs[0]];
                if (p.out_h != n.out_h || p.out_w != n.out_w)
                    throw DenoiserFormatError("conv spatial shape mismatch (stride 1, same)");
                if (n.weights.size() != std::size_t(n.out_c) * p.out_c * n.aux0 * n.aux1 ||
                    n.bias.size() != n.out_c)
                    throw DenoiserFormatError("conv payload size mismatch");
                break;
            }
            case GraphOp::Relu:
                if (n.inputs.size() != 1 || in_size(0) != n.out_size())
                    throw DenoiserFormatError("relu shape mismatch");
                break;
            case GraphOp::Add:
            case GraphOp::Mul:
                if (n.inputs.size() != 2 || in_size(0) != n.out_size() ||
                    in_size(1) != n.out_size())
                    throw DenoiserFormatError("add/mul shape mismatch");
                break;
            case GraphOp::SigmaEmbed:
                if (!n.inputs.empty()) throw DenoiserFormatError("sigma embed takes no inputs");
                if (n.aux0 != n.out_size())
                    throw DenoiserFormatError("sigma embed dim mismatch");
                break;
            default:
                throw DenoiserFormatError("unsupported graph node kind");
        }
    }
}

}  // namespace

GraphDenoiser::GraphDenoiser(std::vector<double> sigma_levels, std::vector<GraphNode> nodes)
    : sigma_levels_(std::move(sigma_levels)), nodes_(std::move(nodes)) {
    if (sigma_levels_.empty())
        throw DenoiserFormatError("denoiser needs at least one sigma level");
    for (const GraphNode& n : nodes_)
        if (n.op == GraphOp::SigmaEmbed &&
            n.weights.size() != sigma_levels_.size() * n.aux0)
            throw DenoiserFormatError("sigma embed table size mismatch");
    validate_graph(nodes_);
    input_size_ = nodes_.front().out_size();
}

Eigen::VectorXd GraphDenoiser::evaluate(double sigma, const Eigen::VectorXd& x) const {
    if (x.size() != input_size_)
        throw DenoiserFormatError("denoiser input size mismatch");

    // nearest-level lookup for sigma conditioning
    std::size_t level = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sigma_levels_.size(); ++i) {
        const double d = std::abs(sigma_levels_[i] - sigma);
        if (d < best) {
            best = d;
            level = i;
        }
    }

    std::vector<Eigen::VectorXd> vals(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const GraphNode& n = nodes_[i];
        switch (n.op) {
            case GraphOp::Input:
                vals[i] = x;
                break;
            case GraphOp::Affine: {
                const Eigen::VectorXd& in = vals[n.inputs[0]];
                Eigen::VectorXd out(n.aux0);
                for (std::uint32_t r = 0; r < n.aux0; ++r) {
                    double acc = n.bias[r];
                    const float* row = n.weights.data() + std::size_t(r) * n.aux1;
                    for (std::uint32_t c = 0; c < n.aux1; ++c) acc += double(row[c]) * in(c);
                    out(r) = acc;
                }
                vals[i] = std::move(out);
                break;
            }
            case GraphOp::Conv2d: {
                const GraphNode& p = nodes_[n.inputs[0]];
                const Eigen::VectorXd& in = vals[n.inputs[0]];
                const int H = static_cast<int>(n.out_h), W = static_cast<int>(n.out_w);
                const int kh = static_cast<int>(n.aux0), kw = static_cast<int>(n.aux1);
                const int ph = kh / 2, pw = kw / 2;
                Eigen::VectorXd out(n.out_size());
                for (std::uint32_t oc = 0; oc < n.out_c; ++oc)
                    for (int y = 0; y < H; ++y)
                        for (int xw = 0; xw < W; ++xw) {
                            double acc = n.bias[oc];
                            for (std::uint32_t ic = 0; ic < p.out_c; ++ic)
                                for (int dy = 0; dy < kh; ++dy)
                                    for (int dx = 0; dx < kw; ++dx) {
                                        const int sy = y + dy - ph, sx = xw + dx - pw;
                                        if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                                        const double wgt = n.weights[((std::size_t(oc) * p.out_c + ic) * kh + dy) * kw + dx];
                                        acc += wgt * in((std::size_t(ic) * H + sy) * W + sx);
                                    }
                            out((std::size_t(oc) * H + y) * W + xw) = acc;
                        }
                vals[i] = std::move(out);
                break;
            }
            case GraphOp::Relu:
                vals[i] = vals[n.inputs[0]].cwiseMax(0.0);
                break;
            case GraphOp::Add:
                vals[i] = vals[n.inputs[0]] + vals[n.inputs[1]];
                break;
            case GraphOp::Mul:
                vals[i] = vals[n.inputs[0]].cwiseProduct(vals[n.inputs[1]]);
                break;
            case GraphOp::SigmaEmbed: {
                Eigen::VectorXd out(n.aux0);
                const float* row = n.weights.data() + level * n.aux0;
                for (std::uint32_t k = 0; k < n.aux0; ++k) out(k) = row[k];
                vals[i] = std::move(out);
                break;
            }
        }
    }
    return vals.back();
}

void save_denoiser_graph(const std::filesystem::path& path,
                         const std::vector<double>& sigma_levels,
                         const std::vector<GraphNode>& nodes) {
    validate_graph(nodes);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DenoiserFormatError("cannot write denoiser file: " + path.string());
    f.write("DNSR", 4);
    write_pod<std::uint32_t>(f, kVersion);
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(sigma_levels.size()));
    for (double s : sigma_levels) write_pod<float>(f, static_cast<float>(s));
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(nodes.size()));
    for (const GraphNode& n : nodes) {
        write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(n.op));
        write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(n.inputs.size()));
        for (std::uint32_t in : n.inputs) write_pod<std::uint32_t>(f, in);
        write_pod<std::uint32_t>(f, n.out_c);
        write_pod<std::uint32_t>(f, n.out_h);
        write_pod<std::uint32_t>(f, n.out_w);
        write_pod<std::uint32_t>(f, n.aux0);
        write_pod<std::uint32_t>(f, n.aux1);
        write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(n.weights.size()));
        f.write(reinterpret_cast<const char*>(n.weights.data()),
                static_cast<std::streamsize>(n.weights.size() * 4));
        write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(n.bias.size()));
        f.write(reinterpret_cast<const char*>(n.bias.data()),
                static_cast<std::streamsize>(n.bias.size() * 4));
    }
}

std::unique_ptr<Denoiser> load_external_denoiser(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DenoiserFormatError("cannot open denoiser file: " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "DNSR", 4) != 0)
        throw DenoiserFormatError("bad denoiser magic in " + path.string());
    if (read_pod<std::uint32_t>(f, "version") != kVersion)
        throw DenoiserFormatError("unsupported denoiser version in " + path.string());
    const auto n_sigma = read_pod<std::uint32_t>(f, "n_sigma");
    if (n_sigma == 0 || n_sigma > (1u << 20))
        throw DenoiserFormatError("bad sigma level count in " + path.string());
    std::vector<double> sigmas(n_sigma);
    for (auto& s : sigmas) s = read_pod<float>(f, "sigma level");
    const auto n_nodes = read_pod<std::uint32_t>(f, "n_nodes");
    if (n_nodes == 0 || n_nodes > (1u << 20))
        throw DenoiserFormatError("bad node count in " + path.string());
    std::vector<GraphNode> nodes(n_nodes);
    for (auto& n : nodes) {
        n.op = static_cast<GraphOp>(read_pod<std::uint32_t>(f, "op"));
        const auto n_in = read_pod<std::uint32_t>(f, "n_inputs");
        if (n_in > 8) throw DenoiserFormatError("too many node inputs");
        n.inputs.resize(n_in);
        for (auto& in : n.inputs) in = read_pod<std::uint32_t>(f, "input index");
        n.out_c = read_pod<std::uint32_t>(f, "out_c");
        n.out_h = read_pod<std::uint32_t>(f, "out_h");
        n.out_w = read_pod<std::uint32_t>(f, "out_w");
        n.aux0 = read_pod<std::uint32_t>(f, "aux0");
        n.aux1 = read_pod<std::uint32_t>(f, "aux1");
        read_f32(f, n.weights, read_pod<std::uint32_t>(f, "n_weights"), "weights");
        read_f32(f, n.bias, read_pod<std::uint32_t>(f, "n_bias"), "bias");
    }
    return std::make_unique<GraphDenoiser>(std::move(sigmas), std::move(nodes));
}

}  // namespace rainfield
