#include <stdexcept>

#include "fatseg/net.hpp"
#include "net_common.hpp"

namespace fatseg {

namespace {

using detail::gaussian_init;
using detail::trace_put;
using detail::zeros_param;

// 3D conv + batch norm + PReLU unit.
template <typename T>
struct VConv {
    Tensor<T> w, b, gamma, beta, run_mean, run_var, slope;

    static VConv make(std::int64_t out_ch, std::int64_t in_ch, const std::array<std::int64_t, 3>& k, Rng& rng) {
        VConv u;
        u.w = gaussian_init<T>({out_ch, in_ch, k[0], k[1], k[2]}, in_ch * k[0] * k[1] * k[2], rng);
        u.b = zeros_param<T>({out_ch});
        u.init_norm_act(out_ch, rng);
        return u;
    }

    // transposed conv layout [C_in, C_out, kd, kh, kw]
    static VConv make_up(std::int64_t in_ch, std::int64_t out_ch, const std::array<std::int64_t, 3>& k, Rng& rng) {
        VConv u;
        u.w = gaussian_init<T>({in_ch, out_ch, k[0], k[1], k[2]}, in_ch * k[0] * k[1] * k[2], rng);
        u.b = zeros_param<T>({out_ch});
        u.init_norm_act(out_ch, rng);
        return u;
    }

    void init_norm_act(std::int64_t ch, Rng&) {
        gamma = Tensor<T>::full({ch}, T(1));
        gamma.set_requires_grad(true);
        beta = zeros_param<T>({ch});
        run_mean = Tensor<T>({ch});
        run_var = Tensor<T>::full({ch}, T(1));
        slope = Tensor<T>::full({1}, T(0.25));
        slope.set_requires_grad(true);
    }

    Tensor<T> apply(const Tensor<T>& x, const ForwardOptions<T>& opts, const Dims& stride, const Dims& pad,
                    double momentum, double eps, bool transposed) {
        Tensor<T> y = transposed ? transposed_conv(opts.tape, x, w, b, stride)
                                 : conv(opts.tape, x, w, b, stride, pad);
        y = batch_norm(opts.tape, y, gamma, beta, run_mean, run_var, opts.mode, momentum, eps);
        return prelu(opts.tape, y, slope);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".weight", w, ParamKind::Trainable);
        fn(prefix + ".bias", b, ParamKind::Trainable);
        fn(prefix + ".bn_gamma", gamma, ParamKind::Trainable);
        fn(prefix + ".bn_beta", beta, ParamKind::Trainable);
        fn(prefix + ".bn_mean", run_mean, ParamKind::Buffer);
        fn(prefix + ".bn_var", run_var, ParamKind::Buffer);
        fn(prefix + ".prelu", slope, ParamKind::Trainable);
    }
};

// Stack of VConv units with an optional residual add around the stack.
template <typename T>
struct VBlock {
    std::string name;
    std::vector<VConv<T>> convs;
    bool residual = false;

    Tensor<T> apply(const Tensor<T>& in, const ForwardOptions<T>& opts, double momentum, double eps) {
        const Dims one{1, 1, 1}, pad2{2, 2, 2};
        Tensor<T> x = in;
        for (auto& c : convs) x = c.apply(x, opts, one, pad2, momentum, eps, false);
        if (residual) x = add(opts.tape, in, x);
        return x;
    }

    void visit(const ParamVisitor<T>& fn) {
        for (std::size_t i = 0; i < convs.size(); ++i) convs[i].visit(name + ".conv" + std::to_string(i + 1), fn);
    }
};

template <typename T>
class VNet final : public Network<T> {
public:
    VNet(const VNetSpec& spec, Rng& rng) : spec_(spec) {
        if (spec.levels < 2) throw std::invalid_argument("build_vnet: levels must be >= 2");
        if (static_cast<std::int64_t>(spec.down_strides.size()) != spec.levels - 1)
            throw std::invalid_argument("build_vnet: expected " + std::to_string(spec.levels - 1) +
                                        " down-stride entries, got " + std::to_string(spec.down_strides.size()));
        if (static_cast<std::int64_t>(spec.encoder_convs.size()) != spec.levels)
            throw std::invalid_argument("build_vnet: expected " + std::to_string(spec.levels) +
                                        " encoder conv counts, got " + std::to_string(spec.encoder_convs.size()));
        if (spec.decoder_convs_per_level < 1)
            throw std::invalid_argument("build_vnet: decoder_convs_per_level must be >= 1");
        std::int64_t depth = spec.input_depth;
        for (const auto& st : spec.down_strides) {
            if (depth % st[0] != 0)
                throw std::invalid_argument("build_vnet: depth " + std::to_string(depth) +
                                            " not divisible by z stride " + std::to_string(st[0]));
            depth /= st[0];
        }

        const std::array<std::int64_t, 3> k5{5, 5, 5};
        for (std::int64_t l = 0; l < spec.levels; ++l) {
            const std::int64_t c = spec.base_channels << l;
            VBlock<T> blk;
            blk.name = "enc" + std::to_string(l + 1);
            blk.residual = l > 0;  // no short skip in the first convolutional block
            std::int64_t in_ch = l == 0 ? spec.in_channels : c;
            for (std::int64_t i = 0; i < spec.encoder_convs[static_cast<std::size_t>(l)]; ++i) {
                blk.convs.push_back(VConv<T>::make(c, in_ch, k5, rng));
                in_ch = c;
            }
            enc_.push_back(std::move(blk));
            if (l < spec.levels - 1) {
                const auto& st = spec.down_strides[static_cast<std::size_t>(l)];
                down_.push_back(VConv<T>::make(2 * c, c, st, rng));  // kernel == stride
            }
        }
        for (std::int64_t u = spec.levels - 2; u >= 0; --u) {
            const std::int64_t c = spec.base_channels << u;
            const auto& st = spec.down_strides[static_cast<std::size_t>(u)];
            up_.push_back(VConv<T>::make_up(2 * c, c, st, rng));
            VBlock<T> blk;
            blk.name = "dec" + std::to_string(u + 1);
            blk.residual = true;
            for (std::int64_t i = 0; i < spec.decoder_convs_per_level; ++i)
                blk.convs.push_back(VConv<T>::make(c, c, k5, rng));
            dec_.push_back(std::move(blk));
        }
        head_w_ = gaussian_init<T>({spec.num_classes, spec.base_channels, 1, 1, 1}, spec.base_channels, rng);
        head_b_ = zeros_param<T>({spec.num_classes});
    }

    Tensor<T> forward(const Tensor<T>& batch, const ForwardOptions<T>& opts) override {
        if (batch.rank() != 5)
            throw std::invalid_argument("vnet forward: expected rank-5 input [N,C,D,H,W], got " +
                                        shape_str(batch.shape()));
        if (batch.extent(1) != spec_.in_channels)
            throw std::invalid_argument("vnet forward: input has " + std::to_string(batch.extent(1)) +
                                        " channels, spec requires " + std::to_string(spec_.in_channels));
        if (batch.extent(2) != spec_.input_depth)
            throw std::invalid_argument("vnet forward: input depth " + std::to_string(batch.extent(2)) +
                                        " does not match the required padded depth " +
                                        std::to_string(spec_.input_depth));
        std::int64_t div_h = 1, div_w = 1;
        for (const auto& st : spec_.down_strides) {
            div_h *= st[1];
            div_w *= st[2];
        }
        if (batch.extent(3) % div_h != 0)
            throw std::invalid_argument("vnet forward: input height " + std::to_string(batch.extent(3)) +
                                        " not divisible by " + std::to_string(div_h));
        if (batch.extent(4) % div_w != 0)
            throw std::invalid_argument("vnet forward: input width " + std::to_string(batch.extent(4)) +
                                        " not divisible by " + std::to_string(div_w));
        if (opts.mode == Mode::Train && spec_.dropout_p > 0.0 && opts.rng == nullptr)
            throw std::invalid_argument("vnet forward: train mode with dropout requires an RNG");

        const double mom = spec_.bn_momentum, eps = spec_.bn_epsilon;
        std::vector<Tensor<T>> skips;
        Tensor<T> x = batch;
        for (std::size_t l = 0; l < enc_.size(); ++l) {
            if (l > 0) {
                const auto& st = spec_.down_strides[l - 1];
                x = down_[l - 1].apply(x, opts, Dims{st[0], st[1], st[2]}, Dims{0, 0, 0}, mom, eps, false);
                if (spec_.dropout_p > 0.0 && static_cast<std::int64_t>(l) >= spec_.levels - 2) {
                    Rng dummy;
                    x = dropout(opts.tape, x, spec_.dropout_p, opts.mode, opts.rng ? *opts.rng : dummy);
                }
                trace_put(opts, "down" + std::to_string(l), x);
            }
            x = enc_[l].apply(x, opts, mom, eps);
            trace_put(opts, enc_[l].name, x);
            if (l + 1 < enc_.size()) skips.push_back(x);
        }
        for (std::size_t d = 0; d < dec_.size(); ++d) {
            const std::size_t u = dec_.size() - 1 - d;  // encoder level this stage restores
            const auto& st = spec_.down_strides[u];
            x = up_[d].apply(x, opts, Dims{st[0], st[1], st[2]}, Dims{0, 0, 0}, mom, eps, true);
            x = add(opts.tape, x, skips[u]);  // long skip, element-wise
            trace_put(opts, "up" + std::to_string(u + 1), x);
            x = dec_[d].apply(x, opts, mom, eps);
            trace_put(opts, dec_[d].name, x);
        }
        x = conv(opts.tape, x, head_w_, head_b_, Dims{1, 1, 1}, Dims{0, 0, 0});
        trace_put(opts, "scores", x);
        return x;
    }

    void visit_state(const ParamVisitor<T>& fn) override {
        for (std::size_t l = 0; l < enc_.size(); ++l) {
            enc_[l].visit(fn);
            if (l < down_.size()) down_[l].visit("down" + std::to_string(l + 1), fn);
        }
        for (std::size_t d = 0; d < dec_.size(); ++d) {
            const std::size_t u = dec_.size() - d;  // level number, levels-1 .. 1
            up_[d].visit("up" + std::to_string(u), fn);
            dec_[d].visit(fn);
        }
        fn("head.weight", head_w_, ParamKind::Trainable);
        fn("head.bias", head_b_, ParamKind::Trainable);
    }

    std::string arch() const override { return "vnet"; }
    int spatial_rank() const override { return 3; }
    NetSpec spec() const override { return spec_; }

    std::vector<BlockInfo> blocks() const override {
        std::vector<BlockInfo> out;
        for (const auto& b : enc_) out.push_back({b.name, b.residual});
        for (const auto& b : dec_) out.push_back({b.name, b.residual});
        return out;
    }

private:
    VNetSpec spec_;
    std::vector<VBlock<T>> enc_;
    std::vector<VConv<T>> down_;
    std::vector<VConv<T>> up_;
    std::vector<VBlock<T>> dec_;
    Tensor<T> head_w_, head_b_;
};

}  // namespace

template <typename T>
std::unique_ptr<Network<T>> build_vnet(const VNetSpec& spec, Rng& rng) {
    return std::make_unique<VNet<T>>(spec, rng);
}

template <typename T>
std::unique_ptr<Network<T>> build_network(const NetSpec& spec, Rng& rng) {
    if (std::holds_alternative<UNetSpec>(spec)) return build_unet<T>(std::get<UNetSpec>(spec), rng);
    return build_vnet<T>(std::get<VNetSpec>(spec), rng);
}

template std::unique_ptr<Network<float>> build_vnet(const VNetSpec&, Rng&);
template std::unique_ptr<Network<double>> build_vnet(const VNetSpec&, Rng&);
template std::unique_ptr<Network<float>> build_network(const NetSpec&, Rng&);
template std::unique_ptr<Network<double>> build_network(const NetSpec&, Rng&);

}  // namespace fatseg
