#include <stdexcept>

#include "fatseg/net.hpp"
#include "net_common.hpp"

namespace fatseg {

namespace {

using detail::gaussian_init;
using detail::trace_put;
using detail::zeros_param;

template <typename T>
struct ConvLayer {
    Tensor<T> w, b;

    static ConvLayer make(std::int64_t out_ch, std::int64_t in_ch, std::int64_t kh, std::int64_t kw, bool bias,
                          Rng& rng) {
        ConvLayer l;
        l.w = gaussian_init<T>({out_ch, in_ch, kh, kw}, in_ch * kh * kw, rng);
        if (bias) l.b = zeros_param<T>({out_ch});
        return l;
    }

    // transposed conv layout [C_in, C_out, kh, kw]
    static ConvLayer make_up(std::int64_t in_ch, std::int64_t out_ch, std::int64_t k, bool bias, Rng& rng) {
        ConvLayer l;
        l.w = gaussian_init<T>({in_ch, out_ch, k, k}, in_ch * k * k, rng);
        if (bias) l.b = zeros_param<T>({out_ch});
        return l;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".weight", w, ParamKind::Trainable);
        if (b.defined()) fn(prefix + ".bias", b, ParamKind::Trainable);
    }
};

template <typename T>
class UNet final : public Network<T> {
public:
    UNet(const UNetSpec& spec, Rng& rng) : spec_(spec) {
        if (spec.depth < 1 || spec.base_channels < 1 || spec.in_channels < 1 || spec.num_classes < 1)
            throw std::invalid_argument("build_unet: spec fields must be positive");
        std::int64_t in_ch = spec.in_channels;
        for (std::int64_t l = 0; l < spec.depth; ++l) {
            const std::int64_t c = spec.base_channels << l;
            enc_.push_back({ConvLayer<T>::make(c, in_ch, 3, 3, spec.conv_bias, rng),
                            ConvLayer<T>::make(c, c, 3, 3, spec.conv_bias, rng)});
            in_ch = c;
        }
        const std::int64_t cb = spec.base_channels << spec.depth;
        bottleneck_ = {ConvLayer<T>::make(cb, in_ch, 3, 3, spec.conv_bias, rng),
                       ConvLayer<T>::make(cb, cb, 3, 3, spec.conv_bias, rng)};
        std::int64_t up_in = cb;
        for (std::int64_t l = spec.depth - 1; l >= 0; --l) {
            const std::int64_t c = spec.base_channels << l;
            dec_.push_back({ConvLayer<T>::make_up(up_in, c, 2, spec.conv_bias, rng),
                            ConvLayer<T>::make(c, 2 * c, 3, 3, spec.conv_bias, rng),
                            ConvLayer<T>::make(c, c, 3, 3, spec.conv_bias, rng)});
            up_in = c;
        }
        head_ = ConvLayer<T>::make(spec.num_classes, spec.base_channels, 1, 1, spec.conv_bias, rng);
    }

    Tensor<T> forward(const Tensor<T>& batch, const ForwardOptions<T>& opts) override {
        if (batch.rank() != 4)
            throw std::invalid_argument("unet forward: expected rank-4 input [N,C,H,W], got " +
                                        shape_str(batch.shape()));
        if (batch.extent(1) != spec_.in_channels)
            throw std::invalid_argument("unet forward: input has " + std::to_string(batch.extent(1)) +
                                        " channels, spec requires " + std::to_string(spec_.in_channels));
        const std::int64_t div = std::int64_t(1) << spec_.depth;
        const char* axis_names[2] = {"height", "width"};
        for (int a = 0; a < 2; ++a)
            if (batch.extent(2 + a) % div != 0)
                throw std::invalid_argument("unet forward: input " + std::string(axis_names[a]) + " " +
                                            std::to_string(batch.extent(2 + a)) + " not divisible by " +
                                            std::to_string(div));

        Tape<T>* tape = opts.tape;
        const Dims one{1, 1}, two{2, 2}, pad1{1, 1}, pad0{0, 0};

        std::vector<Tensor<T>> skips;
        Tensor<T> x = batch;
        for (std::size_t l = 0; l < enc_.size(); ++l) {
            x = relu(tape, conv(tape, x, enc_[l].c1.w, enc_[l].c1.b, one, pad1));
            x = relu(tape, conv(tape, x, enc_[l].c2.w, enc_[l].c2.b, one, pad1));
            trace_put(opts, "enc" + std::to_string(l + 1), x);
            skips.push_back(x);
            x = max_pool(tape, x, two, two);
        }
        x = relu(tape, conv(tape, x, bottleneck_.c1.w, bottleneck_.c1.b, one, pad1));
        x = relu(tape, conv(tape, x, bottleneck_.c2.w, bottleneck_.c2.b, one, pad1));
        trace_put(opts, "bottleneck", x);

        for (std::size_t d = 0; d < dec_.size(); ++d) {
            const std::size_t l = enc_.size() - 1 - d;  // matching encoder level
            x = transposed_conv(tape, x, dec_[d].up.w, dec_[d].up.b, two);
            x = concat(tape, skips[l], x, 1);
            x = relu(tape, conv(tape, x, dec_[d].c1.w, dec_[d].c1.b, one, pad1));
            x = relu(tape, conv(tape, x, dec_[d].c2.w, dec_[d].c2.b, one, pad1));
            trace_put(opts, "dec" + std::to_string(l + 1), x);
        }
        x = conv(tape, x, head_.w, head_.b, one, pad0);
        trace_put(opts, "scores", x);
        return x;
    }

    void visit_state(const ParamVisitor<T>& fn) override {
        for (std::size_t l = 0; l < enc_.size(); ++l) {
            enc_[l].c1.visit("enc" + std::to_string(l + 1) + ".conv1", fn);
            enc_[l].c2.visit("enc" + std::to_string(l + 1) + ".conv2", fn);
        }
        bottleneck_.c1.visit("bottleneck.conv1", fn);
        bottleneck_.c2.visit("bottleneck.conv2", fn);
        for (std::size_t d = 0; d < dec_.size(); ++d) {
            const std::string lvl = std::to_string(enc_.size() - d);
            dec_[d].up.visit("up" + lvl, fn);
            dec_[d].c1.visit("dec" + lvl + ".conv1", fn);
            dec_[d].c2.visit("dec" + lvl + ".conv2", fn);
        }
        head_.visit("head", fn);
    }

    std::string arch() const override { return "unet"; }
    int spatial_rank() const override { return 2; }
    NetSpec spec() const override { return spec_; }

private:
    struct EncLevel {
        ConvLayer<T> c1, c2;
    };
    struct DecLevel {
        ConvLayer<T> up, c1, c2;
    };

    UNetSpec spec_;
    std::vector<EncLevel> enc_;
    EncLevel bottleneck_;
    std::vector<DecLevel> dec_;
    ConvLayer<T> head_;
};

}  // namespace

template <typename T>
std::unique_ptr<Network<T>> build_unet(const UNetSpec& spec, Rng& rng) {
    return std::make_unique<UNet<T>>(spec, rng);
}

template <typename T>
std::int64_t param_count(Network<T>& net) {
    std::int64_t n = 0;
    net.visit_state([&](const std::string&, Tensor<T>& t, ParamKind kind) {
        if (kind == ParamKind::Trainable) n += t.numel();
    });
    return n;
}

template std::unique_ptr<Network<float>> build_unet(const UNetSpec&, Rng&);
template std::unique_ptr<Network<double>> build_unet(const UNetSpec&, Rng&);
template std::int64_t param_count(Network<float>&);
template std::int64_t param_count(Network<double>&);

}  // namespace fatseg
