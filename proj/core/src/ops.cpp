#include "fatseg/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace fatseg {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<MatRM<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const MatRM<T>>;

bool tracked(const auto* tape, const auto&... ts) {
    return tape != nullptr && (ts.requires_grad() || ...);
}

void check_spatial_args(const char* op, std::int64_t spatial_rank, const Dims& stride, const Dims& padding) {
    if (static_cast<std::int64_t>(stride.size()) != spatial_rank)
        throw std::invalid_argument(std::string(op) + ": stride has " + std::to_string(stride.size()) +
                                    " components, expected " + std::to_string(spatial_rank));
    for (auto s : stride)
        if (s < 1) throw std::invalid_argument(std::string(op) + ": stride components must be >= 1");
    if (static_cast<std::int64_t>(padding.size()) != spatial_rank)
        throw std::invalid_argument(std::string(op) + ": padding has " + std::to_string(padding.size()) +
                                    " components, expected " + std::to_string(spatial_rank));
    for (auto p : padding)
        if (p < 0) throw std::invalid_argument(std::string(op) + ": padding components must be >= 0");
}

// Geometry of one conv-style sliding-kernel pass over a multi-channel image.
// `im` are the image extents, `pos` the kernel-position grid; the same struct
// describes a transposed conv with the roles of its input/output swapped.
struct SlideGeom {
    int rank = 2;  // spatial rank, 2 or 3
    std::int64_t channels = 0;
    std::array<std::int64_t, 3> im{1, 1, 1}, k{1, 1, 1}, st{1, 1, 1}, pad{0, 0, 0}, pos{1, 1, 1};
    std::int64_t im_numel = 0, pos_numel = 0, k_numel = 0, rows = 0;  // rows = channels * k_numel

    void finalize() {
        im_numel = 1;
        pos_numel = 1;
        k_numel = 1;
        for (int a = 0; a < rank; ++a) {
            im_numel *= im[a];
            pos_numel *= pos[a];
            k_numel *= k[a];
        }
        rows = channels * k_numel;
    }
};

// Gathers kernel windows into a column matrix col[rows, len]; positions
// [pos_start, pos_start+len) of the row-major position grid.
template <typename T>
void im2col(const SlideGeom& g, const T* im, T* col, std::int64_t pos_start, std::int64_t len) {
    if (g.rank == 2) {
        const std::int64_t ih = g.im[0], iw = g.im[1], pw = g.pos[1];
        for (std::int64_t c = 0; c < g.channels; ++c) {
            const T* imc = im + c * g.im_numel;
            for (std::int64_t ky = 0; ky < g.k[0]; ++ky)
                for (std::int64_t kx = 0; kx < g.k[1]; ++kx) {
                    T* dst = col + ((c * g.k[0] + ky) * g.k[1] + kx) * len;
                    std::int64_t oy = pos_start / pw, ox = pos_start % pw;
                    for (std::int64_t t = 0; t < len; ++t) {
                        const std::int64_t iy = oy * g.st[0] + ky - g.pad[0];
                        const std::int64_t ix = ox * g.st[1] + kx - g.pad[1];
                        dst[t] = (iy >= 0 && iy < ih && ix >= 0 && ix < iw) ? imc[iy * iw + ix] : T(0);
                        if (++ox == pw) {
                            ox = 0;
                            ++oy;
                        }
                    }
                }
        }
    } else {
        const std::int64_t id = g.im[0], ih = g.im[1], iw = g.im[2];
        const std::int64_t ph = g.pos[1], pw = g.pos[2];
        for (std::int64_t c = 0; c < g.channels; ++c) {
            const T* imc = im + c * g.im_numel;
            for (std::int64_t kz = 0; kz < g.k[0]; ++kz)
                for (std::int64_t ky = 0; ky < g.k[1]; ++ky)
                    for (std::int64_t kx = 0; kx < g.k[2]; ++kx) {
                        T* dst = col + (((c * g.k[0] + kz) * g.k[1] + ky) * g.k[2] + kx) * len;
                        std::int64_t rem = pos_start;
                        std::int64_t od = rem / (ph * pw);
                        rem -= od * ph * pw;
                        std::int64_t oy = rem / pw, ox = rem % pw;
                        for (std::int64_t t = 0; t < len; ++t) {
                            const std::int64_t iz = od * g.st[0] + kz - g.pad[0];
                            const std::int64_t iy = oy * g.st[1] + ky - g.pad[1];
                            const std::int64_t ix = ox * g.st[2] + kx - g.pad[2];
                            dst[t] = (iz >= 0 && iz < id && iy >= 0 && iy < ih && ix >= 0 && ix < iw)
                                         ? imc[(iz * ih + iy) * iw + ix]
                                         : T(0);
                            if (++ox == pw) {
                                ox = 0;
                                if (++oy == ph) {
                                    oy = 0;
                                    ++od;
                                }
                            }
                        }
                    }
        }
    }
}

// Scatter-add of a column matrix back onto the image (exact adjoint of im2col).
template <typename T>
void col2im_add(const SlideGeom& g, const T* col, T* im, std::int64_t pos_start, std::int64_t len) {
    if (g.rank == 2) {
        const std::int64_t ih = g.im[0], iw = g.im[1], pw = g.pos[1];
        for (std::int64_t c = 0; c < g.channels; ++c) {
            T* imc = im + c * g.im_numel;
            for (std::int64_t ky = 0; ky < g.k[0]; ++ky)
                for (std::int64_t kx = 0; kx < g.k[1]; ++kx) {
                    const T* src = col + ((c * g.k[0] + ky) * g.k[1] + kx) * len;
                    std::int64_t oy = pos_start / pw, ox = pos_start % pw;
                    for (std::int64_t t = 0; t < len; ++t) {
                        const std::int64_t iy = oy * g.st[0] + ky - g.pad[0];
                        const std::int64_t ix = ox * g.st[1] + kx - g.pad[1];
                        if (iy >= 0 && iy < ih && ix >= 0 && ix < iw) imc[iy * iw + ix] += src[t];
                        if (++ox == pw) {
                            ox = 0;
                            ++oy;
                        }
                    }
                }
        }
    } else {
        const std::int64_t id = g.im[0], ih = g.im[1], iw = g.im[2];
        const std::int64_t ph = g.pos[1], pw = g.pos[2];
        for (std::int64_t c = 0; c < g.channels; ++c) {
            T* imc = im + c * g.im_numel;
            for (std::int64_t kz = 0; kz < g.k[0]; ++kz)
                for (std::int64_t ky = 0; ky < g.k[1]; ++ky)
                    for (std::int64_t kx = 0; kx < g.k[2]; ++kx) {
                        const T* src = col + (((c * g.k[0] + kz) * g.k[1] + ky) * g.k[2] + kx) * len;
                        std::int64_t rem = pos_start;
                        std::int64_t od = rem / (ph * pw);
                        rem -= od * ph * pw;
                        std::int64_t oy = rem / pw, ox = rem % pw;
                        for (std::int64_t t = 0; t < len; ++t) {
                            const std::int64_t iz = od * g.st[0] + kz - g.pad[0];
                            const std::int64_t iy = oy * g.st[1] + ky - g.pad[1];
                            const std::int64_t ix = ox * g.st[2] + kx - g.pad[2];
                            if (iz >= 0 && iz < id && iy >= 0 && iy < ih && ix >= 0 && ix < iw)
                                imc[(iz * ih + iy) * iw + ix] += src[t];
                            if (++ox == pw) {
                                ox = 0;
                                if (++oy == ph) {
                                    oy = 0;
                                    ++od;
                                }
                            }
                        }
                    }
        }
    }
}

// Position-grid tile size for the column buffer; bounds scratch memory on
// large feature maps.
constexpr std::int64_t kColTile = 1 << 14;

}  // namespace

template <typename T>
Tensor<T> conv(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
               const Dims& stride, const Dims& padding) {
    if (input.rank() != 4 && input.rank() != 5)
        throw std::invalid_argument("conv: input rank must be 4 (2D) or 5 (3D), got " + shape_str(input.shape()));
    const int spatial_rank = static_cast<int>(input.rank()) - 2;
    if (weight.rank() != input.rank())
        throw std::invalid_argument("conv: weight rank " + shape_str(weight.shape()) + " does not match input " +
                                    shape_str(input.shape()));
    if (weight.extent(1) != input.extent(1))
        throw std::invalid_argument("conv: input channels (C=" + std::to_string(input.extent(1)) +
                                    ") do not match weight channels (C=" + std::to_string(weight.extent(1)) + ")");
    check_spatial_args("conv", spatial_rank, stride, padding);

    const std::int64_t batch = input.extent(0), in_ch = input.extent(1), out_ch = weight.extent(0);
    if (bias.defined() && bias.numel() != out_ch)
        throw std::invalid_argument("conv: bias has " + std::to_string(bias.numel()) + " elements, expected K=" +
                                    std::to_string(out_ch));

    SlideGeom g;
    g.rank = spatial_rank;
    g.channels = in_ch;
    Shape out_shape{batch, out_ch};
    for (int a = 0; a < spatial_rank; ++a) {
        g.im[a] = input.extent(2 + a);
        g.k[a] = weight.extent(2 + a);
        g.st[a] = stride[static_cast<std::size_t>(a)];
        g.pad[a] = padding[static_cast<std::size_t>(a)];
        g.pos[a] = conv_out_extent(g.im[a], g.k[a], g.st[a], g.pad[a]);
        if (g.pos[a] <= 0)
            throw std::invalid_argument("conv: non-positive output extent along spatial axis " + std::to_string(a) +
                                        " (in=" + std::to_string(g.im[a]) + ", kernel=" + std::to_string(g.k[a]) +
                                        ", stride=" + std::to_string(g.st[a]) + ", pad=" + std::to_string(g.pad[a]) + ")");
        out_shape.push_back(g.pos[a]);
    }
    g.finalize();

    Tensor<T> out(out_shape);
    std::vector<T> colbuf(static_cast<std::size_t>(g.rows * std::min(g.pos_numel, kColTile)));
    MapConstMat<T> wm(weight.data().data(), out_ch, g.rows);

    for (std::int64_t n = 0; n < batch; ++n) {
        const T* x = input.data().data() + n * in_ch * g.im_numel;
        MapMat<T> om(out.data().data() + n * out_ch * g.pos_numel, out_ch, g.pos_numel);
        for (std::int64_t ts = 0; ts < g.pos_numel; ts += kColTile) {
            const std::int64_t len = std::min(kColTile, g.pos_numel - ts);
            im2col(g, x, colbuf.data(), ts, len);
            MapConstMat<T> cm(colbuf.data(), g.rows, len);
            om.block(0, ts, out_ch, len).noalias() = wm * cm;
        }
        if (bias.defined()) {
            auto b = bias.data();
            for (std::int64_t k = 0; k < out_ch; ++k) om.row(k).array() += b[static_cast<std::size_t>(k)];
        }
    }

    if (tracked(tape, input, weight, bias)) {
        out.set_requires_grad(true);
        Tensor<T> in_c = input, w_c = weight, b_c = bias, out_c = out;
        tape->record([g, batch, in_ch, out_ch, in_c, w_c, b_c, out_c]() mutable {
            const bool need_dx = in_c.requires_grad();
            const bool need_dw = w_c.requires_grad();
            const bool need_db = b_c.defined() && b_c.requires_grad();
            std::vector<T> colbuf(static_cast<std::size_t>(g.rows * std::min(g.pos_numel, kColTile)));
            std::vector<T> dcolbuf(need_dx ? colbuf.size() : 0);
            MapConstMat<T> wm(w_c.data().data(), out_ch, g.rows);
            for (std::int64_t n = 0; n < batch; ++n) {
                MapConstMat<T> dym(out_c.grad().data() + n * out_ch * g.pos_numel, out_ch, g.pos_numel);
                const T* x = in_c.data().data() + n * in_ch * g.im_numel;
                for (std::int64_t ts = 0; ts < g.pos_numel; ts += kColTile) {
                    const std::int64_t len = std::min(kColTile, g.pos_numel - ts);
                    if (need_dw) {
                        im2col(g, x, colbuf.data(), ts, len);
                        MapConstMat<T> cm(colbuf.data(), g.rows, len);
                        MapMat<T> dwm(w_c.grad().data(), out_ch, g.rows);
                        dwm.noalias() += dym.block(0, ts, out_ch, len) * cm.transpose();
                    }
                    if (need_dx) {
                        MapMat<T> dcm(dcolbuf.data(), g.rows, len);
                        dcm.noalias() = wm.transpose() * dym.block(0, ts, out_ch, len);
                        col2im_add(g, dcolbuf.data(), in_c.grad().data() + n * in_ch * g.im_numel, ts, len);
                    }
                }
                if (need_db) {
                    auto db = b_c.grad();
                    for (std::int64_t k = 0; k < out_ch; ++k) db[static_cast<std::size_t>(k)] += dym.row(k).sum();
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> transposed_conv(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                          const Dims& stride) {
    if (input.rank() != 4 && input.rank() != 5)
        throw std::invalid_argument("transposed_conv: input rank must be 4 (2D) or 5 (3D), got " +
                                    shape_str(input.shape()));
    const int spatial_rank = static_cast<int>(input.rank()) - 2;
    if (weight.rank() != input.rank())
        throw std::invalid_argument("transposed_conv: weight rank " + shape_str(weight.shape()) +
                                    " does not match input " + shape_str(input.shape()));
    if (weight.extent(0) != input.extent(1))
        throw std::invalid_argument("transposed_conv: input channels (C=" + std::to_string(input.extent(1)) +
                                    ") do not match weight input channels (C=" + std::to_string(weight.extent(0)) + ")");
    check_spatial_args("transposed_conv", spatial_rank, stride, Dims(static_cast<std::size_t>(spatial_rank), 0));

    const std::int64_t batch = input.extent(0), in_ch = input.extent(1), out_ch = weight.extent(1);
    if (bias.defined() && bias.numel() != out_ch)
        throw std::invalid_argument("transposed_conv: bias has " + std::to_string(bias.numel()) +
                                    " elements, expected K=" + std::to_string(out_ch));

    // Conv-view geometry: the transposed conv's *output* is the image, its
    // input positions form the kernel-position grid.
    SlideGeom g;
    g.rank = spatial_rank;
    g.channels = out_ch;
    Shape out_shape{batch, out_ch};
    for (int a = 0; a < spatial_rank; ++a) {
        g.pos[a] = input.extent(2 + a);
        g.k[a] = weight.extent(2 + a);
        g.st[a] = stride[static_cast<std::size_t>(a)];
        g.pad[a] = 0;
        g.im[a] = tconv_out_extent(g.pos[a], g.k[a], g.st[a]);
        out_shape.push_back(g.im[a]);
    }
    g.finalize();

    Tensor<T> out(out_shape);
    std::vector<T> colbuf(static_cast<std::size_t>(g.rows * std::min(g.pos_numel, kColTile)));
    MapConstMat<T> wm(weight.data().data(), in_ch, g.rows);  // [C_in, C_out*k]

    for (std::int64_t n = 0; n < batch; ++n) {
        MapConstMat<T> xm(input.data().data() + n * in_ch * g.pos_numel, in_ch, g.pos_numel);
        T* y = out.data().data() + n * out_ch * g.im_numel;
        for (std::int64_t ts = 0; ts < g.pos_numel; ts += kColTile) {
            const std::int64_t len = std::min(kColTile, g.pos_numel - ts);
            MapMat<T> cm(colbuf.data(), g.rows, len);
            cm.noalias() = wm.transpose() * xm.block(0, ts, in_ch, len);
            col2im_add(g, colbuf.data(), y, ts, len);
        }
        if (bias.defined()) {
            auto b = bias.data();
            MapMat<T> ym(y, out_ch, g.im_numel);
            for (std::int64_t k = 0; k < out_ch; ++k) ym.row(k).array() += b[static_cast<std::size_t>(k)];
        }
    }

    if (tracked(tape, input, weight, bias)) {
        out.set_requires_grad(true);
        Tensor<T> in_c = input, w_c = weight, b_c = bias, out_c = out;
        tape->record([g, batch, in_ch, out_ch, in_c, w_c, b_c, out_c]() mutable {
            const bool need_dx = in_c.requires_grad();
            const bool need_dw = w_c.requires_grad();
            const bool need_db = b_c.defined() && b_c.requires_grad();
            std::vector<T> dcolbuf(static_cast<std::size_t>(g.rows * std::min(g.pos_numel, kColTile)));
            MapConstMat<T> wm(w_c.data().data(), in_ch, g.rows);
            for (std::int64_t n = 0; n < batch; ++n) {
                const T* dy = out_c.grad().data() + n * out_ch * g.im_numel;
                for (std::int64_t ts = 0; ts < g.pos_numel; ts += kColTile) {
                    const std::int64_t len = std::min(kColTile, g.pos_numel - ts);
                    im2col(g, dy, dcolbuf.data(), ts, len);
                    MapConstMat<T> dcm(dcolbuf.data(), g.rows, len);
                    if (need_dx) {
                        MapMat<T> dxm(in_c.grad().data() + n * in_ch * g.pos_numel, in_ch, g.pos_numel);
                        dxm.block(0, ts, in_ch, len).noalias() += wm * dcm;
                    }
                    if (need_dw) {
                        MapConstMat<T> xm(in_c.data().data() + n * in_ch * g.pos_numel, in_ch, g.pos_numel);
                        MapMat<T> dwm(w_c.grad().data(), in_ch, g.rows);
                        dwm.noalias() += xm.block(0, ts, in_ch, len) * dcm.transpose();
                    }
                }
                if (need_db) {
                    auto db = b_c.grad();
                    MapConstMat<T> dym(dy, out_ch, g.im_numel);
                    for (std::int64_t k = 0; k < out_ch; ++k) db[static_cast<std::size_t>(k)] += dym.row(k).sum();
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> max_pool(Tape<T>* tape, const Tensor<T>& input, const Dims& window, const Dims& stride) {
    if (input.rank() != 4 && input.rank() != 5)
        throw std::invalid_argument("max_pool: input rank must be 4 or 5, got " + shape_str(input.shape()));
    const int spatial_rank = static_cast<int>(input.rank()) - 2;
    check_spatial_args("max_pool", spatial_rank, stride, Dims(static_cast<std::size_t>(spatial_rank), 0));
    if (static_cast<std::int64_t>(window.size()) != spatial_rank)
        throw std::invalid_argument("max_pool: window has " + std::to_string(window.size()) +
                                    " components, expected " + std::to_string(spatial_rank));

    const std::int64_t batch = input.extent(0), ch = input.extent(1);
    std::array<std::int64_t, 3> in{1, 1, 1}, win{1, 1, 1}, st{1, 1, 1}, out_sp{1, 1, 1};
    Shape out_shape{batch, ch};
    std::int64_t in_numel = 1, out_numel = 1;
    for (int a = 0; a < spatial_rank; ++a) {
        in[a] = input.extent(2 + a);
        win[a] = window[static_cast<std::size_t>(a)];
        st[a] = stride[static_cast<std::size_t>(a)];
        if (win[a] < 1) throw std::invalid_argument("max_pool: window components must be >= 1");
        if (win[a] > in[a])
            throw std::invalid_argument("max_pool: window " + std::to_string(win[a]) + " exceeds input extent " +
                                        std::to_string(in[a]) + " along spatial axis " + std::to_string(a));
        out_sp[a] = (in[a] - win[a]) / st[a] + 1;
        out_shape.push_back(out_sp[a]);
        in_numel *= in[a];
        out_numel *= out_sp[a];
    }

    Tensor<T> out(out_shape);
    std::vector<std::int64_t> argmax(static_cast<std::size_t>(batch * ch * out_numel));

    const T* x = input.data().data();
    T* y = out.data().data();
    std::int64_t oi = 0;
    // Row-major window scan; first maximum wins ties.
    if (spatial_rank == 2) {
        for (std::int64_t nc = 0; nc < batch * ch; ++nc) {
            const T* xc = x + nc * in_numel;
            for (std::int64_t oy = 0; oy < out_sp[0]; ++oy)
                for (std::int64_t ox = 0; ox < out_sp[1]; ++ox) {
                    T best{};
                    std::int64_t best_ix = -1;
                    for (std::int64_t wy = 0; wy < win[0]; ++wy)
                        for (std::int64_t wx = 0; wx < win[1]; ++wx) {
                            const std::int64_t ix = (oy * st[0] + wy) * in[1] + (ox * st[1] + wx);
                            if (best_ix < 0 || xc[ix] > best) {
                                best = xc[ix];
                                best_ix = ix;
                            }
                        }
                    y[oi] = best;
                    argmax[static_cast<std::size_t>(oi)] = nc * in_numel + best_ix;
                    ++oi;
                }
        }
    } else {
        for (std::int64_t nc = 0; nc < batch * ch; ++nc) {
            const T* xc = x + nc * in_numel;
            for (std::int64_t od = 0; od < out_sp[0]; ++od)
                for (std::int64_t oy = 0; oy < out_sp[1]; ++oy)
                    for (std::int64_t ox = 0; ox < out_sp[2]; ++ox) {
                        T best{};
                        std::int64_t best_ix = -1;
                        for (std::int64_t wd = 0; wd < win[0]; ++wd)
                            for (std::int64_t wy = 0; wy < win[1]; ++wy)
                                for (std::int64_t wx = 0; wx < win[2]; ++wx) {
                                    const std::int64_t ix = ((od * st[0] + wd) * in[1] + (oy * st[1] + wy)) * in[2] +
                                                            (ox * st[2] + wx);
                                    if (best_ix < 0 || xc[ix] > best) {
                                        best = xc[ix];
                                        best_ix = ix;
                                    }
                                }
                        y[oi] = best;
                        argmax[static_cast<std::size_t>(oi)] = nc * in_numel + best_ix;
                        ++oi;
                    }
        }
    }

    if (tracked(tape, input)) {
        out.set_requires_grad(true);
        Tensor<T> in_c = input, out_c = out;
        tape->record([in_c, out_c, argmax = std::move(argmax)]() mutable {
            auto dy = out_c.grad();
            auto dx = in_c.grad();
            for (std::size_t i = 0; i < argmax.size(); ++i) dx[static_cast<std::size_t>(argmax[i])] += dy[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode, double momentum, double epsilon) {
    if (input.rank() < 2) throw std::invalid_argument("batch_norm: input rank must be >= 2");
    const std::int64_t batch = input.extent(0), ch = input.extent(1);
    std::int64_t sp = 1;
    for (std::int64_t a = 2; a < input.rank(); ++a) sp *= input.extent(a);
    for (const Tensor<T>* t : {&gamma, &beta, static_cast<const Tensor<T>*>(&running_mean),
                               static_cast<const Tensor<T>*>(&running_var)})
        if (t->numel() != ch)
            throw std::invalid_argument("batch_norm: per-channel parameter has " + std::to_string(t->numel()) +
                                        " elements, expected C=" + std::to_string(ch));

    const std::int64_t m = batch * sp;  // elements per channel
    Tensor<T> out(input.shape());
    Tensor<T> xhat(input.shape());
    std::vector<T> mean(static_cast<std::size_t>(ch)), ivar(static_cast<std::size_t>(ch));
    std::vector<T> scratch(static_cast<std::size_t>(m));

    const T* x = input.data().data();
    T* y = out.data().data();
    T* xh = xhat.data().data();
    auto gm = gamma.data();
    auto bt = beta.data();

    for (std::int64_t c = 0; c < ch; ++c) {
        for (std::int64_t n = 0; n < batch; ++n) {
            const T* src = x + (n * ch + c) * sp;
            std::copy(src, src + sp, scratch.data() + n * sp);
        }
        T mu, var;
        if (mode == Mode::Train) {
            mu = pairwise_sum<T>(scratch) / static_cast<T>(m);
            for (auto& v : scratch) v = (v - mu) * (v - mu);
            var = pairwise_sum<T>(scratch) / static_cast<T>(m);
            auto rm = running_mean.data();
            auto rv = running_var.data();
            const T unbiased = m > 1 ? var * static_cast<T>(m) / static_cast<T>(m - 1) : var;
            rm[static_cast<std::size_t>(c)] = static_cast<T>((1.0 - momentum) * rm[static_cast<std::size_t>(c)] +
                                                             momentum * mu);
            rv[static_cast<std::size_t>(c)] = static_cast<T>((1.0 - momentum) * rv[static_cast<std::size_t>(c)] +
                                                             momentum * unbiased);
        } else {
            mu = running_mean.data()[static_cast<std::size_t>(c)];
            var = running_var.data()[static_cast<std::size_t>(c)];
        }
        const T iv = T(1) / std::sqrt(var + static_cast<T>(epsilon));
        mean[static_cast<std::size_t>(c)] = mu;
        ivar[static_cast<std::size_t>(c)] = iv;
        const T g = gm[static_cast<std::size_t>(c)], b = bt[static_cast<std::size_t>(c)];
        for (std::int64_t n = 0; n < batch; ++n) {
            const T* src = x + (n * ch + c) * sp;
            T* xhp = xh + (n * ch + c) * sp;
            T* yp = y + (n * ch + c) * sp;
            for (std::int64_t s = 0; s < sp; ++s) {
                const T v = (src[s] - mu) * iv;
                xhp[s] = v;
                yp[s] = g * v + b;
            }
        }
    }

    if (tracked(tape, input, gamma, beta)) {
        out.set_requires_grad(true);
        Tensor<T> in_c = input, g_c = gamma, b_c = beta, out_c = out, xh_c = xhat;
        const bool train = mode == Mode::Train;
        tape->record([in_c, g_c, b_c, out_c, xh_c, ivar = std::move(ivar), batch, ch, sp, m, train]() mutable {
            auto dy_all = out_c.grad();
            const T* xh = xh_c.data().data();
            std::vector<T> s1(static_cast<std::size_t>(m)), s2(static_cast<std::size_t>(m));
            const bool need_dx = in_c.requires_grad();
            for (std::int64_t c = 0; c < ch; ++c) {
                for (std::int64_t n = 0; n < batch; ++n) {
                    const T* dyp = dy_all.data() + (n * ch + c) * sp;
                    const T* xhp = xh + (n * ch + c) * sp;
                    std::copy(dyp, dyp + sp, s1.data() + n * sp);
                    for (std::int64_t s = 0; s < sp; ++s) s2[static_cast<std::size_t>(n * sp + s)] = dyp[s] * xhp[s];
                }
                const T sum_dy = pairwise_sum<T>(s1);
                const T sum_dy_xhat = pairwise_sum<T>(s2);
                if (g_c.requires_grad()) g_c.grad()[static_cast<std::size_t>(c)] += sum_dy_xhat;
                if (b_c.requires_grad()) b_c.grad()[static_cast<std::size_t>(c)] += sum_dy;
                if (!need_dx) continue;
                const T g = g_c.data()[static_cast<std::size_t>(c)];
                const T iv = ivar[static_cast<std::size_t>(c)];
                auto dx_all = in_c.grad();
                for (std::int64_t n = 0; n < batch; ++n) {
                    const T* dyp = dy_all.data() + (n * ch + c) * sp;
                    const T* xhp = xh + (n * ch + c) * sp;
                    T* dxp = dx_all.data() + (n * ch + c) * sp;
                    if (train) {
                        const T k = g * iv / static_cast<T>(m);
                        for (std::int64_t s = 0; s < sp; ++s)
                            dxp[s] += k * (static_cast<T>(m) * dyp[s] - sum_dy - xhp[s] * sum_dy_xhat);
                    } else {
                        const T k = g * iv;
                        for (std::int64_t s = 0; s < sp; ++s) dxp[s] += k * dyp[s];
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& input, double p, Mode mode, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1), got " + std::to_string(p));
    if (mode == Mode::Eval || p == 0.0) return input;

    const T scale = static_cast<T>(1.0 / (1.0 - p));
    Tensor<T> out(input.shape());
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(input.numel()));
    auto x = input.data();
    auto y = out.data();
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const bool keep = rng.uniform() >= p;
        mask[i] = keep;
        y[i] = keep ? x[i] * scale : T(0);
    }

    if (tracked(tape, input)) {
        out.set_requires_grad(true);
        Tensor<T> in_c = input, out_c = out;
        tape->record([in_c, out_c, mask = std::move(mask), scale]() mutable {
            auto dy = out_c.grad();
            auto dx = in_c.grad();
            for (std::size_t i = 0; i < mask.size(); ++i)
                if (mask[i]) dx[i] += dy[i] * scale;
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
    if (tracked(tape, x)) {
        out.set_requires_grad(true);
        Tensor<T> x_c = x, out_c = out;
        tape->record([x_c, out_c]() mutable {
            auto dy = out_c.grad();
            auto dx = x_c.grad();
            auto xv = x_c.data();
            for (std::size_t i = 0; i < xv.size(); ++i)
                if (xv[i] > T(0)) dx[i] += dy[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> prelu(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& slope) {
    const std::int64_t ch = x.rank() >= 2 ? x.extent(1) : 1;
    if (slope.numel() != 1 && slope.numel() != ch)
        throw std::invalid_argument("prelu: slope must hold 1 or C=" + std::to_string(ch) + " coefficients, got " +
                                    std::to_string(slope.numel()));
    std::int64_t sp = 1;
    for (std::int64_t a = 2; a < x.rank(); ++a) sp *= x.extent(a);
    const std::int64_t batch = x.rank() >= 2 ? x.extent(0) : 1;
    const bool per_channel = slope.numel() == ch && ch > 1;

    Tensor<T> out(x.shape());
    auto src = x.data();
    auto dst = out.data();
    auto a = slope.data();
    if (x.rank() < 2) {
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? src[i] : a[0] * src[i];
    } else {
        for (std::int64_t n = 0; n < batch; ++n)
            for (std::int64_t c = 0; c < ch; ++c) {
                const T ac = a[per_channel ? static_cast<std::size_t>(c) : 0];
                const std::int64_t base = (n * ch + c) * sp;
                for (std::int64_t s = 0; s < sp; ++s) {
                    const T v = src[static_cast<std::size_t>(base + s)];
                    dst[static_cast<std::size_t>(base + s)] = v > T(0) ? v : ac * v;
                }
            }
    }

    if (tracked(tape, x, slope)) {
        out.set_requires_grad(true);
        Tensor<T> x_c = x, a_c = slope, out_c = out;
        tape->record([x_c, a_c, out_c, batch, ch, sp, per_channel]() mutable {
            auto dy = out_c.grad();
            auto xv = x_c.data();
            auto av = a_c.data();
            const bool need_dx = x_c.requires_grad();
            const bool need_da = a_c.requires_grad();
            auto dx = need_dx ? x_c.grad() : std::span<T>{};
            auto da = need_da ? a_c.grad() : std::span<T>{};
            if (x_c.rank() < 2) {
                for (std::size_t i = 0; i < xv.size(); ++i) {
                    if (need_dx) dx[i] += dy[i] * (xv[i] > T(0) ? T(1) : av[0]);
                    if (need_da && xv[i] <= T(0)) da[0] += dy[i] * xv[i];
                }
                return;
            }
            for (std::int64_t n = 0; n < batch; ++n)
                for (std::int64_t c = 0; c < ch; ++c) {
                    const std::size_t ai = per_channel ? static_cast<std::size_t>(c) : 0;
                    const std::int64_t base = (n * ch + c) * sp;
                    for (std::int64_t s = 0; s < sp; ++s) {
                        const std::size_t i = static_cast<std::size_t>(base + s);
                        if (xv[i] > T(0)) {
                            if (need_dx) dx[i] += dy[i];
                        } else {
                            if (need_dx) dx[i] += dy[i] * av[ai];
                            if (need_da) da[ai] += dy[i] * xv[i];
                        }
                    }
                }
        });
    }
    return out;
}

template <typename T>
Tensor<T> softmax(Tape<T>* tape, const Tensor<T>& x, std::int64_t axis) {
    if (axis < 0 || axis >= x.rank())
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range for " +
                                    shape_str(x.shape()));
    std::int64_t outer = 1, klass = x.extent(axis), inner = 1;
    for (std::int64_t a = 0; a < axis; ++a) outer *= x.extent(a);
    for (std::int64_t a = axis + 1; a < x.rank(); ++a) inner *= x.extent(a);

    Tensor<T> out(x.shape());
    auto src = x.data();
    auto dst = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * klass * inner + i;
            T mx = src[static_cast<std::size_t>(base)];
            for (std::int64_t k = 1; k < klass; ++k)
                mx = std::max(mx, src[static_cast<std::size_t>(base + k * inner)]);
            T denom = T(0);
            for (std::int64_t k = 0; k < klass; ++k) {
                const T e = std::exp(src[static_cast<std::size_t>(base + k * inner)] - mx);
                dst[static_cast<std::size_t>(base + k * inner)] = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            for (std::int64_t k = 0; k < klass; ++k) dst[static_cast<std::size_t>(base + k * inner)] *= inv;
        }

    if (tracked(tape, x)) {
        out.set_requires_grad(true);
        Tensor<T> x_c = x, out_c = out;
        tape->record([x_c, out_c, outer, klass, inner]() mutable {
            auto dy = out_c.grad();
            auto p = out_c.data();
            auto dx = x_c.grad();
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < inner; ++i) {
                    const std::int64_t base = o * klass * inner + i;
                    T dot = T(0);
                    for (std::int64_t k = 0; k < klass; ++k) {
                        const std::size_t ix = static_cast<std::size_t>(base + k * inner);
                        dot += dy[ix] * p[ix];
                    }
                    for (std::int64_t k = 0; k < klass; ++k) {
                        const std::size_t ix = static_cast<std::size_t>(base + k * inner);
                        dx[ix] += p[ix] * (dy[ix] - dot);
                    }
                }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b, std::int64_t axis) {
    if (a.rank() != b.rank())
        throw std::invalid_argument("concat: rank mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (axis < 0 || axis >= a.rank()) throw std::invalid_argument("concat: axis out of range");
    for (std::int64_t d = 0; d < a.rank(); ++d)
        if (d != axis && a.extent(d) != b.extent(d))
            throw std::invalid_argument("concat: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                                        " differ along non-concat axis " + std::to_string(d));

    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(axis)] += b.extent(axis);
    Tensor<T> out(out_shape);

    std::int64_t outer = 1, inner = 1;
    for (std::int64_t d = 0; d < axis; ++d) outer *= a.extent(d);
    for (std::int64_t d = axis + 1; d < a.rank(); ++d) inner *= a.extent(d);
    const std::int64_t ea = a.extent(axis), eb = b.extent(axis);

    auto av = a.data();
    auto bv = b.data();
    auto ov = out.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        std::copy(av.data() + o * ea * inner, av.data() + (o + 1) * ea * inner,
                  ov.data() + o * (ea + eb) * inner);
        std::copy(bv.data() + o * eb * inner, bv.data() + (o + 1) * eb * inner,
                  ov.data() + (o * (ea + eb) + ea) * inner);
    }

    if (tracked(tape, a, b)) {
        out.set_requires_grad(true);
        Tensor<T> a_c = a, b_c = b, out_c = out;
        tape->record([a_c, b_c, out_c, outer, inner, ea, eb]() mutable {
            auto dy = out_c.grad();
            for (std::int64_t o = 0; o < outer; ++o) {
                if (a_c.requires_grad()) {
                    auto da = a_c.grad();
                    const T* src = dy.data() + o * (ea + eb) * inner;
                    T* dst = da.data() + o * ea * inner;
                    for (std::int64_t i = 0; i < ea * inner; ++i) dst[i] += src[i];
                }
                if (b_c.requires_grad()) {
                    auto db = b_c.grad();
                    const T* src = dy.data() + (o * (ea + eb) + ea) * inner;
                    T* dst = db.data() + o * eb * inner;
                    for (std::int64_t i = 0; i < eb * inner; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
    if (tracked(tape, a, b)) {
        out.set_requires_grad(true);
        Tensor<T> a_c = a, b_c = b, out_c = out;
        tape->record([a_c, b_c, out_c]() mutable {
            auto dy = out_c.grad();
            if (a_c.requires_grad()) {
                auto da = a_c.grad();
                for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
            }
            if (b_c.requires_grad()) {
                auto db = b_c.grad();
                for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
    if (tracked(tape, a, b)) {
        out.set_requires_grad(true);
        Tensor<T> a_c = a, b_c = b, out_c = out;
        tape->record([a_c, b_c, out_c]() mutable {
            auto dy = out_c.grad();
            if (a_c.requires_grad()) {
                auto da = a_c.grad();
                auto bv2 = b_c.data();
                for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv2[i];
            }
            if (b_c.requires_grad()) {
                auto db = b_c.grad();
                auto av2 = a_c.data();
                for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av2[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::scalar(pairwise_sum<T>(x.data()));
    if (tracked(tape, x)) {
        out.set_requires_grad(true);
        Tensor<T> x_c = x, out_c = out;
        tape->record([x_c, out_c]() mutable {
            const T g = out_c.grad()[0];
            auto dx = x_c.grad();
            for (auto& v : dx) v += g;
        });
    }
    return out;
}

#define FATSEG_INSTANTIATE_OPS(T)                                                                  \
    template Tensor<T> conv(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                            const Dims&, const Dims&);                                             \
    template Tensor<T> transposed_conv(Tape<T>*, const Tensor<T>&, const Tensor<T>&,              \
                                       const Tensor<T>&, const Dims&);                            \
    template Tensor<T> max_pool(Tape<T>*, const Tensor<T>&, const Dims&, const Dims&);            \
    template Tensor<T> batch_norm(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                  Tensor<T>&, Tensor<T>&, Mode, double, double);                  \
    template Tensor<T> dropout(Tape<T>*, const Tensor<T>&, double, Mode, Rng&);                   \
    template Tensor<T> relu(Tape<T>*, const Tensor<T>&);                                          \
    template Tensor<T> prelu(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                       \
    template Tensor<T> softmax(Tape<T>*, const Tensor<T>&, std::int64_t);                         \
    template Tensor<T> concat(Tape<T>*, const Tensor<T>&, const Tensor<T>&, std::int64_t);        \
    template Tensor<T> add(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                         \
    template Tensor<T> mul(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                         \
    template Tensor<T> sum_all(Tape<T>*, const Tensor<T>&);

FATSEG_INSTANTIATE_OPS(float)
FATSEG_INSTANTIATE_OPS(double)
#undef FATSEG_INSTANTIATE_OPS

}  // namespace fatseg
