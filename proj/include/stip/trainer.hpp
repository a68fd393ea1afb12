#pragma once

// Teacher-forced training with alternating discriminator / predictor updates,
// autoregressive rollout, and versioned binary checkpoints.

#include <filesystem>
#include <optional>
#include <sstream>

#include "stip/adversary.hpp"
#include "stip/data.hpp"
#include "stip/mgst_ae.hpp"
#include "stip/optim.hpp"

namespace stip {

/// Clip of L frames ending at 1-based index t from a batched window [B, T, C, H, W].
/// Indices before the first frame replicate frame 1.
template <typename T>
Tensor<T> batch_clip(const Tensor<T>& window, int t, int L) {
    require(window.rank() == 5, "batch_clip: window must be [B, T, C, H, W]");
    const int B = window.dim(0), Tn = window.dim(1);
    if (t < 1 || t > Tn) throw IndexError("batch_clip: t=" + std::to_string(t) + " outside [1, " + std::to_string(Tn) + "]");
    const std::size_t frame = window.numel() / (static_cast<std::size_t>(B) * Tn);
    Shape s = window.shape();
    s[1] = L;
    Tensor<T> out(s);
    for (int b = 0; b < B; ++b)
        for (int l = 0; l < L; ++l) {
            const int src = std::max(t - L + 1 + l, 1) - 1;
            std::copy_n(window.data() + (static_cast<std::size_t>(b) * Tn + src) * frame, frame,
                        out.data() + (static_cast<std::size_t>(b) * L + l) * frame);
        }
    return out;
}

/// Frame t (1-based) of every batch element: [B, C, H, W].
template <typename T>
Tensor<T> batch_frame(const Tensor<T>& window, int t) {
    const int B = window.dim(0), Tn = window.dim(1);
    const std::size_t frame = window.numel() / (static_cast<std::size_t>(B) * Tn);
    Shape s(window.shape().begin() + 2, window.shape().end());
    s.insert(s.begin(), B);
    Tensor<T> out(s);
    for (int b = 0; b < B; ++b)
        std::copy_n(window.data() + (static_cast<std::size_t>(b) * Tn + (t - 1)) * frame, frame,
                    out.data() + static_cast<std::size_t>(b) * frame);
    return out;
}

/// Observation points for tests: every clip fed to the predictor during a
/// training step, with the recurrent states it is paired with.
template <typename T>
struct TrainHooks {
    std::function<void(int t, const Tensor<T>& clip, const std::vector<LayerState<T>>& states)> on_clip;
};

/// Autoregressive rollout. context: [B, N, C, H, W]. The context is consumed
/// with ground-truth clips; afterwards each prediction is appended and feeds
/// later clips. Returns [B, horizon, C, H, W] = predictions of frames N+1..N+horizon.
template <typename T>
Tensor<T> rollout(const Predictor<T>& model, const Tensor<T>& context, int horizon) {
    if (horizon < 1) throw ValidationError("rollout: horizon must be >= 1, got " + std::to_string(horizon));
    require(context.rank() == 5, "rollout: context must be [B, N, C, H, W], got " + shape_str(context.shape()));
    NoGradGuard no_grad;
    const int B = context.dim(0), N = context.dim(1);
    const int L = model.config().clip_length;
    Shape fs(context.shape().begin() + 2, context.shape().end());
    const std::size_t frame = shape_numel(fs);

    // Growing buffer of available frames (ground truth, then predictions).
    Shape ws = context.shape();
    ws[1] = N + horizon;
    Tensor<T> window(ws);
    for (int b = 0; b < B; ++b)
        std::copy_n(context.data() + static_cast<std::size_t>(b) * N * frame, static_cast<std::size_t>(N) * frame,
                    window.data() + static_cast<std::size_t>(b) * (N + horizon) * frame);

    Shape os = context.shape();
    os[1] = horizon;
    Tensor<T> out(os);
    auto states = model.initial_states(B);
    for (int t = 1; t < N + horizon; ++t) {
        StepOutput<T> step = model.predict_next_frame(batch_clip(window, t, L), states);
        states = std::move(step.states);
        if (t < N) continue;
        const Tensor<T>& pred = step.frame.value();
        const int k = t - N;  // index into predictions
        for (int b = 0; b < B; ++b) {
            const T* src = pred.data() + static_cast<std::size_t>(b) * frame;
            std::copy_n(src, frame, out.data() + (static_cast<std::size_t>(b) * horizon + k) * frame);
            std::copy_n(src, frame, window.data() + (static_cast<std::size_t>(b) * (N + horizon) + t) * frame);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (little-endian): "STIPCKPT", u32 version, u32 scalar bytes,
// u64 length + resolved config JSON, u64 step, u64 length + RNG state text,
// then for the predictor and the discriminator in turn: u32 tensor count,
// per tensor (u32 name length, name, u32 rank, u32 dims, values), u64 Adam
// step count, first moments, second moments (values only). Trailer: u64
// FNV-1a hash of every preceding byte.

inline constexpr std::array<char, 8> kCheckpointMagic = {'S', 'T', 'I', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct CheckpointGroup {
    std::vector<CheckpointTensor> params;
    std::uint64_t adam_steps = 0;
    std::vector<std::vector<double>> first_moments, second_moments;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::uint32_t scalar_bytes = 4;
    nlohmann::json config;
    std::uint64_t step = 0;
    std::string rng_state;
    CheckpointGroup predictor, discriminator;
};

namespace detail {

inline std::uint64_t fnv1a(const unsigned char* p, std::size_t n) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

class ByteWriter {
public:
    void raw(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        bytes.insert(bytes.end(), c, c + n);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    void scalars(const std::vector<double>& v, std::uint32_t width) {
        for (double d : v) {
            if (width == 4) u32(std::bit_cast<std::uint32_t>(static_cast<float>(d)));
            else u64(std::bit_cast<std::uint64_t>(d));
        }
    }
    std::vector<unsigned char> bytes;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<unsigned char>& b, std::size_t limit) : b_(b), limit_(limit) {}
    void need(std::size_t n, const char* what) const {
        if (pos_ + n > limit_) throw FormatError(std::string("truncated checkpoint while reading ") + what, pos_);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::string str(const char* what) {
        const std::uint64_t n = u64(what);
        if (n > limit_) throw FormatError(std::string("implausible length for ") + what, pos_ - 8);
        need(static_cast<std::size_t>(n), what);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), static_cast<std::size_t>(n));
        pos_ += static_cast<std::size_t>(n);
        return s;
    }
    std::vector<double> scalars(std::size_t count, std::uint32_t width, const char* what) {
        need(count * width, what);
        std::vector<double> out(count);
        for (auto& d : out) d = width == 4 ? static_cast<double>(std::bit_cast<float>(u32(what))) : std::bit_cast<double>(u64(what));
        return out;
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const noexcept { return pos_; }

private:
    const std::vector<unsigned char>& b_;
    std::size_t limit_;
    std::size_t pos_ = 0;
};

inline void write_group(ByteWriter& w, const CheckpointGroup& g, std::uint32_t width) {
    w.u32(static_cast<std::uint32_t>(g.params.size()));
    for (const auto& p : g.params) {
        w.u32(static_cast<std::uint32_t>(p.name.size()));
        w.raw(p.name.data(), p.name.size());
        w.u32(static_cast<std::uint32_t>(p.shape.size()));
        for (int d : p.shape) w.u32(static_cast<std::uint32_t>(d));
        w.scalars(p.values, width);
    }
    w.u64(g.adam_steps);
    for (const auto& m : g.first_moments) w.scalars(m, width);
    for (const auto& v : g.second_moments) w.scalars(v, width);
}

inline CheckpointGroup read_group(ByteReader& r, std::uint32_t width) {
    CheckpointGroup g;
    const std::uint32_t count = r.u32("tensor count");
    if (count > (1u << 20)) throw FormatError("implausible tensor count", r.pos() - 4);
    std::vector<std::size_t> sizes;
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointTensor t;
        const std::uint32_t nlen = r.u32("name length");
        t.name = r.bytes(nlen, "tensor name");
        const std::uint32_t rank = r.u32("tensor rank");
        if (rank > 8) throw FormatError("implausible tensor rank", r.pos() - 4);
        std::uint64_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const std::uint32_t v = r.u32("tensor dims");
            n *= v;
            if (n > (std::uint64_t{1} << 36)) throw FormatError("implausible tensor size", r.pos() - 4);
            t.shape.push_back(static_cast<int>(v));
        }
        t.values = r.scalars(static_cast<std::size_t>(n), width, "tensor values");
        sizes.push_back(static_cast<std::size_t>(n));
        g.params.push_back(std::move(t));
    }
    g.adam_steps = r.u64("optimizer step count");
    for (std::size_t n : sizes) g.first_moments.push_back(r.scalars(n, width, "optimizer moments"));
    for (std::size_t n : sizes) g.second_moments.push_back(r.scalars(n, width, "optimizer moments"));
    return g;
}

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
    detail::ByteWriter w;
    w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
    w.u32(c.version);
    w.u32(c.scalar_bytes);
    w.str(c.config.dump());
    w.u64(c.step);
    w.str(c.rng_state);
    detail::write_group(w, c.predictor, c.scalar_bytes);
    detail::write_group(w, c.discriminator, c.scalar_bytes);
    w.u64(detail::fnv1a(w.bytes.data(), w.bytes.size()));
    return std::move(w.bytes);
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& b) {
    if (b.size() < kCheckpointMagic.size() || std::memcmp(b.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
        throw FormatError("bad magic: not a checkpoint file", 0);
    if (b.size() < kCheckpointMagic.size() + 8 + 8) throw FormatError("truncated checkpoint header", b.size());
    const std::size_t body = b.size() - 8;
    detail::ByteReader r(b, body);
    r.bytes(kCheckpointMagic.size(), "magic");
    Checkpoint c;
    c.version = r.u32("version");
    if (c.version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(c.version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")",
                          8);
    c.scalar_bytes = r.u32("scalar width");
    if (c.scalar_bytes != 4 && c.scalar_bytes != 8) throw FormatError("invalid scalar width", 12);
    const std::string cfg = r.str("config");
    try {
        c.config = nlohmann::json::parse(cfg);
    } catch (const nlohmann::json::exception&) {
        throw FormatError("corrupt config section", 16);
    }
    c.step = r.u64("step");
    c.rng_state = r.str("rng state");
    c.predictor = detail::read_group(r, c.scalar_bytes);
    c.discriminator = detail::read_group(r, c.scalar_bytes);
    if (r.pos() != body) throw FormatError("unexpected bytes before checksum", r.pos());
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(b[body + static_cast<std::size_t>(i)]) << (8 * i);
    if (stored != detail::fnv1a(b.data(), body)) throw FormatError("checksum mismatch (corrupt checkpoint)", body);
    return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    detail::write_file(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(detail::read_file(path)); }

// ---------------------------------------------------------------------------
// Trainer

/// Owns predictor, discriminator, both optimizers and the sampling RNG.
template <typename T>
class Trainer {
public:
    explicit Trainer(const RunConfig& cfg) : Trainer(cfg, Rng(cfg.train.seed)) {}

    const RunConfig& config() const noexcept { return cfg_; }
    Predictor<T>& model() noexcept { return model_; }
    const Predictor<T>& model() const noexcept { return model_; }
    DiscriminatorParams<T>& discriminator() noexcept { return disc_; }
    const DiscriminatorParams<T>& discriminator() const noexcept { return disc_; }
    Adam<T>& predictor_optimizer() noexcept { return opt_p_; }
    Adam<T>& discriminator_optimizer() noexcept { return opt_d_; }
    std::uint64_t step() const noexcept { return step_; }
    Rng& rng() noexcept { return rng_; }
    TrainHooks<T>& hooks() noexcept { return hooks_; }

    /// Random batch of training windows [B, window, C, H, W] drawn with the trainer RNG.
    Tensor<T> sample_batch(const std::vector<VideoSequence>& data) {
        require(!data.empty(), "sample_batch: empty dataset");
        const int Tw = cfg_.train.window_length();
        const int stride = cfg_.data.window_stride;
        std::vector<Tensor<T>> windows;
        for (int b = 0; b < cfg_.train.batch; ++b) {
            const auto& seq = data[static_cast<std::size_t>(rng_() % data.size())];
            if (seq.length() < Tw)
                throw ValidationError("sequence " + seq.sequence_id + " has " + std::to_string(seq.length()) +
                                      " frames, training window needs " + std::to_string(Tw));
            const int starts = (seq.length() - Tw) / stride + 1;
            const int s = static_cast<int>(rng_() % static_cast<std::uint64_t>(starts)) * stride;
            windows.push_back(seq.frames.slice0(s, s + Tw).template cast<T>());
        }
        return stack0(windows);
    }

    /// One step: teacher-forced unroll over the window, discriminator update,
    /// then predictor update on mse + gamma1 * gan_P + gamma2 * lp.
    LossBundle train_step(const Tensor<T>& window) {
        const TrainConfig& tc = cfg_.train;
        require(window.rank() == 5, "train_step: window must be [B, T, C, H, W], got " + shape_str(window.shape()));
        const int B = window.dim(0), Tn = window.dim(1);
        if (Tn < tc.window_length())
            throw ValidationError("train_step: window has " + std::to_string(Tn) + " frames, need input_horizon + " +
                                  "predict_horizon_train = " + std::to_string(tc.window_length()));

        std::vector<Var<T>> truth, pred;
        {
            auto states = model_.initial_states(B);
            const int first_supervised = tc.loss_frames == "last" ? Tn : 2;
            for (int t = 1; t < Tn; ++t) {
                const Tensor<T> clip = batch_clip(window, t, model_.config().clip_length);
                if (hooks_.on_clip) hooks_.on_clip(t, clip, states);
                StepOutput<T> out = model_.predict_next_frame(clip, states);
                states = std::move(out.states);
                if (t + 1 >= first_supervised) {
                    pred.push_back(out.frame);
                    truth.push_back(constant(batch_frame(window, t + 1)));
                }
            }
        }

        // Discriminator: predictions enter as constants.
        std::vector<Var<T>> fake;
        for (const auto& p : pred) fake.push_back(p.detach());
        opt_d_.zero_grad();
        const Var<T> loss_d = gan_loss_D(truth, fake, disc_);
        check_finite(loss_d, "gan_D");
        backward(loss_d);
        opt_d_.step();
        opt_d_.zero_grad();

        // Predictor, against the updated discriminator.
        opt_p_.zero_grad();
        const Var<T> l_mse = mse_loss(truth, pred);
        Var<T> l_gan, l_lp;
        {
            std::optional<NoGradGuard> off;
            if (tc.gamma1 == 0) off.emplace();
            l_gan = gan_loss_P(tc.gamma1 == 0 ? fake : pred, disc_);
        }
        {
            std::optional<NoGradGuard> off;
            if (tc.gamma2 == 0) off.emplace();
            l_lp = lp_loss(truth, tc.gamma2 == 0 ? fake : pred, disc_);
        }
        TotalLoss<T> total = total_loss(l_mse, l_gan, l_lp, tc.gamma1, tc.gamma2);
        check_finite(total.total, "total");
        backward(total.total);
        opt_p_.step();
        opt_p_.zero_grad();
        opt_d_.zero_grad();

        total.bundle.gan_D = static_cast<double>(loss_d.item());
        ++step_;
        return total.bundle;
    }

    Checkpoint to_checkpoint() const {
        Checkpoint c;
        c.scalar_bytes = sizeof(T);
        c.config = to_json(cfg_);
        c.step = step_;
        std::ostringstream os;
        os << rng_;
        c.rng_state = os.str();
        c.predictor = export_group(opt_p_);
        c.discriminator = export_group(opt_d_);
        return c;
    }

    /// Restore parameters, optimizer moments, step and RNG. The architecture
    /// must match; mismatched tensors raise ValidationError.
    void restore(const Checkpoint& c) {
        const RunConfig other = run_config_from_json(c.config);
        if (to_json(other.model) != to_json(cfg_.model))
            throw ValidationError("checkpoint architecture " + to_json(other.model).dump() + " does not match " +
                                  to_json(cfg_.model).dump());
        import_group(c.predictor, opt_p_, "predictor");
        import_group(c.discriminator, opt_d_, "discriminator");
        step_ = c.step;
        std::istringstream is(c.rng_state);
        is >> rng_;
        if (!is) throw FormatError("corrupt RNG state in checkpoint", 0);
    }

    static Trainer from_checkpoint(const Checkpoint& c) {
        Trainer t(run_config_from_json(c.config));
        t.restore(c);
        return t;
    }

private:
    Trainer(const RunConfig& cfg, Rng rng)
        : cfg_(validated(cfg)),
          rng_(std::move(rng)),
          model_(cfg_.model, rng_),
          disc_(DiscriminatorParams<T>::init(cfg_.model, rng_)),
          opt_p_(model_.params(), {cfg_.train.lr_p, cfg_.train.beta1, cfg_.train.beta2, 1e-8, cfg_.train.clip_norm}),
          opt_d_(disc_.params(), {cfg_.train.lr_d, cfg_.train.beta1, cfg_.train.beta2, 1e-8, cfg_.train.clip_norm}) {}

    static const RunConfig& validated(const RunConfig& c) {
        c.validate();
        return c;
    }

    static void check_finite(const Var<T>& v, const char* name) {
        if (!v.value().all_finite())
            throw NumericError(std::string("non-finite ") + name + " loss (" + std::to_string(static_cast<double>(v.item())) + ")");
    }

    static CheckpointGroup export_group(const Adam<T>& opt) {
        CheckpointGroup g;
        for (const auto& p : opt.params())
            g.params.push_back({p.name, p.var.shape(), std::vector<double>(p.var.value().vec().begin(), p.var.value().vec().end())});
        g.adam_steps = opt.steps();
        for (const auto& m : opt.first_moments()) g.first_moments.emplace_back(m.vec().begin(), m.vec().end());
        for (const auto& v : opt.second_moments()) g.second_moments.emplace_back(v.vec().begin(), v.vec().end());
        return g;
    }

    static void import_group(const CheckpointGroup& g, Adam<T>& opt, const char* which) {
        auto& params = const_cast<ParamList<T>&>(opt.params());
        if (g.params.size() != params.size())
            throw ValidationError(std::string("checkpoint ") + which + " has " + std::to_string(g.params.size()) +
                                  " tensors, model has " + std::to_string(params.size()));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& src = g.params[i];
            auto& dst = params[i];
            if (src.name != dst.name || src.shape != dst.var.shape())
                throw ValidationError(std::string("checkpoint ") + which + " tensor " + src.name + shape_str(src.shape) +
                                      " does not match model tensor " + dst.name + shape_str(dst.var.shape()));
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto copy = [](const std::vector<double>& from, Tensor<T>& to) {
                for (std::size_t k = 0; k < to.numel(); ++k) to[k] = static_cast<T>(from[k]);
            };
            copy(g.params[i].values, params[i].var.mutable_value());
            copy(g.first_moments[i], opt.first_moments()[i]);
            copy(g.second_moments[i], opt.second_moments()[i]);
        }
        opt.set_steps(g.adam_steps);
    }

    RunConfig cfg_;
    Rng rng_;
    Predictor<T> model_;
    DiscriminatorParams<T> disc_;
    Adam<T> opt_p_;
    Adam<T> opt_d_;
    std::uint64_t step_ = 0;
    TrainHooks<T> hooks_;
};

}  // namespace stip
