#include "classkit/trainer.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"

namespace classkit {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::LARS ? "lars" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "lars" || s == "LARS") return OptimizerKind::LARS;
    if (s == "sgd" || s == "SGD") return OptimizerKind::SGD;
    throw ValidationError("unknown optimizer '" + s + "' (expected lars|sgd)");
}

void TrainConfig::validate() const {
    if (batch_size < 2) throw ValidationError("batch_size must be >= 2");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
    if (!(tau > 0.0)) throw ValidationError("tau must be > 0");
    if (!(grad_clip_norm > 0.0)) throw ValidationError("grad_clip_norm must be > 0");
    if (!(ema_power > 0.0 && ema_power <= 1.0)) throw ValidationError("ema_power must lie in (0, 1]");
    if (!(trust_coeff > 0.0)) throw ValidationError("trust_coeff must be > 0");
    if (window_stride == 0) throw ValidationError("window_stride must be >= 1");
    augment.validate();
}

std::string TrainConfig::canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "B=" << batch_size << ";lr=" << learning_rate << ";mom=" << momentum << ";wd=" << weight_decay
       << ";tau=" << tau << ";epochs=" << epochs << ";warmup=" << warmup_steps << ";clip=" << grad_clip_norm
       << ";ema=" << ema_power << ";seed=" << seed << ";opt=" << to_string(optimizer) << ";trust=" << trust_coeff
       << ";noise=" << augment.noise_sigma << ";mask=" << augment.mask_prob << ";stride=" << window_stride;
    return os.str();
}

Batch build_batch(const Dataset& dataset, std::span<const WindowIndex> windows, const SoftWeights& weights,
                  std::size_t batch_size, std::mt19937_64& rng) {
    const std::size_t n = windows.size();
    if (batch_size < 2 || batch_size > n)
        throw ValidationError("batch size " + std::to_string(batch_size) + " outside [2, " + std::to_string(n) + "]");
    if (weights.window_count() != n)
        throw ValidationError("pair table covers " + std::to_string(weights.window_count()) + " windows, dataset has " +
                              std::to_string(n));

    std::vector<char> taken(n, 0);
    std::vector<std::size_t> chosen;
    chosen.reserve(batch_size);
    auto uniform_free = [&] {
        std::uniform_int_distribution<std::size_t> u(0, n - 1);
        for (;;) {
            const std::size_t k = u(rng);
            if (!taken[k]) return k;
        }
    };
    auto take = [&](std::size_t k) {
        taken[k] = 1;
        chosen.push_back(k);
    };

    const std::size_t anchors = batch_size / 2;
    std::vector<std::uint64_t> free_pos;
    for (std::size_t a = 0; a < anchors; ++a) {
        if (chosen.size() >= batch_size) break;
        const std::size_t anchor = uniform_free();
        take(anchor);
        if (chosen.size() >= batch_size) break;
        free_pos.clear();
        for (const auto& [j, w] : weights.positives(anchor))
            if (!taken[j]) free_pos.push_back(j);
        if (!free_pos.empty()) {
            std::uniform_int_distribution<std::size_t> u(0, free_pos.size() - 1);
            take(free_pos[u(rng)]);
        }
    }
    while (chosen.size() < batch_size) take(uniform_free());

    Batch b;
    b.ordinals = chosen;
    b.obs = Matrix(batch_size, dataset.obs_dim());
    b.weights = Matrix(batch_size, batch_size);
    for (std::size_t r = 0; r < batch_size; ++r) {
        const auto& obs = observation_at(dataset, windows[chosen[r]]).first;
        std::copy(obs.begin(), obs.end(), b.obs.row(r).begin());
        for (std::size_t c = r + 1; c < batch_size; ++c) {
            const double w = weights.weight(chosen[r], chosen[c]);
            b.weights(r, c) = w;
            b.weights(c, r) = w;
        }
    }
    return b;
}

namespace {

template <typename Update>
void for_each_layer(ParamVector& params, std::span<const double> grads, Vec& velocity, Update&& update) {
    if (grads.size() != params.size()) throw ValidationError("gradient length differs from parameter length");
    if (velocity.size() != params.size()) velocity.assign(params.size(), 0.0);
    if (!all_finite(grads)) {
        std::size_t bad = 0;
        while (bad < grads.size() && std::isfinite(grads[bad])) ++bad;
        throw NumericError("non-finite gradient at parameter " + std::to_string(bad));
    }
    for (const auto& L : params.layers) {
        // Weights and biases of a layer are contiguous.
        const std::size_t begin = L.weight_offset;
        const std::size_t end = L.bias_offset + L.out;
        update(std::span<double>(params.values.data() + begin, end - begin), grads.subspan(begin, end - begin),
               std::span<double>(velocity.data() + begin, end - begin));
    }
}

}  // namespace

void lars_step(ParamVector& params, std::span<const double> grads, Vec& velocity, const OptimizerOptions& opt) {
    for_each_layer(params, grads, velocity, [&](std::span<double> w, std::span<const double> g, std::span<double> v) {
        const double wn = norm2(w);
        const double gn = norm2(g);
        const double ratio = wn > 0.0 ? opt.trust_coeff * wn / (gn + opt.weight_decay * wn + opt.eps) : 1.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            v[k] = opt.momentum * v[k] + opt.lr * ratio * (g[k] + opt.weight_decay * w[k]);
            w[k] -= v[k];
        }
    });
}

void sgd_step(ParamVector& params, std::span<const double> grads, Vec& velocity, const OptimizerOptions& opt) {
    for_each_layer(params, grads, velocity, [&](std::span<double> w, std::span<const double> g, std::span<double> v) {
        for (std::size_t k = 0; k < w.size(); ++k) {
            v[k] = opt.momentum * v[k] + opt.lr * (g[k] + opt.weight_decay * w[k]);
            w[k] -= v[k];
        }
    });
}

double ema_decay(std::uint64_t step, double power) {
    return std::min(1.0 - std::pow(1.0 + static_cast<double>(step), -power), 0.9999);
}

void ema_update(ParamVector& ema, const ParamVector& params, std::uint64_t step, double power) {
    if (step < 1) throw ValidationError("ema_update needs step >= 1");
    if (ema.size() != params.size()) throw ValidationError("EMA and parameter lengths differ");
    const double d = ema_decay(step, power);
    for (std::size_t k = 0; k < ema.size(); ++k) ema.values[k] = d * ema.values[k] + (1.0 - d) * params.values[k];
}

double scheduled_lr(std::size_t step, std::size_t total_steps, double base_lr, std::size_t warmup) {
    if (warmup > 0 && step <= warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
    if (total_steps <= warmup) return base_lr;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

double clip_global_norm(std::span<double> grads, double max_norm) {
    const double n = norm2(grads);
    if (n > max_norm) {
        const double s = max_norm / n;
        for (double& g : grads) g *= s;
    }
    return n;
}

namespace {

std::vector<WindowIndex> window_handles(const Dataset& dataset, std::size_t stride) {
    std::vector<WindowIndex> out;
    for (std::size_t d = 0; d < dataset.size(); ++d)
        for (std::size_t t = 0; t < dataset.demos[d].length(); t += stride) out.push_back({d, t});
    return out;
}

void apply_optimizer(const TrainConfig& cfg, double lr, ParamVector& params, std::span<const double> grads, Vec& velocity) {
    const OptimizerOptions opt{lr, cfg.momentum, cfg.weight_decay, cfg.trust_coeff, 1e-9};
    if (cfg.optimizer == OptimizerKind::LARS)
        lars_step(params, grads, velocity, opt);
    else
        sgd_step(params, grads, velocity, opt);
}

Matrix augment_rows(const Matrix& obs, const AugmentConfig& aug, std::mt19937_64& rng) {
    Matrix out(obs.rows, obs.cols);
    for (std::size_t r = 0; r < obs.rows; ++r) {
        const Vec a = augment(obs.row(r), aug, rng);
        std::copy(a.begin(), a.end(), out.row(r).begin());
    }
    return out;
}

}  // namespace

TrainResult train_class(const Dataset& dataset, const PairTable& table, const SoftWeights& weights,
                        const EncoderSpec& spec, const TrainConfig& cfg, const StepLogger& log,
                        const EpochHook& on_epoch) {
    cfg.validate();
    spec.validate();
    if (dataset.empty()) throw ValidationError("training needs a nonempty dataset");
    if (spec.input_dim != dataset.obs_dim())
        throw ValidationError("encoder input_dim " + std::to_string(spec.input_dim) + " != observation dim " +
                              std::to_string(dataset.obs_dim()));
    const auto windows = window_handles(dataset, cfg.window_stride);
    if (table.window_count != windows.size() || weights.window_count() != windows.size())
        throw ValidationError("pair table was mined over " + std::to_string(table.window_count) +
                              " windows but the dataset yields " + std::to_string(windows.size()));
    if (cfg.batch_size > windows.size()) throw ValidationError("batch_size exceeds window count");

    TrainResult res;
    auto& ck = res.checkpoint;
    ck.params = init_encoder(spec, derive_seed(cfg.seed, 0));
    ck.ema = ck.params;
    ck.velocity.assign(ck.params.size(), 0.0);
    ck.config_hash = cfg.hash();

    std::mt19937_64 rng(derive_seed(cfg.seed, 1));
    const std::size_t steps_per_epoch = std::max<std::size_t>(1, windows.size() / cfg.batch_size);
    const std::size_t total = cfg.epochs * steps_per_epoch;
    res.loss_trace.reserve(total);

    ForwardCache cache;
    for (std::size_t step = 1; step <= total; ++step) {
        const Batch batch = build_batch(dataset, windows, weights, cfg.batch_size, rng);
        const Matrix obs = augment_rows(batch.obs, cfg.augment, rng);
        const Matrix z = encode(ck.params, obs, cache);
        const NormalizedRows nz = normalize_rows(z);
        const BatchSimilarity sim = similarity_matrix(nz.unit, cfg.tau);

        bool any_active = false;
        for (std::size_t r = 0; r < batch.weights.rows && !any_active; ++r)
            for (std::size_t c = 0; c < batch.weights.cols; ++c)
                if (batch.weights(r, c) > 0.0) {
                    any_active = true;
                    break;
                }
        const double lr = scheduled_lr(step, total, cfg.learning_rate, cfg.warmup_steps);
        if (any_active) {
            const LossReport rep = soft_infonce(sim, batch.weights);
            if (!std::isfinite(rep.mean_loss))
                throw NumericError("non-finite contrastive loss at step " + std::to_string(step));
            const Matrix grad_unit = soft_infonce_grad(sim, batch.weights, nz.unit);
            const Matrix grad_z = normalize_backward(nz, grad_unit);
            Vec grads = backward(ck.params, cache, grad_z).params;
            clip_global_norm(grads, cfg.grad_clip_norm);
            apply_optimizer(cfg, lr, ck.params, grads, ck.velocity);
            res.loss_trace.push_back(rep.mean_loss);
        } else {
            // A batch without any in-batch positive carries no signal.
            res.loss_trace.push_back(std::numeric_limits<double>::quiet_NaN());
        }
        ck.step = step;
        ema_update(ck.ema, ck.params, step, cfg.ema_power);
        if (log) log(step, res.loss_trace.back(), lr);
        if (on_epoch && step % steps_per_epoch == 0) on_epoch(step / steps_per_epoch, ck);
    }
    return res;
}

TrainResult train_bc(const Dataset& dataset, const EncoderSpec& spec, const std::vector<std::size_t>& head_dims,
                     std::size_t horizon, const TrainConfig& cfg, const StepLogger& log,
                     const EpochHook& on_epoch) {
    cfg.validate();
    spec.validate();
    if (dataset.empty()) throw ValidationError("training needs a nonempty dataset");
    if (horizon == 0) throw ValidationError("BC horizon must be >= 1");
    if (spec.input_dim != dataset.obs_dim()) throw ValidationError("encoder input_dim does not match observations");
    const auto windows = window_handles(dataset, cfg.window_stride);
    if (cfg.batch_size > windows.size()) throw ValidationError("batch_size exceeds window count");

    const std::size_t adim = dataset.action_dim();
    const std::size_t pdim = dataset.proprio_dim();
    const EncoderSpec head_spec{spec.output_dim + pdim, head_dims, horizon * adim, spec.activation};

    TrainResult res;
    auto& ck = res.checkpoint;
    ck.params = init_encoder(spec, derive_seed(cfg.seed, 0));
    ck.ema = ck.params;
    ck.velocity.assign(ck.params.size(), 0.0);
    ck.config_hash = cfg.hash();
    HeadState head;
    head.params = init_encoder(head_spec, derive_seed(cfg.seed, 2));
    head.ema = head.params;
    head.velocity.assign(head.params.size(), 0.0);
    head.horizon = horizon;
    head.action_dim = adim;

    std::mt19937_64 rng(derive_seed(cfg.seed, 1));
    const std::size_t B = cfg.batch_size;
    const std::size_t steps_per_epoch = std::max<std::size_t>(1, windows.size() / B);
    const std::size_t total = cfg.epochs * steps_per_epoch;
    std::vector<std::size_t> order(windows.size());

    ForwardCache enc_cache, head_cache;
    for (std::size_t step = 1; step <= total; ++step) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t k = 0; k < B; ++k) {
            std::uniform_int_distribution<std::size_t> u(k, order.size() - 1);
            std::swap(order[k], order[u(rng)]);
        }
        Matrix obs(B, spec.input_dim);
        Matrix proprio(B, pdim);
        Matrix target(B, horizon * adim);
        for (std::size_t r = 0; r < B; ++r) {
            const WindowIndex idx = windows[order[r]];
            const auto [o, p] = observation_at(dataset, idx);
            std::copy(o.begin(), o.end(), obs.row(r).begin());
            std::copy(p.begin(), p.end(), proprio.row(r).begin());
            const ActionWindow w = action_window(dataset, idx, horizon);
            for (std::size_t s = 0; s < horizon; ++s)
                std::copy(w.actions[s].begin(), w.actions[s].end(), target.row(r).begin() + static_cast<std::ptrdiff_t>(s * adim));
        }
        const Matrix aug = augment_rows(obs, cfg.augment, rng);
        const Matrix z = encode(ck.params, aug, enc_cache);
        Matrix head_in(B, head_spec.input_dim);
        for (std::size_t r = 0; r < B; ++r) {
            std::copy(z.row(r).begin(), z.row(r).end(), head_in.row(r).begin());
            std::copy(proprio.row(r).begin(), proprio.row(r).end(), head_in.row(r).begin() + static_cast<std::ptrdiff_t>(spec.output_dim));
        }
        const Matrix pred = encode(head.params, head_in, head_cache);

        const double denom = static_cast<double>(pred.data.size());
        double loss = 0.0;
        Matrix grad_pred(pred.rows, pred.cols);
        for (std::size_t k = 0; k < pred.data.size(); ++k) {
            const double e = pred.data[k] - target.data[k];
            loss += e * e;
            grad_pred.data[k] = 2.0 * e / denom;
        }
        loss /= denom;
        if (!std::isfinite(loss)) throw NumericError("non-finite BC loss at step " + std::to_string(step));

        const Gradients hg = backward(head.params, head_cache, grad_pred);
        Matrix grad_z(B, spec.output_dim);
        for (std::size_t r = 0; r < B; ++r)
            for (std::size_t c = 0; c < spec.output_dim; ++c) grad_z(r, c) = hg.input(r, c);
        const Vec eg = backward(ck.params, enc_cache, grad_z).params;

        // Clip over the joint (encoder, head) gradient.
        Vec all(eg.begin(), eg.end());
        all.insert(all.end(), hg.params.begin(), hg.params.end());
        clip_global_norm(all, cfg.grad_clip_norm);
        const std::span<const double> enc_g(all.data(), eg.size());
        const std::span<const double> head_g(all.data() + eg.size(), hg.params.size());

        const double lr = scheduled_lr(step, total, cfg.learning_rate, cfg.warmup_steps);
        apply_optimizer(cfg, lr, ck.params, enc_g, ck.velocity);
        apply_optimizer(cfg, lr, head.params, head_g, head.velocity);
        ck.step = step;
        ema_update(ck.ema, ck.params, step, cfg.ema_power);
        ema_update(head.ema, head.params, step, cfg.ema_power);
        res.loss_trace.push_back(loss);
        if (log) log(step, loss, lr);
        if (on_epoch && step % steps_per_epoch == 0) {
            Checkpoint snap = ck;
            snap.head = head;
            on_epoch(step / steps_per_epoch, snap);
        }
    }
    ck.head = std::move(head);
    return res;
}

Vec bc_predict(const Checkpoint& ckpt, std::span<const double> obs, std::span<const double> proprio, bool use_ema) {
    if (!ckpt.head) throw ValidationError("checkpoint has no regression head");
    const ParamVector& enc = use_ema ? ckpt.ema : ckpt.params;
    const ParamVector& head = use_ema ? ckpt.head->ema : ckpt.head->params;
    Matrix in(1, obs.size());
    std::copy(obs.begin(), obs.end(), in.data.begin());
    const Matrix z = encode(enc, in);
    Matrix hin(1, head.spec.input_dim);
    if (z.cols + proprio.size() != hin.cols) throw ValidationError("proprio dimension does not match the BC head");
    std::copy(z.data.begin(), z.data.end(), hin.data.begin());
    std::copy(proprio.begin(), proprio.end(), hin.data.begin() + static_cast<std::ptrdiff_t>(z.cols));
    return encode(head, hin).data;
}

namespace {

constexpr std::array<char, 8> kCkptMagic = {'C', 'L', 'S', 'K', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

void put_spec(std::string& out, const EncoderSpec& s) {
    binio::put<std::uint64_t>(out, s.input_dim);
    binio::put<std::uint64_t>(out, s.hidden_dims.size());
    for (auto h : s.hidden_dims) binio::put<std::uint64_t>(out, h);
    binio::put<std::uint64_t>(out, s.output_dim);
    binio::put<std::uint32_t>(out, s.activation == Activation::Tanh ? 0u : 1u);
}

EncoderSpec get_spec(binio::Reader& rd) {
    EncoderSpec s;
    s.input_dim = rd.get<std::uint64_t>();
    const auto nh = rd.get<std::uint64_t>();
    if (nh > 1024) throw CorruptFileError("checkpoint spec block is implausible");
    for (std::uint64_t k = 0; k < nh; ++k) s.hidden_dims.push_back(rd.get<std::uint64_t>());
    s.output_dim = rd.get<std::uint64_t>();
    const auto act = rd.get<std::uint32_t>();
    if (act > 1) throw CorruptFileError("checkpoint activation tag invalid");
    s.activation = act == 0 ? Activation::Tanh : Activation::Relu;
    try {
        s.validate();
    } catch (const ValidationError& e) {
        throw CorruptFileError(std::string("checkpoint spec invalid: ") + e.what());
    }
    return s;
}

void put_array(std::string& out, const Vec& v) {
    binio::put<std::uint64_t>(out, v.size());
    for (double x : v) binio::put<double>(out, x);
}

Vec get_array(binio::Reader& rd, std::size_t expected) {
    const auto n = rd.get<std::uint64_t>();
    if (n != expected) throw CorruptFileError("checkpoint array length mismatch");
    if (rd.remaining() / sizeof(double) < n) throw CorruptFileError("checkpoint truncated");
    Vec v(n);
    for (auto& x : v) x = rd.get<double>();
    return v;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
    if (ck.params.size() != ck.ema.size()) throw ValidationError("params and ema lengths differ");
    std::string out(kCkptMagic.data(), kCkptMagic.size());
    binio::put<std::uint32_t>(out, kCkptVersion);
    put_spec(out, ck.params.spec);
    put_array(out, ck.params.values);
    put_array(out, ck.ema.values);
    Vec vel = ck.velocity;
    vel.resize(ck.params.size(), 0.0);
    put_array(out, vel);
    binio::put<std::uint64_t>(out, ck.step);
    binio::put<std::uint64_t>(out, ck.config_hash);
    binio::put<std::uint8_t>(out, ck.head ? 1 : 0);
    if (ck.head) {
        const auto& h = *ck.head;
        put_spec(out, h.params.spec);
        binio::put<std::uint64_t>(out, h.horizon);
        binio::put<std::uint64_t>(out, h.action_dim);
        put_array(out, h.params.values);
        put_array(out, h.ema.values);
        Vec hv = h.velocity;
        hv.resize(h.params.size(), 0.0);
        put_array(out, hv);
    }
    return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const std::string bytes = serialize_checkpoint(ckpt);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint '" + path.string() + "'");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint '" + path.string() + "'");
    const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (in.size() < kCkptMagic.size() || std::memcmp(in.data(), kCkptMagic.data(), kCkptMagic.size()) != 0)
        throw CorruptFileError("'" + path.string() + "' is not a checkpoint (bad magic)");
    binio::Reader rd(in, "checkpoint");
    rd.skip(kCkptMagic.size());
    if (rd.get<std::uint32_t>() != kCkptVersion) throw CorruptFileError("unsupported checkpoint version");

    LoadedCheckpoint out;
    auto& ck = out.checkpoint;
    const EncoderSpec spec = get_spec(rd);
    ck.params = ParamVector{spec, layout_for(spec), {}};
    const std::size_t n = ck.params.layers.back().bias_offset + ck.params.layers.back().out;
    ck.params.values = get_array(rd, n);
    ck.ema = ParamVector{spec, ck.params.layers, get_array(rd, n)};
    ck.velocity = get_array(rd, n);
    ck.step = rd.get<std::uint64_t>();
    ck.config_hash = rd.get<std::uint64_t>();
    const auto has_head = rd.get<std::uint8_t>();
    if (has_head > 1) throw CorruptFileError("checkpoint head flag invalid");
    if (has_head) {
        HeadState h;
        const EncoderSpec hs = get_spec(rd);
        h.horizon = rd.get<std::uint64_t>();
        h.action_dim = rd.get<std::uint64_t>();
        h.params = ParamVector{hs, layout_for(hs), {}};
        const std::size_t hn = h.params.layers.back().bias_offset + h.params.layers.back().out;
        h.params.values = get_array(rd, hn);
        h.ema = ParamVector{hs, h.params.layers, get_array(rd, hn)};
        h.velocity = get_array(rd, hn);
        ck.head = std::move(h);
    }
    if (rd.remaining() != 0) throw CorruptFileError("checkpoint has trailing bytes");
    if (expected_hash && *expected_hash != ck.config_hash) {
        std::ostringstream os;
        os << "checkpoint config hash " << std::hex << ck.config_hash << " differs from expected " << *expected_hash;
        out.warnings.push_back(os.str());
    }
    return out;
}

}  // namespace classkit
