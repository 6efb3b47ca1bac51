#include "neureg/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "neureg/fourier.hpp"
#include "neureg/random.hpp"

namespace neureg {

namespace {

using nlohmann::json;

template <typename T>
void read_key(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw std::invalid_argument(where + ": unknown key '" + key + "'");
}

double loss_value(const LossTerms& t) { return t.total.item(); }

}  // namespace

// ---- config ----

void TrainConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (patience >= epochs) throw std::invalid_argument("TrainConfig: patience must be smaller than epochs");
    if (dg_patch_size == 0) throw std::invalid_argument("TrainConfig: dg_patch_size must be >= 1");
    if (!(head_std >= 0.0)) throw std::invalid_argument("TrainConfig: head_std must be >= 0");
    if (train_subjects < 2) throw std::invalid_argument("TrainConfig: need at least two training subjects");
    loss.validate();
    encoder.validate();
}

json to_json(const EncoderConfig& c) {
    return {{"patch_embed_size", c.patch_embed_size},
            {"embed_dim", c.embed_dim},
            {"depths", c.depths},
            {"heads", c.heads},
            {"window", c.window},
            {"mlp_ratio", c.mlp_ratio},
            {"band_dims", {c.band_dims.w, c.band_dims.h, c.band_dims.d}}};
}

EncoderConfig encoder_config_from_json(const json& j) {
    reject_unknown(j, {"patch_embed_size", "embed_dim", "depths", "heads", "window", "mlp_ratio", "band_dims"}, "encoder");
    EncoderConfig c;
    try {
        read_key(j, "patch_embed_size", c.patch_embed_size);
        read_key(j, "embed_dim", c.embed_dim);
        read_key(j, "depths", c.depths);
        read_key(j, "heads", c.heads);
        read_key(j, "window", c.window);
        read_key(j, "mlp_ratio", c.mlp_ratio);
        if (j.contains("band_dims")) {
            const auto b = j.at("band_dims").get<std::array<std::size_t, 3>>();
            c.band_dims = {b[0], b[1], b[2]};
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("encoder: ") + e.what());
    }
    c.validate();
    return c;
}

json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"similarity", to_string(c.loss.similarity)},
            {"lambda", c.loss.lambda},
            {"ncc_window", c.loss.ncc_window},
            {"epochs", c.epochs},
            {"patience", c.patience},
            {"seed", c.seed},
            {"use_dg", c.use_dg},
            {"dg_patch_size", c.dg_patch_size},
            {"head_std", c.head_std},
            {"train_domain", c.train_domain},
            {"train_subjects", c.train_subjects},
            {"val_subjects", c.val_subjects},
            {"encoder", to_json(c.encoder)}};
}

TrainConfig train_config_from_json(const json& j) {
    reject_unknown(j,
                   {"lr", "similarity", "lambda", "ncc_window", "epochs", "patience", "seed", "use_dg", "dg_patch_size", "head_std",
                    "train_domain", "train_subjects", "val_subjects", "encoder"},
                   "config");
    TrainConfig c;
    try {
        if (j.contains("similarity")) c.loss = LossConfig::defaults(similarity_from_string(j.at("similarity").get<std::string>()));
        read_key(j, "lambda", c.loss.lambda);
        read_key(j, "ncc_window", c.loss.ncc_window);
        read_key(j, "lr", c.lr);
        read_key(j, "epochs", c.epochs);
        read_key(j, "patience", c.patience);
        read_key(j, "seed", c.seed);
        read_key(j, "use_dg", c.use_dg);
        read_key(j, "dg_patch_size", c.dg_patch_size);
        read_key(j, "head_std", c.head_std);
        read_key(j, "train_domain", c.train_domain);
        read_key(j, "train_subjects", c.train_subjects);
        read_key(j, "val_subjects", c.val_subjects);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    if (j.contains("encoder")) c.encoder = encoder_config_from_json(j.at("encoder"));
    c.validate();
    return c;
}

// ---- optimiser ----

void adam_step(std::vector<std::vector<double>*> params, const std::vector<std::vector<double>>& grads, AdamState& state, double lr) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " tensors but " + std::to_string(grads.size()) + " gradients");
    for (std::size_t t = 0; t < params.size(); ++t)
        if (params[t]->size() != grads[t].size()) throw std::invalid_argument("adam_step: gradient " + std::to_string(t) + " has the wrong length");
    if (state.m.empty()) {
        for (const auto* p : params) {
            state.m.emplace_back(p->size(), 0.0);
            state.v.emplace_back(p->size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: optimizer state does not match parameters");
    for (std::size_t t = 0; t < params.size(); ++t)
        if (state.m[t].size() != params[t]->size()) throw std::invalid_argument("adam_step: optimizer moment " + std::to_string(t) + " has the wrong length");

    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& p = *params[t];
        auto& m = state.m[t];
        auto& v = state.v[t];
        const auto& g = grads[t];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
        }
    }
}

void adam_step(ModelParams& params, const std::vector<std::vector<double>>& grads, AdamState& state, double lr) {
    std::vector<std::vector<double>*> values;
    for (auto& p : params.list()) values.push_back(&p.value);
    adam_step(std::move(values), grads, state, lr);
}

// ---- training ----

Volume3 encoder_input(const Volume3& image, const TrainConfig& config) {
    return config.use_dg ? domain_generalize(image, config.dg_patch_size).volume : image;
}

LossTerms pair_loss(ad::Tape& tape, const SwinEncoder& encoder, const BoundParams& params, const Volume3& fixed,
                    const Volume3& moving, const Volume3& fixed_in, const Volume3& moving_in, const LossConfig& loss) {
    const Dims& d = fixed.dims();
    const ad::Tensor lowres = encoder.forward(tape, params, fixed_in, moving_in);
    const ad::Tensor field = fourier::decode(lowres, d);
    const ad::Tensor fixed_t = tape.constant({d.d, d.h, d.w}, fixed.data());
    const ad::Tensor moving_t = tape.constant({d.d, d.h, d.w}, moving.data());
    return total_loss(fixed_t, ad_ops::warp(moving_t, field), field, loss);
}

namespace {

struct PairIndex {
    std::size_t fixed, moving;
    bool fixed_val, moving_val;
};

double mean_loss(const std::vector<PairIndex>& pairs, const SwinEncoder& encoder, const ModelParams& params, const TrainingSet& data,
                 const std::vector<Volume3>& train_in, const std::vector<Volume3>& val_in, const LossConfig& loss) {
    double total = 0.0;
    for (const auto& p : pairs) {
        const Sample& f = p.fixed_val ? data.validation[p.fixed] : data.train[p.fixed];
        const Sample& m = p.moving_val ? data.validation[p.moving] : data.train[p.moving];
        const Volume3& fi = p.fixed_val ? val_in[p.fixed] : train_in[p.fixed];
        const Volume3& mi = p.moving_val ? val_in[p.moving] : train_in[p.moving];
        ad::Tape tape;
        const BoundParams bound(tape, params);
        total += loss_value(pair_loss(tape, encoder, bound, f.image, m.image, fi, mi, loss));
    }
    return pairs.empty() ? 0.0 : total / static_cast<double>(pairs.size());
}

}  // namespace

Checkpoint train(const TrainingSet& data, const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    if (data.train.size() < 2) throw std::invalid_argument("train: need at least two training subjects, got " + std::to_string(data.train.size()));
    const Dims dims = data.train.front().image.dims();
    for (const auto& s : data.train)
        if (!(s.image.dims() == dims)) throw std::invalid_argument("train: all volumes must share dims " + to_string(dims));
    for (const auto& s : data.validation)
        if (!(s.image.dims() == dims)) throw std::invalid_argument("train: all volumes must share dims " + to_string(dims));

    const SwinEncoder encoder(config.encoder);
    std::vector<Volume3> train_in, val_in;
    for (const auto& s : data.train) train_in.push_back(encoder_input(s.image, config));
    for (const auto& s : data.validation) val_in.push_back(encoder_input(s.image, config));

    std::vector<PairIndex> train_pairs, val_pairs;
    for (std::size_t f = 0; f < data.train.size(); ++f)
        for (std::size_t m = 0; m < data.train.size(); ++m)
            if (f != m) train_pairs.push_back({f, m, false, false});
    if (data.validation.size() >= 2) {
        for (std::size_t f = 0; f < data.validation.size(); ++f)
            for (std::size_t m = 0; m < data.validation.size(); ++m)
                if (f != m) val_pairs.push_back({f, m, true, true});
    } else if (data.validation.size() == 1) {
        for (std::size_t t = 0; t < data.train.size(); ++t) {
            val_pairs.push_back({0, t, true, false});
            val_pairs.push_back({t, 0, false, true});
        }
    }

    Checkpoint current;
    current.config = config;
    current.params = encoder.init_params(mix_seed(config.seed, 1), config.head_std);

    auto validation_loss = [&](double train_loss) {
        return val_pairs.empty() ? train_loss : mean_loss(val_pairs, encoder, current.params, data, train_in, val_in, config.loss);
    };

    const double initial_train = mean_loss(train_pairs, encoder, current.params, data, train_in, val_in, config.loss);
    EpochRecord record{0, initial_train, validation_loss(initial_train)};
    current.history.push_back(record);
    if (on_epoch) on_epoch(record);
    Checkpoint best = current;
    best.best_val_loss = record.val_loss;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng rng(mix_seed(config.seed, 1000 + epoch));
        std::vector<PairIndex> order = train_pairs;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        double epoch_loss = 0.0;
        for (std::size_t step = 0; step < order.size(); ++step) {
            const auto& p = order[step];
            ad::Tape tape;
            const BoundParams bound(tape, current.params);
            const LossTerms terms = pair_loss(tape, encoder, bound, data.train[p.fixed].image, data.train[p.moving].image, train_in[p.fixed],
                                              train_in[p.moving], config.loss);
            const double value = loss_value(terms);
            if (!std::isfinite(value)) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << " step " << step << " (fixed subject " << p.fixed << ", moving subject "
                    << p.moving << "): similarity=" << terms.similarity.item() << " regularizer=" << terms.regularizer.item();
                throw TrainingError(msg.str());
            }
            tape.backward(terms.total);
            adam_step(current.params, bound.gradients(), current.optimizer, config.lr);
            epoch_loss += value;
        }
        if (!current.params.all_finite()) throw TrainingError("non-finite parameters after epoch " + std::to_string(epoch));

        record = {epoch, epoch_loss / static_cast<double>(order.size()), 0.0};
        record.val_loss = validation_loss(record.train_loss);
        current.history.push_back(record);
        current.epoch = epoch;
        if (on_epoch) on_epoch(record);

        if (record.val_loss < best.best_val_loss) {
            best.params = current.params;
            best.optimizer = current.optimizer;
            best.best_epoch = epoch;
            best.best_val_loss = record.val_loss;
        } else if (epoch - best.best_epoch >= config.patience) {
            break;
        }
    }
    best.epoch = current.epoch;
    best.history = std::move(current.history);
    return best;
}

DeformationField predict_field(const Checkpoint& checkpoint, const Volume3& fixed, const Volume3& moving) {
    if (!(fixed.dims() == moving.dims()))
        throw std::invalid_argument("predict_field: fixed " + to_string(fixed.dims()) + " and moving " + to_string(moving.dims()) + " differ");
    const SwinEncoder encoder(checkpoint.config.encoder);
    ad::Tape tape;
    const BoundParams bound(tape, checkpoint.params);
    const ad::Tensor lowres =
        encoder.forward(tape, bound, encoder_input(fixed, checkpoint.config), encoder_input(moving, checkpoint.config));
    const auto values = lowres.value();
    return fourier::decode(values, checkpoint.config.encoder.resolve_band(fixed.dims()), fixed.dims());
}

// ---- evaluation ----

MetricSummary summarize(const std::vector<double>& values) {
    MetricSummary s;
    if (values.empty()) return s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

CrossDomainReport evaluate_cross_domain(const Checkpoint& checkpoint, const std::vector<TestPair>& pairs, std::size_t threads) {
    CrossDomainReport report;
    report.pairs.resize(pairs.size());
    auto run = [&](std::size_t i) {
        const TestPair& tp = pairs[i];
        if (!tp.fixed || !tp.moving) throw std::invalid_argument("evaluate_cross_domain: pair " + std::to_string(i) + " has no volumes");
        const DeformationField field = predict_field(checkpoint, tp.fixed->image, tp.moving->image);
        PairResult& r = report.pairs[i];
        r.domain = tp.domain;
        r.fixed_subject = tp.fixed_subject;
        r.moving_subject = tp.moving_subject;
        r.ssim = ssim3(tp.fixed->image, warp_trilinear(tp.moving->image, field));
        r.dice = dice(tp.fixed->labels, warp_labels(tp.moving->labels, field)).mean;
        r.baseline_ssim = ssim3(tp.fixed->image, tp.moving->image);
        r.baseline_dice = dice(tp.fixed->labels, tp.moving->labels).mean;
        r.jacobian = jacobian_stats(field);
    };
    threads = std::max<std::size_t>(1, std::min(threads, pairs.size()));
    if (threads == 1) {
        for (std::size_t i = 0; i < pairs.size(); ++i) run(i);
    } else {
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(threads);
        for (std::size_t t = 0; t < threads; ++t)
            workers.emplace_back([&, t] {
                try {
                    for (std::size_t i = t; i < pairs.size(); i += threads) run(i);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        for (auto& w : workers) w.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    std::vector<double> ssim, dsc, bssim, bdsc, jac, fold;
    std::map<std::string, std::vector<double>> by_domain;
    for (const auto& r : report.pairs) {
        ssim.push_back(r.ssim);
        dsc.push_back(r.dice);
        bssim.push_back(r.baseline_ssim);
        bdsc.push_back(r.baseline_dice);
        jac.push_back(r.jacobian.min_det);
        fold.push_back(r.jacobian.nonpositive_fraction);
        by_domain[r.domain].push_back(r.dice);
    }
    report.ssim = summarize(ssim);
    report.dice = summarize(dsc);
    report.baseline_ssim = summarize(bssim);
    report.baseline_dice = summarize(bdsc);
    report.min_jacobian_det = summarize(jac);
    report.nonpositive_jacobian_fraction = summarize(fold);
    for (const auto& [domain, values] : by_domain) report.dice_by_domain[domain] = summarize(values);
    return report;
}

json to_json(const CrossDomainReport& report) {
    auto summary = [](const MetricSummary& s) { return json{{"mean", s.mean}, {"sd", s.sd}}; };
    json pairs = json::array();
    for (const auto& r : report.pairs)
        pairs.push_back({{"domain", r.domain},
                         {"fixed_subject", r.fixed_subject},
                         {"moving_subject", r.moving_subject},
                         {"ssim", r.ssim},
                         {"dice", r.dice},
                         {"baseline_ssim", r.baseline_ssim},
                         {"baseline_dice", r.baseline_dice},
                         {"jacobian_min_det", r.jacobian.min_det},
                         {"jacobian_nonpositive_fraction", r.jacobian.nonpositive_fraction}});
    json by_domain = json::object();
    for (const auto& [domain, s] : report.dice_by_domain) by_domain[domain] = summary(s);
    return {{"ssim", summary(report.ssim)},
            {"dice", summary(report.dice)},
            {"baseline_ssim", summary(report.baseline_ssim)},
            {"baseline_dice", summary(report.baseline_dice)},
            {"jacobian_min_det", summary(report.min_jacobian_det)},
            {"jacobian_nonpositive_fraction", summary(report.nonpositive_jacobian_fraction)},
            {"dice_by_domain", by_domain},
            {"pairs", pairs}};
}

// ---- checkpoint files ----

namespace {

constexpr char kMagic[4] = {'N', 'R', 'C', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 8);
}

std::uint64_t get_u64(const unsigned char* b) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_doubles(std::ostream& out, const std::vector<double>& values) {
    for (double d : values) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    json header;
    header["version"] = Checkpoint::kVersion;
    header["config"] = to_json(ck.config);
    header["epoch"] = ck.epoch;
    header["best_epoch"] = ck.best_epoch;
    header["best_val_loss"] = finite_or_null(ck.best_val_loss);
    header["adam"] = {{"beta1", ck.optimizer.beta1}, {"beta2", ck.optimizer.beta2}, {"eps", ck.optimizer.eps}, {"step", ck.optimizer.step}};
    json history = json::array();
    for (const auto& r : ck.history)
        history.push_back({{"epoch", r.epoch}, {"train_loss", finite_or_null(r.train_loss)}, {"val_loss", finite_or_null(r.val_loss)}});
    header["history"] = history;

    std::vector<const std::vector<double>*> payloads;
    json tensors = json::array();
    std::uint64_t offset = 0;
    auto add = [&](const std::string& name, const ad::Shape& shape, const std::vector<double>& values) {
        tensors.push_back({{"name", name}, {"shape", shape}, {"offset", offset}, {"count", values.size()}});
        offset += 8 * values.size();
        payloads.push_back(&values);
    };
    const auto& list = ck.params.list();
    for (const auto& p : list) add(p.name, p.shape, p.value);
    if (!ck.optimizer.m.empty()) {
        if (ck.optimizer.m.size() != list.size() || ck.optimizer.v.size() != list.size())
            throw std::invalid_argument("save_checkpoint: optimizer moments do not match parameters");
        for (std::size_t i = 0; i < list.size(); ++i) add("adam.m/" + list[i].name, list[i].shape, ck.optimizer.m[i]);
        for (std::size_t i = 0; i < list.size(); ++i) add("adam.v/" + list[i].name, list[i].shape, ck.optimizer.v[i]);
    }
    header["tensors"] = tensors;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(IoErrc::unwritable_path, "cannot write checkpoint " + path.string());
    const std::string text = header.dump();
    out.write(kMagic, 4);
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* values : payloads) put_doubles(out, *values);
    if (!out) throw IoError(IoErrc::unwritable_path, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoErrc::unreadable_path, "cannot read checkpoint " + path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw IoError(IoErrc::bad_magic, path.string() + " is not a checkpoint (expected magic NRC1)");
    const std::uint64_t header_len = get_u64(bytes.data() + 4);
    if (header_len > bytes.size() - 12) throw IoError(IoErrc::truncated_payload, path.string() + ": header runs past end of file");
    const std::size_t payload_start = 12 + static_cast<std::size_t>(header_len);
    const std::size_t payload_size = bytes.size() - payload_start;

    auto number = [](const json& v) { return v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>(); };
    Checkpoint ck;
    try {
        const json header = json::parse(bytes.begin() + 12, bytes.begin() + static_cast<std::ptrdiff_t>(payload_start));
        if (header.at("version") != Checkpoint::kVersion) throw IoError(IoErrc::bad_header, path.string() + ": unsupported checkpoint version");
        ck.config = train_config_from_json(header.at("config"));
        ck.epoch = header.at("epoch").get<std::size_t>();
        ck.best_epoch = header.at("best_epoch").get<std::size_t>();
        ck.best_val_loss = number(header.at("best_val_loss"));
        const auto& adam = header.at("adam");
        ck.optimizer.beta1 = adam.at("beta1").get<double>();
        ck.optimizer.beta2 = adam.at("beta2").get<double>();
        ck.optimizer.eps = adam.at("eps").get<double>();
        ck.optimizer.step = adam.at("step").get<std::uint64_t>();
        for (const auto& r : header.at("history"))
            ck.history.push_back({r.at("epoch").get<std::size_t>(), number(r.at("train_loss")), number(r.at("val_loss"))});
        for (const auto& t : header.at("tensors")) {
            const auto name = t.at("name").get<std::string>();
            const auto shape = t.at("shape").get<ad::Shape>();
            const auto offset = t.at("offset").get<std::uint64_t>();
            const auto count = t.at("count").get<std::uint64_t>();
            if (count != ad::numel(shape)) throw IoError(IoErrc::bad_header, path.string() + ": tensor " + name + " count does not match shape");
            if (offset > payload_size || count > (payload_size - offset) / 8)
                throw IoError(IoErrc::truncated_payload, path.string() + ": tensor " + name + " runs past end of file");
            std::vector<double> values(count);
            const unsigned char* src = bytes.data() + payload_start + offset;
            for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<double>(get_u64(src + 8 * i));
            if (name.rfind("adam.m/", 0) == 0) {
                ck.optimizer.m.push_back(std::move(values));
            } else if (name.rfind("adam.v/", 0) == 0) {
                ck.optimizer.v.push_back(std::move(values));
            } else {
                ck.params.add(name, shape, std::move(values));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoErrc::bad_header, path.string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw IoError(IoErrc::bad_header, path.string() + ": " + e.what());
    }
    if (!ck.params.all_finite()) throw IoError(IoErrc::non_finite, path.string() + ": non-finite parameter values");
    return ck;
}

}  // namespace neureg
