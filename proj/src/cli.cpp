#include "neureg/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "neureg/domaingen.hpp"
#include "neureg/experiment.hpp"
#include "neureg/lossmetrics.hpp"
#include "neureg/random.hpp"
#include "neureg/synthdata.hpp"
#include "neureg/training.hpp"
#include "neureg/volume.hpp"
#include "neureg/warp.hpp"

namespace neureg::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Failure {
    int exit_code;
    std::string code;
    std::string message;
};

[[noreturn]] void fail(int exit_code, std::string code, std::string message) {
    throw Failure{exit_code, std::move(code), std::move(message)};
}

void require(bool present, const std::string& flag) {
    if (!present) fail(kExitValidation, "missing_argument", flag + " is required");
}

std::string fnv1a_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoErrc::unreadable_path, "cannot read " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

Dims parse_dims(const std::string& text) {
    Dims d;
    char x1 = 0, x2 = 0;
    std::istringstream in(text);
    if (!(in >> d.w >> x1 >> d.h >> x2 >> d.d) || x1 != 'x' || x2 != 'x' || !in.eof())
        fail(kExitValidation, "invalid_argument", "dims '" + text + "' must look like WxHxD");
    return d;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

Volume3 read_volume_any(const fs::path& path) {
    return path.extension() == ".nii" ? import_nifti1(path) : load_volume(path);
}

// Finite numbers only: anything else would make the manifest unparseable by strict readers.
void check_finite(const json& j, const std::string& where) {
    if (j.is_number_float() && !std::isfinite(j.get<double>())) fail(kExitValidation, "non_finite_metric", where + " is not finite");
    if (j.is_structured())
        for (const auto& [k, v] : j.items()) check_finite(v, where + "." + k);
}

struct Globals {
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::size_t threads = 1;
    bool quiet = false;
};

struct Manifest {
    std::string command;
    json config = json::object();
    json inputs = json::object();
    json outputs = json::array();
    json metrics = json::object();

    void input(const fs::path& p) {
        if (fs::is_directory(p)) {
            inputs[p.string()] = fnv1a_file(p / "manifest.json");
        } else {
            inputs[p.string()] = fnv1a_file(p);
        }
    }
};

TrainConfig load_config(const std::string& path) {
    if (path.empty()) return TrainConfig{};
    std::ifstream in(path);
    if (!in) throw IoError(IoErrc::unreadable_path, "cannot read config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(kExitValidation, "invalid_config", path + ": " + e.what());
    }
    try {
        return train_config_from_json(j);
    } catch (const std::exception& e) {
        fail(kExitValidation, "invalid_config", path + ": " + e.what());
    }
}

SubjectSplit cohort_split(const Cohort& cohort, const TrainConfig& config) {
    if (config.train_subjects + config.val_subjects > cohort.subject_count())
        fail(kExitValidation, "invalid_argument",
             "cohort has " + std::to_string(cohort.subject_count()) + " subjects; config needs " +
                 std::to_string(config.train_subjects + config.val_subjects) + " for training and validation");
    return split_subjects(cohort.subject_count(), config.train_subjects, config.val_subjects, mix_seed(config.seed, 8));
}

// ---- subcommands ----

struct SynthArgs {
    std::string out;
    std::size_t subjects = 8;
    std::string domains;
    std::string dims = "32x40x48";
    double amplitude = SubjectOptions{}.amplitude;
};

void run_synth(const SynthArgs& a, const Globals& g, Manifest& m) {
    require(!a.out.empty(), "--out");
    std::vector<DomainSpec> domains;
    if (a.domains.empty()) {
        domains = default_domains();
    } else {
        for (const auto& name : split_list(a.domains)) domains.push_back(domain_by_name(name));
    }
    SubjectOptions options;
    options.amplitude = a.amplitude;
    const Dims dims = parse_dims(a.dims);
    const Cohort cohort = make_cohort(a.subjects, domains, g.seed, dims, options);
    const fs::path manifest = write_cohort(cohort, a.out, g.seed);
    json names = json::array();
    for (const auto& d : domains) names.push_back(d.name);
    m.config = {{"subjects", a.subjects}, {"domains", names}, {"dims", {dims.w, dims.h, dims.d}}, {"amplitude", a.amplitude}};
    m.outputs.push_back(manifest.string());
    m.metrics = {{"volumes", a.subjects * domains.size()}, {"label_volumes", a.subjects}};
}

struct PreprocessArgs {
    std::string in, out, crop, format = "f64";
    bool normalize = false, dg = false;
    std::size_t patch_size = kDefaultPatchSize;
};

void run_preprocess(const PreprocessArgs& a, const Globals&, Manifest& m) {
    require(!a.in.empty(), "--in");
    require(!a.out.empty(), "--out");
    if (a.format != "f32" && a.format != "f64") fail(kExitValidation, "invalid_argument", "--format must be f32 or f64");
    m.input(a.in);
    Volume3 v = read_volume_any(a.in);
    if (!a.crop.empty()) v = crop_center(v, parse_dims(a.crop));
    if (a.normalize) v = normalize_minmax(v);
    if (a.dg) v = domain_generalize(v, a.patch_size).volume;
    save_raw(v, a.out, a.format == "f32" ? RawDtype::f32 : RawDtype::f64);
    const auto [lo, hi] = v.value_range();
    m.config = {{"crop", a.crop}, {"normalize", a.normalize}, {"dg", a.dg}, {"patch_size", a.patch_size}, {"format", a.format}};
    m.outputs.push_back(a.out);
    m.metrics = {{"dims", {v.dims().w, v.dims().h, v.dims().d}}, {"min", lo}, {"max", hi}};
}

struct TrainArgs {
    std::string config, data, out;
    std::size_t epochs = 0;
};

void run_train(const TrainArgs& a, const Globals& g, Manifest& m, std::ostream& err) {
    require(!a.data.empty(), "--data");
    require(!a.out.empty(), "--out");
    TrainConfig config = load_config(a.config);
    if (!a.config.empty()) m.input(a.config);
    if (g.seed_given) config.seed = g.seed;
    if (a.epochs > 0) {
        config.epochs = a.epochs;
        if (config.patience >= config.epochs) config.patience = config.epochs - 1;
    }
    config.validate();
    m.input(a.data);
    const Cohort cohort = read_cohort(a.data);
    ProtocolData protocol;
    build_protocol(protocol, cohort, cohort_split(cohort, config), config.train_domain);
    const Checkpoint ck = train(protocol.training, config, [&](const EpochRecord& r) {
        if (!g.quiet) err << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_loss " << r.val_loss << '\n';
    });
    save_checkpoint(ck, a.out);
    m.config = to_json(config);
    m.outputs.push_back(a.out);
    m.metrics = {{"epochs_run", ck.epoch},
                 {"best_epoch", ck.best_epoch},
                 {"initial_val_loss", ck.history.front().val_loss},
                 {"best_val_loss", ck.best_val_loss}};
}

struct RegisterArgs {
    std::string checkpoint, fixed, moving, out, field_out, labels, labels_out;
};

void run_register(const RegisterArgs& a, const Globals&, Manifest& m) {
    require(!a.checkpoint.empty(), "--checkpoint");
    require(!a.fixed.empty(), "--fixed");
    require(!a.moving.empty(), "--moving");
    require(!a.out.empty(), "--out-warped");
    if (!a.labels.empty()) require(!a.labels_out.empty(), "--out-labels");
    for (const auto& p : {a.checkpoint, a.fixed, a.moving}) m.input(p);
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const Volume3 fixed = read_volume_any(a.fixed);
    const Volume3 moving = read_volume_any(a.moving);
    const DeformationField field = predict_field(ck, fixed, moving);
    save_raw(warp_trilinear(moving, field), a.out);
    m.outputs.push_back(a.out);
    if (!a.field_out.empty()) {
        save_raw(field, a.field_out);
        m.outputs.push_back(a.field_out);
    }
    if (!a.labels.empty()) {
        m.input(a.labels);
        save_raw(warp_labels(load_labels(a.labels), field), a.labels_out);
        m.outputs.push_back(a.labels_out);
    }
    const JacobianStats jac = jacobian_stats(field);
    m.config = to_json(ck.config);
    m.metrics = {{"jacobian_min", jac.min_det}, {"jacobian_nonpos_fraction", jac.nonpositive_fraction}};
}

struct EvaluateArgs {
    std::string fixed, warped, fixed_labels, warped_labels, field, checkpoint, data, report;
};

void run_evaluate(const EvaluateArgs& a, const Globals& g, Manifest& m) {
    if (!a.checkpoint.empty() || !a.data.empty()) {
        require(!a.checkpoint.empty(), "--checkpoint");
        require(!a.data.empty(), "--data");
        m.input(a.checkpoint);
        m.input(a.data);
        const Checkpoint ck = load_checkpoint(a.checkpoint);
        const Cohort cohort = read_cohort(a.data);
        ProtocolData protocol;
        build_protocol(protocol, cohort, cohort_split(cohort, ck.config), ck.config.train_domain);
        const CrossDomainReport report = evaluate_cross_domain(ck, protocol.test_pairs, g.threads);
        m.config = to_json(ck.config);
        m.metrics = to_json(report);
        return;
    }
    require(!a.fixed.empty(), "--fixed");
    require(!a.warped.empty(), "--warped");
    if (a.fixed_labels.empty() != a.warped_labels.empty())
        fail(kExitValidation, "missing_argument", "--fixed-labels and --warped-labels must be given together");
    m.input(a.fixed);
    m.input(a.warped);
    const Volume3 fixed = read_volume_any(a.fixed);
    const Volume3 warped = read_volume_any(a.warped);
    m.metrics["ssim"] = ssim3(fixed, warped);
    m.metrics["mse"] = [&] {
        if (!(fixed.dims() == warped.dims())) fail(kExitValidation, "invalid_argument", "fixed and warped volumes differ in dims");
        double s = 0.0;
        for (std::size_t i = 0; i < fixed.size(); ++i) s += (fixed.data()[i] - warped.data()[i]) * (fixed.data()[i] - warped.data()[i]);
        return s / static_cast<double>(fixed.size());
    }();
    if (!a.fixed_labels.empty()) {
        m.input(a.fixed_labels);
        m.input(a.warped_labels);
        const DiceReport d = dice(load_labels(a.fixed_labels), load_labels(a.warped_labels));
        json per = json::object();
        for (const auto& [label, v] : d.per_label) per[std::to_string(label)] = v;
        m.metrics["dice_mean"] = d.mean;
        m.metrics["dice_per_label"] = per;
    }
    if (!a.field.empty()) {
        m.input(a.field);
        const JacobianStats jac = jacobian_stats(load_field(a.field));
        m.metrics["jacobian_min"] = jac.min_det;
        m.metrics["jacobian_nonpos_fraction"] = jac.nonpositive_fraction;
    }
}

void print_error(std::ostream& err, const std::string& code, const std::string& message) {
    err << json{{"code", code}, {"message", message}}.dump() << '\n';
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"NeuReg: domain-agnostic deformable registration", args.empty() ? "neureg" : args.front()};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "random seed")->each([&](const std::string&) { g.seed_given = true; });
    app.add_option("--threads", g.threads, "worker threads for evaluation")->check(CLI::PositiveNumber);
    app.add_flag("--quiet", g.quiet, "suppress progress lines");

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "generate a synthetic multi-domain cohort");
    synth->add_option("--out", sa.out, "output directory");
    synth->add_option("--subjects", sa.subjects, "number of subjects")->check(CLI::PositiveNumber);
    synth->add_option("--domains", sa.domains, "comma-separated domain names (default: all six)");
    synth->add_option("--dims", sa.dims, "volume dims WxHxD");
    synth->add_option("--amplitude", sa.amplitude, "max inter-subject displacement in voxels");

    PreprocessArgs pa;
    auto* preprocess = app.add_subcommand("preprocess", "crop, normalise and/or domain-generalise one volume");
    preprocess->add_option("--in", pa.in, "input volume (.nrv or .nii)");
    preprocess->add_option("--out", pa.out, "output volume");
    preprocess->add_option("--crop", pa.crop, "centre crop to WxHxD");
    preprocess->add_flag("--normalize", pa.normalize, "min-max normalise to [0, 1]");
    preprocess->add_flag("--dg", pa.dg, "apply the domain-generalisation layer");
    preprocess->add_option("--patch-size", pa.patch_size, "DG patch size")->check(CLI::PositiveNumber);
    preprocess->add_option("--format", pa.format, "f32 or f64");

    TrainArgs ta;
    auto* trainc = app.add_subcommand("train", "train on one domain of a cohort");
    trainc->add_option("--config", ta.config, "JSON config");
    trainc->add_option("--data", ta.data, "cohort directory");
    trainc->add_option("--out", ta.out, "checkpoint path");
    trainc->add_option("--epochs", ta.epochs, "override the configured epoch budget");

    RegisterArgs ra;
    auto* reg = app.add_subcommand("register", "warp a moving volume onto a fixed volume");
    reg->add_option("--checkpoint", ra.checkpoint, "checkpoint path");
    reg->add_option("--fixed", ra.fixed, "fixed volume");
    reg->add_option("--moving", ra.moving, "moving volume");
    reg->add_option("--out-warped,--out", ra.out, "warped volume output");
    reg->add_option("--out-field,--field-out", ra.field_out, "deformation field output");
    reg->add_option("--moving-labels,--labels", ra.labels, "moving label volume");
    reg->add_option("--out-labels,--labels-out", ra.labels_out, "warped label output");

    EvaluateArgs ea;
    auto* evaluate = app.add_subcommand("evaluate", "score a registration, or a checkpoint on a cohort's unseen domains");
    evaluate->add_option("--fixed", ea.fixed, "fixed volume");
    evaluate->add_option("--warped", ea.warped, "warped moving volume");
    evaluate->add_option("--fixed-labels", ea.fixed_labels, "fixed labels");
    evaluate->add_option("--warped-labels", ea.warped_labels, "warped moving labels");
    evaluate->add_option("--field", ea.field, "deformation field for Jacobian statistics");
    evaluate->add_option("--checkpoint", ea.checkpoint, "checkpoint for cross-domain evaluation");
    evaluate->add_option("--data", ea.data, "cohort directory for cross-domain evaluation");
    evaluate->add_option("--report", ea.report, "also write the metrics as JSON to this path");

    // CLI11 consumes arguments from the back.
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) reversed.pop_back();
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        if (app.get_subcommands().empty()) {
            err << app.help();
            print_error(err, args.size() > 1 && args[1].rfind("-", 0) != 0 ? "unknown_subcommand" : "missing_subcommand", e.what());
        } else {
            print_error(err, dynamic_cast<const CLI::RequiredError*>(&e) ? "missing_argument" : "invalid_argument", e.what());
        }
        return kExitValidation;
    }

    const auto start = std::chrono::steady_clock::now();
    Manifest m;
    m.command = app.get_subcommands().front()->get_name();
    try {
        if (synth->parsed()) run_synth(sa, g, m);
        if (preprocess->parsed()) run_preprocess(pa, g, m);
        if (trainc->parsed()) run_train(ta, g, m, err);
        if (reg->parsed()) run_register(ra, g, m);
        if (evaluate->parsed()) run_evaluate(ea, g, m);
        check_finite(m.metrics, "metrics");
        if (evaluate->parsed() && !ea.report.empty()) {
            std::ofstream report(ea.report);
            if (!(report << m.metrics.dump(2) << '\n')) throw IoError(IoErrc::unwritable_path, "cannot write report " + ea.report);
            m.outputs.push_back(ea.report);
        }
    } catch (const Failure& f) {
        print_error(err, f.code, f.message);
        return f.exit_code;
    } catch (const IoError& e) {
        print_error(err, to_string(e.code()), e.what());
        return kExitIo;
    } catch (const NiftiError& e) {
        print_error(err, "bad_nifti", e.what());
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        print_error(err, "io_error", e.what());
        return kExitIo;
    } catch (const TrainingError& e) {
        print_error(err, "training_diverged", e.what());
        return kExitValidation;
    } catch (const std::invalid_argument& e) {
        print_error(err, "invalid_argument", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        print_error(err, "internal_error", e.what());
        return kExitValidation;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const json manifest{{"command", m.command},   {"config", m.config},   {"seed", g.seed},       {"threads", g.threads},
                        {"inputs", m.inputs},     {"outputs", m.outputs}, {"wall_time_s", wall}, {"metrics", m.metrics}};
    out << manifest.dump(2) << '\n';
    return kExitOk;
}

}  // namespace neureg::cli
