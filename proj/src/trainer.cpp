#include "vispe/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vispe/binio.hpp"
#include "vispe/errors.hpp"

namespace vispe {

using nlohmann::json;

namespace {

constexpr std::uint64_t kInitStream = 11;
constexpr std::uint64_t kBankStream = 12;
constexpr std::uint64_t kSamplerStream = 13;

const std::set<std::string> kConfigKeys = {
    "mode",   "tau",  "alpha",           "t",          "m",
    "lr",     "epochs", "seed",          "stop_grad_protos", "resample_granularity",
    "margin", "symmetric_kl", "exclude_anchor_view", "hidden_dims", "embed_dim"};

std::string granularity_name(ResampleGranularity g) { return g == ResampleGranularity::epoch ? "epoch" : "iteration"; }

ResampleGranularity parse_granularity(const std::string& s) {
    if (s == "epoch") return ResampleGranularity::epoch;
    if (s == "iteration") return ResampleGranularity::iteration;
    throw ConfigError("resample_granularity must be `epoch` or `iteration`, got `" + s + "`");
}

Arch arch_for(const TrainConfig& cfg, std::size_t input_dim) {
    Arch a;
    a.input_dim = input_dim;
    a.hidden_dims = cfg.hidden_dims;
    a.embed_dim = cfg.embed_dim;
    return a;
}

std::vector<std::size_t> distinct_classes(const MultiviewDataset& ds) {
    std::set<std::size_t> ids;
    for (const auto& o : ds.objects) ids.insert(o.class_id);
    return {ids.begin(), ids.end()};
}

json config_to_json(const TrainConfig& c) {
    return json{{"mode", to_string(c.mode)},
                {"tau", c.tau},
                {"alpha", c.alpha},
                {"t", c.threshold},
                {"m", c.batch_instances},
                {"lr", c.lr},
                {"epochs", c.epochs},
                {"seed", c.seed},
                {"stop_grad_protos", c.stop_grad_protos},
                {"resample_granularity", granularity_name(c.resample)},
                {"margin", c.margin},
                {"symmetric_kl", c.symmetric_kl},
                {"exclude_anchor_view", c.exclude_anchor_view},
                {"hidden_dims", c.hidden_dims},
                {"embed_dim", c.embed_dim}};
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.mode = parse_mode(j.at("mode").get<std::string>());
    j.at("tau").get_to(c.tau);
    j.at("alpha").get_to(c.alpha);
    j.at("t").get_to(c.threshold);
    j.at("m").get_to(c.batch_instances);
    j.at("lr").get_to(c.lr);
    j.at("epochs").get_to(c.epochs);
    j.at("seed").get_to(c.seed);
    j.at("stop_grad_protos").get_to(c.stop_grad_protos);
    c.resample = parse_granularity(j.at("resample_granularity").get<std::string>());
    j.at("margin").get_to(c.margin);
    j.at("symmetric_kl").get_to(c.symmetric_kl);
    j.at("exclude_anchor_view").get_to(c.exclude_anchor_view);
    j.at("hidden_dims").get_to(c.hidden_dims);
    j.at("embed_dim").get_to(c.embed_dim);
    return c;
}

json arch_to_json(const Arch& a) {
    return json{{"input_dim", a.input_dim},
                {"hidden_dims", a.hidden_dims},
                {"embed_dim", a.embed_dim},
                {"activation", a.activation == Activation::tanh ? "tanh" : "identity"},
                {"norm_epsilon", a.norm_epsilon},
                {"normalize", a.normalize}};
}

Arch arch_from_json(const json& j) {
    Arch a;
    j.at("input_dim").get_to(a.input_dim);
    j.at("hidden_dims").get_to(a.hidden_dims);
    j.at("embed_dim").get_to(a.embed_dim);
    const auto act = j.at("activation").get<std::string>();
    if (act != "tanh" && act != "identity") throw FormatError("unknown activation `" + act + "`");
    a.activation = act == "tanh" ? Activation::tanh : Activation::identity;
    j.at("norm_epsilon").get_to(a.norm_epsilon);
    j.at("normalize").get_to(a.normalize);
    return a;
}

json read_model_json(const std::filesystem::path& dir) {
    json j;
    try {
        j = json::parse(binio::read_text(dir / "model.json"));
    } catch (const json::parse_error& e) {
        throw FormatError("malformed model.json in " + dir.string() + ": " + e.what());
    }
    const int version = j.value("format_version", -1);
    if (version != kCheckpointFormatVersion) {
        throw ConfigError("checkpoint format version " + std::to_string(version) + " is not supported");
    }
    return j;
}

EmbedderParams params_from_json(const json& j, const std::filesystem::path& dir) {
    EmbedderParams p;
    p.arch = arch_from_json(j.at("arch"));
    p.arch.validate();
    j.at("head_rows").get_to(p.head_rows);
    const auto count = j.at("weight_count").get<std::size_t>();
    if (count != parameter_count(p.arch, p.head_rows)) throw FormatError("weight_count does not match the architecture");
    p.theta = binio::read_f64(dir / "weights.bin", count);
    return p;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(tau > 0)) throw ConfigError("tau must be positive");
    if (!(alpha >= 0)) throw ConfigError("alpha must be nonnegative");
    if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("t must lie in [0, 1]");
    if (batch_instances == 0) throw ConfigError("m must be >= 1");
    if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite nonnegative number");
    if (!(margin >= 0)) throw ConfigError("margin must be nonnegative");
    if (embed_dim == 0) throw ConfigError("embed_dim must be >= 1");
    for (auto h : hidden_dims)
        if (h == 0) throw ConfigError("hidden_dims entries must be >= 1");
}

void TrainConfig::validate_mode_invariants() const {
    validate();
    if (mode == Mode::pe && threshold != 0.0) {
        throw ConfigError("mode pe keeps prototypes fixed and requires t = 0 (config has t = " +
                          std::to_string(threshold) + "); use mode mvspe to randomize prototypes");
    }
    if (mode == Mode::pe && alpha != 0.0) throw ConfigError("mode pe has no consistency term and requires alpha = 0");
    if (mode == Mode::mvspe && alpha != 0.0) {
        throw ConfigError("mode mvspe has no consistency term and requires alpha = 0; use mode vispe for alpha > 0");
    }
    if (mode == Mode::vispe && !(alpha > 0.0)) {
        throw ConfigError("mode vispe requires alpha > 0; alpha = 0 is mode mvspe");
    }
}

LossSettings TrainConfig::loss_settings() const {
    LossSettings s;
    s.mode = mode;
    s.proto.tau = tau;
    s.proto.alpha = alpha;
    s.proto.symmetric_kl = symmetric_kl;
    s.margin = margin;
    s.stop_grad_protos = stop_grad_protos;
    return s;
}

TrainConfig default_config(Mode mode) {
    TrainConfig c;
    c.mode = mode;
    if (mode == Mode::pe) {
        c.threshold = 0.0;
        c.alpha = 0.0;
    }
    if (mode == Mode::mvspe) c.alpha = 0.0;
    return c;
}

TrainConfig load_train_config(const KeyValueFile& kv, std::optional<Mode> mode_override) {
    kv.reject_unknown(kConfigKeys);
    Mode mode = Mode::vispe;
    if (kv.has("mode")) mode = parse_mode(kv.get_string("mode"));
    if (mode_override) mode = *mode_override;
    TrainConfig c = default_config(mode);
    if (kv.has("tau")) c.tau = kv.get_double("tau");
    if (kv.has("alpha")) c.alpha = kv.get_double("alpha");
    if (kv.has("t")) c.threshold = kv.get_double("t");
    if (kv.has("m")) c.batch_instances = static_cast<std::size_t>(kv.get_u64("m"));
    if (kv.has("lr")) c.lr = kv.get_double("lr");
    if (kv.has("epochs")) c.epochs = static_cast<std::size_t>(kv.get_u64("epochs"));
    if (kv.has("seed")) c.seed = kv.get_u64("seed");
    if (kv.has("stop_grad_protos")) c.stop_grad_protos = kv.get_bool("stop_grad_protos");
    if (kv.has("resample_granularity")) c.resample = parse_granularity(kv.get_string("resample_granularity"));
    if (kv.has("margin")) c.margin = kv.get_double("margin");
    if (kv.has("symmetric_kl")) c.symmetric_kl = kv.get_bool("symmetric_kl");
    if (kv.has("exclude_anchor_view")) c.exclude_anchor_view = kv.get_bool("exclude_anchor_view");
    if (kv.has("hidden_dims")) c.hidden_dims = kv.get_size_list("hidden_dims");
    if (kv.has("embed_dim")) c.embed_dim = static_cast<std::size_t>(kv.get_u64("embed_dim"));
    c.validate_mode_invariants();
    return c;
}

std::string config_to_text(const TrainConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "mode = " << to_string(c.mode) << '\n'
       << "tau = " << c.tau << '\n'
       << "alpha = " << c.alpha << '\n'
       << "t = " << c.threshold << '\n'
       << "m = " << c.batch_instances << '\n'
       << "lr = " << c.lr << '\n'
       << "epochs = " << c.epochs << '\n'
       << "seed = " << c.seed << '\n'
       << "stop_grad_protos = " << (c.stop_grad_protos ? "true" : "false") << '\n'
       << "resample_granularity = " << granularity_name(c.resample) << '\n'
       << "margin = " << c.margin << '\n'
       << "symmetric_kl = " << (c.symmetric_kl ? "true" : "false") << '\n'
       << "exclude_anchor_view = " << (c.exclude_anchor_view ? "true" : "false") << '\n'
       << "hidden_dims = ";
    for (std::size_t i = 0; i < c.hidden_dims.size(); ++i) os << (i ? ", " : "") << c.hidden_dims[i];
    os << '\n' << "embed_dim = " << c.embed_dim << '\n';
    return os.str();
}

void sgd_step(std::vector<double>& theta, std::span<const double> grad, double lr) {
    if (theta.size() != grad.size()) {
        throw ConfigError("gradient has " + std::to_string(grad.size()) + " entries, parameters have " +
                          std::to_string(theta.size()));
    }
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * grad[i];
}

void sgd_step(EmbedderParams& params, std::span<const double> grad, double lr) { sgd_step(params.theta, grad, lr); }

TrainerState start_training(const TrainConfig& cfg, const MultiviewDataset& train_ds) {
    cfg.validate();
    if (train_ds.objects.empty()) throw ConfigError("training partition is empty");
    if (train_ds.objects.size() < cfg.batch_instances) {
        throw ConfigError("training partition has " + std::to_string(train_ds.objects.size()) +
                          " instances, fewer than m = " + std::to_string(cfg.batch_instances));
    }
    TrainerState s;
    s.config = cfg;
    s.n_instances = train_ds.objects.size();
    std::size_t head_rows = 0;
    if (cfg.mode == Mode::instance) head_rows = s.n_instances;
    if (cfg.mode == Mode::supervised) {
        s.class_ids = distinct_classes(train_ds);
        head_rows = s.class_ids.size();
    }
    s.params = init(arch_for(cfg, train_ds.obs_dim), derive_seed(cfg.seed, kInitStream), head_rows);
    s.bank = init_bank(train_ds, cfg.threshold, derive_seed(cfg.seed, kBankStream));
    s.sampler = make_rng(cfg.seed, kSamplerStream);
    return s;
}

void run_epochs(TrainerState& s, const MultiviewDataset& train_ds, std::size_t until_epoch, const EpochHook& hook) {
    if (train_ds.objects.size() != s.n_instances) throw ConfigError("dataset does not match the trainer state");
    auto settings = s.config.loss_settings();
    settings.class_ids = s.class_ids;
    const bool proto_mode = uses_prototypes(s.config.mode);
    const PlanOptions plan_opts{s.config.exclude_anchor_view};

    while (s.epoch < until_epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = s.epoch + 1;
        double loss_sum = 0.0, kl_sum = 0.0;
        std::size_t examples = 0;
        for (auto& ids : epoch_batches(s.n_instances, s.config.batch_instances, s.sampler)) {
            const auto plan = plan_for_instances(train_ds, s.bank, std::move(ids), s.sampler, plan_opts);
            const auto batch = build_batch(s.config.mode, train_ds, plan, s.sampler);
            BatchLoss loss;
            try {
                loss = loss_and_grads(s.params, batch, settings);
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(rec.epoch) + ": " + e.what());
            }
            sgd_step(s.params, loss.grad, s.config.lr);
            loss_sum += loss.total;
            kl_sum += loss.l_kl;
            examples += loss.examples;
            if (proto_mode && s.config.resample == ResampleGranularity::iteration)
                rec.resampled += maybe_resample(s.bank, train_ds);
        }
        if (proto_mode && s.config.resample == ResampleGranularity::epoch) rec.resampled += maybe_resample(s.bank, train_ds);
        for (double v : s.params.theta) {
            if (!std::isfinite(v)) {
                throw NumericError("training diverged at epoch " + std::to_string(rec.epoch) + ": non-finite parameter");
            }
        }
        rec.mean_loss = loss_sum / static_cast<double>(examples);
        rec.mean_kl = kl_sum / static_cast<double>(examples);
        ++s.epoch;
        if (hook) rec.unseen_knn = hook(s.params, s.epoch);
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        s.history.push_back(rec);
    }
}

TrainResult train(const TrainConfig& cfg, const MultiviewDataset& train_ds, const EpochHook& hook) {
    auto state = start_training(cfg, train_ds);
    run_epochs(state, train_ds, cfg.epochs, hook);
    return {std::move(state.params), std::move(state.history)};
}

std::string history_to_json(const TrainHistory& history) {
    json arr = json::array();
    for (const auto& r : history) {
        arr.push_back({{"epoch", r.epoch},
                       {"mean_loss", r.mean_loss},
                       {"mean_kl", r.mean_kl},
                       {"resampled", r.resampled},
                       {"wall_seconds", r.wall_seconds},
                       {"unseen_knn", r.unseen_knn ? json(*r.unseen_knn) : json(nullptr)}});
    }
    return arr.dump(1) + "\n";
}

void checkpoint(const TrainerState& s, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    json layout = json::array();
    for (const auto& b : s.params.layout())
        layout.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}, {"offset", b.offset}});

    json j;
    j["format_version"] = kCheckpointFormatVersion;
    j["arch"] = arch_to_json(s.params.arch);
    j["mode"] = to_string(s.config.mode);
    j["config"] = config_to_json(s.config);
    j["epoch"] = s.epoch;
    j["head_rows"] = s.params.head_rows;
    j["weight_count"] = s.params.theta.size();
    j["weight_layout"] = std::move(layout);
    j["weight_encoding"] = "float64 little-endian, blocks in weight_layout order";
    j["n_instances"] = s.n_instances;
    j["class_ids"] = s.class_ids;
    j["bank"] = {{"view_index", s.bank.view_index}, {"t", s.bank.threshold}, {"rng", rng_state(s.bank.rng)}};
    j["sampler_rng"] = rng_state(s.sampler);

    json hist = json::array();
    for (const auto& r : s.history) {
        hist.push_back({{"epoch", r.epoch},
                        {"mean_loss", r.mean_loss},
                        {"mean_kl", r.mean_kl},
                        {"resampled", r.resampled},
                        {"unseen_knn", r.unseen_knn ? json(*r.unseen_knn) : json(nullptr)}});
    }
    j["history"] = std::move(hist);

    binio::write_f64(dir / "weights.bin", s.params.theta);
    binio::write_text(dir / "model.json", j.dump(1) + "\n");
    binio::write_text(dir / "history.json", history_to_json(s.history));
}

TrainerState resume(const std::filesystem::path& dir, const MultiviewDataset& train_ds) {
    const json j = read_model_json(dir);
    try {
        TrainerState s;
        s.config = config_from_json(j.at("config"));
        s.params = params_from_json(j, dir);
        if (s.params.arch.input_dim != train_ds.obs_dim) {
            throw ConfigError("checkpoint expects observation dimension " + std::to_string(s.params.arch.input_dim) +
                              ", dataset has " + std::to_string(train_ds.obs_dim));
        }
        j.at("epoch").get_to(s.epoch);
        j.at("n_instances").get_to(s.n_instances);
        if (s.n_instances != train_ds.objects.size()) {
            throw ConfigError("checkpoint was trained on " + std::to_string(s.n_instances) + " instances, dataset has " +
                              std::to_string(train_ds.objects.size()));
        }
        j.at("class_ids").get_to(s.class_ids);
        const auto& bank = j.at("bank");
        bank.at("view_index").get_to(s.bank.view_index);
        bank.at("t").get_to(s.bank.threshold);
        s.bank.rng = rng_from_state(bank.at("rng").get<std::string>());
        if (s.bank.view_index.size() != s.n_instances) throw FormatError("prototype bank size mismatch");
        for (std::size_t i = 0; i < s.n_instances; ++i) {
            if (s.bank.view_index[i] >= train_ds.objects[i].view_count())
                throw ConfigError("prototype view index out of range for instance " + std::to_string(i));
        }
        s.sampler = rng_from_state(j.at("sampler_rng").get<std::string>());
        for (const auto& r : j.at("history")) {
            EpochRecord rec;
            r.at("epoch").get_to(rec.epoch);
            r.at("mean_loss").get_to(rec.mean_loss);
            r.at("mean_kl").get_to(rec.mean_kl);
            r.at("resampled").get_to(rec.resampled);
            if (!r.at("unseen_knn").is_null()) rec.unseen_knn = r.at("unseen_knn").get<double>();
            s.history.push_back(rec);
        }
        return s;
    } catch (const json::exception& e) {
        throw FormatError("malformed model.json in " + dir.string() + ": " + e.what());
    }
}

LoadedModel load_model(const std::filesystem::path& dir) {
    const json j = read_model_json(dir);
    try {
        LoadedModel m;
        m.config = config_from_json(j.at("config"));
        m.params = params_from_json(j, dir);
        j.at("epoch").get_to(m.epoch);
        return m;
    } catch (const json::exception& e) {
        throw FormatError("malformed model.json in " + dir.string() + ": " + e.what());
    }
}

}  // namespace vispe
