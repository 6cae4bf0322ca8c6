#include "vispe/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include <json.hpp>

#include "vispe/binio.hpp"
#include "vispe/errors.hpp"
#include "vispe/rng.hpp"

namespace vispe {

using nlohmann::json;

namespace {

constexpr std::uint64_t kClassStream = 1;
constexpr std::uint64_t kMapStream = 2;
constexpr std::uint64_t kObjectSalt = 0x6f626a6563747321ULL;

const std::set<std::string> kSpecKeys = {
    "n_classes",   "seen_classes", "objects_per_class", "test_objects_per_class",
    "views_min",   "views_max",    "latent_dim",        "obs_dim",
    "class_scale", "object_spread", "view_noise",       "seed"};

json spec_to_json(const SyntheticSpec& s) {
    return json{{"n_classes", s.n_classes},
                {"seen_classes", s.seen_classes},
                {"objects_per_class", s.objects_per_class},
                {"test_objects_per_class", s.test_objects_per_class},
                {"views_min", s.views_min},
                {"views_max", s.views_max},
                {"latent_dim", s.latent_dim},
                {"obs_dim", s.obs_dim},
                {"class_scale", s.class_scale},
                {"object_spread", s.object_spread},
                {"view_noise", s.view_noise},
                {"seed", s.seed}};
}

SyntheticSpec spec_from_json(const json& j) {
    SyntheticSpec s;
    j.at("n_classes").get_to(s.n_classes);
    j.at("seen_classes").get_to(s.seen_classes);
    j.at("objects_per_class").get_to(s.objects_per_class);
    j.at("test_objects_per_class").get_to(s.test_objects_per_class);
    j.at("views_min").get_to(s.views_min);
    j.at("views_max").get_to(s.views_max);
    j.at("latent_dim").get_to(s.latent_dim);
    j.at("obs_dim").get_to(s.obs_dim);
    j.at("class_scale").get_to(s.class_scale);
    j.at("object_spread").get_to(s.object_spread);
    j.at("view_noise").get_to(s.view_noise);
    j.at("seed").get_to(s.seed);
    return s;
}

MultiviewDataset empty_like(const MultiviewDataset& ds) {
    MultiviewDataset out;
    out.obs_dim = ds.obs_dim;
    out.class_seen = ds.class_seen;
    out.spec = ds.spec;
    out.generator = ds.generator;
    return out;
}

void renumber(MultiviewDataset& ds) {
    for (std::size_t i = 0; i < ds.objects.size(); ++i) ds.objects[i].object_id = i;
}

// k sorted distinct indices drawn uniformly from [0, n).
std::vector<std::size_t> choose_sorted(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (k >= n) return idx;
    // partial Fisher-Yates
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

void SyntheticSpec::validate() const {
    if (n_classes == 0) throw ConfigError("n_classes must be >= 1");
    if (seen_classes >= n_classes) throw ConfigError("seen_classes must be < n_classes");
    if (objects_per_class == 0) throw ConfigError("objects_per_class must be >= 1");
    if (test_objects_per_class >= objects_per_class)
        throw ConfigError("test_objects_per_class must be < objects_per_class");
    if (views_min < 1) throw ConfigError("views_min must be >= 1");
    if (views_max < views_min) throw ConfigError("views_max must be >= views_min");
    if (latent_dim == 0 || obs_dim == 0) throw ConfigError("latent_dim and obs_dim must be >= 1");
    if (!(class_scale >= 0) || !(object_spread >= 0) || !(view_noise >= 0))
        throw ConfigError("class_scale, object_spread and view_noise must be nonnegative");
}

SyntheticSpec load_synthetic_spec(const KeyValueFile& kv) {
    kv.reject_unknown(kSpecKeys);
    SyntheticSpec s;
    auto sz = [&](const char* key, std::size_t& field) {
        if (kv.has(key)) field = static_cast<std::size_t>(kv.get_u64(key));
    };
    auto real = [&](const char* key, double& field) {
        if (kv.has(key)) field = kv.get_double(key);
    };
    sz("n_classes", s.n_classes);
    sz("seen_classes", s.seen_classes);
    sz("objects_per_class", s.objects_per_class);
    sz("test_objects_per_class", s.test_objects_per_class);
    sz("views_min", s.views_min);
    sz("views_max", s.views_max);
    sz("latent_dim", s.latent_dim);
    sz("obs_dim", s.obs_dim);
    real("class_scale", s.class_scale);
    real("object_spread", s.object_spread);
    real("view_noise", s.view_noise);
    if (kv.has("seed")) s.seed = kv.get_u64("seed");
    s.validate();
    return s;
}

std::size_t MultiviewDataset::total_views() const {
    std::size_t n = 0;
    for (const auto& o : objects) n += o.view_count();
    return n;
}

std::set<std::size_t> MultiviewDataset::seen_class_ids() const {
    std::set<std::size_t> ids;
    for (std::size_t c = 0; c < class_seen.size(); ++c)
        if (class_seen[c]) ids.insert(c);
    return ids;
}

void MultiviewDataset::check_invariants() const {
    for (std::size_t i = 0; i < objects.size(); ++i) {
        const auto& o = objects[i];
        if (o.object_id != i) throw FormatError("object ids must be contiguous from 0");
        if (o.class_id >= class_seen.size()) throw FormatError("class id out of range");
        if (o.views.empty()) throw FormatError("object " + std::to_string(i) + " has no views");
        if (o.view_angles.size() != o.views.size())
            throw FormatError("object " + std::to_string(i) + ": angle count != view count");
        for (const auto& v : o.views)
            if (v.size() != obs_dim) throw FormatError("ragged view vector in object " + std::to_string(i));
    }
}

std::vector<float> render_view(const GeneratorMap& map, std::span<const double> latent, double angle) {
    const std::size_t d = latent.size();
    std::vector<double> z(3 * d);
    const double s = std::sin(angle);
    const double c = std::cos(angle);
    for (std::size_t k = 0; k < d; ++k) {
        z[k] = latent[k];
        z[d + k] = latent[k] * s;
        z[2 * d + k] = latent[k] * c;
    }
    std::vector<float> x(map.rows);
    for (std::size_t r = 0; r < map.rows; ++r) {
        double acc = map.bias[r];
        const double* row = map.weights.data() + r * map.cols;
        for (std::size_t k = 0; k < map.cols; ++k) acc += row[k] * z[k];
        x[r] = static_cast<float>(std::tanh(acc));
    }
    return x;
}

MultiviewDataset generate(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t d = spec.latent_dim;
    const std::size_t D = spec.obs_dim;

    Rng class_rng = make_rng(spec.seed, kClassStream);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::vector<double>> centers(spec.n_classes, std::vector<double>(d));
    for (auto& c : centers)
        for (auto& v : c) v = spec.class_scale * normal(class_rng);

    GeneratorMap map;
    map.rows = D;
    map.cols = 3 * d;
    map.weights.resize(D * 3 * d);
    map.bias.resize(D);
    {
        Rng map_rng = make_rng(spec.seed, kMapStream);
        const double w_std = 1.0 / std::sqrt(2.0 * static_cast<double>(d));
        for (auto& w : map.weights) w = w_std * normal(map_rng);
        for (auto& b : map.bias) b = 0.25 * normal(map_rng);
    }

    MultiviewDataset ds;
    ds.obs_dim = D;
    ds.spec = spec;
    ds.class_seen.assign(spec.n_classes, false);
    for (std::size_t c = 0; c < spec.seen_classes; ++c) ds.class_seen[c] = true;

    const std::size_t n_objects = spec.n_classes * spec.objects_per_class;
    ds.objects.resize(n_objects);
    constexpr double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t id = 0; id < n_objects; ++id) {
        Rng rng(derive_seed(spec.seed ^ kObjectSalt, id));
        auto& o = ds.objects[id];
        o.object_id = id;
        o.origin_id = id;
        o.class_id = id / spec.objects_per_class;
        const std::size_t slot = id % spec.objects_per_class;
        o.split = slot + spec.test_objects_per_class >= spec.objects_per_class ? Split::test : Split::train;

        std::uniform_int_distribution<std::size_t> n_views(spec.views_min, spec.views_max);
        const std::size_t V = n_views(rng);
        std::vector<double> latent(d);
        for (std::size_t k = 0; k < d; ++k) latent[k] = centers[o.class_id][k] + spec.object_spread * normal(rng);

        std::uniform_real_distribution<double> angle_dist(0.0, two_pi);
        o.views.reserve(V);
        o.view_angles.reserve(V);
        for (std::size_t j = 0; j < V; ++j) {
            double phi = angle_dist(rng);
            if (phi >= two_pi) phi = 0.0;
            auto x = render_view(map, latent, phi);
            if (spec.view_noise > 0) {
                for (auto& v : x) v = static_cast<float>(v + spec.view_noise * normal(rng));
            }
            o.views.push_back(std::move(x));
            o.view_angles.push_back(phi);
        }
    }
    ds.generator = std::move(map);
    return ds;
}

DatasetPartition split_seen_unseen(const MultiviewDataset& ds, const std::set<std::size_t>& seen_class_ids) {
    for (auto c : seen_class_ids) {
        if (c >= ds.class_count()) throw ConfigError("unknown class id " + std::to_string(c));
    }
    DatasetPartition parts{empty_like(ds), empty_like(ds), empty_like(ds)};
    for (auto* part : {&parts.train, &parts.seen_test, &parts.unseen}) {
        for (std::size_t c = 0; c < part->class_seen.size(); ++c) part->class_seen[c] = seen_class_ids.count(c) != 0;
    }
    for (const auto& o : ds.objects) {
        MultiviewDataset* target = nullptr;
        if (!seen_class_ids.count(o.class_id)) {
            target = &parts.unseen;
        } else if (o.split == Split::train) {
            target = &parts.train;
        } else {
            target = &parts.seen_test;
        }
        target->objects.push_back(o);
        target->objects.back().origin_id = o.origin_id;
    }
    renumber(parts.train);
    renumber(parts.seen_test);
    renumber(parts.unseen);
    return parts;
}

DatasetPartition split_seen_unseen(const MultiviewDataset& ds) {
    return split_seen_unseen(ds, ds.seen_class_ids());
}

MultiviewDataset subsample(const MultiviewDataset& ds, std::size_t objects_per_class,
                           std::size_t views_per_object, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0x73756273ULL);
    std::vector<std::vector<std::size_t>> by_class(ds.class_count());
    for (std::size_t i = 0; i < ds.objects.size(); ++i) by_class[ds.objects[i].class_id].push_back(i);

    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const auto& members = by_class[c];
        if (members.empty()) continue;
        if (objects_per_class != kAll && objects_per_class > members.size()) {
            log_warning("class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                        " objects; clamping request of " + std::to_string(objects_per_class));
        }
        for (auto local : choose_sorted(members.size(), objects_per_class, rng)) keep.push_back(members[local]);
    }
    std::sort(keep.begin(), keep.end());

    MultiviewDataset out = empty_like(ds);
    bool warned = false;
    for (auto i : keep) {
        const auto& src = ds.objects[i];
        ObjectRecord o;
        o.class_id = src.class_id;
        o.split = src.split;
        o.origin_id = src.origin_id;
        if (views_per_object != kAll && views_per_object > src.view_count() && !warned) {
            log_warning("some objects have fewer than " + std::to_string(views_per_object) +
                        " views; clamping to what is available");
            warned = true;
        }
        for (auto j : choose_sorted(src.view_count(), views_per_object, rng)) {
            o.views.push_back(src.views[j]);
            o.view_angles.push_back(src.view_angles[j]);
        }
        out.objects.push_back(std::move(o));
    }
    renumber(out);
    return out;
}

void save(const MultiviewDataset& ds, const std::filesystem::path& dir) {
    ds.check_invariants();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    json manifest;
    manifest["format_version"] = kDatasetFormatVersion;
    manifest["D"] = ds.obs_dim;
    manifest["spec"] = ds.spec ? spec_to_json(*ds.spec) : json(nullptr);
    if (ds.generator) {
        manifest["generator"] = {{"rows", ds.generator->rows},
                                 {"cols", ds.generator->cols},
                                 {"weights", ds.generator->weights},
                                 {"bias", ds.generator->bias}};
    }
    json classes = json::array();
    for (std::size_t c = 0; c < ds.class_seen.size(); ++c)
        classes.push_back({{"class_id", c}, {"seen", static_cast<bool>(ds.class_seen[c])}});
    manifest["classes"] = std::move(classes);

    std::vector<float> blob;
    blob.reserve(ds.total_views() * ds.obs_dim);
    json objects = json::array();
    std::size_t offset = 0;
    for (const auto& o : ds.objects) {
        objects.push_back({{"object_id", o.object_id},
                           {"class_id", o.class_id},
                           {"split", o.split == Split::train ? "train" : "test"},
                           {"origin_id", o.origin_id},
                           {"view_count", o.view_count()},
                           {"angles", o.view_angles},
                           {"byte_offset", offset}});
        for (const auto& v : o.views) blob.insert(blob.end(), v.begin(), v.end());
        offset += o.view_count() * ds.obs_dim * sizeof(float);
    }
    manifest["objects"] = std::move(objects);
    manifest["total_views"] = ds.total_views();

    binio::write_f32(dir / "views.bin", blob);
    binio::write_text(dir / "manifest.json", manifest.dump(1) + "\n");
}

MultiviewDataset load(const std::filesystem::path& dir) {
    json manifest;
    try {
        manifest = json::parse(binio::read_text(dir / "manifest.json"));
    } catch (const json::parse_error& e) {
        throw FormatError("malformed manifest in " + dir.string() + ": " + e.what());
    }
    try {
        const int version = manifest.at("format_version").get<int>();
        if (version != kDatasetFormatVersion) {
            throw FormatError("dataset format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kDatasetFormatVersion) + ")");
        }
        MultiviewDataset ds;
        ds.obs_dim = manifest.at("D").get<std::size_t>();
        if (!manifest.at("spec").is_null()) ds.spec = spec_from_json(manifest.at("spec"));
        if (manifest.contains("generator")) {
            const auto& g = manifest.at("generator");
            GeneratorMap map;
            g.at("rows").get_to(map.rows);
            g.at("cols").get_to(map.cols);
            g.at("weights").get_to(map.weights);
            g.at("bias").get_to(map.bias);
            if (map.weights.size() != map.rows * map.cols || map.bias.size() != map.rows)
                throw FormatError("generator map has inconsistent shape");
            ds.generator = std::move(map);
        }
        for (const auto& c : manifest.at("classes")) {
            const auto id = c.at("class_id").get<std::size_t>();
            if (id != ds.class_seen.size()) throw FormatError("class ids must be contiguous from 0");
            ds.class_seen.push_back(c.at("seen").get<bool>());
        }

        std::size_t total = 0;
        const std::size_t row_bytes = ds.obs_dim * sizeof(float);
        for (const auto& jo : manifest.at("objects")) {
            ObjectRecord o;
            jo.at("object_id").get_to(o.object_id);
            jo.at("class_id").get_to(o.class_id);
            const auto split = jo.at("split").get<std::string>();
            if (split != "train" && split != "test") throw FormatError("unknown split tag `" + split + "`");
            o.split = split == "train" ? Split::train : Split::test;
            o.origin_id = jo.value("origin_id", o.object_id);
            jo.at("angles").get_to(o.view_angles);
            const auto count = jo.at("view_count").get<std::size_t>();
            if (count != o.view_angles.size()) throw FormatError("view_count does not match angle list");
            if (jo.at("byte_offset").get<std::size_t>() != total * row_bytes)
                throw FormatError("byte_offset of object " + std::to_string(o.object_id) + " is inconsistent");
            o.views.resize(count);
            total += count;
            ds.objects.push_back(std::move(o));
        }
        if (manifest.contains("total_views") && manifest.at("total_views").get<std::size_t>() != total)
            throw FormatError("total_views does not match the sum of view counts");

        const auto blob = binio::read_f32(dir / "views.bin", total * ds.obs_dim);
        std::size_t pos = 0;
        for (auto& o : ds.objects) {
            for (auto& v : o.views) {
                v.assign(blob.begin() + static_cast<std::ptrdiff_t>(pos),
                         blob.begin() + static_cast<std::ptrdiff_t>(pos + ds.obs_dim));
                pos += ds.obs_dim;
            }
        }
        ds.check_invariants();
        return ds;
    } catch (const json::exception& e) {
        throw FormatError("malformed manifest in " + dir.string() + ": " + e.what());
    }
}

}  // namespace vispe
