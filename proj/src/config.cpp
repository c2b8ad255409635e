#include "x2ct/config.hpp"

#include <fstream>
#include <set>
#include <type_traits>

#include "x2ct/errors.hpp"
#include "x2ct/rng.hpp"

namespace x2ct {

using nlohmann::json;

namespace {

class SectionReader {
public:
    SectionReader(const json& root, std::string name, std::vector<std::string>& errors)
        : name_(std::move(name)), errors_(errors) {
        if (!root.contains(name_)) return;
        const auto& node = root.at(name_);
        if (!node.is_object()) {
            errors_.push_back(name_);
            return;
        }
        obj_ = &node;
    }

    template <typename T>
    void read(const std::string& key, T& out) {
        known_.insert(key);
        if (obj_ == nullptr || !obj_->contains(key)) return;
        const auto& v = obj_->at(key);
        if (!matches<T>(v)) {
            errors_.push_back(path(key));
            return;
        }
        out = v.get<T>();
    }

    void read_lambda(const std::string& key, std::optional<double>& out) {
        known_.insert(key);
        if (obj_ == nullptr || !obj_->contains(key)) return;
        const auto& v = obj_->at(key);
        if (v.is_null() || (v.is_string() && v.get<std::string>() == "1/T")) {
            out.reset();
        } else if (v.is_number()) {
            out = v.get<double>();
        } else {
            errors_.push_back(path(key));
        }
    }

    void finish() {
        if (obj_ == nullptr) return;
        for (const auto& [key, _] : obj_->items()) {
            if (!known_.contains(key)) errors_.push_back(path(key));
        }
    }

private:
    template <typename T>
    static bool matches(const json& v) {
        if constexpr (std::is_same_v<T, bool>) {
            return v.is_boolean();
        } else if constexpr (std::is_unsigned_v<T>) {
            return v.is_number_unsigned();
        } else if constexpr (std::is_integral_v<T>) {
            return v.is_number_integer();
        } else if constexpr (std::is_floating_point_v<T>) {
            return v.is_number();
        } else if constexpr (std::is_same_v<T, std::string>) {
            return v.is_string();
        } else if constexpr (std::is_same_v<T, std::array<double, 2>>) {
            return v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number();
        } else {
            if (!v.is_array()) return false;
            for (const auto& e : v) {
                if (!e.is_number_integer()) return false;
            }
            return true;
        }
    }

    std::string path(const std::string& key) const { return name_ + "." + key; }

    std::string name_;
    std::vector<std::string>& errors_;
    const json* obj_ = nullptr;
    std::set<std::string> known_;
};

const std::set<std::string> kSections{"data", "drr", "model", "icm", "schedule", "loss", "train", "ablation", "eval"};

}  // namespace

ExperimentConfig parse_config(const json& j) {
    if (!j.is_object()) throw ValidationError({"<root>"});
    std::vector<std::string> errors;
    for (const auto& [key, _] : j.items()) {
        if (!kSections.contains(key)) errors.push_back(key);
    }
    ExperimentConfig c;
    {
        SectionReader r(j, "data", errors);
        r.read("dataset_dir", c.data.dataset_dir);
        r.read("n_volumes", c.data.n_volumes);
        r.read("size", c.data.size);
        r.read("n_ellipsoids", c.data.n_ellipsoids);
        r.read("density_range", c.data.density_range);
        r.read("implant", c.data.implant);
        r.read("implant_radius_vox", c.data.implant_radius_vox);
        r.read("implant_hu", c.data.implant_hu);
        r.read("spacing_mm", c.data.spacing_mm);
        r.finish();
    }
    {
        SectionReader r(j, "drr", errors);
        r.read("mode", c.drr.mode);
        r.read("source_distance_mm", c.drr.source_distance_mm);
        r.read("step_mm", c.drr.step_mm);
        r.read("exponential", c.drr.exponential);
        r.read("attenuation_k", c.drr.attenuation_k);
        r.finish();
    }
    {
        SectionReader r(j, "model", errors);
        r.read("n_stages", c.model.n_stages);
        r.read("base_channels", c.model.base_channels);
        r.read("channel_multipliers", c.model.channel_multipliers);
        r.read("window_size", c.model.window_size);
        r.read("attention_heads", c.model.attention_heads);
        r.read("attention_blocks", c.model.attention_blocks);
        r.read("time_embed_dim", c.model.time_embed_dim);
        r.read("dropout", c.model.dropout);
        r.read("regressor_width", c.model.regressor_width);
        r.finish();
    }
    {
        SectionReader r(j, "icm", errors);
        r.read("stem_channels", c.icm.stem_channels);
        r.read("plane_channels", c.icm.plane_channels);
        r.read("cond_channels", c.icm.cond_channels);
        r.read("noise_sigma", c.icm.noise_sigma);
        r.read("transpose_vw", c.icm.transpose_vw);
        r.read("per_level_mlp", c.icm.per_level_mlp);
        r.finish();
    }
    {
        SectionReader r(j, "schedule", errors);
        r.read("T", c.schedule.T);
        r.read("kind", c.schedule.kind);
        r.read("variance", c.schedule.variance);
        r.read("clip_y0", c.schedule.clip_y0);
        r.finish();
    }
    {
        SectionReader r(j, "loss", errors);
        r.read_lambda("lambda", c.loss.lambda);
        r.read("predict_y0", c.loss.predict_y0);
        r.finish();
    }
    {
        SectionReader r(j, "train", errors);
        r.read("lr", c.train.lr);
        r.read("iterations", c.train.iterations);
        r.read("batch", c.train.batch);
        r.read("seed", c.train.seed);
        r.read("log_every", c.train.log_every);
        r.finish();
    }
    {
        SectionReader r(j, "ablation", errors);
        r.read("baseline_conditioning", c.ablation.baseline_conditioning);
        r.read("no_proj_loss", c.ablation.no_proj_loss);
        r.read("no_view_modulators", c.ablation.no_view_modulators);
        r.read("no_learnable_embedding", c.ablation.no_learnable_embedding);
        r.read("resnet_fusion", c.ablation.resnet_fusion);
        r.finish();
    }
    {
        SectionReader r(j, "eval", errors);
        r.read("bone_threshold_hu", c.eval.bone_threshold_hu);
        r.finish();
    }
    if (!errors.empty()) throw ValidationError(errors);
    c.validate();
    return c;
}

void ExperimentConfig::validate() const {
    std::vector<std::string> bad;
    auto check = [&](bool ok, const char* key) {
        if (!ok) bad.emplace_back(key);
    };
    check(data.n_volumes >= 0, "data.n_volumes");
    check(data.size >= 8 && data.size % 4 == 0, "data.size");
    check(data.n_ellipsoids >= 1, "data.n_ellipsoids");
    check(data.density_range[0] <= data.density_range[1], "data.density_range");
    check(data.implant_radius_vox > 0.0, "data.implant_radius_vox");
    check(data.spacing_mm > 0.0, "data.spacing_mm");
    if (!data.dataset_dir.empty()) {
        check(std::filesystem::exists(std::filesystem::path(data.dataset_dir) / "manifest.json"), "data.dataset_dir");
    }

    check(drr.mode == "parallel" || drr.mode == "cone", "drr.mode");
    check(drr.source_distance_mm > 0.0, "drr.source_distance_mm");
    check(drr.step_mm > 0.0 && drr.step_mm <= data.spacing_mm, "drr.step_mm");
    check(drr.attenuation_k > 0.0, "drr.attenuation_k");

    check(model.n_stages >= 1, "model.n_stages");
    check(static_cast<int>(model.channel_multipliers.size()) == model.n_stages, "model.channel_multipliers");
    check(model.base_channels >= 1, "model.base_channels");
    check(model.dropout >= 0.0 && model.dropout < 1.0, "model.dropout");
    check(model.regressor_width >= 1, "model.regressor_width");
    if (bad.empty()) {
        try {
            denoiser_config(*this).validate();
        } catch (const InvalidArgument&) {
            bad.emplace_back("model");
        }
        try {
            denoiser_config(*this).validate_input({data.size, data.size, data.size});
        } catch (const InvalidArgument&) {
            bad.emplace_back("data.size");
        }
    }

    check(icm.stem_channels >= 1, "icm.stem_channels");
    check(icm.plane_channels >= 4 && icm.plane_channels % 4 == 0, "icm.plane_channels");
    check(icm.cond_channels >= 1, "icm.cond_channels");
    check(icm.noise_sigma >= 0.0, "icm.noise_sigma");

    check(schedule.T >= 1, "schedule.T");
    check(schedule.kind == "linear", "schedule.kind");
    check(schedule.variance == "beta" || schedule.variance == "posterior", "schedule.variance");

    check(!loss.lambda || *loss.lambda >= 0.0, "loss.lambda");
    check(loss.predict_y0 == "standard" || loss.predict_y0 == "paper_exact", "loss.predict_y0");

    check(train.lr > 0.0, "train.lr");
    check(train.iterations >= 0, "train.iterations");
    check(train.batch >= 1, "train.batch");
    check(train.log_every >= 1, "train.log_every");

    // The conditioning pathway is chosen by at most one of these flags.
    const int modes = int(ablation.baseline_conditioning) + int(ablation.no_view_modulators) +
                      int(ablation.resnet_fusion);
    if (modes > 1) {
        if (ablation.baseline_conditioning) bad.emplace_back("ablation.baseline_conditioning");
        if (ablation.no_view_modulators) bad.emplace_back("ablation.no_view_modulators");
        if (ablation.resnet_fusion) bad.emplace_back("ablation.resnet_fusion");
    }
    if (!bad.empty()) throw ValidationError(bad);
}

json serialize_config(const ExperimentConfig& c) {
    json j;
    j["data"] = {{"dataset_dir", c.data.dataset_dir},
                 {"n_volumes", c.data.n_volumes},
                 {"size", c.data.size},
                 {"n_ellipsoids", c.data.n_ellipsoids},
                 {"density_range", c.data.density_range},
                 {"implant", c.data.implant},
                 {"implant_radius_vox", c.data.implant_radius_vox},
                 {"implant_hu", c.data.implant_hu},
                 {"spacing_mm", c.data.spacing_mm}};
    j["drr"] = {{"mode", c.drr.mode},
                {"source_distance_mm", c.drr.source_distance_mm},
                {"step_mm", c.drr.step_mm},
                {"exponential", c.drr.exponential},
                {"attenuation_k", c.drr.attenuation_k}};
    j["model"] = {{"n_stages", c.model.n_stages},
                  {"base_channels", c.model.base_channels},
                  {"channel_multipliers", c.model.channel_multipliers},
                  {"window_size", c.model.window_size},
                  {"attention_heads", c.model.attention_heads},
                  {"attention_blocks", c.model.attention_blocks},
                  {"time_embed_dim", c.model.time_embed_dim},
                  {"dropout", c.model.dropout},
                  {"regressor_width", c.model.regressor_width}};
    j["icm"] = {{"stem_channels", c.icm.stem_channels},
                {"plane_channels", c.icm.plane_channels},
                {"cond_channels", c.icm.cond_channels},
                {"noise_sigma", c.icm.noise_sigma},
                {"transpose_vw", c.icm.transpose_vw},
                {"per_level_mlp", c.icm.per_level_mlp}};
    j["schedule"] = {{"T", c.schedule.T}, {"kind", c.schedule.kind}, {"variance", c.schedule.variance},
                     {"clip_y0", c.schedule.clip_y0}};
    j["loss"] = {{"lambda", c.loss.lambda ? json(*c.loss.lambda) : json("1/T")}, {"predict_y0", c.loss.predict_y0}};
    j["train"] = {{"lr", c.train.lr},
                  {"iterations", c.train.iterations},
                  {"batch", c.train.batch},
                  {"seed", c.train.seed},
                  {"log_every", c.train.log_every}};
    j["ablation"] = {{"baseline_conditioning", c.ablation.baseline_conditioning},
                     {"no_proj_loss", c.ablation.no_proj_loss},
                     {"no_view_modulators", c.ablation.no_view_modulators},
                     {"no_learnable_embedding", c.ablation.no_learnable_embedding},
                     {"resnet_fusion", c.ablation.resnet_fusion}};
    j["eval"] = {{"bone_threshold_hu", c.eval.bone_threshold_hu}};
    return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("config not found: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write config: " + path.string());
    out << serialize_config(cfg).dump(2) << '\n';
}

DenoiserConfig denoiser_config(const ExperimentConfig& c) {
    DenoiserConfig d;
    d.n_stages = c.model.n_stages;
    d.base_channels = c.model.base_channels;
    d.channel_multipliers = c.model.channel_multipliers;
    d.window_size = c.model.window_size;
    d.attention_heads = c.model.attention_heads;
    d.attention_blocks = c.model.attention_blocks;
    d.time_embed_dim = c.model.time_embed_dim;
    d.cond_channels = c.icm.cond_channels;
    d.dropout = c.model.dropout;
    return d;
}

ConditionerConfig conditioner_config(const ExperimentConfig& c) {
    ConditionerConfig out;
    auto& t = out.triplane;
    t.stem_channels = c.icm.stem_channels;
    t.plane_channels = c.icm.plane_channels;
    t.cond_channels = c.icm.cond_channels;
    t.levels = c.model.n_stages;
    t.noise_sigma = c.icm.noise_sigma;
    t.transpose_vw = c.icm.transpose_vw;
    t.learnable_embedding = !c.ablation.no_learnable_embedding;
    t.fusion = c.ablation.resnet_fusion        ? UvFusion::resnet
               : c.ablation.no_view_modulators ? UvFusion::equal_weights
                                               : UvFusion::modulators;
    out.mode = c.ablation.baseline_conditioning ? ConditioningMode::baseline : ConditioningMode::icm;
    out.per_level_mlp = c.icm.per_level_mlp;
    return out;
}

NoiseSchedule schedule_from_config(const ExperimentConfig& c) {
    auto s = make_schedule(c.schedule.T, ScheduleKind::linear, variance_kind_from_string(c.schedule.variance));
    s.clip_y0 = c.schedule.clip_y0;
    return s;
}

TrainerOptions trainer_options(const ExperimentConfig& c) {
    TrainerOptions o;
    o.lr = c.train.lr;
    o.batch = c.train.batch;
    o.lambda = c.loss.lambda.value_or(-1.0);
    o.proj_loss = !c.ablation.no_proj_loss;
    o.y0_mode = y0_mode_from_string(c.loss.predict_y0);
    o.seed = c.train.seed;
    return o;
}

DrrGeometry drr_geometry(const ExperimentConfig& c) {
    DrrGeometry g;
    g.mode = beam_mode_from_string(c.drr.mode);
    g.source_distance_mm = c.drr.source_distance_mm;
    g.step_mm = c.drr.step_mm;
    g.exponential = c.drr.exponential;
    g.attenuation_k = c.drr.attenuation_k;
    return g;
}

PhantomSpec phantom_spec(const ExperimentConfig& c, std::int64_t index) {
    PhantomSpec p;
    p.seed = SeedSplitter(c.train.seed).seed("phantom", static_cast<std::uint64_t>(index));
    p.size = c.data.size;
    p.n_ellipsoids = c.data.n_ellipsoids;
    p.density_range = c.data.density_range;
    if (c.data.implant) p.implant = ImplantRod{c.data.implant_radius_vox, c.data.implant_hu};
    p.spacing_mm = c.data.spacing_mm;
    return p;
}

}  // namespace x2ct
