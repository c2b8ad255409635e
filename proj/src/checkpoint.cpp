#include "x2ct/checkpoint.hpp"

#include <fstream>

#include "x2ct/errors.hpp"
#include "x2ct/rng.hpp"

namespace x2ct {

using nlohmann::json;

std::string to_string(RunMode m) { return m == RunMode::diffusion ? "diffusion" : "icm-reg"; }

RunMode run_mode_from_string(const std::string& s) {
    if (s == "diffusion") return RunMode::diffusion;
    if (s == "icm-reg") return RunMode::icm_reg;
    throw InvalidArgument("unknown mode: " + s);
}

ModelBundle build_models(const ExperimentConfig& cfg, RunMode mode) {
    ModelBundle b;
    b.mode = mode;
    b.config = cfg;
    b.schedule = schedule_from_config(cfg);
    torch::manual_seed(SeedSplitter(cfg.train.seed).seed("init"));
    if (mode == RunMode::diffusion) {
        b.conditioner = Conditioner(conditioner_config(cfg));
        b.denoiser = Denoiser(denoiser_config(cfg));
    } else {
        b.regressor = IcmRegressor(conditioner_config(cfg), cfg.model.regressor_width);
    }
    return b;
}

namespace {

const char* kWeights = "weights.pt";
const char* kMeta = "checkpoint.json";

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const ModelBundle& b) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory: " + dir.string());

    torch::serialize::OutputArchive root;
    if (b.mode == RunMode::diffusion) {
        torch::serialize::OutputArchive c, d;
        b.conditioner->save(c);
        b.denoiser->save(d);
        root.write("conditioner", c);
        root.write("denoiser", d);
    } else {
        torch::serialize::OutputArchive r;
        b.regressor->save(r);
        root.write("regressor", r);
    }
    root.save_to((dir / kWeights).string());

    json meta;
    meta["format"] = "x2ct-checkpoint";
    meta["version"] = 1;
    meta["mode"] = to_string(b.mode);
    meta["rng"] = {{"seed", b.config.train.seed}, {"cursor", b.step}};
    meta["schedule"] = {{"T", b.schedule.T}, {"variance", to_string(b.schedule.variance)}, {"beta", b.schedule.beta}};
    meta["config"] = serialize_config(b.config);
    std::ofstream out(dir / kMeta);
    if (!out) throw IoError("cannot write checkpoint metadata in " + dir.string());
    out << meta.dump(2) << '\n';
}

ModelBundle load_checkpoint(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / kMeta) || !std::filesystem::exists(dir / kWeights))
        throw NotFound("checkpoint not found: " + dir.string());
    json meta;
    try {
        std::ifstream in(dir / kMeta);
        meta = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed checkpoint metadata: ") + e.what());
    }
    if (meta.value("format", "") != "x2ct-checkpoint") throw FormatError("not an x2ct checkpoint: " + dir.string());

    auto cfg = parse_config(meta.at("config"));
    auto b = build_models(cfg, run_mode_from_string(meta.at("mode").get<std::string>()));
    b.step = meta.at("rng").at("cursor").get<std::int64_t>();
    if (meta.at("schedule").at("beta").get<std::vector<double>>() != b.schedule.beta)
        throw FormatError("checkpoint schedule does not match its config");

    torch::serialize::InputArchive root;
    root.load_from((dir / kWeights).string());
    if (b.mode == RunMode::diffusion) {
        torch::serialize::InputArchive c, d;
        root.read("conditioner", c);
        root.read("denoiser", d);
        b.conditioner->load(c);
        b.denoiser->load(d);
    } else {
        torch::serialize::InputArchive r;
        root.read("regressor", r);
        b.regressor->load(r);
    }
    return b;
}

void set_eval(ModelBundle& b) {
    if (b.conditioner) b.conditioner->eval();
    if (b.denoiser) b.denoiser->eval();
    if (b.regressor) b.regressor->eval();
}

}  // namespace x2ct
