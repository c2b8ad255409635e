#include "x2ct/harness.hpp"

#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>

#include "x2ct/errors.hpp"
#include "x2ct/image_io.hpp"
#include "x2ct/rng.hpp"

namespace x2ct {

using nlohmann::json;

namespace {

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory: " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("missing file: " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string item_id(std::int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "vol_%03lld", static_cast<long long>(i));
    return buf;
}

torch::Tensor bone_mask(const CtVolume& normalized, double threshold_hu) {
    return (denormalize(normalized).data >= threshold_hu).to(torch::kFloat64);
}

}  // namespace

TrainingSet Dataset::training_set() const {
    if (volumes.empty()) throw InvalidArgument("dataset is empty");
    std::vector<torch::Tensor> f, s, v;
    for (std::size_t i = 0; i < volumes.size(); ++i) {
        f.push_back(pairs[i].front.unsqueeze(0));
        s.push_back(pairs[i].side.unsqueeze(0));
        v.push_back(volumes[i].data.unsqueeze(0));
    }
    return {torch::stack(f), torch::stack(s), torch::stack(v)};
}

Dataset load_dataset(const fs::path& root) {
    Dataset ds;
    ds.root = root;
    ds.manifest = read_json(root / "manifest.json");
    try {
        for (const auto& item : ds.manifest.at("items")) {
            ds.ids.push_back(item.at("id").get<std::string>());
            auto vol = load_volume(root / item.at("volume").get<std::string>());
            if (vol.value_space != ValueSpace::normalized) vol = clip_and_normalize(vol);
            ds.volumes.push_back(vol);
            ds.pairs.push_back({load_projection(root / item.at("front").get<std::string>()),
                                load_projection(root / item.at("side").get<std::string>())});
        }
    } catch (const json::exception& e) {
        throw FormatError("malformed dataset manifest in " + root.string() + ": " + e.what());
    }
    return ds;
}

json cmd_make_phantoms(const ExperimentConfig& cfg, std::int64_t n, const fs::path& out_dir) {
    if (n < 0) throw InvalidArgument("phantom count must be non-negative");
    cfg.validate();
    ensure_dir(out_dir / "volumes");
    ensure_dir(out_dir / "projections");
    const auto geom = drr_geometry(cfg);
    json items = json::array();
    for (std::int64_t i = 0; i < n; ++i) {
        const auto spec = phantom_spec(cfg, i);
        const auto vol = clip_and_normalize(generate_phantom(spec));
        const auto pair = make_biplanar_pair(vol, geom);
        const auto id = item_id(i);
        const std::string vpath = "volumes/" + id + ".raw";
        const std::string fpath = "projections/" + id + "_front.raw";
        const std::string spath = "projections/" + id + "_side.raw";
        save_volume(vol, out_dir / vpath);
        save_projection(pair.front, "front", out_dir / fpath);
        save_projection(pair.side, "side", out_dir / spath);
        items.push_back({{"id", id}, {"seed", spec.seed}, {"volume", vpath}, {"front", fpath}, {"side", spath}});
    }
    json manifest{{"format", "x2ct-dataset"},
                  {"n", n},
                  {"shape", {cfg.data.size, cfg.data.size, cfg.data.size}},
                  {"spacing_mm", cfg.data.spacing_mm},
                  {"seed", cfg.train.seed},
                  {"drr", serialize_config(cfg).at("drr")},
                  {"items", items}};
    write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return manifest;
}

json cmd_synthesize_drr(const ExperimentConfig& cfg, const fs::path& volume_path, const fs::path& out_dir) {
    cfg.validate();
    auto vol = load_volume(volume_path);
    if (vol.value_space == ValueSpace::hounsfield) {
        vol = resample_isotropic(vol, cfg.data.spacing_mm);
        vol = center_crop_or_pad(vol, {cfg.data.size, cfg.data.size, cfg.data.size});
        vol = clip_and_normalize(vol);
    }
    const auto pair = make_biplanar_pair(vol, drr_geometry(cfg));
    ensure_dir(out_dir);
    save_volume(vol, out_dir / "volume.raw");
    save_projection(pair.front, "front", out_dir / "front.raw");
    save_projection(pair.side, "side", out_dir / "side.raw");
    json out{{"volume", "volume.raw"}, {"front", "front.raw"}, {"side", "side.raw"},
             {"drr", serialize_config(cfg).at("drr")}};
    write_text(out_dir / "drr.json", out.dump(2) + "\n");
    return out;
}

TrainResult cmd_train(const ExperimentConfig& cfg, RunMode mode, const fs::path& run_dir, const ProgressFn& progress) {
    cfg.validate();
    ensure_dir(run_dir);
    save_config(run_dir / "config.json", cfg);

    const auto data_dir = run_dir / "data";
    if (cfg.data.dataset_dir.empty()) {
        cmd_make_phantoms(cfg, cfg.data.n_volumes, data_dir);
    } else {
        std::error_code ec;
        fs::copy(cfg.data.dataset_dir, data_dir, fs::copy_options::recursive | fs::copy_options::overwrite_existing, ec);
        if (ec) throw IoError("cannot copy dataset into " + data_dir.string());
    }
    const auto ds = load_dataset(data_dir);
    const auto set = ds.training_set();
    const Shape3 shape{set.volumes.size(2), set.volumes.size(3), set.volumes.size(4)};
    denoiser_config(cfg).validate_input(shape);

    auto bundle = build_models(cfg, mode);
    const auto opts = trainer_options(cfg);
    const std::int64_t iters = cfg.train.iterations;
    const std::int64_t tail = std::max<std::int64_t>(1, iters / 10);
    std::deque<double> recent;
    std::string log;

    auto record = [&](std::int64_t done, const LossReport& r) {
        recent.push_back(r.total);
        if (static_cast<std::int64_t>(recent.size()) > tail) recent.pop_front();
        if (done % cfg.train.log_every == 0 || done == iters) {
            json line{{"step", done},   {"simple", r.simple}, {"proj", r.proj},
                      {"total", r.total}, {"lr", cfg.train.lr}, {"seed", cfg.train.seed}};
            log += line.dump() + "\n";
        }
        if (progress) progress(done, r);
    };

    if (mode == RunMode::diffusion) {
        bundle.conditioner->train();
        bundle.denoiser->train();
        DiffusionTrainer trainer(bundle.conditioner, bundle.denoiser, bundle.schedule, opts);
        for (std::int64_t i = 0; i < iters; ++i) record(i + 1, trainer.train_step(set));
    } else {
        bundle.regressor->train();
        RegressionTrainer trainer(bundle.regressor, opts);
        for (std::int64_t i = 0; i < iters; ++i) {
            const double l1 = trainer.train_step(set);
            record(i + 1, LossReport{l1, 0.0, l1, 0.0});
        }
    }
    write_text(run_dir / "train_log.jsonl", log);
    bundle.step = iters;
    set_eval(bundle);
    save_checkpoint(run_dir / "checkpoint", bundle);

    TrainResult out;
    out.run_dir = run_dir;
    out.steps = iters;
    if (recent.empty()) {
        out.final_loss = std::numeric_limits<double>::quiet_NaN();
    } else {
        double sum = 0.0;
        for (double v : recent) sum += v;
        out.final_loss = sum / static_cast<double>(recent.size());
    }
    return out;
}

CtVolume reconstruct(ModelBundle& bundle, const BiplanarPair& pair, std::uint64_t seed) {
    set_eval(bundle);
    const double sp = bundle.config.data.spacing_mm;
    if (bundle.mode == RunMode::diffusion)
        return sample_volume(bundle.conditioner, bundle.denoiser, pair, bundle.schedule, seed, {sp, sp, sp});
    return icm_reg_forward(bundle.regressor, pair, {sp, sp, sp});
}

fs::path cmd_sample(const fs::path& checkpoint_dir, const fs::path& front_path, const fs::path& side_path,
                    std::uint64_t seed, const fs::path& out_path) {
    auto bundle = load_checkpoint(checkpoint_dir);
    BiplanarPair pair{load_projection(front_path), load_projection(side_path)};
    const auto vol = reconstruct(bundle, pair, seed);
    if (out_path.has_parent_path()) ensure_dir(out_path.parent_path());
    save_volume(vol, out_path);
    return out_path;
}

json eval_row_json(const EvalRow& r) {
    return {{"volume_id", r.volume_id},
            {"psnr_2d_avg", r.report.psnr_2d_avg},
            {"psnr_3d", r.report.psnr_3d},
            {"ssim_2d_avg", r.report.ssim_2d_avg},
            {"ssim_3d", r.report.ssim_3d},
            {"dice", r.dice}};
}

namespace {

EvalRow mean_row(const std::vector<EvalRow>& rows, const std::string& id) {
    EvalRow m;
    m.volume_id = id;
    if (rows.empty()) return m;
    for (const auto& r : rows) {
        m.report.psnr_2d_avg += r.report.psnr_2d_avg;
        m.report.psnr_3d += r.report.psnr_3d;
        m.report.ssim_2d_avg += r.report.ssim_2d_avg;
        m.report.ssim_3d += r.report.ssim_3d;
        m.dice += r.dice;
    }
    const double n = static_cast<double>(rows.size());
    m.report.psnr_2d_avg /= n;
    m.report.psnr_3d /= n;
    m.report.ssim_2d_avg /= n;
    m.report.ssim_3d /= n;
    m.dice /= n;
    return m;
}

EvalRow score(const std::string& id, const CtVolume& truth, const CtVolume& pred, double bone_hu) {
    EvalRow r;
    r.volume_id = id;
    r.report = evaluate_pair(truth.data, pred.data);
    r.dice = dice(bone_mask(truth, bone_hu), bone_mask(pred, bone_hu));
    return r;
}

}  // namespace

EvalResult cmd_evaluate(const fs::path& checkpoint_dir, const fs::path& dataset_dir, const fs::path& out_dir) {
    auto bundle = load_checkpoint(checkpoint_dir);
    const auto ds = load_dataset(dataset_dir);
    ensure_dir(out_dir / "recon");
    const double bone_hu = bundle.config.eval.bone_threshold_hu;
    const SeedSplitter seeds(bundle.config.train.seed);

    EvalResult res;
    std::vector<EvalRow> base_rows;
    CtVolume mean_vol;
    if (ds.size() > 0) {
        std::vector<torch::Tensor> stack;
        for (const auto& v : ds.volumes) stack.push_back(v.data.to(torch::kFloat64));
        mean_vol = {torch::stack(stack).mean(0).to(torch::kFloat32), ds.volumes[0].spacing_mm, ValueSpace::normalized};
    }
    std::string csv = "volume_id,psnr_2d_avg,psnr_3d,ssim_2d_avg,ssim_3d,dice\n";
    for (std::int64_t i = 0; i < ds.size(); ++i) {
        const auto& id = ds.ids[static_cast<std::size_t>(i)];
        const auto& truth = ds.volumes[static_cast<std::size_t>(i)];
        const auto recon = reconstruct(bundle, ds.pairs[static_cast<std::size_t>(i)], seeds.seed("eval", i));
        save_volume(recon, out_dir / "recon" / (id + ".raw"));
        auto row = score(id, truth, recon, bone_hu);
        write_text(out_dir / (id + ".json"), eval_row_json(row).dump(2) + "\n");
        csv += id + "," + num(row.report.psnr_2d_avg) + "," + num(row.report.psnr_3d) + "," +
               num(row.report.ssim_2d_avg) + "," + num(row.report.ssim_3d) + "," + num(row.dice) + "\n";
        res.rows.push_back(row);
        base_rows.push_back(score(id, truth, mean_vol, bone_hu));
    }
    res.mean = mean_row(res.rows, "mean");
    res.baseline = mean_row(base_rows, "mean_volume_baseline");
    write_text(out_dir / "metrics.csv", csv);
    json summary{{"n", ds.size()},
                 {"mode", to_string(bundle.mode)},
                 {"mean", eval_row_json(res.mean)},
                 {"mean_volume_baseline", eval_row_json(res.baseline)}};
    write_text(out_dir / "summary.json", summary.dump(2) + "\n");
    return res;
}

RenderResult cmd_render(const fs::path& volume_path, const fs::path& out_dir) {
    auto vol = load_volume(volume_path);
    if (vol.value_space == ValueSpace::hounsfield) vol = clip_and_normalize(vol);
    const auto& d = vol.data;
    RenderResult r;
    r.panels[0] = d.select(0, d.size(0) / 2).to(torch::kFloat64).contiguous();  // axial: H x W
    r.panels[1] = d.select(1, d.size(1) / 2).to(torch::kFloat64).contiguous();  // sagittal: D x W
    r.panels[2] = d.select(2, d.size(2) / 2).to(torch::kFloat64).contiguous();  // coronal: D x H
    r.montage = vstack_panels({r.panels[0], r.panels[1], r.panels[2]});
    ensure_dir(out_dir);
    write_png(out_dir / "axial.png", r.panels[0]);
    write_png(out_dir / "sagittal.png", r.panels[1]);
    write_png(out_dir / "coronal.png", r.panels[2]);
    write_png(out_dir / "montage.png", r.montage);
    return r;
}

std::vector<std::pair<std::string, ExperimentConfig>> ablation_variants(const ExperimentConfig& cfg) {
    auto base = cfg;
    base.ablation = AblationSection{};
    std::vector<std::pair<std::string, ExperimentConfig>> out;
    auto add = [&](const std::string& name, auto set) {
        auto c = base;
        set(c.ablation);
        out.emplace_back(name, c);
    };
    add("baseline", [](AblationSection& a) { a.baseline_conditioning = true; });
    add("wo_proj_loss", [](AblationSection& a) { a.no_proj_loss = true; });
    add("wo_view_modulators", [](AblationSection& a) { a.no_view_modulators = true; });
    add("wo_learnable_embedding", [](AblationSection& a) { a.no_learnable_embedding = true; });
    add("resnet_fusion", [](AblationSection& a) { a.resnet_fusion = true; });
    add("full", [](AblationSection&) {});
    return out;
}

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg, RunMode mode, const fs::path& out_dir,
                                    const ProgressFn& progress) {
    cfg.validate();
    ensure_dir(out_dir);
    std::vector<AblationRow> rows;
    std::string csv = std::string(kAblationHeader) + "\n";
    for (const auto& [name, variant] : ablation_variants(cfg)) {
        AblationRow row;
        row.method = name;
        const auto run_dir = out_dir / name;
        try {
            const auto tr = cmd_train(variant, mode, run_dir, progress);
            const auto ev = cmd_evaluate(run_dir / "checkpoint", run_dir / "data", run_dir / "eval");
            row.psnr = ev.mean.report.psnr_2d_avg;
            row.ssim = ev.mean.report.ssim_2d_avg;
            row.psnr3d = ev.mean.report.psnr_3d;
            row.ssim3d = ev.mean.report.ssim_3d;
            row.final_loss = tr.final_loss;
        } catch (const TrainingDivergence&) {
            const double nan = std::numeric_limits<double>::quiet_NaN();
            row.psnr = row.ssim = row.psnr3d = row.ssim3d = row.final_loss = nan;
            row.diverged = true;
        }
        csv += row.method + "," + num(row.psnr) + "," + num(row.ssim) + "," + num(row.psnr3d) + "," +
               num(row.ssim3d) + "," + num(row.final_loss) + "\n";
        rows.push_back(row);
    }
    write_text(out_dir / "ablation.csv", csv);
    return rows;
}

}  // namespace x2ct
