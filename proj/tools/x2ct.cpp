#include <cstdio>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "x2ct/errors.hpp"
#include "x2ct/harness.hpp"
#include "x2ct/precision.hpp"

using namespace x2ct;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string mode = "diffusion";
};

ExperimentConfig resolve(const Common& c) {
    auto cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
    if (c.seed) cfg.train.seed = *c.seed;
    cfg.validate();
    return cfg;
}

void add_config(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", c.seed, "overrides train.seed");
}

void add_mode(CLI::App* sub, Common& c) {
    sub->add_option("--mode", c.mode, "reconstruction model")->check(CLI::IsMember({"diffusion", "icm-reg"}));
}

ProgressFn printer(std::int64_t every) {
    return [every](std::int64_t step, const LossReport& r) {
        if (step % every == 0) std::fprintf(stderr, "step %lld  total %.5f  simple %.5f  proj %.5f\n",
                                            static_cast<long long>(step), r.total, r.simple, r.proj);
    };
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Biplanar X-ray to CT reconstruction toolkit"};
    app.require_subcommand(1);
    Common c;

    auto* phantoms = app.add_subcommand("make-phantoms", "synthesize phantom volumes with biplanar DRRs");
    add_config(phantoms, c);
    std::optional<std::int64_t> n;
    phantoms->add_option("--n", n, "number of volumes (default data.n_volumes)");
    phantoms->add_option("--out", c.out, "dataset directory")->required();

    auto* drr = app.add_subcommand("synthesize-drr", "preprocess a volume and render its biplanar DRRs");
    add_config(drr, c);
    std::string volume;
    drr->add_option("--volume", volume, "input volume (.raw with JSON sidecar)")->required();
    drr->add_option("--out", c.out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train a model into a run directory");
    add_config(train, c);
    add_mode(train, c);
    std::optional<std::int64_t> iterations;
    train->add_option("--iterations", iterations, "overrides train.iterations");
    train->add_option("--out", c.out, "run directory")->required();

    auto* sample = app.add_subcommand("sample", "reconstruct one volume from a biplanar pair");
    std::string checkpoint, front, side;
    std::uint64_t sample_seed = 0;
    sample->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    sample->add_option("--front", front, "front projection")->required();
    sample->add_option("--side", side, "side projection")->required();
    sample->add_option("--seed", sample_seed, "initial-noise seed");
    sample->add_option("--out", c.out, "output volume path")->required();

    auto* evaluate = app.add_subcommand("evaluate", "score reconstructions of a dataset");
    std::string run_dir, dataset;
    evaluate->add_option("--run", run_dir, "run directory (uses its checkpoint and data)");
    evaluate->add_option("--checkpoint", checkpoint, "checkpoint directory");
    evaluate->add_option("--dataset", dataset, "dataset directory");
    evaluate->add_option("--out", c.out, "report directory")->required();

    auto* render = app.add_subcommand("render", "export axial/sagittal/coronal centre slices as PNG");
    render->add_option("--volume", volume, "volume to render")->required();
    render->add_option("--out", c.out, "output directory")->required();

    auto* ablate = app.add_subcommand("ablate", "train and score the ablation variants");
    add_config(ablate, c);
    add_mode(ablate, c);
    ablate->add_option("--iterations", iterations, "overrides train.iterations");
    ablate->add_option("--out", c.out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        set_precision(precision_from_env());
        if (phantoms->parsed()) {
            const auto cfg = resolve(c);
            const auto m = cmd_make_phantoms(cfg, n.value_or(cfg.data.n_volumes), c.out);
            std::cout << "wrote " << m.at("n") << " volumes to " << c.out << "\n";
        } else if (drr->parsed()) {
            cmd_synthesize_drr(resolve(c), volume, c.out);
            std::cout << "wrote DRR pair to " << c.out << "\n";
        } else if (train->parsed()) {
            auto cfg = resolve(c);
            if (iterations) cfg.train.iterations = *iterations;
            const auto r = cmd_train(cfg, run_mode_from_string(c.mode), c.out, printer(cfg.train.log_every));
            std::cout << "trained " << r.steps << " steps, final loss " << r.final_loss << "\n";
        } else if (sample->parsed()) {
            cmd_sample(checkpoint, front, side, sample_seed, c.out);
            std::cout << "wrote " << c.out << "\n";
        } else if (evaluate->parsed()) {
            if (!run_dir.empty()) {
                checkpoint = (fs::path(run_dir) / "checkpoint").string();
                dataset = (fs::path(run_dir) / "data").string();
            }
            if (checkpoint.empty() || dataset.empty()) throw InvalidArgument("evaluate needs --run or --checkpoint and --dataset");
            const auto r = cmd_evaluate(checkpoint, dataset, c.out);
            std::cout << eval_row_json(r.mean).dump(2) << "\n";
        } else if (render->parsed()) {
            cmd_render(volume, c.out);
            std::cout << "wrote montage to " << c.out << "\n";
        } else if (ablate->parsed()) {
            auto cfg = resolve(c);
            if (iterations) cfg.train.iterations = *iterations;
            const auto rows = cmd_ablate(cfg, run_mode_from_string(c.mode), c.out, printer(cfg.train.log_every));
            std::cout << kAblationHeader << "\n";
            for (const auto& r : rows)
                std::cout << r.method << "," << r.psnr << "," << r.ssim << "," << r.psnr3d << "," << r.ssim3d << ","
                          << r.final_loss << "\n";
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NotFound& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
