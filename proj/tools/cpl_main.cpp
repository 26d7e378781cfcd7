#include "cpl/errors.hpp"
#include "cpl/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

struct Common {
    std::string config;
    std::optional<uint64_t> seed;
    std::string mode;
    bool desk_scale = false;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "override the config seed");
    cmd->add_option("--mode", c.mode, "cpl_full | sequential_base | joint")
        ->check(CLI::IsMember({"cpl_full", "sequential_base", "joint"}));
    cmd->add_flag("--desk-scale", c.desk_scale, "2,000 iterations/task, batch 16, lr 5e-4");
}

cpl::ExperimentConfig resolve(const Common& c) {
    auto cfg = cpl::load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.mode.empty()) cfg.mode = cpl::run_mode_from_string(c.mode);
    if (c.desk_scale) cfg.apply_desk_scale();
    cfg.validate();
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual predictive learning: mixture world model with predictive experience replay"};
    app.require_subcommand(1);

    Common gen_c, train_c, eval_c, ablate_c;
    bool force = false, resume = false;
    std::string checkpoint;

    auto* gen = app.add_subcommand("generate", "materialize the ShapeWorld-CL splits as frame directories");
    add_common(gen, gen_c);
    gen->add_flag("--force", force, "overwrite a non-empty data directory");

    auto* train = app.add_subcommand("train", "continual training with per-period checkpoints and evaluation");
    add_common(train, train_c);
    train->add_flag("--resume", resume, "continue from the latest checkpoint of this mode");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and write frame strips");
    add_common(eval, eval_c);
    eval->add_option("--checkpoint", checkpoint, "checkpoint file (default: latest of the mode)");

    auto* ablate = app.add_subcommand("ablate", "the five component-ablation configurations under one seed");
    add_common(ablate, ablate_c);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            auto cfg = resolve(gen_c);
            auto dirs = cpl::cmd_generate(cfg, force);
            for (const auto& d : dirs) std::cout << d.string() << "\n";
        } else if (train->parsed()) {
            auto cfg = resolve(train_c);
            auto out = cpl::cmd_train(cfg, resume);
            const auto& m = out.state.matrix;
            for (int p = 1; p <= static_cast<int>(m.rows.size()); ++p)
                std::printf("period %d: mean PSNR %.3f dB, mean SSIM %.4f\n", p, m.mean_psnr(p), m.mean_ssim(p));
            std::cout << "eval matrix: " << out.eval_csv.string() << "\ncheckpoint: " << out.final_checkpoint.string()
                      << "\n";
        } else if (eval->parsed()) {
            auto cfg = resolve(eval_c);
            std::filesystem::path ckpt = checkpoint.empty() ? cpl::latest_checkpoint(cfg) : std::filesystem::path(checkpoint);
            auto out = cpl::cmd_eval(cfg, ckpt);
            for (size_t i = 0; i < out.scores.size(); ++i)
                std::printf("task %zu: PSNR %.3f dB, SSIM %.4f, inference accuracy %.3f\n", i + 1, out.scores[i].psnr,
                            out.scores[i].ssim, out.scores[i].inference_accuracy);
            std::cout << "summary: " << out.summary_csv.string() << "\n";
        } else if (ablate->parsed()) {
            auto cfg = resolve(ablate_c);
            auto rows = cpl::cmd_ablate(cfg);
            std::printf("row replay infer_k random_k adapt   psnr    ssim\n");
            for (size_t r = 0; r < rows.size(); ++r)
                std::printf("%3zu %6d %7d %8d %5d %7.3f %7.4f\n", r + 1, rows[r].flags.replay, rows[r].flags.infer_k,
                            rows[r].flags.random_k, rows[r].flags.adapt, rows[r].psnr, rows[r].ssim);
        }
    } catch (const cpl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const cpl::IngestionError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const cpl::NumericalError& e) {
        std::cerr << "training diverged: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
