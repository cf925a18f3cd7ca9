#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "desmoke/error.hpp"
#include "desmoke/metrics.hpp"
#include "desmoke/model.hpp"
#include "desmoke/smoke_synthesis.hpp"
#include "desmoke/training.hpp"

namespace fs = std::filesystem;
using namespace desmoke;

namespace {

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config " + path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << j.dump(2) << "\n";
}

std::string clip_id(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "clip_%04d", i);
    return buf;
}

struct SynthArgs {
    std::string config, out, scenario = "entangled";
    int count = 1;
    std::optional<std::uint64_t> seed;
};

int run_synth(const SynthArgs& a) {
    synth::SceneConfig base;
    if (!a.config.empty()) {
        try {
            base = read_json(a.config).get<synth::SceneConfig>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("invalid scene config " + a.config + ": " + e.what());
        }
    } else {
        base = synth::SceneConfig::defaults(synth::scenario_from_string(a.scenario));
    }
    if (a.seed) {
        base.seed = *a.seed;
    }
    if (a.count < 1) {
        throw ConfigError("--count must be >= 1");
    }
    for (int i = 0; i < a.count; ++i) {
        const auto scene = a.count == 1 ? base : synth::randomize_scene(base, base.seed + static_cast<std::uint64_t>(i));
        const auto dir = fs::path(a.out) / clip_id(i);
        synth::write_clip(synth::generate_clip(scene), dir);
        std::cout << dir.string() << "\n";
    }
    return 0;
}

struct TrainArgs {
    std::string config, data, out, profile;
    std::optional<int64_t> iters;
    std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
    auto cfg = a.config.empty() ? TrainConfig::profile(a.profile.empty() ? "desk" : a.profile)
                                : load_train_config(a.config);
    if (a.iters) {
        cfg.total_iters = *a.iters;
    }
    if (a.seed) {
        cfg.seed = *a.seed;
    }
    const auto log_every = std::max<int64_t>(1, cfg.log_interval);
    auto result = train(
        cfg, a.data, a.out,
        [&](const TrainStep& s) {
            if (s.iter % log_every == 0 || s.iter + 1 == cfg.total_iters) {
                std::cout << "iter " << s.iter << " lr " << s.lr << " loss " << s.losses.total.item<double>()
                          << std::endl;
            }
        },
        select_device());
    std::cout << result.final_checkpoint.string() << "\n";
    return 0;
}

int run_infer(const std::string& ckpt, const std::string& in, const std::string& out) {
    const auto device = select_device();
    auto model = load_checkpoint(ckpt);
    model->to(device);
    const auto record = infer(model, in, out, {}, device);
    std::cout << record.dump(2) << "\n";
    return 0;
}

int run_eval(const std::string& pred, const std::string& gt, const std::string& json_out,
             const metrics::EvalOptions& opts) {
    const auto report = metrics::evaluate(pred, gt, opts);
    const auto j = metrics::to_json(report);
    if (!json_out.empty()) {
        write_json(json_out, j);
    }
    std::cout << "PSNR " << report.psnr << " dB  SSIM " << report.ssim << "  (" << report.clips.size()
              << " clips)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Smoke-type-aware laparoscopic video desmoking"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic paired clips");
    synth_cmd->add_option("--config", synth_args.config, "Scene config (JSON)")->check(CLI::ExistingFile);
    synth_cmd->add_option("--scenario", synth_args.scenario, "Scenario when no config is given")
        ->check(CLI::IsMember({"diffusion", "ambient", "entangled"}));
    synth_cmd->add_option("--out", synth_args.out, "Output dataset root")->required();
    synth_cmd->add_option("--count", synth_args.count, "Number of clips");
    synth_cmd->add_option("--seed", synth_args.seed, "Seed override");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train from scratch");
    train_cmd->add_option("--config", train_args.config, "Training config (JSON)")->check(CLI::ExistingFile);
    train_cmd->add_option("--profile", train_args.profile, "Preset when no config is given (desk, full_scale)");
    train_cmd->add_option("--data", train_args.data, "Dataset root")->required();
    train_cmd->add_option("--out", train_args.out, "Run directory")->required();
    train_cmd->add_option("--iters", train_args.iters, "Override total_iters");
    train_cmd->add_option("--seed", train_args.seed, "Override seed");

    std::string ckpt, infer_in, infer_out;
    auto* infer_cmd = app.add_subcommand("infer", "Desmoke a clip or a dataset of clips");
    infer_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
    infer_cmd->add_option("--in", infer_in, "Input frames, clip or dataset root")->required();
    infer_cmd->add_option("--out", infer_out, "Output directory")->required();

    std::string pred, gt, json_out;
    metrics::EvalOptions eval_opts;
    auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM of predictions against ground truth");
    eval_cmd->add_option("--pred", pred, "Prediction root")->required();
    eval_cmd->add_option("--gt", gt, "Ground-truth root")->required();
    eval_cmd->add_option("--json", json_out, "Report path");
    eval_cmd->add_option("--pred-subdir", eval_opts.pred_subdir, "Frame directory inside each predicted clip");
    eval_cmd->add_option("--gt-subdir", eval_opts.gt_subdir, "Frame directory inside each ground-truth clip");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*synth_cmd) {
            return run_synth(synth_args);
        }
        if (*train_cmd) {
            return run_train(train_args);
        }
        if (*infer_cmd) {
            return run_infer(ckpt, infer_in, infer_out);
        }
        return run_eval(pred, gt, json_out, eval_opts);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
