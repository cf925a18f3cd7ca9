#include "desmoke/config.hpp"

#include <fstream>

#include "desmoke/error.hpp"

namespace desmoke {

void ModelConfig::validate() const {
    if (frame_window < 1) {
        throw ConfigError("frame_window must be >= 1");
    }
    if (perception.widths.size() != 4) {
        throw ConfigError("perception.widths must list four channel widths (c1..c4)");
    }
    if (perception.heads < 1 || perception.head_dim < 1 || perception.points < 1 || perception.window < 1) {
        throw ConfigError("perception heads/head_dim/points/window must be positive");
    }
    if (segmentation.num_queries < 2) {
        throw ConfigError("segmentation.num_queries must be >= 2");
    }
    if (segmentation.dim < 1 || segmentation.dim % segmentation.heads != 0 || segmentation.dim % 4 != 0) {
        throw ConfigError("segmentation.dim must be positive, divisible by heads and by 4");
    }
    if (segmentation.blocks < 1 || segmentation.blocks > 3) {
        throw ConfigError("segmentation.blocks must be in [1,3]");
    }
    if (disentangle.patch < 1 || disentangle.dim % disentangle.refine_heads != 0 || disentangle.dim % 4 != 0) {
        throw ConfigError("disentangle.patch must be positive and dim divisible by refine_heads and 4");
    }
    if (disentangle.tau <= 0.0 || disentangle.tau >= 1.0) {
        throw ConfigError("disentangle.tau must lie in (0,1)");
    }
    if (reconstruction.composite_window < 1 || reconstruction.composite_window % 2 == 0) {
        throw ConfigError("reconstruction.composite_window must be odd");
    }
    if (reconstruction.dilation_rates.empty()) {
        throw ConfigError("reconstruction.dilation_rates must not be empty");
    }
}

void LossConfig::validate() const {
    if (lambda_g < 0.0) {
        throw ConfigError("lambda_g must be >= 0");
    }
    if (wing_omega <= 0.0 || wing_epsilon <= 0.0) {
        throw ConfigError("wing parameters must be > 0");
    }
    if (lambda_cls < 0 || lambda_bce < 0 || lambda_dice < 0 || lambda_rec < 0 || no_object_weight < 0) {
        throw ConfigError("loss weights must be >= 0");
    }
}

void TrainConfig::validate() const {
    if (lr <= 0.0) {
        throw ConfigError("lr must be > 0");
    }
    if (total_iters < 0) {
        throw ConfigError("total_iters must be >= 0");
    }
    if (crop_size <= 0 || crop_size % 32 != 0) {
        throw ConfigError("crop_size must be a positive multiple of 32");
    }
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1");
    }
    model.validate();
    loss.validate();
}

TrainConfig TrainConfig::profile(const std::string& name) {
    TrainConfig c;
    if (name == "desk") {
        return c;
    }
    if (name == "full_scale") {
        c.crop_size = 704;
        c.batch_size = 4;
        c.total_iters = 90000;
        c.checkpoint_interval = 5000;
        c.model.perception.widths = {512, 256, 128, 64};
        c.model.segmentation.dim = 256;
        c.model.segmentation.heads = 8;
        c.model.segmentation.ffn = 2048;
        c.model.disentangle.dim = 128;
        c.model.disentangle.ffn = 512;
        c.model.reconstruction.branch_channels = 64;
        c.model.reconstruction.offset_hidden = 64;
        c.model.reconstruction.gate_hidden = 64;
        c.model.reconstruction.decoder_channels = 128;
        return c;
    }
    throw ConfigError("unknown profile '" + name + "'");
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path);
    }
    try {
        auto j = nlohmann::json::parse(in);
        const std::string profile = j.value("profile", std::string("desk"));
        j.erase("profile");
        nlohmann::json base = TrainConfig::profile(profile);
        base.merge_patch(j);
        auto cfg = base.get<TrainConfig>();
        cfg.validate();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config " + path + ": " + e.what());
    }
}

}  // namespace desmoke
