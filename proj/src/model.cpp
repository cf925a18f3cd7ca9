#include "desmoke/model.hpp"

#include <cstdlib>

#include "desmoke/error.hpp"

namespace desmoke {

namespace F = torch::nn::functional;

DesmokeNetImpl::DesmokeNetImpl(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    perception_ = register_module("perception", FeaturePerception(cfg_.perception));
    const auto ch = perception_->channels();
    segmentation_ = register_module("segmentation", MaskSegmentation(cfg_.segmentation, ch));
    disentanglement_ = register_module("disentanglement", Disentanglement(ch[3], cfg_.disentangle));
    reconstruction_ = register_module("reconstruction", Reconstruction(cfg_.reconstruction, ch));
}

ModelOutput DesmokeNetImpl::predict_masks(const torch::Tensor& frames, nn::AttentionProbe* probe) {
    TORCH_CHECK(frames.dim() == 5 && frames.size(2) == 3, "expected (B,T,3,H,W), got ", frames.sizes());
    ModelOutput out;
    out.pyramid = perception_->forward((frames - 0.5) / 0.25, probe);
    auto [local, coarse] = segmentation_->forward(out.pyramid, probe);
    out.local = std::move(local);
    out.coarse = std::move(coarse);
    out.masks = disentanglement_->forward(out.coarse, out.pyramid.f(4), &out.regions, probe);
    return out;
}

ModelOutput DesmokeNetImpl::forward(const torch::Tensor& frames, nn::AttentionProbe* probe,
                                    const BranchActivation* activation) {
    const auto h = frames.size(3), w = frames.size(4);
    auto out = predict_masks(frames, probe);

    auto padded = frames;
    if (out.pyramid.pad_h > 0 || out.pyramid.pad_w > 0) {
        const auto b = frames.size(0), t = frames.size(1);
        padded = F::pad(frames.flatten(0, 1),
                        F::PadFuncOptions({0, out.pyramid.pad_w, 0, out.pyramid.pad_h}).mode(torch::kReflect));
        padded = padded.view({b, t, 3, padded.size(2), padded.size(3)});
    }
    auto rec = reconstruction_->forward(padded, out.pyramid, out.masks.diff, out.masks.amb, activation);
    out.restored = rec.restored.narrow(3, 0, h).narrow(4, 0, w);
    out.activation = std::move(rec.activation);
    return out;
}

void save_checkpoint(DesmokeNet& model, const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    torch::serialize::OutputArchive archive;
    model->save(archive);
    archive.write("format_version", torch::tensor(kCheckpointFormatVersion));
    const std::string config = nlohmann::json(model->config()).dump();
    auto bytes = torch::tensor(std::vector<int64_t>(config.begin(), config.end()));
    archive.write("model_config", bytes);
    archive.save_to(path.string());
}

DesmokeNet load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw IoError("checkpoint not found: " + path.string());
    }
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(path.string());
    } catch (const c10::Error& e) {
        throw VersionError("unreadable checkpoint " + path.string());
    }
    torch::Tensor version, bytes;
    if (!archive.try_read("format_version", version) || version.item<int64_t>() != kCheckpointFormatVersion) {
        throw VersionError("checkpoint " + path.string() + " has an unsupported format version");
    }
    if (!archive.try_read("model_config", bytes)) {
        throw VersionError("checkpoint " + path.string() + " carries no model config");
    }
    auto acc = bytes.to(torch::kInt64).contiguous();
    std::string text(static_cast<size_t>(acc.numel()), '\0');
    for (int64_t i = 0; i < acc.numel(); ++i) {
        text[static_cast<size_t>(i)] = static_cast<char>(acc[i].item<int64_t>());
    }
    ModelConfig cfg;
    try {
        cfg = nlohmann::json::parse(text).get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw VersionError("checkpoint " + path.string() + " has a malformed model config");
    }
    DesmokeNet model(cfg);
    try {
        model->load(archive);
    } catch (const c10::Error& e) {
        throw VersionError("checkpoint " + path.string() + " does not match its model config");
    }
    return model;
}

torch::Device select_device() {
    const char* env = std::getenv("DESMOKE_DEVICE");
    const std::string name = env ? env : "cpu";
    if (name == "cpu") {
        return torch::kCPU;
    }
    if (name == "cuda") {
        if (!torch::cuda::is_available()) {
            throw ConfigError("DESMOKE_DEVICE=cuda but CUDA is not available");
        }
        return torch::kCUDA;
    }
    throw ConfigError("unknown DESMOKE_DEVICE '" + name + "'");
}

}  // namespace desmoke
