#include <gtest/gtest.h>

#include "desmoke/reconstruction.hpp"
#include "oracles.hpp"

using namespace desmoke;

namespace F = torch::nn::functional;

namespace {

const std::array<int64_t, 4> kChannels = {16, 12, 8, 6};

FeaturePyramid random_pyramid(int64_t b, int64_t t, int64_t h, int64_t w) {
    FeaturePyramid p;
    for (size_t l = 0; l < 4; ++l) {
        p.levels[l] = torch::randn({b, t, kChannels[l], h / kPyramidStrides[l], w / kPyramidStrides[l]});
    }
    return p;
}

ReconstructionConfig small_config() {
    ReconstructionConfig c;
    c.branch_channels = 4;
    c.offset_hidden = 8;
    c.gate_hidden = 8;
    c.decoder_channels = 8;
    return c;
}

/// Gives every zero-initialized layer random weights so no path is trivially zero.
void randomize(torch::nn::Module& m, double std = 0.3) {
    torch::NoGradGuard no_grad;
    for (auto& p : m.parameters()) {
        if (p.abs().max().item<double>() == 0.0) {
            p.normal_(0.0, std);
        }
    }
}

}  // namespace

TEST(TemporalComposite, WindowOneIsTheMask) {
    auto m = torch::rand({2, 4, 5, 5});
    EXPECT_TRUE(torch::equal(temporal_composite(m, 1).squeeze(2), m));
    EXPECT_THROW(temporal_composite(m, 2), c10::Error);
}

TEST(TemporalComposite, ReplicatesAtBoundaries) {
    auto m = torch::arange(4, torch::kFloat).view({1, 4, 1, 1}).expand({1, 4, 2, 2}).contiguous();
    auto c = temporal_composite(m, 3);
    EXPECT_EQ(c.sizes(), (std::vector<int64_t>{1, 4, 3, 2, 2}));
    const float expected[4][3] = {{0, 0, 1}, {0, 1, 2}, {1, 2, 3}, {2, 3, 3}};
    for (int t = 0; t < 4; ++t) {
        for (int j = 0; j < 3; ++j) {
            EXPECT_EQ(c[0][t][j][1][1].item<float>(), expected[t][j]);
        }
    }
}

TEST(DeformConv, ZeroOffsetIsPlainConvolution) {
    torch::manual_seed(1);
    auto x = torch::randn({2, 3, 7, 9}, torch::kFloat64);
    auto w = torch::randn({4, 3, 3, 3}, torch::kFloat64);
    auto b = torch::randn({4}, torch::kFloat64);
    auto y = deform_conv2d(x, torch::zeros({2, 18, 7, 9}, torch::kFloat64), w, b);
    auto ref = F::conv2d(x, w, F::Conv2dFuncOptions().bias(b).padding(1));
    EXPECT_LE((y - ref).abs().max().item<double>(), 1e-10);
}

TEST(DeformConv, MatchesLoopOracle) {
    torch::manual_seed(2);
    auto x = torch::randn({1, 2, 6, 5}, torch::kFloat64);
    auto off = torch::randn({1, 18, 6, 5}, torch::kFloat64) * 1.7;
    auto w = torch::randn({3, 2, 3, 3}, torch::kFloat64);
    auto b = torch::randn({3}, torch::kFloat64);
    auto y = deform_conv2d(x, off, w, b);
    auto ref = oracle::deform_conv(x, off, w, b);
    EXPECT_LE((y - ref).abs().max().item<double>(), 1e-10);

    // A whole-pixel shift of every tap equals convolving the shifted image.
    auto shift = torch::zeros({1, 18, 6, 5}, torch::kFloat64);
    shift.index_put_({0, torch::indexing::Slice(0, 18, 2)}, 1.0);
    auto shifted = deform_conv2d(x, shift, w, b);
    auto ref_shift = oracle::deform_conv(x, shift, w, b);
    EXPECT_LE((shifted - ref_shift).abs().max().item<double>(), 1e-10);
}

TEST(DiffusionBranch, OffsetShapesAndCoordChannels) {
    torch::manual_seed(3);
    DiffusionBranch branch(6, 4, 3, 8);
    auto comp = torch::rand({2, 3, 8, 10});
    EXPECT_EQ(branch->offsets(comp).sizes(), (std::vector<int64_t>{2, kOffsetChannels, 8, 10}));
    for (auto& p : branch->named_parameters()) {
        if (p.key() == "offsets.coord_conv.weight") {
            EXPECT_EQ(p.value().size(1), 3 + 2);
        }
    }
    auto coords = coord_channels(1, 3, 5, torch::TensorOptions());
    EXPECT_FLOAT_EQ(coords[0][0][0][0].item<float>(), -1.0f);
    EXPECT_FLOAT_EQ(coords[0][0][0][4].item<float>(), 1.0f);
    EXPECT_FLOAT_EQ(coords[0][1][2][0].item<float>(), 1.0f);
    // Zero offsets at init: the branch is a 3x3 convolution.
    auto f = torch::randn({2, 6, 8, 10});
    auto ref = F::conv2d(f, branch->weight(), F::Conv2dFuncOptions().bias(branch->bias()).padding(1));
    EXPECT_LE((branch(f, comp) - ref).abs().max().item<double>(), 1e-5);
}

TEST(AmbientBranch, GatesFormADistribution) {
    torch::manual_seed(4);
    AmbientBranch branch(6, 4, 3, 8, std::vector<int64_t>{1, 2, 3});
    auto g = branch->gates(torch::rand({2, 3, 8, 8}) * 5.0);
    EXPECT_EQ(g.size(1), 3);
    EXPECT_LT((g.sum(1) - 1.0).abs().max().item<double>(), 1e-6);
    EXPECT_GE(g.min().item<double>(), 0.0);
}

TEST(AmbientBranch, OneHotGateSelectsOneDilation) {
    torch::manual_seed(5);
    AmbientBranch branch(6, 4, 3, 8, std::vector<int64_t>{1, 2, 3});
    auto x = torch::randn({1, 6, 9, 9});
    for (int64_t k = 0; k < 3; ++k) {
        auto gates = torch::zeros({1, 3, 9, 9});
        gates[0][k] = 1.0;
        auto y = gated_dilated_conv(x, gates, branch->weights(), branch->biases(), branch->rates());
        const auto r = branch->rates()[static_cast<size_t>(k)];
        auto ref = F::conv2d(x, branch->weights()[static_cast<size_t>(k)],
                             F::Conv2dFuncOptions().bias(branch->biases()[static_cast<size_t>(k)]).padding(r).dilation(r));
        EXPECT_LE((y - ref).abs().max().item<double>(), 1e-6) << k;
    }
}

TEST(Reconstruction, InactiveBranchesAreSkipped) {
    torch::manual_seed(6);
    Reconstruction rec(small_config(), kChannels);
    randomize(*rec);
    auto frames = torch::rand({1, 3, 3, 64, 64});
    auto pyr = random_pyramid(1, 3, 64, 64);
    auto low = torch::full({1, 3, 16, 16}, 0.005);
    auto high = torch::full({1, 3, 16, 16}, 0.5);

    auto none = rec(frames, pyr, low, low);
    EXPECT_FALSE(none.activation.diff[0]);
    EXPECT_FALSE(none.activation.amb[0]);
    EXPECT_EQ(rec->diff_calls(), 0);
    EXPECT_EQ(rec->amb_calls(), 0);
    EXPECT_TRUE(torch::equal(none.restored, frames));

    auto diff_only = rec(frames, pyr, high, low);
    EXPECT_EQ(rec->diff_calls(), 1);
    EXPECT_EQ(rec->amb_calls(), 0);
    // An inactive branch contributes exactly the zero feature map.
    auto by_hand = rec->decode(frames, pyr, rec->diffusion_features(pyr, high), torch::Tensor());
    EXPECT_TRUE(torch::allclose(diff_only.restored, by_hand, 1e-6, 1e-6));

    auto both = rec(frames, pyr, high, high);
    EXPECT_EQ(rec->diff_calls(), 2);
    EXPECT_EQ(rec->amb_calls(), 1);
    EXPECT_GT((both.restored - diff_only.restored).abs().max().item<double>(), 1e-6);

    rec->reset_counters();
    EXPECT_EQ(rec->diff_calls() + rec->amb_calls(), 0);
}

TEST(Reconstruction, ThresholdIsInclusive) {
    Reconstruction rec(small_config(), kChannels);
    auto flags = rec->active(torch::stack({torch::full({2, 4, 4}, 0.01, torch::kFloat64), torch::full({2, 4, 4}, 0.0099, torch::kFloat64)}));
    EXPECT_TRUE(flags[0]);
    EXPECT_FALSE(flags[1]);
}

TEST(Reconstruction, OutputRangeAndShape) {
    torch::manual_seed(7);
    Reconstruction rec(small_config(), kChannels);
    randomize(*rec, 2.0);
    auto frames = torch::rand({2, 3, 3, 32, 64});
    auto pyr = random_pyramid(2, 3, 32, 64);
    auto out = rec(frames, pyr, torch::rand({2, 3, 8, 16}), torch::rand({2, 3, 8, 16}));
    EXPECT_EQ(out.restored.sizes(), frames.sizes());
    EXPECT_GE(out.restored.min().item<double>(), 0.0);
    EXPECT_LE(out.restored.max().item<double>(), 1.0);
    EXPECT_GT((out.restored - frames).abs().max().item<double>(), 1e-3);
}

TEST(DiffusionBranch, GradientMatchesFiniteDifferences) {
    torch::manual_seed(8);
    DiffusionBranch branch(3, 2, 3, 4);
    randomize(*branch, 0.5);
    branch->to(torch::kFloat64);
    auto f = torch::randn({1, 3, 6, 6}, torch::kFloat64).requires_grad_(true);
    auto comp = torch::rand({1, 3, 6, 6}, torch::kFloat64).requires_grad_(true);
    auto r = torch::randn({1, 2, 6, 6}, torch::kFloat64);
    auto fn = [&] { return (branch(f, comp) * r).sum(); };
    std::vector<torch::Tensor> inputs = {f, comp, branch->weight(), branch->bias()};
    for (auto& p : branch->named_parameters()) {
        if (p.key().rfind("offsets.project", 0) == 0) {
            inputs.push_back(p.value());
        }
    }
    bool nontrivial = false;
    EXPECT_LT(oracle::gradient_error(fn, inputs, 48, 1e-6, &nontrivial), 1e-3);
    EXPECT_TRUE(nontrivial);
}

TEST(AmbientBranch, GradientMatchesFiniteDifferences) {
    torch::manual_seed(9);
    AmbientBranch branch(3, 2, 3, 4, std::vector<int64_t>{1, 2, 3});
    branch->to(torch::kFloat64);
    auto f = torch::randn({1, 3, 7, 7}, torch::kFloat64).requires_grad_(true);
    auto comp = torch::rand({1, 3, 7, 7}, torch::kFloat64).requires_grad_(true);
    auto r = torch::randn({1, 2, 7, 7}, torch::kFloat64);
    auto fn = [&] { return (branch(f, comp) * r).sum(); };
    std::vector<torch::Tensor> inputs = {f, comp};
    for (auto& p : branch->parameters()) {
        inputs.push_back(p);
    }
    bool nontrivial = false;
    EXPECT_LT(oracle::gradient_error(fn, inputs, 48, 1e-6, &nontrivial), 1e-3);
    EXPECT_TRUE(nontrivial);
}
