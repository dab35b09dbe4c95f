#include "support.hpp"

#include "sct/errors.hpp"
#include "sct/unet.hpp"

using namespace sct;
using sct::testing::bit_equal;
using sct::testing::check_gradient;
using sct::testing::pick;
using sct::testing::uniform;

namespace {

int64_t double_conv_params(int64_t in, int64_t out) { return 27 * (in * out + out * out) + 4 * out; }
int64_t up_params(int64_t in, int64_t out) { return in * out * 8 + out; }

int64_t expected_params(int64_t in_channels, std::array<int64_t, 3> f, int64_t fb) {
  return double_conv_params(in_channels, f[0]) + double_conv_params(f[0], f[1]) + double_conv_params(f[1], f[2]) +
         double_conv_params(f[2], fb) + up_params(fb, f[2]) + double_conv_params(2 * f[2], f[2]) +
         up_params(f[2], f[1]) + double_conv_params(2 * f[1], f[1]) + up_params(f[1], f[0]) +
         double_conv_params(2 * f[0], f[0]) + f[0] + 1;
}

UNetConfig tiny(int64_t in_channels = 2) {
  UNetConfig c;
  c.encoder_features = {2, 3, 4};
  c.bottleneck_features = 5;
  c.in_channels = in_channels;
  return c;
}

} // namespace

TEST_CASE("reference U-Net shapes and ladder") {
  torch::manual_seed(0);
  UNet3d net;
  CHECK(net->config().is_reference_ladder());
  CHECK(UNet3dImpl::kSkipConnections == 3);
  net->eval();
  torch::NoGradGuard ng;
  CHECK((net->forward(uniform({1, 2, 32, 32, 32}, 1)).sizes() == torch::IntArrayRef{1, 1, 32, 32, 32}));
  CHECK((net->forward(uniform({2, 2, 16, 16, 16}, 2)).sizes() == torch::IntArrayRef{2, 1, 16, 16, 16}));
  CHECK((net->forward(uniform({1, 2, 8, 16, 24}, 3)).sizes() == torch::IntArrayRef{1, 1, 8, 16, 24}));
}

TEST_CASE("U-Net rejects bad inputs") {
  UNet3d net(tiny());
  CHECK_THROWS_AS(net->forward(uniform({1, 2, 15, 16, 16}, 1)), InvalidArgument);
  CHECK_THROWS_AS(net->forward(uniform({1, 1, 16, 16, 16}, 1)), InvalidArgument);
  CHECK_THROWS_AS(net->forward(uniform({2, 16, 16, 16}, 1)), InvalidArgument);
  UNetConfig c;
  c.in_channels = 3;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.out_channels = 2;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("parameter count matches the closed form") {
  CHECK(parameter_count(*UNet3d()) == expected_params(2, {32, 64, 128}, 256));
  CHECK(parameter_count(*UNet3d(tiny(1))) == expected_params(1, {2, 3, 4}, 5));
  CHECK(parameter_count(*UNet3d(tiny(2))) == expected_params(2, {2, 3, 4}, 5));
  UNet3d net;
  for (const auto &p : net->named_parameters())
    if (p.key().find("conv") != std::string::npos) CHECK_MESSAGE(p.key().find("bias") == std::string::npos, p.key());
}

TEST_CASE("unimodal U-Net takes one channel") {
  UNet3d net(tiny(1));
  net->eval();
  torch::NoGradGuard ng;
  CHECK((net->forward(uniform({1, 1, 8, 8, 8}, 4)).sizes() == torch::IntArrayRef{1, 1, 8, 8, 8}));
}

TEST_CASE("eval-mode U-Net is deterministic and seeded") {
  torch::manual_seed(6);
  UNet3d a(tiny());
  torch::manual_seed(6);
  UNet3d b(tiny());
  a->eval();
  b->eval();
  torch::NoGradGuard ng;
  const torch::Tensor x = uniform({1, 2, 16, 16, 16}, 7);
  CHECK(bit_equal(a->forward(x), a->forward(x)));
  CHECK(bit_equal(a->forward(x), b->forward(x)));
}

TEST_CASE("U-Net gradient matches finite differences") {
  torch::manual_seed(8);
  UNet3d net(tiny());
  net->to(torch::kFloat64);
  net->train();
  const torch::Tensor x = uniform({1, 2, 16, 16, 16}, 9, torch::kFloat64);
  const torch::Tensor y = uniform({1, 1, 16, 16, 16}, 10, torch::kFloat64);
  const auto f = [&] { return (net->forward(x) - y).square().sum(); };
  for (torch::Tensor w : {net->enc1->conv1->weight, net->bottleneck->conv2->weight, net->up1->weight,
                          net->dec1->norm2->weight, net->head->weight}) {
    const auto check = check_gradient(f, w, pick(w.numel(), 16, 11));
    CHECK(check.numeric_norm > 0.0);
    CHECK(check.relative_error < 1e-5);
  }
  torch::Tensor input = x.clone().requires_grad_(true);
  const auto g = [&] { return (net->forward(input) - y).square().sum(); };
  CHECK(check_gradient(g, input, pick(input.numel(), 16, 12)).relative_error < 1e-5);
}
