#include "cloudmask/unet.hpp"

#include <string>

#include "cloudmask/errors.hpp"

namespace cloudmask {

void UNetConfig::validate() const {
  if (in_channels < 1) throw ConfigError("UNetConfig: in_channels must be >= 1, got " + std::to_string(in_channels));
  if (depth < 1) throw ConfigError("UNetConfig: depth must be >= 1, got " + std::to_string(depth));
  if (base_channels < 1) {
    throw ConfigError("UNetConfig: base_channels must be >= 1, got " + std::to_string(base_channels));
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw ConfigError("UNetConfig: kernel_size must be odd and >= 1, got " + std::to_string(kernel_size));
  }
  if (patch_size < 1) throw ConfigError("UNetConfig: patch_size must be >= 1, got " + std::to_string(patch_size));
  const int div = 1 << depth;
  if (patch_size % div != 0) {
    throw ConfigError("UNetConfig: patch_size " + std::to_string(patch_size) + " not divisible by 2^depth = " +
                      std::to_string(div));
  }
}

std::vector<ParamSpec> unet_param_specs(const UNetConfig& config) {
  config.validate();
  const int k = config.kernel_size;
  std::vector<ParamSpec> specs;

  auto conv_block = [&](const std::string& prefix, int cin, int cout) {
    specs.push_back({prefix + ".conv1.weight", Shape{cout, cin, k, k}, static_cast<std::int64_t>(cin) * k * k});
    specs.push_back({prefix + ".conv1.bias", Shape{cout}, 0});
    specs.push_back({prefix + ".conv2.weight", Shape{cout, cout, k, k}, static_cast<std::int64_t>(cout) * k * k});
    specs.push_back({prefix + ".conv2.bias", Shape{cout}, 0});
  };

  for (int level = 0; level < config.depth; ++level) {
    const int cin = level == 0 ? config.in_channels : config.base_channels << (level - 1);
    const int cout = config.base_channels << level;
    conv_block("enc" + std::to_string(level), cin, cout);
  }
  {
    const int cin = config.base_channels << (config.depth - 1);
    const int cout = config.base_channels << config.depth;
    conv_block("bottleneck", cin, cout);
  }
  for (int level = config.depth - 1; level >= 0; --level) {
    const std::string prefix = "dec" + std::to_string(level);
    const int cup = config.base_channels << (level + 1);   // channels arriving from below
    const int cout = config.base_channels << level;
    // Stride-2 2x2 up-convolution: each output pixel sees one input pixel
    // across cup channels, so that is the fan-in.
    specs.push_back({prefix + ".up.weight", Shape{cup, cout, 2, 2}, cup});
    specs.push_back({prefix + ".up.bias", Shape{cout}, 0});
    conv_block(prefix, 2 * cout, cout);
  }
  specs.push_back({"out.weight", Shape{1, config.base_channels, 1, 1}, config.base_channels});
  specs.push_back({"out.bias", Shape{1}, 0});
  return specs;
}

std::int64_t param_count(const UNetConfig& config) {
  std::int64_t total = 0;
  for (const ParamSpec& spec : unet_param_specs(config)) total += shape_numel(spec.shape);
  return total;
}

}  // namespace cloudmask
