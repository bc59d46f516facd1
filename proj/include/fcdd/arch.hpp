#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fcdd/errors.hpp"

namespace fcdd {

enum class LayerKind { kConv, kMaxPool, kBatchNorm, kActivation };

// One layer of a declarative fully convolutional stack. The kind set is
// closed: there is no dense/fully-connected kind by construction.
struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  long kernel = 1;
  long stride = 1;
  long padding = 0;
  long in_channels = 0;   // conv only
  long out_channels = 0;  // conv only
  double alpha = 0.0;     // activation only

  static LayerSpec conv(long in, long out, long k, long s = 1, long p = 0);
  static LayerSpec maxpool(long k, long s);
  static LayerSpec batchnorm();
  static LayerSpec leaky_relu(double alpha);
};

// Receptive-field geometry of a whole stack: the side length of the input
// square one output pixel sees, the input-pixel distance between adjacent
// output pixels, and the input coordinate of output pixel (0,0)'s center.
struct RFInfo {
  long rf_size = 1;
  long cumulative_stride = 1;
  double center_offset = 0.0;
};

struct ArchitectureSpec {
  std::vector<LayerSpec> layers;
  long in_channels = 1;
  long in_height = 1;
  long in_width = 1;

  // Throws ConfigError on invalid stacks (wrong channel chaining, >1 output
  // channel, spatial extent collapsing below 1x1).
  void validate() const;
  // Spatial extent of the output feature map for the spec's input size.
  std::pair<long, long> output_extent() const;
  std::pair<long, long> output_extent(long h, long w) const;
  long output_channels() const;
};

RFInfo receptive_field(const ArchitectureSpec& spec);

// Appendix-style presets. `first_kernel` overrides the kernel size of the
// first convolution (receptive-field sensitivity study); 0 keeps the default.
ArchitectureSpec preset(const std::string& name, long first_kernel = 0);

// Line-oriented architecture files: one layer per line
// (`conv in=3 out=32 k=3 s=1 p=1`, `maxpool k=2 s=2`, `bn`, `lrelu a=0.01`),
// optional `input c=3 h=32 w=32` line, comments start with '#'.
ArchitectureSpec parse_architecture(const std::string& text);
ArchitectureSpec load_architecture(const std::string& path);
std::string format_architecture(const ArchitectureSpec& spec);

}  // namespace fcdd
