#include "fcdd/arch.hpp"

#include <fstream>
#include <sstream>

namespace fcdd {

LayerSpec LayerSpec::conv(long in, long out, long k, long s, long p) {
  if (in < 1 || out < 1 || k < 1 || s < 1 || p < 0)
    throw ConfigError("conv layer: invalid parameters");
  LayerSpec l;
  l.kind = LayerKind::kConv;
  l.in_channels = in;
  l.out_channels = out;
  l.kernel = k;
  l.stride = s;
  l.padding = p;
  return l;
}

LayerSpec LayerSpec::maxpool(long k, long s) {
  if (k < 1 || s < 1) throw ConfigError("maxpool layer: invalid parameters");
  LayerSpec l;
  l.kind = LayerKind::kMaxPool;
  l.kernel = k;
  l.stride = s;
  return l;
}

LayerSpec LayerSpec::batchnorm() {
  LayerSpec l;
  l.kind = LayerKind::kBatchNorm;
  return l;
}

LayerSpec LayerSpec::leaky_relu(double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0))
    throw ConfigError("lrelu layer: alpha must be in [0,1)");
  LayerSpec l;
  l.kind = LayerKind::kActivation;
  l.alpha = alpha;
  return l;
}

void ArchitectureSpec::validate() const {
  if (layers.empty()) throw ConfigError("architecture has no layers");
  if (in_channels < 1 || in_height < 1 || in_width < 1)
    throw ConfigError("architecture: invalid input shape");
  long channels = in_channels;
  bool saw_conv = false;
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::kConv:
        if (l.in_channels != channels)
          throw ConfigError("layer " + std::to_string(i) + ": conv expects " +
                            std::to_string(l.in_channels) + " channels, got " +
                            std::to_string(channels));
        channels = l.out_channels;
        saw_conv = true;
        break;
      case LayerKind::kMaxPool:
      case LayerKind::kBatchNorm:
      case LayerKind::kActivation:
        break;
    }
  }
  if (!saw_conv) throw ConfigError("architecture has no convolutional layer");
  if (channels != 1)
    throw ConfigError("final feature map must have exactly 1 channel, got " +
                      std::to_string(channels));
  auto [u, v] = output_extent();
  if (u < 1 || v < 1)
    throw ConfigError("architecture collapses spatial extent below 1x1");
}

std::pair<long, long> ArchitectureSpec::output_extent() const {
  return output_extent(in_height, in_width);
}

std::pair<long, long> ArchitectureSpec::output_extent(long h, long w) const {
  for (const LayerSpec& l : layers) {
    if (l.kind == LayerKind::kConv) {
      // Signal collapse before the truncating division can round it away.
      if (h + 2 * l.padding < l.kernel || w + 2 * l.padding < l.kernel)
        return {0, 0};
      h = (h + 2 * l.padding - l.kernel) / l.stride + 1;
      w = (w + 2 * l.padding - l.kernel) / l.stride + 1;
    } else if (l.kind == LayerKind::kMaxPool) {
      if (h < l.kernel || w < l.kernel) return {0, 0};
      h = (h - l.kernel) / l.stride + 1;
      w = (w - l.kernel) / l.stride + 1;
    }
    if (h < 1 || w < 1) return {h, w};
  }
  return {h, w};
}

long ArchitectureSpec::output_channels() const {
  long channels = in_channels;
  for (const LayerSpec& l : layers)
    if (l.kind == LayerKind::kConv) channels = l.out_channels;
  return channels;
}

RFInfo receptive_field(const ArchitectureSpec& spec) {
  spec.validate();
  RFInfo rf;
  // r grows by (k-1)*S per spatial layer; the center offset accumulates the
  // kernel-center shift minus padding, scaled by the stride so far.
  for (const LayerSpec& l : spec.layers) {
    if (l.kind != LayerKind::kConv && l.kind != LayerKind::kMaxPool) continue;
    const long pad = l.kind == LayerKind::kConv ? l.padding : 0;
    rf.rf_size += (l.kernel - 1) * rf.cumulative_stride;
    rf.center_offset +=
        ((l.kernel - 1) / 2.0 - pad) * static_cast<double>(rf.cumulative_stride);
    rf.cumulative_stride *= l.stride;
  }
  return rf;
}

namespace {

ArchitectureSpec make_fmnist28() {
  ArchitectureSpec s;
  s.in_channels = 1;
  s.in_height = 28;
  s.in_width = 28;
  s.layers = {
      LayerSpec::conv(1, 32, 3, 1, 1),  LayerSpec::batchnorm(),
      LayerSpec::leaky_relu(0.01),      LayerSpec::maxpool(2, 2),
      LayerSpec::conv(32, 64, 3, 1, 1), LayerSpec::batchnorm(),
      LayerSpec::leaky_relu(0.01),      LayerSpec::maxpool(2, 2),
      LayerSpec::conv(64, 1, 3, 1, 1),
  };
  return s;
}

ArchitectureSpec make_cifar32(long k1) {
  if (k1 == 0) k1 = 3;
  if (k1 < 1 || k1 % 2 == 0)
    throw ConfigError("cifar32 first kernel size must be odd and >= 1");
  ArchitectureSpec s;
  s.in_channels = 3;
  s.in_height = 32;
  s.in_width = 32;
  s.layers = {
      LayerSpec::conv(3, 32, k1, 1, (k1 - 1) / 2),
      LayerSpec::batchnorm(),
      LayerSpec::leaky_relu(0.01),
      LayerSpec::maxpool(2, 2),
      LayerSpec::conv(32, 64, 3, 1, 1),
      LayerSpec::batchnorm(),
      LayerSpec::leaky_relu(0.01),
      LayerSpec::maxpool(2, 2),
      LayerSpec::conv(64, 128, 3, 1, 1),
      LayerSpec::batchnorm(),
      LayerSpec::leaky_relu(0.01),
      LayerSpec::conv(128, 1, 1, 1, 0),
  };
  return s;
}

ArchitectureSpec make_vgg224like() {
  // VGG11-family conv stack with a 1x1 single-channel head; ships untrained.
  ArchitectureSpec s;
  s.in_channels = 3;
  s.in_height = 224;
  s.in_width = 224;
  s.layers = {
      LayerSpec::conv(3, 64, 3, 1, 1),    LayerSpec::batchnorm(),
      LayerSpec::leaky_relu(0.01),        LayerSpec::maxpool(2, 2),
      LayerSpec::conv(64, 128, 3, 1, 1),  LayerSpec::batchnorm(),
      LayerSpec::leaky_relu(0.01),        LayerSpec::maxpool(2, 2),
      LayerSpec::conv(128, 256, 3, 1, 1), LayerSpec::batchnorm(),
      LayerSpec::leaky_relu(0.01),
      LayerSpec::conv(256, 256, 3, 1, 1), LayerSpec::batchnorm(),
      LayerSpec::leaky_relu(0.01),        LayerSpec::maxpool(2, 2),
      LayerSpec::conv(256, 512, 3, 1, 1), LayerSpec::batchnorm(),
      LayerSpec::leaky_relu(0.01),
      LayerSpec::conv(512, 1, 1, 1, 0),
  };
  return s;
}

// key=value tokens on a layer line.
long parse_field(const std::string& token, const std::string& key, long line_no) {
  if (token.rfind(key + "=", 0) != 0)
    throw ConfigError("architecture line " + std::to_string(line_no) +
                      ": expected '" + key + "=', got '" + token + "'");
  try {
    return std::stol(token.substr(key.size() + 1));
  } catch (const std::exception&) {
    throw ConfigError("architecture line " + std::to_string(line_no) +
                      ": bad value in '" + token + "'");
  }
}

}  // namespace

ArchitectureSpec preset(const std::string& name, long first_kernel) {
  ArchitectureSpec s;
  if (name == "fmnist28") {
    s = make_fmnist28();
    if (first_kernel != 0) {
      s.layers[0] = LayerSpec::conv(1, 32, first_kernel, 1, (first_kernel - 1) / 2);
    }
  } else if (name == "cifar32") {
    s = make_cifar32(first_kernel);
  } else if (name == "vgg224like") {
    if (first_kernel != 0)
      throw ConfigError("vgg224like preset has no kernel-size variant");
    s = make_vgg224like();
  } else {
    throw ConfigError("unknown architecture preset '" + name + "'");
  }
  s.validate();
  return s;
}

ArchitectureSpec parse_architecture(const std::string& text) {
  ArchitectureSpec s;
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  bool have_input = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
    std::istringstream ls(line);
    std::string op;
    if (!(ls >> op)) continue;
    std::vector<std::string> tokens;
    for (std::string t; ls >> t;) tokens.push_back(t);
    if (op == "input") {
      if (tokens.size() != 3)
        throw ConfigError("architecture line " + std::to_string(line_no) +
                          ": input needs c= h= w=");
      s.in_channels = parse_field(tokens[0], "c", line_no);
      s.in_height = parse_field(tokens[1], "h", line_no);
      s.in_width = parse_field(tokens[2], "w", line_no);
      have_input = true;
    } else if (op == "conv") {
      if (tokens.size() != 5)
        throw ConfigError("architecture line " + std::to_string(line_no) +
                          ": conv needs in= out= k= s= p=");
      s.layers.push_back(LayerSpec::conv(
          parse_field(tokens[0], "in", line_no), parse_field(tokens[1], "out", line_no),
          parse_field(tokens[2], "k", line_no), parse_field(tokens[3], "s", line_no),
          parse_field(tokens[4], "p", line_no)));
    } else if (op == "maxpool") {
      if (tokens.size() != 2)
        throw ConfigError("architecture line " + std::to_string(line_no) +
                          ": maxpool needs k= s=");
      s.layers.push_back(LayerSpec::maxpool(parse_field(tokens[0], "k", line_no),
                                            parse_field(tokens[1], "s", line_no)));
    } else if (op == "bn") {
      s.layers.push_back(LayerSpec::batchnorm());
    } else if (op == "lrelu") {
      double alpha = 0.01;
      if (!tokens.empty()) {
        if (tokens.size() != 1 || tokens[0].rfind("a=", 0) != 0)
          throw ConfigError("architecture line " + std::to_string(line_no) +
                            ": lrelu takes a single a= field");
        alpha = std::stod(tokens[0].substr(2));
      }
      s.layers.push_back(LayerSpec::leaky_relu(alpha));
    } else {
      // Dense or any other unknown layer kind is rejected outright.
      throw ConfigError("architecture line " + std::to_string(line_no) +
                        ": unknown layer kind '" + op + "'");
    }
  }
  if (!have_input)
    throw ConfigError("architecture file is missing an 'input c= h= w=' line");
  s.validate();
  return s;
}

ArchitectureSpec load_architecture(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open architecture file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_architecture(ss.str());
}

std::string format_architecture(const ArchitectureSpec& spec) {
  std::ostringstream out;
  out << "input c=" << spec.in_channels << " h=" << spec.in_height
      << " w=" << spec.in_width << "\n";
  for (const LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::kConv:
        out << "conv in=" << l.in_channels << " out=" << l.out_channels
            << " k=" << l.kernel << " s=" << l.stride << " p=" << l.padding
            << "\n";
        break;
      case LayerKind::kMaxPool:
        out << "maxpool k=" << l.kernel << " s=" << l.stride << "\n";
        break;
      case LayerKind::kBatchNorm:
        out << "bn\n";
        break;
      case LayerKind::kActivation:
        out << "lrelu a=" << l.alpha << "\n";
        break;
    }
  }
  return out.str();
}

}  // namespace fcdd
