#include <string>

#include "byte_io.hpp"
#include "coinnet/model.hpp"
#include "coinnet/rng.hpp"

namespace coinnet::model {

namespace {

std::string config_str(const ModelConfig& c) {
  return "H=" + std::to_string(c.height) + " W=" + std::to_string(c.width) + " C1=" + std::to_string(c.alpha_channels) +
         " C2=" + std::to_string(c.beta_channels) + " d=" + std::to_string(c.sketch_dim) +
         " blocks=" + std::to_string(c.residual_blocks) + " K=" + std::to_string(c.classes);
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const ModelParams& params) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.uint<std::uint16_t>(kCheckpointVersion);
  const ModelConfig& c = params.config;
  for (std::size_t v : {c.height, c.width, c.alpha_channels, c.beta_channels, c.sketch_dim, c.residual_blocks, c.classes})
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(v));
  w.uint<std::uint64_t>(params.sketch_seed);
  w.uint<std::uint32_t>(Rng::kGeneratorId);
  for_each_tensor(params.weights, [&](ConstTensorView t) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.uint<std::uint32_t>(d);
    for (double v : t.values) w.f64(v);
  });
  return std::move(w.buffer());
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_checkpoint(params));
}

ModelParams decode_checkpoint(std::span<const unsigned char> bytes, const std::optional<ModelConfig>& expected) {
  detail::ByteReader r(bytes, "checkpoint");
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::string(magic, 4) != std::string(kCheckpointMagic, 4)) r.reject(0, "bad magic (expected CNMD)");
  const auto version = r.uint<std::uint16_t>("version");
  if (version != kCheckpointVersion) r.reject(4, "unsupported version " + std::to_string(version));

  ModelConfig c;
  const std::size_t config_at = r.offset();
  c.height = r.uint<std::uint32_t>("height");
  c.width = r.uint<std::uint32_t>("width");
  c.alpha_channels = r.uint<std::uint32_t>("alpha channels");
  c.beta_channels = r.uint<std::uint32_t>("beta channels");
  c.sketch_dim = r.uint<std::uint32_t>("sketch dim");
  c.residual_blocks = r.uint<std::uint32_t>("residual blocks");
  c.classes = r.uint<std::uint32_t>("classes");
  try {
    c.validate();
  } catch (const Error& e) {
    r.reject(config_at, std::string("invalid config: ") + e.what());
  }
  if (expected && !(*expected == c)) {
    fail(ErrorKind::ShapeMismatch,
         "checkpoint shape mismatch: file has " + config_str(c) + ", expected " + config_str(*expected));
  }
  const std::uint64_t sketch_seed = r.uint<std::uint64_t>("sketch seed");
  const std::size_t generator_at = r.offset();
  const auto generator = r.uint<std::uint32_t>("generator id");
  if (generator != Rng::kGeneratorId) r.reject(generator_at, "unknown generator id " + std::to_string(generator));

  // Reject headers whose tensors cannot fit in the payload before allocating.
  const double declared = static_cast<double>(c.residual_blocks) * 2.0 * (9.0 * c.sketch_dim * c.sketch_dim + c.sketch_dim) +
                          (9.0 * c.alpha_channels + 1.0) + (9.0 * c.beta_channels + 1.0) +
                          static_cast<double>(c.classes) * (c.classifier_inputs() + 1.0);
  if (declared * 8.0 > static_cast<double>(r.remaining())) r.reject(config_at, "declared config exceeds the file's payload");
  const HeadWeights shape = HeadWeights::zeros(c);
  ModelParams p{c, sketch_seed, alpha_sketch(sketch_seed, c), beta_sketch(sketch_seed, c), shape};

  std::size_t index = 0;
  for_each_tensor(p.weights, [&](TensorView t) {
    const std::size_t at = r.offset();
    const auto rank = r.uint<std::uint32_t>("tensor rank");
    if (rank != t.dims.size())
      r.reject(at, "tensor " + std::to_string(index) + " has rank " + std::to_string(rank) + ", expected " +
                       std::to_string(t.dims.size()));
    for (std::size_t i = 0; i < rank; ++i) {
      const auto d = r.uint<std::uint32_t>("tensor dim");
      if (d != t.dims[i])
        r.reject(at, "tensor " + std::to_string(index) + " dim " + std::to_string(i) + " is " + std::to_string(d) +
                         ", expected " + std::to_string(t.dims[i]));
    }
    r.need(t.values.size() * 8, "tensor payload");
    for (auto& v : t.values) v = r.f64("tensor value");
    ++index;
  });
  if (r.remaining() != 0) r.reject(r.offset(), std::to_string(r.remaining()) + " trailing bytes");
  return p;
}

ModelParams load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  return decode_checkpoint(detail::read_file(path), expected);
}

}  // namespace coinnet::model
