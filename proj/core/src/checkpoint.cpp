#include "irtnet/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>

#include "irtnet/binary_io.hpp"
#include "irtnet/error.hpp"

namespace irtnet {
namespace {

constexpr std::string_view kMagic = "IRTCKPT1";
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFlagAblation = 1u;

std::uint32_t crc32_of(std::span<const char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large checkpoints.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), static_cast<uInt>(chunk));
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

template <typename Views>
void write_block(binary::Writer& w, const Views& v) {
  w.uint<std::uint64_t>(v.size());
  for (double x : v) w.f32(static_cast<float>(x));
}

// Views in file order: balance_bias slots in after the gate's two tensors.
template <typename Views, typename Span, typename Fn>
void for_each_block(Views& views, Span balance, Fn&& fn) {
  for (std::size_t i = 0; i < views.size(); ++i) {
    fn(views[i].name, views[i].values);
    if (i == 2) fn(std::string("balance_bias"), balance);
  }
}

}  // namespace

std::vector<char> encode_checkpoint(const IrtNetParams& params) {
  const Hyperparams& hp = params.hp;
  if (params.model_names.size() != params.num_models()) {
    throw DimensionError("model name table does not match theta rows");
  }
  binary::Writer w;
  w.bytes(kMagic);
  w.uint<std::uint32_t>(kVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(params.num_models()));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(hp.ability_dim));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(hp.num_experts));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(hp.embed_dim));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(hp.expert_hidden));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(hp.hidden_dim));
  w.uint<std::uint32_t>(params.kind == EncoderKind::mlp ? kFlagAblation : 0u);
  for (const auto& name : params.model_names) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
  }

  auto views = tensor_views(params.tensors);
  for_each_block(views, std::span<const double>(params.balance_bias),
                 [&](const std::string&, std::span<const double> values) { write_block(w, values); });

  std::vector<char> bytes = w.buffer();
  binary::Writer trailer;
  trailer.uint<std::uint32_t>(crc32_of(bytes));
  bytes.insert(bytes.end(), trailer.buffer().begin(), trailer.buffer().end());
  return bytes;
}

IrtNetParams decode_checkpoint(const std::vector<char>& bytes, const std::string& source,
                               std::optional<EncoderKind> expected_kind) {
  if (bytes.size() < kMagic.size() + 4 * 8 + 4) throw FormatError(source + ": file too short for a checkpoint");
  const std::span<const char> body(bytes.data(), bytes.size() - 4);
  {
    binary::Reader crc_reader(std::span<const char>(bytes.data() + body.size(), 4), source);
    if (crc_reader.uint<std::uint32_t>() != crc32_of(body)) throw ChecksumError(source + ": CRC-32 mismatch");
  }

  binary::Reader r(body, source);
  if (r.bytes(kMagic.size()) != kMagic) throw FormatError(source + ": bad checkpoint magic");
  const auto version = r.uint<std::uint32_t>();
  if (version != kVersion) throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));

  Hyperparams hp;
  const std::size_t n = r.uint<std::uint32_t>();
  hp.ability_dim = r.uint<std::uint32_t>();
  hp.num_experts = r.uint<std::uint32_t>();
  hp.embed_dim = r.uint<std::uint32_t>();
  hp.expert_hidden = r.uint<std::uint32_t>();
  hp.hidden_dim = r.uint<std::uint32_t>();
  const auto flags = r.uint<std::uint32_t>();
  if ((flags & ~kFlagAblation) != 0) throw FormatError(source + ": unknown checkpoint flags");
  const EncoderKind kind = (flags & kFlagAblation) != 0 ? EncoderKind::mlp : EncoderKind::mixture;
  if (expected_kind && *expected_kind != kind) {
    throw FormatError(source + (kind == EncoderKind::mlp ? ": checkpoint holds the MLP ablation"
                                                         : ": checkpoint holds the mixture-of-experts encoder"));
  }

  std::vector<std::string> names;
  names.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto len = r.uint<std::uint32_t>();
    names.emplace_back(r.bytes(len));
  }

  IrtNetParams p;
  try {
    hp.validate();
    const std::size_t encoder = kind == EncoderKind::mixture
                                    ? moe_encoder_parameter_count(hp) + hp.num_experts
                                    : mlp_encoder_parameter_count(hp, mlp_ablation_width(hp));
    const std::size_t expected = n * hp.ability_dim + encoder + (hp.hidden_dim + 1) * (hp.ability_dim + 1);
    if (expected > r.remaining() / 4) throw FormatError("header shapes exceed the file size");
    p = init_params(hp, n, 0, kind);
  } catch (const std::exception& e) {
    throw FormatError(source + ": invalid header: " + e.what());
  }
  p.model_names = std::move(names);

  auto views = tensor_views(p.tensors);
  for_each_block(views, std::span<double>(p.balance_bias), [&](const std::string& name, std::span<double> values) {
    const auto count = r.uint<std::uint64_t>();
    if (count != values.size()) {
      throw FormatError(source + ": block " + name + " holds " + std::to_string(count) + " values, expected " +
                        std::to_string(values.size()));
    }
    for (double& v : values) v = static_cast<double>(r.f32());
  });
  if (r.remaining() != 0) throw FormatError(source + ": trailing bytes after parameter blocks");
  return p;
}

void save_checkpoint(const IrtNetParams& params, const std::filesystem::path& path) {
  binary::write_file(path.string(), encode_checkpoint(params));
}

IrtNetParams load_checkpoint(const std::filesystem::path& path, std::optional<EncoderKind> expected_kind) {
  return decode_checkpoint(binary::read_file(path.string()), path.string(), expected_kind);
}

IrtNetParams round_to_storage(const IrtNetParams& params) {
  IrtNetParams out = params;
  for (auto& v : tensor_views(out.tensors)) {
    for (double& x : v.values) x = static_cast<double>(static_cast<float>(x));
  }
  for (double& x : out.balance_bias) x = static_cast<double>(static_cast<float>(x));
  return out;
}

}  // namespace irtnet
