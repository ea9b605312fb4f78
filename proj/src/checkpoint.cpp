#include "advit/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <iterator>

#include "advit/errors.hpp"
#include "advit/run_config.hpp"
#include "byte_io.hpp"

namespace advit::checkpoint {

namespace {

constexpr char kMagic[4] = {'A', 'V', 'C', 'K'};
constexpr std::uint8_t kFloat32 = 0;

using Kind = CheckpointError::Kind;

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size())));
}

struct NamedValue {
  std::string name;
  const Tensor<float>* tensor;
};

void write_table(detail::ByteWriter& w, const std::vector<NamedValue>& table) {
  w.u32(static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, t] : table) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.u8(kFloat32);
    w.u32(static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) {
      w.u32(static_cast<std::uint32_t>(d));
    }
    for (float v : t->data()) {
      w.f32(v);
    }
  }
}

std::vector<std::pair<std::string, Tensor<float>>> read_table(detail::ByteReader& r, const std::string& table) {
  const std::uint32_t count = r.u32(table + " tensor count");
  std::vector<std::pair<std::string, Tensor<float>>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string at = table + " entry " + std::to_string(i);
    const std::uint32_t len = r.u32(at + " name length");
    const auto raw = r.raw(len, at + " name");
    std::string name(raw.begin(), raw.end());
    const std::uint8_t dtype = r.u8("dtype of " + name);
    if (dtype != kFloat32) {
      throw CheckpointError(Kind::malformed, "tensor " + name + " has unsupported dtype tag " + std::to_string(dtype));
    }
    const std::uint32_t rank = r.u32("rank of " + name);
    if (rank > 8) {
      throw CheckpointError(Kind::malformed, "tensor " + name + " has implausible rank " + std::to_string(rank));
    }
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32("dims of " + name);
      if (dim == 0) {
        throw CheckpointError(Kind::malformed, "tensor " + name + " has a zero extent");
      }
      shape.push_back(dim);
      numel *= dim;
    }
    r.need(numel * 4, "payload of " + name);
    std::vector<float> values(numel);
    for (auto& v : values) {
      v = r.f32("payload of " + name);
    }
    out.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  return out;
}

// Moves `table` into `targets` (same names, same order), checking shapes.
void assign(std::vector<std::pair<std::string, Tensor<float>>>& table, const std::vector<std::string>& names,
            const std::vector<Tensor<float>*>& targets, const std::string& what) {
  if (table.size() != names.size()) {
    throw CheckpointError(Kind::shape_mismatch, what + ": expected " + std::to_string(names.size()) +
                                                    " tensors, found " + std::to_string(table.size()));
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (table[i].first != names[i]) {
      throw CheckpointError(Kind::shape_mismatch,
                            what + ": expected tensor " + names[i] + " at position " + std::to_string(i) +
                                ", found " + table[i].first);
    }
    if (table[i].second.shape() != targets[i]->shape()) {
      throw CheckpointError(Kind::shape_mismatch, "tensor " + names[i] + " has shape " +
                                                      shape_str(table[i].second.shape()) + ", model expects " +
                                                      shape_str(targets[i]->shape()));
    }
    *targets[i] = std::move(table[i].second);
  }
}

}  // namespace

std::vector<std::uint8_t> encode(const train::TrainState& state) {
  detail::ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kFormatVersion);
  const std::string cfg = config::to_json(state.params.config).dump();
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.raw(cfg);

  std::vector<NamedValue> params;
  for (const auto& nt : state.params.named()) {
    params.push_back({nt.name, nt.tensor});
  }
  write_table(w, params);

  const auto& opt = state.optimizer;
  w.u8(opt.kind == train::OptimizerKind::sgd ? 0 : 1);
  w.u64(opt.step);
  std::vector<NamedValue> buffers;
  for (std::size_t i = 0; i < opt.first.size(); ++i) {
    buffers.push_back({"first." + params.at(i).name, &opt.first[i]});
  }
  for (std::size_t i = 0; i < opt.second.size(); ++i) {
    buffers.push_back({"second." + params.at(i).name, &opt.second[i]});
  }
  write_table(w, buffers);

  w.u64(state.rng.key);
  w.u64(state.rng.counter);
  w.u32(static_cast<std::uint32_t>(state.epoch));
  w.u32(crc32_of(w.bytes()));
  return std::move(w.bytes());
}

train::TrainState decode(std::span<const std::uint8_t> bytes, const vit::ViTConfig* expected) {
  const std::size_t head = std::min<std::size_t>(bytes.size(), 4);
  if (!std::equal(kMagic, kMagic + head, bytes.begin())) {
    throw CheckpointError(Kind::magic, "not a checkpoint: magic mismatch (expected \"AVCK\")");
  }
  if (head < 4) {
    throw CheckpointError(Kind::truncated, "checkpoint truncated inside the magic bytes");
  }
  detail::ByteReader r(bytes, [](std::uint64_t offset, const std::string& what) {
    throw CheckpointError(Kind::truncated,
                          "checkpoint truncated at byte " + std::to_string(offset) + " while reading " + what);
  });
  r.raw(4, "magic");
  const std::uint32_t version = r.u32("format version");
  if (version != kFormatVersion) {
    throw CheckpointError(Kind::version, "checkpoint format version " + std::to_string(version) +
                                             " is not supported (expected " + std::to_string(kFormatVersion) + ")");
  }
  if (bytes.size() < 12) {
    throw CheckpointError(Kind::truncated, "checkpoint truncated: " + std::to_string(bytes.size()) + " bytes");
  }
  const std::uint32_t stored_crc = static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
                                   static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
                                   static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
                                   static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
  const bool crc_ok = crc32_of(bytes.first(bytes.size() - 4)) == stored_crc;

  train::TrainState state;
  try {
    const std::uint32_t cfg_len = r.u32("config length");
    const auto cfg_raw = r.raw(cfg_len, "model config");
    vit::ViTConfig cfg;
    try {
      cfg = config::vit_config_from_json(nlohmann::json::parse(cfg_raw.begin(), cfg_raw.end()));
      cfg.validate();
    } catch (const std::exception& e) {
      if (!crc_ok) {
        throw;
      }
      throw CheckpointError(Kind::malformed, std::string("embedded model config is invalid: ") + e.what());
    }
    state.params = vit::zero_params<float>(cfg);

    std::vector<std::string> names;
    const auto targets = train::parameter_list(state.params);
    for (const auto& nt : state.params.named()) {
      names.push_back(nt.name);
    }
    auto params = read_table(r, "parameter");
    assign(params, names, targets, "parameter table");

    const std::uint8_t kind = r.u8("optimizer kind");
    if (kind > 1) {
      throw CheckpointError(Kind::malformed, "unknown optimizer kind " + std::to_string(kind));
    }
    state.optimizer = train::OptimizerState::zeros(kind == 0 ? train::OptimizerKind::sgd : train::OptimizerKind::adamw,
                                                   state.params);
    state.optimizer.step = r.u64("optimizer step");
    auto buffers = read_table(r, "optimizer");
    std::vector<std::string> buf_names;
    std::vector<Tensor<float>*> buf_targets;
    for (std::size_t i = 0; i < state.optimizer.first.size(); ++i) {
      buf_names.push_back("first." + names[i]);
      buf_targets.push_back(&state.optimizer.first[i]);
    }
    for (std::size_t i = 0; i < state.optimizer.second.size(); ++i) {
      buf_names.push_back("second." + names[i]);
      buf_targets.push_back(&state.optimizer.second[i]);
    }
    assign(buffers, buf_names, buf_targets, "optimizer table");

    state.rng.key = r.u64("rng key");
    state.rng.counter = r.u64("rng counter");
    state.epoch = r.u32("epoch");
    r.u32("checksum");
    if (r.remaining() != 0) {
      throw CheckpointError(Kind::malformed, std::to_string(r.remaining()) + " trailing bytes after checksum");
    }
  } catch (const CheckpointError& e) {
    // A damaged file is reported as such even when the damage first shows
    // up as an implausible field.
    if (!crc_ok && e.kind() != Kind::truncated) {
      throw CheckpointError(Kind::checksum, std::string("checkpoint checksum mismatch (") + e.what() + ")");
    }
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::checksum, std::string("checkpoint checksum mismatch (") + e.what() + ")");
  }
  if (!crc_ok) {
    throw CheckpointError(Kind::checksum, "checkpoint checksum mismatch");
  }

  if (expected && !(*expected == state.params.config)) {
    const auto want = vit::zero_params<float>(*expected);
    const auto want_named = want.named();
    const auto have_named = state.params.named();
    for (std::size_t i = 0; i < std::min(want_named.size(), have_named.size()); ++i) {
      if (want_named[i].name != have_named[i].name || want_named[i].tensor->shape() != have_named[i].tensor->shape()) {
        throw CheckpointError(Kind::shape_mismatch,
                              "tensor " + have_named[i].name + " has shape " +
                                  shape_str(have_named[i].tensor->shape()) + ", expected config needs " +
                                  want_named[i].name + " " + shape_str(want_named[i].tensor->shape()));
      }
    }
    if (want_named.size() != have_named.size()) {
      throw CheckpointError(Kind::shape_mismatch, "checkpoint has " + std::to_string(have_named.size()) +
                                                      " tensors, expected config needs " +
                                                      std::to_string(want_named.size()));
    }
    throw CheckpointError(Kind::shape_mismatch, "checkpoint model config " + config::to_json(state.params.config).dump() +
                                                    " differs from the expected " + config::to_json(*expected).dump());
  }
  return state;
}

void save(const std::filesystem::path& path, const train::TrainState& state) {
  const auto bytes = encode(state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw CheckpointError(Kind::io, "cannot write checkpoint " + path.string());
  }
}

train::TrainState load(const std::filesystem::path& path, const vit::ViTConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError(Kind::io, "cannot open checkpoint " + path.string());
  }
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode(bytes, expected);
}

}  // namespace advit::checkpoint
