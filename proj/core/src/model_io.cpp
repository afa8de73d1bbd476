#include "grail/model_io.hpp"

#include <fstream>
#include <iterator>
#include <map>

#include <json.hpp>

#include "byte_io.hpp"

namespace grail {

namespace detail {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

}  // namespace detail

namespace {

using nlohmann::json;

constexpr std::uint32_t kVersion = 1;

struct NamedTensor {
  const char* name;
  const Tensor* tensor;
};

std::vector<NamedTensor> tensors_of(const Block& block) {
  return std::visit(
      [](const auto& b) -> std::vector<NamedTensor> {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, DenseBlock> || std::is_same_v<T, ConvBlock>) {
          return {{"w_producer", &b.w_producer},
                  {"b_producer", &b.b_producer},
                  {"w_consumer", &b.w_consumer},
                  {"b_consumer", &b.b_consumer}};
        } else if constexpr (std::is_same_v<T, FfnBlock>) {
          return {{"w_fc", &b.w_fc}, {"b_fc", &b.b_fc}, {"w_proj", &b.w_proj}, {"b_proj", &b.b_proj}};
        } else {
          return {{"w_q", &b.w_q}, {"w_k", &b.w_k}, {"w_v", &b.w_v}, {"w_o", &b.w_o}};
        }
      },
      block);
}

json geometry_json(const ConvGeometry& g) { return {{"stride", g.stride}, {"padding", g.padding}}; }

ConvGeometry geometry_from(const json& j) {
  return {j.at("stride").get<std::size_t>(), j.at("padding").get<std::size_t>()};
}

json block_header(const Block& block) {
  json j;
  j["type"] = std::string(block_type_name(block));
  j["dims"] = {{"input", block_input_dim(block)},
               {"hidden", block_hidden_dim(block)},
               {"output", block_output_dim(block)}};
  std::visit(
      [&](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, AttentionBlock>) {
          j["heads"] = {{"n_heads", b.n_heads},
                        {"head_dim", b.head_dim},
                        {"gqa_groups", b.gqa_groups},
                        {"causal", b.causal}};
        } else {
          j["activation"] = std::string(to_string(b.activation));
        }
        if constexpr (std::is_same_v<T, ConvBlock>) {
          j["geometry"] = {{"producer", geometry_json(b.producer_geometry)},
                           {"consumer", geometry_json(b.consumer_geometry)}};
        }
      },
      block);
  return j;
}

Block block_from(const json& j, std::map<std::string, Tensor>& t) {
  auto take = [&](const char* name) {
    auto it = t.find(name);
    if (it == t.end()) throw ManifestError(std::string("manifest block is missing tensor '") + name + "'");
    return std::move(it->second);
  };
  const auto type = j.at("type").get<std::string>();
  if (type == "dense") {
    return DenseBlock{take("w_producer"), take("b_producer"), parse_activation(j.at("activation").get<std::string>()),
                      take("w_consumer"), take("b_consumer")};
  }
  if (type == "conv") {
    const auto& g = j.at("geometry");
    return ConvBlock{take("w_producer"),
                     take("b_producer"),
                     parse_activation(j.at("activation").get<std::string>()),
                     take("w_consumer"),
                     take("b_consumer"),
                     geometry_from(g.at("producer")),
                     geometry_from(g.at("consumer"))};
  }
  if (type == "ffn") {
    return FfnBlock{take("w_fc"), take("b_fc"), parse_activation(j.at("activation").get<std::string>()),
                    take("w_proj"), take("b_proj")};
  }
  if (type == "attention") {
    const auto& h = j.at("heads");
    return AttentionBlock{take("w_q"),
                          take("w_k"),
                          take("w_v"),
                          take("w_o"),
                          h.at("n_heads").get<std::size_t>(),
                          h.at("head_dim").get<std::size_t>(),
                          h.at("gqa_groups").get<std::size_t>(),
                          h.at("causal").get<bool>()};
  }
  throw ManifestError("unknown block type '" + type + "'");
}

}  // namespace

std::vector<std::uint8_t> encode_model(const BlockGraph& graph) {
  json manifest;
  manifest["format"] = "grlw";
  manifest["input_shape"] = graph.input_shape();
  manifest["blocks"] = json::array();
  std::uint64_t offset = 0;
  std::vector<const Tensor*> order;
  for (const auto& block : graph.blocks()) {
    json bj = block_header(block);
    bj["tensors"] = json::array();
    for (const auto& [name, tensor] : tensors_of(block)) {
      bj["tensors"].push_back(
          {{"name", name}, {"shape", tensor->shape()}, {"offset", offset}, {"count", tensor->size()}});
      offset += 4 * tensor->size();
      order.push_back(tensor);
    }
    manifest["blocks"].push_back(std::move(bj));
  }
  const std::string text = manifest.dump();

  detail::ByteWriter w;
  w.magic("GRLW");
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.raw(text);
  for (const Tensor* t : order)
    for (double v : t->data()) w.f32(static_cast<float>(v));
  return w.bytes();
}

BlockGraph decode_model(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "model file");
  r.expect_magic("GRLW");
  r.expect_version(kVersion);
  const auto manifest_len = r.u32("manifest length");
  const std::string text = r.raw(manifest_len, "manifest");

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw ManifestError(std::string("model manifest is not valid JSON: ") + e.what());
  }

  try {
    // Size check first so a short file reports truncation, not garbage.
    std::uint64_t expected = 0;
    for (const auto& bj : manifest.at("blocks"))
      for (const auto& tj : bj.at("tensors")) {
        const auto shape = tj.at("shape").get<Shape>();
        const auto count = tj.at("count").get<std::uint64_t>();
        if (count != shape_product(shape)) {
          throw ManifestError("manifest tensor '" + tj.at("name").get<std::string>() + "' declares " +
                              std::to_string(count) + " elements but shape " + shape_string(shape));
        }
        if (tj.at("offset").get<std::uint64_t>() != expected) {
          throw ManifestError("manifest tensor '" + tj.at("name").get<std::string>() +
                              "' offset does not follow the previous tensor");
        }
        expected += 4 * count;
      }
    if (r.remaining() < expected) {
      throw TruncatedError("model file: payload has " + std::to_string(r.remaining()) + " bytes, manifest needs " +
                           std::to_string(expected));
    }
    if (r.remaining() > expected) {
      throw ManifestError("model file: " + std::to_string(r.remaining() - expected) +
                          " payload bytes not described by the manifest");
    }

    std::vector<Block> blocks;
    for (const auto& bj : manifest.at("blocks")) {
      std::map<std::string, Tensor> tensors;
      for (const auto& tj : bj.at("tensors")) {
        auto shape = tj.at("shape").get<Shape>();
        std::vector<double> data(shape_product(shape));
        for (auto& v : data) v = static_cast<double>(r.f32());
        tensors.emplace(tj.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
      }
      Block block = block_from(bj, tensors);
      validate_block(block);
      const auto& dims = bj.at("dims");
      if (dims.at("input").get<std::size_t>() != block_input_dim(block) ||
          dims.at("hidden").get<std::size_t>() != block_hidden_dim(block) ||
          dims.at("output").get<std::size_t>() != block_output_dim(block)) {
        throw ManifestError("manifest dims disagree with tensor shapes");
      }
      blocks.push_back(std::move(block));
    }
    return BlockGraph(manifest.at("input_shape").get<Shape>(), std::move(blocks));
  } catch (const json::exception& e) {
    throw ManifestError(std::string("model manifest is malformed: ") + e.what());
  } catch (const DimensionError& e) {
    throw ManifestError(std::string("model manifest describes an invalid model: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ManifestError(std::string("model manifest is malformed: ") + e.what());
  }
}

void save_model(const BlockGraph& graph, const std::filesystem::path& path) {
  detail::write_file(path, encode_model(graph));
}

BlockGraph load_model(const std::filesystem::path& path) { return decode_model(detail::read_file(path)); }

std::vector<std::uint8_t> encode_calibration(const Tensor& batch) {
  if (batch.empty()) throw EmptyCalibrationError("calibration batch is empty");
  detail::ByteWriter w;
  w.magic("GRLC");
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(batch.rank()));
  for (auto d : batch.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : batch.data()) w.f32(static_cast<float>(v));
  return w.bytes();
}

Tensor decode_calibration(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "calibration file");
  r.expect_magic("GRLC");
  r.expect_version(kVersion);
  const auto rank = r.u32("rank");
  if (rank < 1 || rank > 4) throw ManifestError("calibration file: rank " + std::to_string(rank) + " not in 1..4");
  Shape shape(rank);
  for (auto& d : shape) d = r.u32("dims");
  if (shape[0] == 0) throw EmptyCalibrationError("calibration file holds zero samples");
  for (auto d : shape) {
    if (d == 0) throw ManifestError("calibration file: zero dimension in " + shape_string(shape));
  }
  const std::size_t count = shape_product(shape);
  if (r.remaining() != 4 * count) {
    throw TruncatedError("calibration file: header shape " + shape_string(shape) + " needs " +
                         std::to_string(4 * count) + " payload bytes, found " + std::to_string(r.remaining()));
  }
  std::vector<double> data(count);
  for (auto& v : data) v = static_cast<double>(r.f32());
  return Tensor(std::move(shape), std::move(data));
}

void save_calibration(const Tensor& batch, const std::filesystem::path& path) {
  detail::write_file(path, encode_calibration(batch));
}

Tensor load_calibration(const std::filesystem::path& path) { return decode_calibration(detail::read_file(path)); }

Tensor round_to_storage(const Tensor& t) {
  if (t.empty()) return t;
  Tensor out = t;
  for (auto& v : out.data()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

BlockGraph round_to_storage(const BlockGraph& graph) { return decode_model(encode_model(graph)); }

}  // namespace grail
