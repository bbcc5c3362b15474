#include "pcal/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pcal/error.hpp"

namespace pcal::nnet {
namespace {

constexpr std::string_view kMagic = "PCALNET1";

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

std::string save_checkpoint(const ModelParams& params) {
  nlohmann::json header;
  header["num_classes"] = params.num_classes;
  header["rng_seed"] = params.rng_seed;
  const auto& w = params.widths;
  header["widths"] = {{"tnet1", w.tnet1}, {"tnet2", w.tnet2}, {"local1", w.local1},
                      {"local2", w.local2}, {"global", w.global}, {"seg", w.seg}};
  auto& tensors = header["tensors"] = nlohmann::json::array();
  for (const auto& t : params.tensors) tensors.push_back({{"name", t.name}, {"shape", t.shape}});
  const std::string text = header.dump();

  std::string out(kMagic);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& t : params.tensors) {
    const auto* bytes = reinterpret_cast<const char*>(t.data.data());
    out.append(bytes, t.data.size() * sizeof(float));
  }
  return out;
}

ModelParams load_checkpoint(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 4 || bytes.substr(0, kMagic.size()) != kMagic) {
    throw FormatError("checkpoint: bad magic");
  }
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) {
    len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[kMagic.size() + i])) << (8 * i);
  }
  const std::size_t header_begin = kMagic.size() + 4;
  if (bytes.size() < header_begin + len) throw FormatError("checkpoint: truncated header");

  ModelParams params;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> listed;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(header_begin, len));
    params.num_classes = header.at("num_classes").get<int>();
    params.rng_seed = header.at("rng_seed").get<std::uint64_t>();
    const auto& w = header.at("widths");
    params.widths = {w.at("tnet1").get<std::size_t>(),  w.at("tnet2").get<std::size_t>(),
                     w.at("local1").get<std::size_t>(), w.at("local2").get<std::size_t>(),
                     w.at("global").get<std::size_t>(), w.at("seg").get<std::size_t>()};
    for (const auto& t : header.at("tensors")) {
      listed.emplace_back(t.at("name").get<std::string>(),
                          t.at("shape").get<std::vector<std::size_t>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (params.num_classes < 2) throw FormatError("checkpoint: num_classes < 2");

  const auto shapes = expected_shapes(params.widths, params.num_classes);
  if (listed.size() != kSlotCount) throw FormatError("checkpoint: wrong tensor count");
  std::size_t offset = header_begin + len;
  for (std::size_t s = 0; s < kSlotCount; ++s) {
    if (listed[s].first != slot_name(static_cast<Slot>(s)) || listed[s].second != shapes[s]) {
      throw FormatError("checkpoint: tensor '" + listed[s].first +
                        "' does not match the declared architecture");
    }
    std::size_t count = 1;
    for (auto d : shapes[s]) count *= d;
    const std::size_t nbytes = count * sizeof(float);
    if (bytes.size() < offset + nbytes) throw FormatError("checkpoint: truncated payload");
    Tensor<float> t{listed[s].first, listed[s].second, std::vector<float>(count)};
    std::memcpy(t.data.data(), bytes.data() + offset, nbytes);
    offset += nbytes;
    params.tensors.push_back(std::move(t));
  }
  if (offset != bytes.size()) throw FormatError("checkpoint: trailing bytes after payload");
  return params;
}

void save_checkpoint_file(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << save_checkpoint(params);
}

ModelParams load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_checkpoint(ss.str());
}

}  // namespace pcal::nnet
