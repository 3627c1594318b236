#include "cardood/checkpoint.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cardood/error.hpp"

namespace cardood {

namespace {

constexpr std::array<char, 8> kMagic{'C', 'A', 'R', 'D', 'O', 'O', 'D', '\x01'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("checkpoint is truncated");
  return v;
}

nlohmann::json dims_to_json(const ModelDims& d) {
  return {{"input_width", d.input_width},
          {"relation_width", d.relation_width},
          {"selection_width", d.selection_width},
          {"join_width", d.join_width},
          {"set_hidden", d.set_hidden},
          {"mlp_hidden", d.mlp_hidden},
          {"embedding", d.embedding},
          {"groups", d.groups},
          {"discriminator_hidden", d.discriminator_hidden}};
}

ModelDims dims_from_json(const nlohmann::json& j) {
  ModelDims d;
  d.input_width = j.at("input_width").get<int>();
  d.relation_width = j.at("relation_width").get<int>();
  d.selection_width = j.at("selection_width").get<int>();
  d.join_width = j.at("join_width").get<int>();
  d.set_hidden = j.at("set_hidden").get<int>();
  d.mlp_hidden = j.at("mlp_hidden").get<int>();
  d.embedding = j.at("embedding").get<int>();
  d.groups = j.at("groups").get<int>();
  d.discriminator_hidden = j.at("discriminator_hidden").get<int>();
  return d;
}

}  // namespace

void save_checkpoint(std::ostream& out, const Model<float>& model, const CheckpointMeta& meta) {
  nlohmann::json header;
  header["arch"] = to_string(model.arch());
  header["dims"] = dims_to_json(model.dims());
  header["seed"] = model.seed();
  header["meta"] = meta;
  const std::string text = header.dump();
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  model.visit_all([&](const Matrix<float>& p, const Matrix<float>&) {
    put<std::uint64_t>(out, static_cast<std::uint64_t>(p.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(p.cols()));
    out.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(float)));
  });
  if (!out) throw DataError("failed to write checkpoint");
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const CheckpointMeta& meta) {
  // Write-then-rename so an interrupted run never leaves a partial file.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    save_checkpoint(out, model, meta);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw DataError("not a checkpoint file");
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get<std::uint64_t>(in);
  if (header_len > (1u << 24)) throw DataError("checkpoint header is corrupt");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) throw DataError("checkpoint is truncated");
  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    ck.model = Model<float>(parse_arch(header.at("arch").get<std::string>()), dims_from_json(header.at("dims")),
                            header.at("seed").get<std::uint64_t>());
    ck.meta = header.value("meta", CheckpointMeta{});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  ck.model.visit_all([&](Matrix<float>& p, Matrix<float>&) {
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    if (rows != static_cast<std::uint64_t>(p.rows()) || cols != static_cast<std::uint64_t>(p.cols())) {
      throw DataError("checkpoint tensor shape does not match its header");
    }
    if (!in.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(float)))) {
      throw DataError("checkpoint is truncated");
    }
  });
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace cardood
