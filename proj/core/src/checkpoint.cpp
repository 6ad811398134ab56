#include "driftlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "driftlab/errors.hpp"

namespace driftlab {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::string_view kMagic = "DLCKPT01";

void append_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

}  // namespace

std::string serialize_checkpoint(const ModelState& model) {
  nlohmann::ordered_json header;
  const auto& c = model.config;
  header["config"] = {{"vocab_size", c.vocab_size},   {"embed_dim", c.embed_dim},
                      {"hidden_dim", c.hidden_dim},   {"n_labels", c.n_labels},
                      {"use_label_attention", c.use_label_attention},
                      {"nonlinearity", std::string(to_string(c.nonlinearity))},
                      {"seed", c.seed}};
  if (model.lora)
    header["lora"] = {{"targets", model.lora->targets}, {"rank", model.lora->rank}, {"alpha", model.lora->alpha}};
  if (model.adapter)
    header["adapter"] = {{"reduction", model.adapter->reduction}, {"bottleneck", model.adapter->bottleneck}};
  header["revision"] = model.revision;
  auto table = nlohmann::ordered_json::array();
  for (const auto& p : model.params)
    table.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"trainable", p.trainable}, {"is_bias", p.is_bias}});
  header["tensors"] = std::move(table);

  const std::string h = header.dump();
  std::string out(kMagic);
  append_u64(out, h.size());
  out += h;
  for (const auto& p : model.params) {
    const auto& d = p.value.data();
    out.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double));
  }
  return out;
}

ModelState deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16 || bytes.substr(0, 8) != kMagic) throw ValidationError("not a model checkpoint");
  std::uint64_t hlen;
  std::memcpy(&hlen, bytes.data() + 8, 8);
  if (16 + hlen > bytes.size()) throw ValidationError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("corrupt checkpoint header: {}", e.what()));
  }
  ModelState m;
  const auto& c = header.at("config");
  m.config.vocab_size = c.at("vocab_size");
  m.config.embed_dim = c.at("embed_dim");
  m.config.hidden_dim = c.at("hidden_dim");
  m.config.n_labels = c.at("n_labels");
  m.config.use_label_attention = c.at("use_label_attention");
  m.config.nonlinearity = parse_nonlinearity(c.at("nonlinearity").get<std::string>());
  m.config.seed = c.at("seed");
  if (header.contains("lora")) {
    const auto& l = header["lora"];
    m.lora = LoraSpec{l.at("targets").get<std::vector<std::string>>(), l.at("rank"), l.at("alpha")};
  }
  if (header.contains("adapter")) m.adapter = AdapterSpec{header["adapter"].at("reduction"), header["adapter"].at("bottleneck")};
  m.revision = header.value("revision", std::uint64_t{0});

  std::size_t off = 16 + hlen;
  for (const auto& t : header.at("tensors")) {
    Parameter p;
    p.name = t.at("name");
    p.value = Tensor(t.at("shape").get<std::vector<std::size_t>>());
    p.trainable = t.at("trainable");
    p.is_bias = t.at("is_bias");
    const std::size_t n = p.value.size() * sizeof(double);
    if (off + n > bytes.size()) throw ValidationError(fmt::format("truncated tensor '{}'", p.name));
    std::memcpy(p.value.data().data(), bytes.data() + off, n);
    off += n;
    m.params.push_back(std::move(p));
  }
  if (off != bytes.size()) throw ValidationError("trailing bytes after checkpoint tensors");
  return m;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
  auto tmp = path;
  tmp += fmt::format(".tmp{:x}", tid);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", tmp.string()));
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error(fmt::format("write failed for '{}'", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(model));
}

ModelState load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace driftlab
