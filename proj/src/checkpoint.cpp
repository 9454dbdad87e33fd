#include "aldmn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace aldmn {

namespace {

constexpr char kMagic[6] = {'A', 'L', 'D', 'M', 'N', '1'};

void put_u32(std::ostream& out, uint32_t v) {
  char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
               static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
  out.write(b, 4);
}

void put_f32(std::ostream& out, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw DataError("checkpoint: truncated reading " + what);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

float get_f32(std::istream& in, const std::string& what) {
  const uint32_t v = get_u32(in, what);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& model,
                     const TrainConfig& config, const Vocabulary& vocab,
                     const std::vector<std::string>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));

  nlohmann::json header;
  header["config"] = nlohmann::json::parse(config.to_json());
  header["vocab"] = vocab.tokens();
  header["labels"] = labels;
  const std::string hs = header.dump();
  put_u32(out, static_cast<uint32_t>(hs.size()));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

  auto named = model.named_tensors();
  put_u32(out, static_cast<uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (int a = 0; a < t.rank(); ++a) put_u32(out, static_cast<uint32_t>(t.extent(a)));
    for (double v : t.values()) put_f32(out, static_cast<float>(v));
  }
  if (!out) throw DataError("short write saving checkpoint: " + path);
}

LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[6];
  if (!in.read(magic, 6) || std::memcmp(magic, kMagic, 6) != 0)
    throw DataError("not a model checkpoint: " + path);

  const uint32_t hlen = get_u32(in, "header length");
  std::string hs(hlen, '\0');
  if (!in.read(hs.data(), hlen)) throw DataError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("checkpoint: bad header: ") + e.what());
  }

  LoadedModel lm;
  lm.config = TrainConfig::from_json(header.at("config").dump());
  std::vector<std::string> tokens = header.at("vocab").get<std::vector<std::string>>();
  lm.labels = header.at("labels").get<std::vector<std::string>>();
  lm.vocab = Vocabulary::from_tokens(std::move(tokens), lm.config.min_count);
  if (lm.labels.size() < 2) throw DataError("checkpoint: fewer than two labels");

  // Materialize the parameter skeleton, then overwrite every tensor by name.
  Rng scratch(0);
  ModelConfig mc =
      lm.config.model_config(lm.vocab.size(), static_cast<int>(lm.labels.size()));
  Tensor emb = Tensor::zeros({mc.vocab_size, mc.d}, mc.trainable_embeddings);
  lm.model = ModelParams::init(mc, emb, scratch);

  auto named = lm.model.named_tensors();
  const uint32_t count = get_u32(in, "tensor count");
  if (count != named.size())
    throw DataError("checkpoint: expected " + std::to_string(named.size()) +
                    " tensors, file holds " + std::to_string(count));
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t nlen = get_u32(in, "name length");
    std::string name(nlen, '\0');
    if (!in.read(name.data(), nlen)) throw DataError("checkpoint: truncated name");
    if (name != named[i].first)
      throw DataError("checkpoint: tensor " + name + " where " + named[i].first +
                      " belongs");
    Tensor t = named[i].second;
    const uint32_t rank = get_u32(in, name + " rank");
    if (rank != static_cast<uint32_t>(t.rank()))
      throw DataError("checkpoint: rank mismatch on " + name);
    size_t n = 1;
    for (uint32_t a = 0; a < rank; ++a) {
      const uint32_t extent = get_u32(in, name + " extent");
      if (extent != static_cast<uint32_t>(t.extent(static_cast<int>(a))))
        throw DataError("checkpoint: shape mismatch on " + name);
      n *= extent;
    }
    for (size_t k = 0; k < n; ++k)
      t.values()[k] = static_cast<double>(get_f32(in, name + " values"));
  }
  return lm;
}

}  // namespace aldmn
