#include "mmunet/checkpoint.hpp"

#include <bit>
#include <fstream>

#include "mmunet/error.hpp"

namespace mmunet {

namespace {

constexpr char kMagic[5] = {'M', 'M', 'U', 'W', '1'};

template <typename T>
void put(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }
  std::size_t size() const { return buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw IoError("checkpoint truncated");
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  KvMap kv = model.config().to_kv();
  kv["seed"] = std::to_string(model.seed());
  const std::string cfg = format_kv(kv);

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint16_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  const auto& items = model.params().items();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(items.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : items) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    put<std::uint64_t>(out, offset);
    offset += t.numel();
  }
  for (const auto& [_, t] : items)
    for (Real v : t.data()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(static_cast<double>(v)));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path.string());
  std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(all));
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw IoError(path.string() + " is not a model checkpoint");
  if (const auto v = r.get<std::uint16_t>(); v != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(v));
  const KvMap kv = parse_kv(r.bytes(r.get<std::uint32_t>()));
  KvReader reader(kv);
  ModelConfig cfg;
  cfg.read(reader);
  std::size_t seed = 0;
  reader.read("seed", seed);
  reader.reject_unused();
  Model model(cfg, seed);

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries(r.get<std::uint32_t>());
  for (auto& e : entries) {
    e.name = r.bytes(r.get<std::uint16_t>());
    e.shape.resize(r.get<std::uint8_t>());
    for (auto& d : e.shape) d = r.get<std::uint32_t>();
    e.offset = r.get<std::uint64_t>();
  }
  const std::size_t payload = r.pos();
  const auto& items = model.params().items();
  if (entries.size() != items.size())
    throw IoError("checkpoint holds " + std::to_string(entries.size()) + " tensors, model expects " +
                  std::to_string(items.size()));
  for (const auto& e : entries) {
    Tensor t = model.params().find(e.name);
    if (!t.defined()) throw IoError("checkpoint tensor '" + e.name + "' is not a model parameter");
    if (t.shape() != e.shape)
      throw IoError("checkpoint tensor '" + e.name + "' has shape " + shape_str(e.shape) + ", expected " +
                    shape_str(t.shape()));
    if (payload + (e.offset + t.numel()) * 8 > r.size()) throw IoError("checkpoint truncated");
    r.seek(payload + e.offset * 8);
    auto dst = t.mutable_data();
    for (auto& v : dst) v = static_cast<Real>(std::bit_cast<double>(r.get<std::uint64_t>()));
  }
  return model;
}

}  // namespace mmunet
