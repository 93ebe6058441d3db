#include "mmunet/volume_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>

#include "mmunet/error.hpp"

namespace mmunet {

namespace {
constexpr char kMagic[5] = {'M', 'M', 'U', 'V', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}
}  // namespace

void write_volume(const std::filesystem::path& path, const VolumeFile& v) {
  const std::size_t n = v.element_count();
  if ((v.dtype == VolumeFile::Dtype::F32 ? v.f32.size() : v.u8.size()) != n)
    throw ShapeError("write_volume: payload does not match " + std::to_string(n) + " elements");
  std::string out(kMagic, sizeof kMagic);
  out.push_back(static_cast<char>(v.dtype));
  for (std::size_t d : v.dims) put_u32(out, static_cast<std::uint32_t>(d));
  put_u32(out, static_cast<std::uint32_t>(v.channels));
  if (v.dtype == VolumeFile::Dtype::F32) {
    for (float x : v.f32) put_u32(out, std::bit_cast<std::uint32_t>(x));
  } else {
    out.append(reinterpret_cast<const char*>(v.u8.data()), v.u8.size());
  }
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write volume " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing volume " + path.string());
}

VolumeFile read_volume(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read volume " + path.string());
  const std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  constexpr std::size_t header = sizeof kMagic + 1 + 16;
  if (s.size() < header || s.compare(0, sizeof kMagic, kMagic, sizeof kMagic) != 0)
    throw IoError(path.string() + " is not a volume file");
  VolumeFile v;
  const auto code = static_cast<std::uint8_t>(s[5]);
  if (code > 1) throw IoError(path.string() + ": unknown dtype code " + std::to_string(code));
  v.dtype = static_cast<VolumeFile::Dtype>(code);
  for (int a = 0; a < 3; ++a) v.dims[a] = get_u32(s, 6 + 4 * a);
  v.channels = get_u32(s, 18);
  const std::size_t n = v.element_count();
  const std::size_t width = v.dtype == VolumeFile::Dtype::F32 ? 4 : 1;
  if (s.size() != header + n * width)
    throw IoError(path.string() + ": payload size " + std::to_string(s.size() - header) + " does not match header");
  if (v.dtype == VolumeFile::Dtype::F32) {
    v.f32.resize(n);
    for (std::size_t i = 0; i < n; ++i) v.f32[i] = std::bit_cast<float>(get_u32(s, header + 4 * i));
  } else {
    v.u8.assign(s.begin() + header, s.end());
  }
  return v;
}

Tensor volume_to_tensor(const VolumeFile& v) {
  if (v.dtype != VolumeFile::Dtype::F32) throw ConfigError("expected an f32 image volume");
  const auto [D, H, W] = v.dims;
  const std::size_t C = v.channels, V = D * H * W;
  std::vector<Real> out(C * V);
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t c = 0; c < C; ++c) out[c * V + i] = static_cast<Real>(v.f32[i * C + c]);
  return Tensor({C, D, H, W}, std::move(out));
}

VolumeFile tensor_to_volume(const Tensor& t) {
  if (t.rank() != 4) throw ShapeError("tensor_to_volume: expected [C, D, H, W], got " + shape_str(t.shape()));
  VolumeFile v;
  v.dtype = VolumeFile::Dtype::F32;
  v.channels = t.dim(0);
  v.dims = {t.dim(1), t.dim(2), t.dim(3)};
  const std::size_t C = v.channels, V = t.numel() / C;
  v.f32.resize(t.numel());
  const auto src = t.data();
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t c = 0; c < C; ++c) v.f32[i * C + c] = static_cast<float>(src[c * V + i]);
  return v;
}

LabelGrid volume_to_labels(const VolumeFile& v) {
  if (v.dtype != VolumeFile::Dtype::U8 || v.channels != 1) throw ConfigError("expected a single-channel u8 label volume");
  LabelGrid g({1, v.dims[0], v.dims[1], v.dims[2]});
  g.v = v.u8;
  return g;
}

VolumeFile labels_to_volume(const LabelGrid& labels) {
  if (labels.shape.size() != 4 || labels.shape[0] != 1)
    throw ShapeError("labels_to_volume: expected [1, D, H, W], got " + shape_str(labels.shape));
  VolumeFile v;
  v.dtype = VolumeFile::Dtype::U8;
  v.dims = {labels.shape[1], labels.shape[2], labels.shape[3]};
  v.channels = 1;
  v.u8 = labels.v;
  return v;
}

namespace {
std::string sample_file(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu.mmuv", i);
  return buf;
}
}  // namespace

std::string class_counts_csv(const Dataset& data) {
  const std::size_t K = data.cfg.classes;
  std::string out = "sample";
  for (std::size_t k = 0; k < K; ++k) out += ",count_" + std::to_string(k);
  out += "\n";
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    std::vector<std::size_t> counts(K, 0);
    for (auto l : data.samples[i].labels) ++counts.at(l);
    out += std::to_string(i);
    for (auto c : counts) out += "," + std::to_string(c);
    out += "\n";
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  std::filesystem::create_directories(dir / "labels", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  {
    std::ofstream f(dir / "dataset.txt", std::ios::binary | std::ios::trunc);
    f << format_kv(data.cfg.to_kv());
    if (!f) throw IoError("cannot write " + (dir / "dataset.txt").string());
  }
  {
    std::ofstream f(dir / "class_counts.csv", std::ios::binary | std::ios::trunc);
    f << class_counts_csv(data);
    if (!f) throw IoError("cannot write " + (dir / "class_counts.csv").string());
  }
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    VolumeFile img;
    img.dtype = VolumeFile::Dtype::F32;
    img.dims = s.dims;
    img.f32.assign(s.image.begin(), s.image.end());
    write_volume(dir / "images" / sample_file(i), img);
    VolumeFile lab;
    lab.dtype = VolumeFile::Dtype::U8;
    lab.dims = s.dims;
    lab.u8 = s.labels;
    write_volume(dir / "labels" / sample_file(i), lab);
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset data;
  const KvMap kv = read_kv_file(dir / "dataset.txt");
  KvReader reader(kv);
  data.cfg.read(reader);
  reader.reject_unused();
  for (std::size_t i = 0; i < data.cfg.count; ++i) {
    const VolumeFile img = read_volume(dir / "images" / sample_file(i));
    const VolumeFile lab = read_volume(dir / "labels" / sample_file(i));
    if (img.dtype != VolumeFile::Dtype::F32 || img.channels != 1 || lab.dtype != VolumeFile::Dtype::U8 ||
        lab.channels != 1 || img.dims != lab.dims)
      throw IoError(dir.string() + ": sample " + std::to_string(i) + " has mismatched image and label volumes");
    Sample s;
    s.dims = img.dims;
    s.image.assign(img.f32.begin(), img.f32.end());
    s.labels = lab.u8;
    for (auto l : s.labels)
      if (l >= data.cfg.classes)
        throw IoError(dir.string() + ": sample " + std::to_string(i) + " has label " + std::to_string(l) +
                      " outside 0.." + std::to_string(data.cfg.classes - 1));
    data.samples.push_back(std::move(s));
  }
  return data;
}

}  // namespace mmunet
