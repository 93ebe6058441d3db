#include "mmunet/scan_order.hpp"

#include <algorithm>
#include <map>
#include <mutex>

#include "mmunet/error.hpp"
#include "mmunet/ops.hpp"

namespace mmunet {

namespace {

constexpr char kAxisLetter[3] = {'D', 'H', 'W'};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::size_t> base_path(const ScanOrder& o, Int3 dims, std::size_t& segment) {
  const std::size_t D = dims[0], H = dims[1], W = dims[2];
  const std::size_t L = D * H * W;
  std::vector<std::size_t> path;
  path.reserve(L);
  auto lin = [&](std::size_t d, std::size_t h, std::size_t w) { return (d * H + h) * W + w; };
  segment = L;

  switch (o.kind) {
    case ScanOrder::Kind::TwoD:
      segment = H * W;
      [[fallthrough]];
    case ScanOrder::Kind::Axes: {
      const auto axes = o.kind == ScanOrder::Kind::TwoD ? std::array<int, 3>{0, 1, 2} : o.axes;
      std::array<std::size_t, 3> c{};
      for (std::size_t i0 = 0; i0 < dims[axes[0]]; ++i0)
        for (std::size_t i1 = 0; i1 < dims[axes[1]]; ++i1)
          for (std::size_t i2 = 0; i2 < dims[axes[2]]; ++i2) {
            c[axes[0]] = i0;
            c[axes[1]] = i1;
            c[axes[2]] = i2;
            path.push_back(lin(c[0], c[1], c[2]));
          }
      break;
    }
    case ScanOrder::Kind::Window3D: {
      const std::size_t w = o.window;
      if (w == 0 || D % w || H % w || W % w)
        throw ConfigError("window scan: window " + std::to_string(w) + " does not divide volume " +
                          std::to_string(D) + "x" + std::to_string(H) + "x" + std::to_string(W));
      for (std::size_t wd = 0; wd < D / w; ++wd)
        for (std::size_t wh = 0; wh < H / w; ++wh)
          for (std::size_t ww = 0; ww < W / w; ++ww)
            for (std::size_t d = 0; d < w; ++d)
              for (std::size_t h = 0; h < w; ++h)
                for (std::size_t x = 0; x < w; ++x) path.push_back(lin(wd * w + d, wh * w + h, ww * w + x));
      break;
    }
    case ScanOrder::Kind::Zigzag: {
      // Serpentine: W direction alternates with every row visited, H
      // direction alternates with every slice.
      std::size_t row = 0;
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t k = 0; k < H; ++k, ++row) {
          const std::size_t h = (d % 2 == 0) ? k : H - 1 - k;
          for (std::size_t j = 0; j < W; ++j) path.push_back(lin(d, h, (row % 2 == 0) ? j : W - 1 - j));
        }
      break;
    }
    case ScanOrder::Kind::Inclined: {
      // Anti-diagonals h + w = s of each slice, h increasing along a diagonal.
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t s = 0; s + 1 < H + W; ++s) {
          const std::size_t h_lo = s + 1 > W ? s + 1 - W : 0;
          const std::size_t h_hi = std::min(H - 1, s);
          for (std::size_t h = h_lo; h <= h_hi; ++h) path.push_back(lin(d, h, s - h));
        }
      break;
    }
  }
  return path;
}

}  // namespace

std::string ScanOrder::name() const {
  std::string base;
  switch (kind) {
    case Kind::Axes:
      for (int a : axes) base += kAxisLetter[a];
      break;
    case Kind::TwoD:
      base = "2d";
      break;
    case Kind::Window3D:
      base = "window:" + std::to_string(window);
      break;
    case Kind::Zigzag:
      base = "zigzag";
      break;
    case Kind::Inclined:
      base = "inclined";
      break;
  }
  return flipped ? "flip(" + base + ")" : base;
}

ScanOrder ScanOrder::parse(std::string_view text) {
  std::string s = trim(text);
  ScanOrder o;
  if (s.size() > 6 && s.rfind("flip(", 0) == 0 && s.back() == ')') {
    o = parse(std::string_view(s).substr(5, s.size() - 6));
    if (o.flipped) throw ConfigError("scan order: nested flip in '" + s + "'");
    o.flipped = true;
    return o;
  }
  std::string lower = s;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (lower == "2d") {
    o.kind = Kind::TwoD;
  } else if (lower == "zigzag") {
    o.kind = Kind::Zigzag;
  } else if (lower == "inclined") {
    o.kind = Kind::Inclined;
  } else if (lower.rfind("window:", 0) == 0) {
    o.kind = Kind::Window3D;
    try {
      o.window = std::stoul(lower.substr(7));
    } catch (const std::exception&) {
      throw ConfigError("scan order: bad window size in '" + s + "'");
    }
    if (o.window == 0) throw ConfigError("scan order: window size must be positive");
  } else if (s.size() == 3) {
    std::array<bool, 3> seen{};
    for (int i = 0; i < 3; ++i) {
      const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(s[i])));
      const auto* hit = std::find(std::begin(kAxisLetter), std::end(kAxisLetter), ch);
      if (hit == std::end(kAxisLetter)) throw ConfigError("scan order: unknown axis in '" + s + "'");
      const int a = static_cast<int>(hit - std::begin(kAxisLetter));
      if (seen[a]) throw ConfigError("scan order: repeated axis in '" + s + "'");
      seen[a] = true;
      o.axes[i] = a;
    }
  } else {
    throw ConfigError("scan order: unknown order '" + s + "'");
  }
  return o;
}

ScanOrder flip(ScanOrder order) {
  order.flipped = !order.flipped;
  return order;
}

std::vector<ScanOrder> all_orders() {
  std::vector<ScanOrder> out;
  for (const char* n : {"DHW", "DWH", "WDH", "WHD", "HDW", "HWD"}) {
    const auto o = ScanOrder::parse(n);
    out.push_back(o);
    out.push_back(flip(o));
  }
  for (const char* n : {"2d", "window:2", "zigzag", "inclined"}) out.push_back(ScanOrder::parse(n));
  return out;
}

std::shared_ptr<const RealizedOrder> realize(const ScanOrder& order, Int3 dims) {
  static std::mutex mutex;
  static std::map<std::string, std::shared_ptr<const RealizedOrder>> cache;
  const std::string key = order.name() + "@" + std::to_string(dims[0]) + "x" + std::to_string(dims[1]) + "x" +
                          std::to_string(dims[2]);
  {
    std::lock_guard<std::mutex> lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0) throw ShapeError("scan order: empty volume");
  auto r = std::make_shared<RealizedOrder>();
  r->voxel = base_path(order, dims, r->segment);
  if (order.flipped) std::reverse(r->voxel.begin(), r->voxel.end());
  r->position.assign(r->voxel.size(), 0);
  for (std::size_t t = 0; t < r->voxel.size(); ++t) r->position[r->voxel[t]] = t;
  std::lock_guard<std::mutex> lock(mutex);
  return cache.emplace(key, std::move(r)).first->second;
}

Tensor flatten(const Tensor& v, const ScanOrder& order) {
  if (v.rank() < 3) throw ShapeError("flatten: need [..., D, H, W], got " + shape_str(v.shape()));
  const auto& s = v.shape();
  const Int3 dims{s[s.size() - 3], s[s.size() - 2], s[s.size() - 1]};
  const auto r = realize(order, dims);
  Shape out(s.begin(), s.end() - 3);
  out.push_back(r->voxel.size());
  return ops::permute_last(v, r->position, std::move(out));
}

Tensor unflatten(const Tensor& seq, const ScanOrder& order, Int3 dims) {
  const std::size_t l = dims[0] * dims[1] * dims[2];
  if (seq.rank() < 1 || seq.shape().back() != l)
    throw ShapeError("unflatten: sequence " + shape_str(seq.shape()) + " does not hold " + std::to_string(l) +
                     " voxels");
  const auto r = realize(order, dims);
  Shape out(seq.shape().begin(), seq.shape().end() - 1);
  out.insert(out.end(), dims.begin(), dims.end());
  return ops::permute_last(seq, r->voxel, std::move(out));
}

std::size_t discontinuity_count(const ScanOrder& order, Int3 dims) {
  const auto r = realize(order, dims);
  const std::size_t H = dims[1], W = dims[2];
  auto coord = [&](std::size_t v) {
    return std::array<long, 3>{static_cast<long>(v / (H * W)), static_cast<long>((v / W) % H),
                               static_cast<long>(v % W)};
  };
  std::size_t count = 0;
  for (std::size_t t = 0; t + 1 < r->voxel.size(); ++t) {
    const auto a = coord(r->voxel[t]), b = coord(r->voxel[t + 1]);
    const long dist = std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
    if (dist != 1) ++count;
  }
  return count;
}

std::string OrderSet::spec() const {
  std::string s;
  for (std::size_t i = 0; i < orders.size(); ++i) {
    if (i) s += ',';
    s += orders[i].name();
  }
  return s;
}

std::vector<std::string> preset_names() { return {"B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B9"}; }

OrderSet preset(std::string_view name) {
  const auto all = all_orders();
  auto pair = [](const char* n) {
    const auto o = ScanOrder::parse(n);
    return std::vector<ScanOrder>{o, flip(o)};
  };
  OrderSet set;
  set.name = std::string(name);
  if (name == "B1") {
    set.orders = {all[0]};
  } else if (name == "B2") {
    set.orders = {all[0], all[1]};
  } else if (name == "B3") {
    set.orders = {all[0], all[1], all[10]};
  } else if (name == "B4") {
    set.orders.assign(all.begin(), all.begin() + 6);
  } else if (name == "B5") {
    set.orders.assign(all.begin(), all.begin() + 12);
  } else if (name == "B6") {
    set.orders = pair("2d");
  } else if (name == "B7") {
    set.orders = pair("window:2");
  } else if (name == "B8") {
    set.orders = pair("zigzag");
  } else if (name == "B9") {
    set.orders = pair("inclined");
  } else {
    throw ConfigError("unknown scan preset '" + std::string(name) + "' (expected B1..B9)");
  }
  return set;
}

OrderSet parse_order_set(std::string_view text) {
  const std::string s = trim(text);
  if (s.size() == 2 && s[0] == 'B' && s[1] >= '1' && s[1] <= '9') return preset(s);
  OrderSet set;
  set.name = s;
  // Split on commas outside parentheses.
  int depth = 0;
  std::string cur;
  for (char ch : s) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (ch == ',' && depth == 0) {
      set.orders.push_back(ScanOrder::parse(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!trim(cur).empty()) set.orders.push_back(ScanOrder::parse(cur));
  if (set.orders.empty()) throw ConfigError("empty scan order set");
  return set;
}

}  // namespace mmunet
