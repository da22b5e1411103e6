#include "mwuf/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>

#include "mwuf/errors.hpp"
#include "mwuf/rng.hpp"

namespace mwuf {

namespace {

std::vector<double> gaussian_vec(size_t d, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> v(d);
  for (double& x : v) x = n(rng);
  return v;
}

}  // namespace

FeatureSchema synthetic_schema(size_t k) {
  return FeatureSchema(
      {
          {.name = "item", .side = Side::item, .is_id = true},
          {.name = "category", .side = Side::item},
          {.name = "user", .side = Side::user, .is_id = true},
          {.name = "group", .side = Side::user},
      },
      k);
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.items == 0 || spec.users == 0 || spec.interactions == 0 || spec.latent_dim == 0)
    throw UsageError("synthetic: zero-sized spec");
  if (spec.noise < 0 || spec.noise > 1) throw UsageError("synthetic: noise outside [0,1]");

  const size_t d = spec.latent_dim;
  auto lat_rng = make_rng(spec.seed, "synthetic-latents");
  auto int_rng = make_rng(spec.seed, "synthetic-interactions");

  std::vector<std::vector<double>> cat_center, grp_center;
  for (size_t c = 0; c < std::max<size_t>(spec.categories, 1); ++c)
    cat_center.push_back(gaussian_vec(d, lat_rng, 1.0));
  for (size_t gidx = 0; gidx < std::max<size_t>(spec.groups, 1); ++gidx)
    grp_center.push_back(gaussian_vec(d, lat_rng, 1.0));

  SyntheticData out;
  std::uniform_int_distribution<size_t> pick_cat(0, cat_center.size() - 1);
  std::uniform_int_distribution<size_t> pick_grp(0, grp_center.size() - 1);
  std::vector<size_t> item_cat(spec.items), user_grp(spec.users);
  std::normal_distribution<double> bias(0.0, 0.3);
  for (size_t v = 0; v < spec.items; ++v) {
    item_cat[v] = pick_cat(lat_rng);
    auto z = gaussian_vec(d, lat_rng, 0.6);
    for (size_t j = 0; j < d; ++j) z[j] += cat_center[item_cat[v]][j];
    out.item_latent.push_back(std::move(z));
    out.item_bias.push_back(bias(lat_rng));
  }
  for (size_t u = 0; u < spec.users; ++u) {
    user_grp[u] = pick_grp(lat_rng);
    auto z = gaussian_vec(d, lat_rng, 0.6);
    for (size_t j = 0; j < d; ++j) z[j] += grp_center[user_grp[u]][j];
    out.user_latent.push_back(std::move(z));
  }

  // popularity: weight 1/(rank+1)^skew over a random permutation of items
  std::vector<size_t> rank(spec.items);
  for (size_t v = 0; v < spec.items; ++v) rank[v] = v;
  std::shuffle(rank.begin(), rank.end(), int_rng);
  std::vector<double> weight(spec.items);
  for (size_t v = 0; v < spec.items; ++v)
    weight[v] = 1.0 / std::pow(double(rank[v] + 1), spec.skew);
  std::discrete_distribution<size_t> pick_item(weight.begin(), weight.end());
  std::uniform_int_distribution<size_t> pick_user(0, spec.users - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Steep enough that clean labels are nearly separable by the planted
  // scorer, while still leaving a usable gradient for learned models.
  const double alpha = 4.5 / std::sqrt(double(d));
  for (size_t t = 0; t < spec.interactions; ++t) {
    size_t v = pick_item(int_rng);
    size_t u = pick_user(int_rng);
    double logit = out.item_bias[v];
    for (size_t j = 0; j < d; ++j) logit += alpha * out.user_latent[u][j] * out.item_latent[v][j];
    double p = 1.0 / (1.0 + std::exp(-logit));
    uint8_t y = unit(int_rng) < p ? 1 : 0;
    if (unit(int_rng) < spec.noise) y = 1 - y;

    RawRow r;
    r.columns["item"] = "i" + std::to_string(v);
    r.columns["category"] = "c" + std::to_string(item_cat[v]);
    r.columns["user"] = "u" + std::to_string(u);
    r.columns["group"] = "g" + std::to_string(user_grp[u]);
    r.label = y;
    r.timestamp = int64_t(t);
    out.rows.push_back(std::move(r));
    out.true_prob.push_back(p);
  }
  return out;
}

std::vector<std::vector<std::string>> read_delimited(const std::string& path,
                                                     const std::string& delim,
                                                     size_t expect_columns) {
  if (delim.empty()) throw UsageError("read_delimited: empty delimiter");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    size_t pos = 0;
    while (true) {
      size_t next = line.find(delim, pos);
      if (next == std::string::npos) {
        cols.push_back(line.substr(pos));
        break;
      }
      cols.push_back(line.substr(pos, next - pos));
      pos = next + delim.size();
    }
    if (expect_columns && cols.size() != expect_columns)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(expect_columns) + " columns, got " +
                       std::to_string(cols.size()));
    rows.push_back(std::move(cols));
  }
  return rows;
}

namespace {

int64_t parse_int(const std::string& s, const std::string& path, size_t lineno) {
  try {
    size_t used = 0;
    int64_t v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(path + ":" + std::to_string(lineno) + ": bad integer '" + s + "'");
  }
}

// "Title Words (1995)" -> tokens of the lowercased title, year apart.
void split_title(const std::string& raw, std::vector<std::string>& tokens, std::string& year) {
  std::string title = raw;
  size_t open = title.rfind('(');
  size_t close = title.rfind(')');
  if (open != std::string::npos && close == title.size() - 1 && close > open) {
    std::string inside = title.substr(open + 1, close - open - 1);
    if (!inside.empty() && std::all_of(inside.begin(), inside.end(), ::isdigit)) {
      year = inside;
      title = title.substr(0, open);
    }
  }
  std::string word;
  for (char c : title) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      word.push_back(char(std::tolower(static_cast<unsigned char>(c))));
    else if (!word.empty()) {
      tokens.push_back(word);
      word.clear();
    }
  }
  if (!word.empty()) tokens.push_back(word);
}

}  // namespace

FeatureSchema movielens_schema(size_t k, bool include_titles) {
  std::vector<FeatureField> fields = {
      {.name = "item", .side = Side::item, .is_id = true},
      {.name = "genres", .side = Side::item, .multi_valued = true},
      {.name = "year", .side = Side::item},
      {.name = "user", .side = Side::user, .is_id = true},
      {.name = "gender", .side = Side::user},
      {.name = "age", .side = Side::user, .kind = FieldKind::continuous},
      {.name = "occupation", .side = Side::user},
  };
  if (include_titles)
    fields.insert(fields.begin() + 2,
                  {.name = "title", .side = Side::item, .multi_valued = true, .vocab_cap = 5000});
  return FeatureSchema(std::move(fields), k);
}

MovieLensData load_movielens(const std::string& dir, bool include_titles) {
  struct Movie {
    std::vector<std::string> genres, title;
    std::string year;
  };
  struct User {
    std::string gender, occupation;
    double age = 0;
  };

  std::map<std::string, Movie> movies;
  {
    auto rows = read_delimited(dir + "/movies.dat", "::", 3);
    size_t lineno = 0;
    for (auto& r : rows) {
      ++lineno;
      Movie m;
      split_title(r[1], m.title, m.year);
      if (m.year.empty()) m.year = "unknown";
      size_t pos = 0;
      while (pos <= r[2].size()) {
        size_t next = r[2].find('|', pos);
        std::string g = r[2].substr(pos, next == std::string::npos ? next : next - pos);
        if (!g.empty()) m.genres.push_back(g);
        if (next == std::string::npos) break;
        pos = next + 1;
      }
      movies[r[0]] = std::move(m);
    }
  }

  std::map<std::string, User> users;
  {
    auto rows = read_delimited(dir + "/users.dat", "::", 5);
    size_t lineno = 0;
    for (auto& r : rows) {
      ++lineno;
      User u;
      u.gender = r[1];
      u.age = double(parse_int(r[2], dir + "/users.dat", lineno));
      u.occupation = r[3];
      users[r[0]] = std::move(u);
    }
  }

  MovieLensData out;
  const std::string rpath = dir + "/ratings.dat";
  auto rows = read_delimited(rpath, "::", 4);
  size_t lineno = 0;
  static const Movie no_movie{{}, {}, "unknown"};
  static const User no_user{};
  for (auto& r : rows) {
    ++lineno;
    int64_t rating = parse_int(r[2], rpath, lineno);
    int64_t ts = parse_int(r[3], rpath, lineno);
    auto mit = movies.find(r[1]);
    const Movie& m = mit == movies.end() ? no_movie : mit->second;
    auto uit = users.find(r[0]);
    const User& u = uit == users.end() ? no_user : uit->second;

    RawRow row;
    row.columns["item"] = r[1];
    row.columns["genres"] = m.genres;
    row.columns["year"] = m.year;
    if (include_titles) row.columns["title"] = m.title;
    row.columns["user"] = r[0];
    row.columns["gender"] = u.gender;
    row.columns["age"] = u.age;
    row.columns["occupation"] = u.occupation;
    row.label = rating >= 4 ? 1 : 0;
    row.timestamp = ts;
    out.rows.push_back(std::move(row));
  }
  return out;
}

namespace {

constexpr char kMagic[5] = {'M', 'W', 'U', 'F', '1'};

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& buf, float f) {
  uint32_t v;
  static_assert(sizeof v == sizeof f);
  __builtin_memcpy(&v, &f, 4);
  put_u32(buf, v);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  const std::string& path;

  size_t left() const { return buf.size() - pos; }
  void need(size_t n) const {
    if (left() < n) throw CorruptionError(path + ": truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[pos++])) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(buf[pos++])) << (8 * i);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

uint64_t fnv1a(uint64_t h, const char* data, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    h ^= uint8_t(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}
constexpr uint64_t kFnvBasis = 1469598103934665603ULL;

}  // namespace

void save_checkpoint(const NamedTensors& tensors, const std::string& path) {
  for (size_t i = 0; i < tensors.size(); ++i)
    for (size_t j = 0; j < i; ++j)
      if (tensors[i].first == tensors[j].first)
        throw UsageError("checkpoint: duplicate tensor name " + tensors[i].first);

  std::string buf(kMagic, sizeof kMagic);
  uint64_t sum = kFnvBasis;
  for (const auto& [name, t] : tensors) {
    put_u32(buf, uint32_t(name.size()));
    buf += name;
    put_u32(buf, uint32_t(t.shape().size()));
    for (size_t d : t.shape()) put_u64(buf, uint64_t(d));
    size_t payload_start = buf.size();
    for (float f : t.values()) put_f32(buf, f);
    sum = fnv1a(sum, buf.data() + payload_start, buf.size() - payload_start);
  }
  put_u64(buf, sum);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("checkpoint: cannot write " + path);
  out.write(buf.data(), std::streamsize(buf.size()));
  if (!out) throw UsageError("checkpoint: write failed on " + path);
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < sizeof(kMagic) + 8 || buf.compare(0, sizeof kMagic, kMagic, sizeof kMagic) != 0)
    throw CorruptionError(path + ": not a checkpoint file");

  Reader r{buf, sizeof kMagic, path};
  NamedTensors out;
  uint64_t sum = kFnvBasis;
  while (r.left() > 8) {
    uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    uint32_t rank = r.u32();
    if (rank > 8) throw CorruptionError(path + ": implausible rank");
    std::vector<size_t> shape;
    size_t total = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      uint64_t d = r.u64();
      if (d == 0 || d > (uint64_t(1) << 40)) throw CorruptionError(path + ": implausible extent");
      shape.push_back(size_t(d));
      total *= size_t(d);
    }
    r.need(total * 4 + 8);  // payload plus the trailing checksum must fit
    size_t payload_start = r.pos;
    std::vector<float> vals(total);
    for (size_t i = 0; i < total; ++i) {
      uint32_t v = r.u32();
      float f;
      __builtin_memcpy(&f, &v, 4);
      vals[i] = f;
    }
    sum = fnv1a(sum, buf.data() + payload_start, total * 4);
    out.emplace_back(std::move(name), Tensor<float>::from(std::move(shape), std::move(vals)));
  }
  if (r.left() != 8) throw CorruptionError(path + ": truncated");
  if (r.u64() != sum) throw CorruptionError(path + ": checksum mismatch");
  return out;
}

}  // namespace mwuf
