#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "saml/training.hpp"

namespace saml {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoints are little-endian");

constexpr char kMagic[4] = {'S', 'A', 'M', 'L'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 + 1 + 8;
constexpr std::size_t kStateFields = 9;

template <typename T>
void put(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

template <typename Real>
void put_tensor(std::string& out, const std::string& name, const Tensor<Real>& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
  out.append(reinterpret_cast<const char*>(t.values().data()), t.size() * sizeof(Real));
}

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t begin, std::size_t end, std::string where)
      : bytes_(bytes), pos_(begin), end_(end), where_(std::move(where)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string text(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename Real>
  Tensor<Real> tensor(std::size_t rank) {
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(get<std::uint64_t>());
      if (d != 0 && count > remaining() / d) fail("shape table exceeds file size");
      count *= d;
    }
    if (count > remaining() / sizeof(Real)) fail("truncated tensor payload");
    std::vector<Real> values(count);
    std::memcpy(values.data(), bytes_.data() + pos_, count * sizeof(Real));
    pos_ += count * sizeof(Real);
    return Tensor<Real>(std::move(shape), std::move(values));
  }

  std::size_t remaining() const { return end_ - pos_; }
  [[noreturn]] void fail(const std::string& what) const { throw CheckpointError(where_ + ": " + what); }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) fail("truncated file");
  }

  const std::string& bytes_;
  std::size_t pos_;
  std::size_t end_;
  std::string where_;
};

std::size_t to_count(double v) { return static_cast<std::size_t>(std::llround(v)); }

}  // namespace

template <typename Real>
void save_checkpoint(const ModelParams<Real>& params, const TrainState<Real>& state,
                     const std::filesystem::path& path) {
  if (state.adam.m.size() != params.size() || state.adam.v.size() != params.size()) {
    throw std::invalid_argument("save_checkpoint: optimizer moments do not match the parameters");
  }
  std::string body;
  std::uint64_t count = 0;
  auto add = [&](const std::string& name, const Tensor<Real>& t) {
    put_tensor(body, name, t);
    ++count;
  };
  for (std::size_t i = 0; i < params.size(); ++i) add("param/" + params.names()[i], params.tensor(i));
  for (std::size_t i = 0; i < params.size(); ++i) add("adam.m/" + params.names()[i], state.adam.m[i]);
  for (std::size_t i = 0; i < params.size(); ++i) add("adam.v/" + params.names()[i], state.adam.v[i]);
  const std::vector<double> fields = {
      static_cast<double>(state.updates),         static_cast<double>(state.checkpoint),
      state.best_perplexity,                       static_cast<double>(state.best_checkpoint),
      static_cast<double>(state.streak),          static_cast<double>(state.decay_streak),
      state.learning_rate,                         static_cast<double>(state.skipped),
      static_cast<double>(state.adam.steps)};
  add("state", Tensor<Real>({kStateFields}, std::vector<Real>(fields.begin(), fields.end())));
  add("dropout", Tensor<Real>({2}, {static_cast<Real>(params.config().embed_dropout),
                                    static_cast<Real>(params.config().hidden_dropout)}));

  std::string header(kMagic, 4);
  put<std::uint32_t>(header, kVersion);
  put<std::uint8_t>(header, static_cast<std::uint8_t>(sizeof(Real)));
  put<std::uint64_t>(header, count);
  put<std::uint32_t>(body, crc_of(body.data(), body.size()));

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(path.string() + ": cannot write");
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out.flush()) throw CheckpointError(path.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

template <typename Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path.string() + ": cannot open");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (bytes.size() < kHeaderBytes + 4) throw CheckpointError(where + ": truncated file");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError(where + ": not a checkpoint (bad magic)");

  Reader header(bytes, 4, kHeaderBytes, where);
  const auto version = header.get<std::uint32_t>();
  if (version != kVersion) {
    header.fail("format version " + std::to_string(version) + ", expected " + std::to_string(kVersion));
  }
  const auto width = header.get<std::uint8_t>();
  if (width != sizeof(Real)) {
    header.fail("stores " + std::to_string(8 * width) + "-bit values, expected " +
                std::to_string(8 * sizeof(Real)) + "-bit");
  }
  const auto count = header.get<std::uint64_t>();

  const std::size_t body_end = bytes.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body_end, 4);
  Reader body(bytes, kHeaderBytes, body_end, where);

  std::vector<std::string> names;
  std::vector<Tensor<Real>> tensors;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_length = body.get<std::uint32_t>();
    names.push_back(body.text(name_length));
    const auto rank = body.get<std::uint32_t>();
    if (rank > 8) body.fail("tensor '" + names.back() + "' has rank " + std::to_string(rank));
    tensors.push_back(body.tensor<Real>(rank));
  }
  if (body.remaining() != 0) body.fail("unexpected bytes after the tensor table");
  if (crc_of(bytes.data() + kHeaderBytes, body_end - kHeaderBytes) != stored_crc) {
    body.fail("checksum mismatch");
  }

  auto find = [&](const std::string& name) -> const Tensor<Real>& {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return tensors[i];
    }
    body.fail("missing tensor '" + name + "'");
  };
  const Tensor<Real>& dropout = find("dropout");
  const Tensor<Real>& fields = find("state");
  if (dropout.shape() != Shape{2} || fields.shape() != Shape{kStateFields}) {
    body.fail("malformed state tensors");
  }

  std::vector<std::string> param_names;
  std::vector<Tensor<Real>> param_tensors;
  for (const auto& name : ModelParams<Real>::parameter_names()) {
    param_names.push_back(name);
    param_tensors.push_back(find("param/" + name));
  }
  Checkpoint<Real> ck;
  try {
    ck.params = ModelParams<Real>::from_tensors(param_names, param_tensors, dropout[0], dropout[1]);
  } catch (const std::invalid_argument& e) {
    body.fail(e.what());
  }
  if (names.size() != 3 * param_names.size() + 2) body.fail("unexpected tensor count");
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const Tensor<Real>& m = find("adam.m/" + ck.params.names()[i]);
    const Tensor<Real>& v = find("adam.v/" + ck.params.names()[i]);
    if (m.shape() != ck.params.tensor(i).shape() || v.shape() != ck.params.tensor(i).shape()) {
      body.fail("optimizer moments of '" + ck.params.names()[i] + "' do not match the parameter shape");
    }
    ck.state.adam.m.push_back(m);
    ck.state.adam.v.push_back(v);
  }
  ck.state.updates = to_count(fields[0]);
  ck.state.checkpoint = to_count(fields[1]);
  ck.state.best_perplexity = fields[2];
  ck.state.best_checkpoint = to_count(fields[3]);
  ck.state.streak = to_count(fields[4]);
  ck.state.decay_streak = to_count(fields[5]);
  ck.state.learning_rate = fields[6];
  ck.state.skipped = to_count(fields[7]);
  ck.state.adam.steps = to_count(fields[8]);
  return ck;
}

template void save_checkpoint(const ModelParams<float>&, const TrainState<float>&, const std::filesystem::path&);
template void save_checkpoint(const ModelParams<double>&, const TrainState<double>&, const std::filesystem::path&);
template Checkpoint<float> load_checkpoint(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint(const std::filesystem::path&);

}  // namespace saml
