#include "dynret/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace dynret {

namespace {

constexpr std::array<char, 4> kModelMagic{'D', 'Y', 'N', 'R'};
constexpr std::array<char, 4> kDenseMagic{'D', 'Y', 'N', 'X'};

template <class T>
void put_le(std::string& buf, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  buf.append(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <class T>
T get_le(const std::string& buf, std::size_t& pos, const std::filesystem::path& path) {
  if (pos + sizeof(T) > buf.size()) throw Error(path.string() + ": truncated file");
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), buf.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  pos += sizeof(T);
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

void put_matrix(std::string& buf, const Mat<float>& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) put_le(buf, m.data()[i]);
}

void get_matrix(const std::string& buf, std::size_t& pos, Mat<float>& m,
                const std::filesystem::path& path) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_le<float>(buf, pos, path);
}

void write_file(const std::filesystem::path& path, const std::string& header,
                const std::string& payload) {
  std::string out = header + payload;
  put_le(out, fnv1a64(payload.data(), payload.size()));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("failed writing " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void check_magic(const std::string& buf, const std::array<char, 4>& magic,
                 const std::filesystem::path& path) {
  if (buf.size() < 4 || std::memcmp(buf.data(), magic.data(), 4) != 0)
    throw Error(path.string() + ": bad magic, expected '" + std::string(magic.begin(), magic.end()) + "'");
}

void check_payload(const std::string& buf, std::size_t header_end, std::size_t payload_end,
                   const std::filesystem::path& path) {
  if (payload_end + 8 != buf.size()) throw Error(path.string() + ": unexpected file size");
  std::size_t pos = payload_end;
  const auto stored = get_le<std::uint64_t>(buf, pos, path);
  if (stored != fnv1a64(buf.data() + header_end, payload_end - header_end))
    throw Error(path.string() + ": checksum mismatch");
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t state) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state ^= p[i];
    state *= 0x100000001b3ULL;
  }
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const EncoderParams<float>& encoder,
                     const DocidMatrix<float>* docids) {
  const auto& c = encoder.config;
  if (docids && docids->num_docs() > 0 && docids->d_model() != c.d_model)
    throw Error("docid matrix dimension does not match the encoder");
  std::string header(kModelMagic.begin(), kModelMagic.end());
  put_le(header, kCheckpointVersion);
  const std::uint32_t num_docs = docids ? static_cast<std::uint32_t>(docids->num_docs()) : 0;
  for (auto v : {c.d_model, c.layers, c.heads, c.vocab_size, c.max_len})
    put_le(header, static_cast<std::uint32_t>(v));
  put_le(header, num_docs);
  put_le(header, static_cast<std::uint32_t>(c.d_ff));
  std::string payload;
  for (const auto* m : encoder.tensors()) put_matrix(payload, *m);
  if (num_docs > 0) put_matrix(payload, docids->storage());
  write_file(path, header, payload);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  check_magic(buf, kModelMagic, path);
  std::size_t pos = 4;
  const auto version = get_le<std::uint32_t>(buf, pos, path);
  if (version != kCheckpointVersion)
    throw Error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  EncoderConfig cfg;
  cfg.d_model = static_cast<int>(get_le<std::uint32_t>(buf, pos, path));
  cfg.layers = static_cast<int>(get_le<std::uint32_t>(buf, pos, path));
  cfg.heads = static_cast<int>(get_le<std::uint32_t>(buf, pos, path));
  cfg.vocab_size = static_cast<int>(get_le<std::uint32_t>(buf, pos, path));
  cfg.max_len = static_cast<int>(get_le<std::uint32_t>(buf, pos, path));
  const auto num_docs = get_le<std::uint32_t>(buf, pos, path);
  cfg.d_ff = static_cast<int>(get_le<std::uint32_t>(buf, pos, path));
  cfg.validate();
  const std::size_t header_end = pos;

  Checkpoint ck{EncoderParams<float>::zeros(cfg), DocidMatrix<float>::zeros(num_docs, cfg.d_model)};
  for (auto* m : ck.encoder.tensors()) get_matrix(buf, pos, *m, path);
  get_matrix(buf, pos, ck.docids.storage(), path);
  check_payload(buf, header_end, pos, path);
  return ck;
}

void save_dense_index(const std::filesystem::path& path, const Mat<float>& index) {
  std::string header(kDenseMagic.begin(), kDenseMagic.end());
  put_le(header, kCheckpointVersion);
  put_le(header, static_cast<std::uint32_t>(index.rows()));
  put_le(header, static_cast<std::uint32_t>(index.cols()));
  std::string payload;
  put_matrix(payload, index);
  write_file(path, header, payload);
}

Mat<float> load_dense_index(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  check_magic(buf, kDenseMagic, path);
  std::size_t pos = 4;
  const auto version = get_le<std::uint32_t>(buf, pos, path);
  if (version != kCheckpointVersion)
    throw Error(path.string() + ": unsupported dense index version " + std::to_string(version));
  const auto rows = get_le<std::uint32_t>(buf, pos, path);
  const auto cols = get_le<std::uint32_t>(buf, pos, path);
  const std::size_t header_end = pos;
  Mat<float> m(rows, cols);
  get_matrix(buf, pos, m, path);
  check_payload(buf, header_end, pos, path);
  return m;
}

}  // namespace dynret
