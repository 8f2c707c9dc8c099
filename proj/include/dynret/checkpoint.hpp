#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "dynret/model.hpp"

namespace dynret {

// Checkpoint layout (all integers and floats little-endian):
//
//   char[4]  magic "DYNR"
//   u32      format version (1)
//   u32      d_model, layers, heads, vocab_size, max_len, num_docs, d_ff
//   f32[]    encoder tensors in EncoderParams::tensors() order, each row-major:
//              token_embedding, position_embedding,
//              per layer: ln1_gain ln1_bias wq bq wk bk wv bv wo bo
//                         ln2_gain ln2_bias w1 b1 w2 b2,
//              final_gain, final_bias
//   f32[]    docid matrix, one contiguous d_model block per docid (absent when num_docs = 0)
//   u64      FNV-1a 64 checksum of every byte between the header and the checksum
//
// Dense indexes use magic "DYNX", version, num_docs, d_model, the row-major
// |D| x d_model payload and the same trailing checksum.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  EncoderParams<float> encoder;
  /// Empty (0 docs) for encoder-only checkpoints such as two-tower towers.
  DocidMatrix<float> docids;
};

void save_checkpoint(const std::filesystem::path& path, const EncoderParams<float>& encoder,
                     const DocidMatrix<float>* docids = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void save_dense_index(const std::filesystem::path& path, const Mat<float>& index);
Mat<float> load_dense_index(const std::filesystem::path& path);

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t state = 0xcbf29ce484222325ULL);

}  // namespace dynret
