#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ccgan/ini.hpp"
#include "ccgan/models.hpp"
#include "ccgan/trainer.hpp"

namespace ccgan {

inline constexpr char kCheckpointMagic[4] = {'C', 'C', 'G', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// One tensor record of a checkpoint payload.
struct TensorRecord {
  std::string name;
  DType dtype = DType::kFloat32;
  Shape shape;
  std::vector<std::uint8_t> raw;  // little-endian values
};

/// File layout: "CCGN", u32 version, u32 length + config text, then per-tensor
/// records (u32 name length, name, u8 dtype tag, u32 rank, u64 extents, raw
/// little-endian values). The config text holds a [checkpoint] section with
/// the record count, so truncation at a record boundary is detected too.
struct CheckpointFile {
  std::uint32_t version = kCheckpointVersion;
  IniDocument header;
  std::vector<TensorRecord> records;
};

void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file);
/// Throws CheckpointError with kHeader, kVersion or kPayload.
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

template <typename T>
TensorRecord to_record(const std::string& name, const Tensor<T>& tensor);
/// Converts to the requested precision when the stored dtype differs.
template <typename T>
Tensor<T> from_record(const TensorRecord& record);

// Settings <-> INI ("arch.*", "train.*").
void write_arch(IniDocument& doc, const ArchConfig& arch);
ArchConfig read_arch(const IniDocument& doc);
void write_train(IniDocument& doc, const TrainConfig& config);
TrainConfig read_train(const IniDocument& doc);

/// Full training state: parameters, optimizer moments, iteration, RNG.
void save_checkpoint(const Trainer& trainer, const std::filesystem::path& path);
Trainer load_trainer(const std::filesystem::path& path);

/// Parameters only. A mismatch with `expected_mode` or `expected_cond_dim`
/// raises ConfigError.
ModelBundle<float> load_checkpoint(const std::filesystem::path& path,
                                   std::optional<Mode> expected_mode = std::nullopt,
                                   std::optional<std::size_t> expected_cond_dim = std::nullopt);

/// Stand-alone embedder files written by pretrain-embedder.
void save_embedder(const Embedder<float>& embedder, const ArchConfig& arch, double accuracy,
                   const std::filesystem::path& path);
Embedder<float> load_embedder(const std::filesystem::path& path, const ArchConfig* expect = nullptr);

}  // namespace ccgan
