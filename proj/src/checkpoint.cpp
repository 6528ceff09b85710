#include "shareconv/checkpoint.hpp"

#include <fstream>

#include <fmt/format.h>

#include "shareconv/binary_io.hpp"

namespace shareconv {

template <typename T>
void write_checkpoint(std::ostream& out, const CheckpointHeader& header, const ParameterRegistry<T>& params) {
  out.write("SHRN", 4);
  io::write_u32(out, checkpoint_version);
  io::write_string(out, header.architecture);
  io::write_u8(out, header.shared ? 1 : 0);
  io::write_u32(out, header.class_count);
  io::write_u32(out, header.epoch);
  const auto& layout = params.layout();
  io::write_u32(out, static_cast<std::uint32_t>(params.size() + params.buffer_count()));
  for (const auto& s : params.slots()) {
    io::write_string(out, s.name);
    write_tensor(out, s.value);
  }
  for (std::size_t i = 0; i < params.buffer_count(); ++i) {
    io::write_string(out, layout.buffers()[i].name);
    write_tensor(out, params.buffer(BufferId{static_cast<std::uint32_t>(i)}));
  }
  if (!out) throw Error("failed to write checkpoint");
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                     const ParameterRegistry<T>& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot create checkpoint {}", path.string()));
  write_checkpoint(out, header, params);
}

template <typename T>
Checkpoint<T> read_checkpoint(std::istream& in) {
  char magic[4] = {};
  if (!in.read(magic, 4) || std::string_view(magic, 4) != "SHRN") throw Error("not a checkpoint (bad magic)");
  const std::uint32_t version = io::read_u32(in);
  if (version != checkpoint_version) throw Error(fmt::format("unsupported checkpoint version {}", version));
  Checkpoint<T> c;
  c.header.architecture = io::read_string(in);
  c.header.shared = io::read_u8(in) != 0;
  c.header.class_count = io::read_u32(in);
  c.header.epoch = io::read_u32(in);
  const std::uint32_t count = io::read_u32(in);
  c.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = io::read_string(in);
    c.entries.emplace_back(std::move(name), read_tensor<T>(in));
  }
  return c;
}

template <typename T>
void apply_checkpoint(const Checkpoint<T>& checkpoint, ParameterRegistry<T>& params) {
  const auto& layout = params.layout();
  const std::size_t expected = params.size() + params.buffer_count();
  if (checkpoint.entries.size() != expected) {
    throw Error(fmt::format("checkpoint holds {} entries, architecture '{}' needs {}", checkpoint.entries.size(),
                            checkpoint.header.architecture, expected));
  }
  std::vector<bool> seen(expected, false);
  const auto mark = [&](std::size_t index, const std::string& name) {
    if (seen[index]) throw Error(fmt::format("checkpoint entry '{}' appears twice", name));
    seen[index] = true;
  };
  for (const auto& [name, tensor] : checkpoint.entries) {
    if (auto id = layout.find(name)) {
      mark(id->index, name);
      auto& slot = params.slot(*id);
      require_same_shape(slot.value.extents(), tensor.extents(), fmt::format("checkpoint entry '{}'", name).c_str());
      slot.value = tensor;
    } else if (auto bid = layout.find_buffer(name)) {
      mark(params.size() + bid->index, name);
      auto& buf = params.buffer(*bid);
      require_same_shape(buf.extents(), tensor.extents(), fmt::format("checkpoint entry '{}'", name).c_str());
      buf = tensor;
    } else {
      throw Error(fmt::format("checkpoint entry '{}' does not exist in '{}'", name, checkpoint.header.architecture));
    }
  }
}

template <typename T>
Model<T> load_model(const std::filesystem::path& path, CheckpointHeader* header_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open checkpoint {}", path.string()));
  const Checkpoint<T> c = read_checkpoint<T>(in);
  Model<T> model = Model<T>::build(make_spec(c.header.architecture, c.header.shared, c.header.class_count), 0);
  apply_checkpoint(c, model.params());
  if (header_out) *header_out = c.header;
  return model;
}

#define SHARECONV_INSTANTIATE_CHECKPOINT(T)                                                              \
  template void write_checkpoint(std::ostream&, const CheckpointHeader&, const ParameterRegistry<T>&);   \
  template void save_checkpoint(const std::filesystem::path&, const CheckpointHeader&,                  \
                                const ParameterRegistry<T>&);                                           \
  template Checkpoint<T> read_checkpoint<T>(std::istream&);                                             \
  template void apply_checkpoint(const Checkpoint<T>&, ParameterRegistry<T>&);                          \
  template Model<T> load_model<T>(const std::filesystem::path&, CheckpointHeader*);

SHARECONV_INSTANTIATE_CHECKPOINT(float)
SHARECONV_INSTANTIATE_CHECKPOINT(double)

}  // namespace shareconv
