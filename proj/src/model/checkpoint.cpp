#include "halsie/checkpoint.hpp"

#include <fstream>

#include "halsie/binary_io.hpp"

namespace halsie::model {
namespace {
constexpr char kMagic[9] = "HALSIE01";
}

template <typename T>
void write_checkpoint(std::ostream& out, HalsieModel<T>& model) {
  const auto entries = model.state();
  binio::write_magic(out, kMagic);
  binio::write_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    binio::write_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    binio::write_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) binio::write_u32(out, static_cast<std::uint32_t>(d));
    for (T v : e.data) binio::write_f32(out, static_cast<float>(v));
  }
  if (!out) throw IoError("failed writing checkpoint");
}

template <typename T>
void save_checkpoint(const std::string& path, HalsieModel<T>& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_checkpoint(out, model);
}

template <typename T>
void read_checkpoint(std::istream& in, HalsieModel<T>& model) {
  auto entries = model.state();
  binio::expect_magic(in, kMagic);
  const auto count = binio::read_u32(in);
  if (count != entries.size())
    throw ShapeError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                     std::to_string(entries.size()));
  for (auto& e : entries) {
    const auto len = binio::read_u32(in);
    if (len > 4096) throw IoError("checkpoint tensor name too long");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw IoError("unexpected end of checkpoint");
    if (name != e.name) throw ShapeError("checkpoint tensor '" + name + "' where model expects '" + e.name + "'");
    const auto rank = binio::read_u32(in);
    ad::Shape shape(rank);
    for (auto& d : shape) d = binio::read_u32(in);
    if (shape != e.shape)
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + ad::shape_string(shape) + ", model expects " +
                       ad::shape_string(e.shape));
    for (auto& v : e.data) v = static_cast<T>(binio::read_f32(in));
  }
}

template <typename T>
void load_checkpoint(const std::string& path, HalsieModel<T>& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  read_checkpoint(in, model);
}

std::string spec_sidecar_path(const std::string& checkpoint_path) { return checkpoint_path + ".spec.txt"; }

template void write_checkpoint(std::ostream&, HalsieModel<float>&);
template void write_checkpoint(std::ostream&, HalsieModel<double>&);
template void save_checkpoint(const std::string&, HalsieModel<float>&);
template void save_checkpoint(const std::string&, HalsieModel<double>&);
template void read_checkpoint(std::istream&, HalsieModel<float>&);
template void read_checkpoint(std::istream&, HalsieModel<double>&);
template void load_checkpoint(const std::string&, HalsieModel<float>&);
template void load_checkpoint(const std::string&, HalsieModel<double>&);

}  // namespace halsie::model
