#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/core.h>

#include "sdc/harness.hpp"

namespace sdc {

// Checkpoint container, version 1:
//   8 bytes  magic "SDCCKPT1"
//   u32      architecture text length, then the ArchDescriptor text
//   u32      parameter count
//   per parameter:
//     u32 name length, name bytes
//     u8  trainable flag
//     u32 ndim, u32 dims[ndim]
//     f64 values[numel]
// All integers and floats little-endian.

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts need byte swaps");

namespace {

constexpr char kMagic[8] = {'S', 'D', 'C', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    out.append(reinterpret_cast<const char*>(&v), 4);
}

struct Reader {
    const std::uint8_t* p;
    std::size_t left;

    void take(void* dst, std::size_t n) {
        if (n > left) throw DecodeError("checkpoint: truncated file");
        std::memcpy(dst, p, n);
        p += n;
        left -= n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        take(&v, 4);
        return v;
    }
    std::uint8_t u8() {
        std::uint8_t v;
        take(&v, 1);
        return v;
    }
    std::string str(std::size_t n) {
        std::string s(n, '\0');
        take(s.data(), n);
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    const std::string arch = model.arch.serialize();
    put_u32(out, static_cast<std::uint32_t>(arch.size()));
    out += arch;

    const auto& params = model.net.params();
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const Param& p : params) {
        put_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out += p.name;
        out.push_back(p.trainable ? 1 : 0);
        put_u32(out, static_cast<std::uint32_t>(p.shape.size()));
        for (int d : p.shape) put_u32(out, static_cast<std::uint32_t>(d));
        out.append(reinterpret_cast<const char*>(p.value.data()),
                   p.value.size() * sizeof(double));
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(fmt::format("cannot open {} for writing", path.string()));
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError(fmt::format("short write to {}", path.string()));
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    Reader r{bytes.data(), bytes.size()};

    char magic[8];
    r.take(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0)
        throw DecodeError(fmt::format("{} is not a checkpoint (bad magic)", path.string()));

    TrainedModel model;
    model.arch = ArchDescriptor::parse(r.str(r.u32()));
    model.net = model.arch.build(/*init_seed=*/0);

    const std::uint32_t n_params = r.u32();
    if (n_params != model.net.params().size())
        throw DecodeError(fmt::format(
            "checkpoint holds {} parameters but the architecture defines {}", n_params,
            model.net.params().size()));

    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.str(r.u32());
        const bool trainable = r.u8() != 0;
        const std::uint32_t ndim = r.u32();
        std::vector<int> shape(ndim);
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            shape[d] = static_cast<int>(r.u32());
            numel *= static_cast<std::size_t>(shape[d]);
        }
        Param& p = model.net.param(name);
        if (p.shape != shape || p.trainable != trainable)
            throw DecodeError(fmt::format("checkpoint parameter '{}' does not match the "
                                          "architecture",
                                          name));
        r.take(p.value.data(), numel * sizeof(double));
    }
    if (r.left != 0) throw DecodeError("checkpoint: trailing bytes");
    return model;
}

}  // namespace sdc
