#include "sohnet/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "binio.hpp"
#include "sohnet/error.hpp"

namespace sohnet {

using binio::put;

namespace {

void put_doubles(std::string& out, const Tensor& t) { binio::put_doubles(out, t.data()); }

}  // namespace

std::string encode_checkpoint(const std::string& config, const ParamStore& params) {
    std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, config.size());
    out += config;
    put<std::uint64_t>(out, params.step());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.params().size()));
    for (const Param& p : params.params()) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out += p.name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
        for (std::size_t d : p.value.shape()) put<std::uint64_t>(out, d);
        put_doubles(out, p.value);
        put_doubles(out, p.first_moment);
        put_doubles(out, p.second_moment);
    }
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    binio::Reader in(bytes, ErrorKind::Version, "checkpoint");
    if (in.get_string(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic)))
        fail(ErrorKind::Version, "not a checkpoint file (bad magic)");
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        fail(ErrorKind::Version, "unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.config = in.get_string(in.get<std::uint64_t>());
    ckpt.params.set_step(in.get<std::uint64_t>());
    const auto count = in.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = in.get_string(in.get<std::uint32_t>());
        Shape shape(in.get<std::uint32_t>());
        for (std::size_t& d : shape) d = in.get<std::uint64_t>();
        Param& p = ckpt.params.add(std::move(name), Tensor(shape));
        in.get_doubles(p.value.data());
        in.get_doubles(p.first_moment.data());
        in.get_doubles(p.second_moment.data());
    }
    if (!in.done()) fail(ErrorKind::Version, "trailing bytes after checkpoint payload");
    return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const std::string& config,
                      const ParamStore& params) {
    const std::string bytes = encode_checkpoint(config, params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::Io, "failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open checkpoint " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_checkpoint(buf.str());
}

}  // namespace sohnet
