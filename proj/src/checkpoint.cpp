#include "mates/checkpoint.hpp"

#include <cstring>

#include "binio.hpp"
#include "mates/error.hpp"

namespace mates {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'L', 'M'};
constexpr std::uint32_t kVersion = 1;

std::uint32_t arch_code(Arch arch) { return arch == Arch::bigram ? 0u : 1u; }

Arch arch_from_code(std::uint32_t code, const std::string& path) {
    if (code == 0) return Arch::bigram;
    if (code == 1) return Arch::transformer;
    throw ParseError(path + ": unknown arch code " + std::to_string(code));
}

}  // namespace

void save_checkpoint(const ModelState& model, const AdamState* optimizer,
                     const std::string& path) {
    if (model.params.size() != static_cast<std::size_t>(param_count(model.config)))
        throw ContractError("checkpoint: parameter vector sized " +
                            std::to_string(model.params.size()) + " does not match config");
    binio::Writer w;
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.u32(arch_code(model.config.arch));
    w.i64(model.config.vocab_size);
    w.i64(model.config.context_len);
    w.i64(model.config.d_model);
    w.i64(model.config.n_layers);
    w.i64(model.config.n_heads);
    w.u64(model.config.seed);
    w.i64(model.step);
    w.u32(static_cast<std::uint32_t>(model.layout.size()));
    for (const auto& seg : model.layout) {
        w.str(seg.name);
        w.i64(seg.offset);
        w.i64(seg.length);
    }
    w.doubles(model.params);

    if (optimizer == nullptr) {
        w.u8(0);
    } else {
        if (optimizer->m.size() != model.params.size() ||
            optimizer->v.size() != model.params.size())
            throw ContractError("checkpoint: optimizer moments do not match parameter length");
        w.u8(1);
        w.i64(optimizer->t_opt);
        w.f64(optimizer->beta1);
        w.f64(optimizer->beta2);
        w.f64(optimizer->eps);
        const std::int64_t n = static_cast<std::int64_t>(model.params.size());
        w.u32(2);
        w.str("adam.m");
        w.i64(0);
        w.i64(n);
        w.str("adam.v");
        w.i64(n);
        w.i64(n);
        w.doubles(optimizer->m);
        w.doubles(optimizer->v);
    }
    binio::write_file(path, w);
}

Checkpoint load_checkpoint(const std::string& path) {
    binio::Reader r = binio::read_file(path);

    char magic[4];
    r.need(4);
    std::memcpy(magic, r.data.data(), 4);
    r.pos = 4;
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError(path + ": not a model checkpoint (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));

    Checkpoint ckpt;
    LMConfig& cfg = ckpt.model.config;
    cfg.arch = arch_from_code(r.u32(), path);
    cfg.vocab_size = r.i64();
    cfg.context_len = r.i64();
    cfg.d_model = r.i64();
    cfg.n_layers = r.i64();
    cfg.n_heads = r.i64();
    cfg.seed = r.u64();
    ckpt.model.step = r.i64();

    std::vector<Segment> stored;
    const std::uint32_t n_segments = r.u32();
    for (std::uint32_t i = 0; i < n_segments; ++i) {
        Segment seg;
        seg.name = r.str();
        seg.offset = r.i64();
        seg.length = r.i64();
        stored.push_back(std::move(seg));
    }
    ckpt.model.layout = layout_for(cfg);
    if (stored != ckpt.model.layout)
        throw ParseError(path + ": segment table does not match the stored config");

    const std::size_t n = static_cast<std::size_t>(param_count(cfg));
    r.doubles(ckpt.model.params, n);

    ckpt.has_optimizer = r.u8() != 0;
    if (ckpt.has_optimizer) {
        AdamState& adam = ckpt.optimizer;
        adam.t_opt = r.i64();
        adam.beta1 = r.f64();
        adam.beta2 = r.f64();
        adam.eps = r.f64();
        const std::uint32_t n_opt = r.u32();
        if (n_opt != 2) throw ParseError(path + ": expected 2 optimizer segments");
        for (const char* expected : {"adam.m", "adam.v"}) {
            const std::string name = r.str();
            const std::int64_t offset = r.i64();
            const std::int64_t length = r.i64();
            if (name != expected || length != static_cast<std::int64_t>(n) ||
                (name == "adam.m" ? offset != 0 : offset != static_cast<std::int64_t>(n)))
                throw ParseError(path + ": malformed optimizer segment '" + name + "'");
        }
        r.doubles(adam.m, n);
        r.doubles(adam.v, n);
    }
    r.expect_end();
    return ckpt;
}

}  // namespace mates
