#pragma once

#include <string>

#include "mates/model.hpp"
#include "mates/optim.hpp"

namespace mates {

struct Checkpoint {
    ModelState model;
    bool has_optimizer = false;
    AdamState optimizer;
};

// Binary "MTLM" files: versioned header with the model config and step, a
// named segment table, the flat parameter vector as little-endian doubles,
// and optionally the Adam moments under their own segment table. The byte
// layout is documented in docs/file-formats.md.
void save_checkpoint(const ModelState& model, const AdamState* optimizer,
                     const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mates
