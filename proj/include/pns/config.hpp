#pragma once

#include <string>

#include "pns/pipeline.hpp"

namespace pns {

/// Flat key=value run config mirroring PipelineConfig/NsConfig fields.
/// '#' starts a comment; unknown keys are hard errors.
PipelineConfig parse_config_text(const std::string& text);
PipelineConfig load_config_file(const std::string& path);
std::string serialize_config(const PipelineConfig& cfg);

} // namespace pns
