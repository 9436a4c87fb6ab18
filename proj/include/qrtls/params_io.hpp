// params_io.hpp: flat `key = value` parameter files and the named-parameter registry
//
// Format: UTF-8 text, one `key = value` per line, `#` starts a comment.
// Unknown keys are a hard error.

#pragma once

#include "qrtls/model.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qrtls {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ParamKey {
    std::string_view name;
    std::string_view unit;
    std::string_view description;
    bool optional;  // optional keys are written only when set
};

// Every key the parameter file understands, in canonical output order.
const std::vector<ParamKey>& param_keys();
bool is_param_key(std::string_view name);

// Named access used by the file format and by the fitter's free-parameter sets.
double get_param(const SystemParams& p, std::string_view name);
void set_param(SystemParams& p, std::string_view name, double value);
bool has_param(const SystemParams& p, std::string_view name);

SystemParams parse_params(std::string_view text, const std::string& source = "<string>");
SystemParams read_params_file(const std::filesystem::path& path);

// Canonical text form; parse_params(format_params(p)) == p exactly.
std::string format_params(const SystemParams& p, std::string_view header_comment = {});
void write_params_file(const std::filesystem::path& path, const SystemParams& p,
                       std::string_view header_comment = {});

// "%.17g" formatting used by every artifact writer
std::string format_double(double v);

}  // namespace qrtls
