#include "pns/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "pns/error.hpp"

namespace pns {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw Error(ErrorCode::config, "empty entry in " + key);
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw Error(ErrorCode::config, "bad integer '" + item + "' in " + key);
        }
    }
    if (out.empty()) throw Error(ErrorCode::config, key + " must not be empty");
    return out;
}

int64_t parse_int(const std::string& v, const std::string& key) {
    try {
        return std::stoll(trim(v));
    } catch (const std::exception&) {
        throw Error(ErrorCode::config, "bad integer '" + v + "' for " + key);
    }
}

double parse_double(const std::string& v, const std::string& key) {
    try {
        return std::stod(trim(v));
    } catch (const std::exception&) {
        throw Error(ErrorCode::config, "bad number '" + v + "' for " + key);
    }
}

bool parse_bool(const std::string& v, const std::string& key) {
    const std::string t = trim(v);
    if (t == "true" || t == "1") return true;
    if (t == "false" || t == "0") return false;
    throw Error(ErrorCode::config, "bad boolean '" + v + "' for " + key);
}

NormAxis parse_axis(const std::string& v, const std::string& key) {
    const std::string t = trim(v);
    if (t == "channel") return NormAxis::channel;
    if (t == "temporal") return NormAxis::temporal;
    throw Error(ErrorCode::config, "bad norm axis '" + v + "' for " + key + " (channel|temporal)");
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

} // namespace

const char* strategy_name(Strategy s) {
    switch (s) {
    case Strategy::g2l: return "g2l";
    case Strategy::l2l: return "l2l";
    case Strategy::l2g: return "l2g";
    case Strategy::g2g: return "g2g";
    case Strategy::none: return "none";
    }
    return "g2l";
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "g2l") return Strategy::g2l;
    if (name == "l2l") return Strategy::l2l;
    if (name == "l2g") return Strategy::l2g;
    if (name == "g2g") return Strategy::g2g;
    if (name == "none") return Strategy::none;
    throw Error(ErrorCode::config,
                "unknown strategy '" + name + "' (g2l|l2l|l2g|g2g|none)");
}

PipelineConfig parse_config_text(const std::string& text) {
    PipelineConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorCode::config,
                        "config line " + std::to_string(line_no) + " is not key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        if (key == "input_height") cfg.input_height = parse_int(value, key);
        else if (key == "input_width") cfg.input_width = parse_int(value, key);
        else if (key == "window") cfg.window = static_cast<int>(parse_int(value, key));
        else if (key == "low_channels") cfg.low_channels = static_cast<int>(parse_int(value, key));
        else if (key == "high_channels") cfg.high_channels = static_cast<int>(parse_int(value, key));
        else if (key == "encoder_widths") cfg.encoder_widths = parse_int_list(value, key);
        else if (key == "decoder_channels") cfg.decoder_channels = parse_int_list(value, key);
        else if (key == "global_groups") cfg.global_ns.groups = static_cast<int>(parse_int(value, key));
        else if (key == "global_kernel") cfg.global_ns.kernel = static_cast<int>(parse_int(value, key));
        else if (key == "global_dilations") cfg.global_ns.dilations = parse_int_list(value, key);
        else if (key == "global_soft_attention") cfg.global_ns.use_soft_attention = parse_bool(value, key);
        else if (key == "global_normalization") cfg.global_ns.use_normalization = parse_bool(value, key);
        else if (key == "global_norm_axis") cfg.global_ns.norm_axis = parse_axis(value, key);
        else if (key == "local_groups") cfg.local_ns.groups = static_cast<int>(parse_int(value, key));
        else if (key == "local_kernel") cfg.local_ns.kernel = static_cast<int>(parse_int(value, key));
        else if (key == "local_dilations") cfg.local_ns.dilations = parse_int_list(value, key);
        else if (key == "local_soft_attention") cfg.local_ns.use_soft_attention = parse_bool(value, key);
        else if (key == "local_normalization") cfg.local_ns.use_normalization = parse_bool(value, key);
        else if (key == "local_norm_axis") cfg.local_ns.norm_axis = parse_axis(value, key);
        else if (key == "lr") cfg.lr = parse_double(value, key);
        else if (key == "weight_decay") cfg.weight_decay = parse_double(value, key);
        else if (key == "strategy") cfg.strategy = strategy_from_name(trim(value));
        else if (key == "steps") cfg.steps = static_cast<int>(parse_int(value, key));
        else
            throw Error(ErrorCode::config, "unknown config key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

PipelineConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorCode::config, "cannot open config: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

std::string serialize_config(const PipelineConfig& cfg) {
    std::ostringstream os;
    os << "input_height=" << cfg.input_height << '\n';
    os << "input_width=" << cfg.input_width << '\n';
    os << "window=" << cfg.window << '\n';
    os << "low_channels=" << cfg.low_channels << '\n';
    os << "high_channels=" << cfg.high_channels << '\n';
    os << "encoder_widths=" << join_ints(cfg.encoder_widths) << '\n';
    os << "decoder_channels=" << join_ints(cfg.decoder_channels) << '\n';
    os << "global_groups=" << cfg.global_ns.groups << '\n';
    os << "global_kernel=" << cfg.global_ns.kernel << '\n';
    os << "global_dilations=" << join_ints(cfg.global_ns.dilations) << '\n';
    os << "global_soft_attention=" << (cfg.global_ns.use_soft_attention ? "true" : "false") << '\n';
    os << "global_normalization=" << (cfg.global_ns.use_normalization ? "true" : "false") << '\n';
    os << "global_norm_axis="
       << (cfg.global_ns.norm_axis == NormAxis::channel ? "channel" : "temporal") << '\n';
    os << "local_groups=" << cfg.local_ns.groups << '\n';
    os << "local_kernel=" << cfg.local_ns.kernel << '\n';
    os << "local_dilations=" << join_ints(cfg.local_ns.dilations) << '\n';
    os << "local_soft_attention=" << (cfg.local_ns.use_soft_attention ? "true" : "false") << '\n';
    os << "local_normalization=" << (cfg.local_ns.use_normalization ? "true" : "false") << '\n';
    os << "local_norm_axis="
       << (cfg.local_ns.norm_axis == NormAxis::channel ? "channel" : "temporal") << '\n';
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", cfg.lr);
    os << "lr=" << buf << '\n';
    std::snprintf(buf, sizeof(buf), "%.17g", cfg.weight_decay);
    os << "weight_decay=" << buf << '\n';
    os << "strategy=" << strategy_name(cfg.strategy) << '\n';
    os << "steps=" << cfg.steps << '\n';
    return os.str();
}

} // namespace pns
