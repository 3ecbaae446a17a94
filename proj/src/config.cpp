#include <sstream>

#include <toml.hpp>

#include "fairmonitor/gateway.h"
#include "fairmonitor/util.h"

namespace fairmonitor {

namespace {

json from_toml(const toml::node& node) {
    if (auto* t = node.as_table()) {
        json j = json::object();
        for (const auto& [k, v] : *t) j[std::string(k.str())] = from_toml(v);
        return j;
    }
    if (auto* a = node.as_array()) {
        json j = json::array();
        for (const auto& v : *a) j.push_back(from_toml(v));
        return j;
    }
    if (auto* s = node.as_string()) return s->get();
    if (auto* i = node.as_integer()) return i->get();
    if (auto* f = node.as_floating_point()) return f->get();
    if (auto* b = node.as_boolean()) return b->get();
    std::ostringstream ss;
    if (auto* d = node.as_date()) ss << d->get();
    else if (auto* t = node.as_time()) ss << t->get();
    else if (auto* dt = node.as_date_time()) ss << dt->get();
    return ss.str();
}

} // namespace

json load_config_file(const std::filesystem::path& path) {
    std::string text;
    try {
        text = util::read_file(path);
    } catch (const Error&) {
        throw ConfigError("cannot read config '" + path.string() + "'");
    }
    if (path.extension() == ".toml") {
        try {
            return from_toml(toml::parse(text, path.string()));
        } catch (const toml::parse_error& e) {
            std::ostringstream ss;
            ss << "invalid TOML in '" << path.string() << "': " << e.description() << " (line "
               << e.source().begin.line << ")";
            throw ConfigError(ss.str());
        }
    }
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("invalid JSON in '" + path.string() + "': " + e.what());
    }
}

} // namespace fairmonitor
