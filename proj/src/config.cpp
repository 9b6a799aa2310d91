#include "feddlr/config.hpp"

#include "feddlr/metrics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace feddlr {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

std::uint64_t parse_uint(const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw std::invalid_argument("expected a non-negative integer");
    return out;
}

double parse_real(const std::string& v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
        throw std::invalid_argument("expected a finite number");
    }
    return out;
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("expected true or false");
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& v, Parse parse) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse(trim(item)));
    if (out.empty()) throw std::invalid_argument("expected a comma-separated list");
    return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::string join_reals(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
    return out;
}

struct Pending {
    bool classes_set = false;
    bool dim_set = false;
};

using Setter = std::function<void(ExperimentConfig&, Pending&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"mode", [](auto& c, auto&, const std::string& v) {
             if (v == "fedavg") c.train.mode = TrainMode::fedavg;
             else if (v == "feddlr") c.train.mode = TrainMode::feddlr;
             else throw std::invalid_argument("expected fedavg or feddlr");
         }},
        {"clients", [](auto& c, auto&, const std::string& v) { c.train.clients = parse_uint(v); }},
        {"local_iters", [](auto& c, auto&, const std::string& v) { c.train.local_iters = parse_uint(v); }},
        {"total_iters", [](auto& c, auto&, const std::string& v) { c.train.total_iters = parse_uint(v); }},
        {"batch_size", [](auto& c, auto&, const std::string& v) { c.train.batch_size = parse_uint(v); }},
        {"threads", [](auto& c, auto&, const std::string& v) { c.train.threads = parse_uint(v); }},
        {"e", [](auto& c, auto&, const std::string& v) { c.train.e_client = c.train.e_server = parse_real(v); }},
        {"e_client", [](auto& c, auto&, const std::string& v) { c.train.e_client = parse_real(v); }},
        {"e_server", [](auto& c, auto&, const std::string& v) { c.train.e_server = parse_real(v); }},
        {"eta0", [](auto& c, auto&, const std::string& v) { c.train.lr.eta0 = parse_real(v); }},
        {"decay_base", [](auto& c, auto&, const std::string& v) { c.train.lr.decay_base = parse_real(v); }},
        {"decay_period", [](auto& c, auto&, const std::string& v) { c.train.lr.decay_period = parse_uint(v); }},
        {"seed", [](auto& c, auto&, const std::string& v) { c.train.seed = parse_uint(v); }},
        {"layers", [](auto& c, auto&, const std::string& v) {
             c.train.layers = parse_list<std::size_t>(v, [](const std::string& s) { return parse_uint(s); });
         }},
        {"dataset", [](auto& c, auto&, const std::string& v) {
             if (v == "synthetic") c.train.data.kind = DataSpec::Kind::synthetic;
             else if (v == "csv") c.train.data.kind = DataSpec::Kind::csv;
             else throw std::invalid_argument("expected synthetic or csv");
         }},
        {"classes", [](auto& c, auto& p, const std::string& v) {
             c.train.data.mixture.classes = parse_uint(v);
             p.classes_set = true;
         }},
        {"dim", [](auto& c, auto& p, const std::string& v) {
             c.train.data.mixture.dim = parse_uint(v);
             p.dim_set = true;
         }},
        {"train_per_class", [](auto& c, auto&, const std::string& v) { c.train.data.mixture.per_class = parse_uint(v); }},
        {"test_per_class", [](auto& c, auto&, const std::string& v) { c.train.data.test_per_class = parse_uint(v); }},
        {"separation", [](auto& c, auto&, const std::string& v) { c.train.data.mixture.separation = parse_real(v); }},
        {"train_csv", [](auto& c, auto&, const std::string& v) { c.train.data.train_csv = v; }},
        {"test_csv", [](auto& c, auto&, const std::string& v) { c.train.data.test_csv = v; }},
        {"broadcast_count", [](auto& c, auto&, const std::string& v) {
             if (v == "once") c.train.broadcast_count = BroadcastCount::once;
             else if (v == "per_client") c.train.broadcast_count = BroadcastCount::per_client;
             else throw std::invalid_argument("expected once or per_client");
         }},
        {"capture_trace", [](auto& c, auto&, const std::string& v) { c.train.capture_trace = parse_bool(v); }},
        {"out_dir", [](auto& c, auto&, const std::string& v) { c.out_dir = v; }},
        {"sweep_e", [](auto& c, auto&, const std::string& v) {
             c.sweep_e = parse_list<double>(v, [](const std::string& s) { return parse_real(s); });
         }},
        {"target_accuracy", [](auto& c, auto&, const std::string& v) { c.target_accuracy = parse_real(v); }},
    };
    return table;
}

} // namespace

void ExperimentConfig::validate() const {
    try {
        train.validate();
    } catch (const std::invalid_argument& ex) {
        throw ConfigError(ex.what());
    }
    for (double e : sweep_e) {
        if (!(e > 0.0 && e <= 1.0)) throw ConfigError("config: sweep_e values must be in (0, 1]");
    }
    if (!(target_accuracy >= 0.0 && target_accuracy <= 1.0)) {
        throw ConfigError("config: target_accuracy must be in [0, 1]");
    }
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    Pending pending;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto where = origin + ":" + std::to_string(line_no);
        const auto hash = line.find('#');
        const std::string body = trim(std::string_view(line).substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        const std::string key = trim(std::string_view(body).substr(0, eq));
        const std::string value = trim(std::string_view(body).substr(eq + 1));
        const auto it = setters().find(key);
        if (it == setters().end()) throw ConfigError(where + ": unknown key '" + key + "'");
        if (!seen.insert(key).second) throw ConfigError(where + ": key '" + key + "' given twice");
        try {
            it->second(cfg, pending, value);
        } catch (const std::invalid_argument& ex) {
            throw ConfigError(where + ": key '" + key + "': " + ex.what() + ", got '" + value + "'");
        }
    }
    if (!pending.classes_set && !cfg.train.layers.empty()) cfg.train.data.mixture.classes = cfg.train.layers.back();
    if (!pending.dim_set && !cfg.train.layers.empty()) cfg.train.data.mixture.dim = cfg.train.layers.front();
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str(), path.string());
}

std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg) {
    const auto& t = cfg.train;
    return {
        {"mode", t.mode == TrainMode::fedavg ? "fedavg" : "feddlr"},
        {"clients", std::to_string(t.clients)},
        {"local_iters", std::to_string(t.local_iters)},
        {"total_iters", std::to_string(t.total_iters)},
        {"batch_size", std::to_string(t.batch_size)},
        {"threads", std::to_string(t.threads)},
        {"e_client", format_double(t.e_client)},
        {"e_server", format_double(t.e_server)},
        {"eta0", format_double(t.lr.eta0)},
        {"decay_base", format_double(t.lr.decay_base)},
        {"decay_period", std::to_string(t.lr.decay_period)},
        {"seed", std::to_string(t.seed)},
        {"layers", join_sizes(t.layers)},
        {"dataset", t.data.kind == DataSpec::Kind::synthetic ? "synthetic" : "csv"},
        {"classes", std::to_string(t.data.mixture.classes)},
        {"dim", std::to_string(t.data.mixture.dim)},
        {"train_per_class", std::to_string(t.data.mixture.per_class)},
        {"test_per_class", std::to_string(t.data.test_per_class)},
        {"separation", format_double(t.data.mixture.separation)},
        {"train_csv", t.data.train_csv.string()},
        {"test_csv", t.data.test_csv.string()},
        {"broadcast_count", t.broadcast_count == BroadcastCount::once ? "once" : "per_client"},
        {"capture_trace", t.capture_trace ? "true" : "false"},
        {"out_dir", cfg.out_dir.string()},
        {"sweep_e", join_reals(cfg.sweep_e)},
        {"target_accuracy", format_double(cfg.target_accuracy)},
    };
}

std::string format_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& [key, value] : config_entries(cfg)) {
        if (value.empty()) continue;
        out += key + " = " + value + "\n";
    }
    return out;
}

} // namespace feddlr
