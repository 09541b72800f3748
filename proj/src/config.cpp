#include "momshoot/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <istream>
#include <map>
#include <sstream>

#include "momshoot/errors.hpp"
#include "momshoot/field_io.hpp"

namespace momshoot {

namespace {

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_real(const std::string &key, const std::string &v) {
    const std::string t = trim(v);
    double out = 0.0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty() || !std::isfinite(out))
        throw InvalidArgument(key + ": expected a number, got '" + t + "'");
    return out;
}

long long parse_integer(const std::string &key, const std::string &v) {
    const std::string t = trim(v);
    long long out = 0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty())
        throw InvalidArgument(key + ": expected an integer, got '" + t + "'");
    return out;
}

int parse_int(const std::string &key, const std::string &v) {
    const long long x = parse_integer(key, v);
    if (x < -2147483647LL || x > 2147483647LL) throw InvalidArgument(key + ": integer out of range");
    return static_cast<int>(x);
}

bool parse_bool(const std::string &key, const std::string &v) {
    const std::string t = trim(v);
    if (t == "true") return true;
    if (t == "false") return false;
    throw InvalidArgument(key + ": expected true or false, got '" + t + "'");
}

std::string parse_string(const std::string &key, const std::string &v) {
    const std::string t = trim(v);
    if (t.size() >= 2 && t.front() == '"' && t.back() == '"') return t.substr(1, t.size() - 2);
    // Bare words are accepted for enums given on the command line.
    if (!t.empty() && t.find_first_of("\"' =") == std::string::npos) return t;
    throw InvalidArgument(key + ": expected a quoted string, got '" + t + "'");
}

std::vector<int> parse_int_list(const std::string &key, const std::string &v) {
    std::string t = trim(v);
    if (t.size() < 2 || t.front() != '[' || t.back() != ']')
        throw InvalidArgument(key + ": expected a list like [16, 32], got '" + t + "'");
    t = trim(t.substr(1, t.size() - 2));
    std::vector<int> out;
    if (t.empty()) return out;
    std::stringstream ss(t);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_int(key, item));
    return out;
}

std::string fmt_real(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, res.ptr);
    // Keep TOML float syntax for integral values.
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Key {
    std::string name;
    std::function<std::string(const RunConfig &)> get;
    std::function<void(RunConfig &, const std::string &, const std::string &)> set;
};

#define MS_REAL(sec, key, member)                                                                              \
    Key {                                                                                                        \
        sec "." key, [](const RunConfig &c) { return fmt_real(c.member); },                                    \
            [](RunConfig &c, const std::string &k, const std::string &v) { c.member = parse_real(k, v); }        \
    }
#define MS_INT(sec, key, member)                                                                               \
    Key {                                                                                                        \
        sec "." key, [](const RunConfig &c) { return std::to_string(c.member); },                              \
            [](RunConfig &c, const std::string &k, const std::string &v) { c.member = parse_int(k, v); }         \
    }
#define MS_BOOL(sec, key, member)                                                                              \
    Key {                                                                                                        \
        sec "." key, [](const RunConfig &c) { return fmt_bool(c.member); },                                    \
            [](RunConfig &c, const std::string &k, const std::string &v) { c.member = parse_bool(k, v); }        \
    }

const std::vector<Key> &key_table() {
    static const std::vector<Key> keys{
        MS_REAL("kernel", "a", kernel.a),
        MS_REAL("kernel", "b", kernel.b),
        MS_REAL("kernel", "c", kernel.c),
        MS_INT("shooting", "steps", shooting_steps),
        Key{"shooting.scheme", [](const RunConfig &c) { return "\"" + std::string(to_string(c.scheme)) + "\""; },
            [](RunConfig &c, const std::string &k, const std::string &v) {
                c.scheme = scheme_from_string(parse_string(k, v));
            }},
        MS_REAL("registration", "sigma", sigma),
        MS_INT("registration", "max_iters", max_iters),
        MS_REAL("registration", "step_size", step_size),
        MS_REAL("registration", "step_shrink", step_shrink),
        MS_REAL("registration", "grad_tolerance", grad_tolerance),
        MS_BOOL("registration", "precondition", precondition),
        MS_INT("patch", "size", patch_size),
        MS_INT("patch", "train_stride", train_stride),
        MS_INT("patch", "predict_stride", predict_stride),
        MS_BOOL("patch", "flush_edges", flush_edges),
        MS_BOOL("patch", "prune", prune),
        MS_REAL("patch", "background_fraction", background_fraction),
        Key{"net.encoder_features",
            [](const RunConfig &c) {
                std::string s = "[";
                for (std::size_t i = 0; i < c.net.encoder_features.size(); ++i)
                    s += (i ? ", " : "") + std::to_string(c.net.encoder_features[i]);
                return s + "]";
            },
            [](RunConfig &c, const std::string &k, const std::string &v) {
                c.net.encoder_features = parse_int_list(k, v);
            }},
        MS_INT("net", "convs_per_block", net.convs_per_block),
        MS_INT("net", "kernel", net.kernel),
        MS_INT("net", "pool", net.pool),
        MS_REAL("net", "dropout_p", net.dropout_p),
        MS_REAL("train", "learning_rate", train.learning_rate),
        MS_REAL("train", "decay", train.decay),
        MS_INT("train", "epochs", train.epochs),
        MS_REAL("train", "rmsprop_epsilon", train.rmsprop_epsilon),
        MS_INT("train", "batch_size", train.batch_size),
        Key{"train.rng_seed", [](const RunConfig &c) { return std::to_string(c.train.rng_seed); },
            [](RunConfig &c, const std::string &k, const std::string &v) {
                const long long s = parse_integer(k, v);
                if (s < 0) throw InvalidArgument(k + ": seed must be >= 0");
                c.train.rng_seed = static_cast<std::uint64_t>(s);
            }},
        MS_INT("uncertainty", "samples", uncertainty.samples),
        Key{"uncertainty.rng_seed", [](const RunConfig &c) { return std::to_string(c.uncertainty.rng_seed); },
            [](RunConfig &c, const std::string &k, const std::string &v) {
                const long long s = parse_integer(k, v);
                if (s < 0) throw InvalidArgument(k + ": seed must be >= 0");
                c.uncertainty.rng_seed = static_cast<std::uint64_t>(s);
            }},
    };
    return keys;
}

#undef MS_REAL
#undef MS_INT
#undef MS_BOOL

const Key &find_key(const std::string &name) {
    for (const Key &k : key_table())
        if (k.name == name) return k;
    throw InvalidArgument("unknown config key '" + name + "'");
}

// Splits on commas that are not inside brackets.
std::vector<std::string> split_top_level(const std::string &s) {
    std::vector<std::string> parts;
    int depth = 0;
    bool quoted = false;
    std::string cur;
    for (char ch : s) {
        if (ch == '"') quoted = !quoted;
        if (!quoted && ch == '[') ++depth;
        if (!quoted && ch == ']') --depth;
        if (!quoted && depth == 0 && ch == ',') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!trim(cur).empty()) parts.push_back(cur);
    return parts;
}

std::string strip_comment(const std::string &line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

} // namespace

RunConfig RunConfig::defaults(int rank) {
    if (rank != 2 && rank != 3) throw InvalidArgument("config: rank must be 2 or 3");
    RunConfig c;
    c.rank = rank;
    c.kernel = KernelParams::defaults_for_rank(rank);
    c.net = NetConfig::defaults_for_rank(rank);
    c.train_stride = rank == 2 ? 1 : 7;
    return c;
}

void RunConfig::validate() const {
    kernel.validate();
    if (shooting_steps < 1) throw InvalidArgument("shooting.steps must be >= 1");
    registration_config(GridGeometry(std::vector<int>(rank, 4))).validate();
    train_patches().validate(rank);
    predict_patches().validate(rank);
    if (!(background_fraction >= 0.0)) throw InvalidArgument("patch.background_fraction must be >= 0");
    net_config().validate();
    train.validate();
    uncertainty.validate();
}

ShootingConfig RunConfig::shooting_config(const GridGeometry &geometry) const {
    if (geometry.rank() != rank) throw GeometryMismatch("config rank does not match the image rank");
    return ShootingConfig(make_plan(kernel, geometry), shooting_steps, scheme);
}

RegistrationConfig RunConfig::registration_config(const GridGeometry &geometry) const {
    RegistrationConfig r(shooting_config(geometry));
    r.sigma = sigma;
    r.max_iters = max_iters;
    r.step_size = step_size;
    r.step_shrink = step_shrink;
    r.grad_tolerance = grad_tolerance;
    r.precondition = precondition;
    return r;
}

NetConfig RunConfig::net_config() const {
    NetConfig n = net;
    n.rank = rank;
    n.decoders = rank;
    n.patch_size = patch_size;
    return n;
}

PatchSpec RunConfig::train_patches() const { return PatchSpec::uniform(rank, patch_size, train_stride, flush_edges); }

PatchSpec RunConfig::predict_patches() const {
    return PatchSpec::uniform(rank, patch_size, predict_stride, flush_edges);
}

double RunConfig::prune_threshold(const ScalarField &moving, const ScalarField &target) const {
    if (!prune) return -std::numeric_limits<double>::infinity();
    return default_background_threshold(moving, target, background_fraction);
}

bool RunConfig::operator==(const RunConfig &o) const {
    if (rank != o.rank) return false;
    for (const Key &k : key_table())
        if (k.get(*this) != k.get(o)) return false;
    return true;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const Key &k : key_table()) out.push_back(k.name);
    return out;
}

void set_config_value(RunConfig &config, const std::string &dotted_key, const std::string &value) {
    find_key(dotted_key).set(config, dotted_key, value);
}

std::string get_config_value(const RunConfig &config, const std::string &dotted_key) {
    return find_key(dotted_key).get(config);
}

void apply_config_text(RunConfig &config, std::istream &is, const std::string &source) {
    std::string line, section;
    int lineno = 0;
    auto fail = [&](const std::string &msg) {
        throw InvalidArgument(source + ":" + std::to_string(lineno) + ": " + msg);
    };
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(strip_comment(line));
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']') fail("malformed section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty()) fail("empty section name");
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) fail("expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty() || value.empty()) fail("expected key = value");
        const std::string full = section.empty() ? key : section + "." + key;
        try {
            if (value.front() == '{') {
                if (value.back() != '}') fail("unterminated inline table");
                for (const std::string &item : split_top_level(value.substr(1, value.size() - 2))) {
                    const auto ieq = item.find('=');
                    if (ieq == std::string::npos) fail("expected key = value inside inline table");
                    set_config_value(config, full + "." + trim(item.substr(0, ieq)), item.substr(ieq + 1));
                }
            } else {
                set_config_value(config, full, value);
            }
        } catch (const InvalidArgument &e) {
            if (std::string(e.what()).rfind(source + ":", 0) == 0) throw;
            fail(e.what());
        }
    }
}

void apply_config_file(RunConfig &config, const std::string &path) {
    std::ifstream is = open_input(path);
    apply_config_text(config, is, path);
}

std::string to_config_text(const RunConfig &config) {
    std::ostringstream os;
    std::string section;
    for (const Key &k : key_table()) {
        const auto dot = k.name.find('.');
        const std::string sec = k.name.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) os << '\n';
            os << '[' << sec << "]\n";
            section = sec;
        }
        os << k.name.substr(dot + 1) << " = " << k.get(config) << '\n';
    }
    return os.str();
}

} // namespace momshoot
