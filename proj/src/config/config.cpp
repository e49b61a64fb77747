#include "leafbench/config.hpp"

#include "leafbench/io.hpp"

#include <toml.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <mutex>
#include <regex>
#include <set>

namespace leafbench::config {

namespace fs = std::filesystem;

namespace {

const std::set<int> kResolutions{100, 150, 256};
const std::set<std::string> kBackends{"mock", "remote", "subprocess"};

std::string trim(std::string_view text)
{
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = text.find_last_not_of(" \t\r\n");
    return std::string(text.substr(first, last - first + 1));
}

template <typename T>
T parse_number(std::string_view text, const std::string& what)
{
    const auto s = trim(text);
    T value{};
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (s.empty() || ec != std::errc() || end != s.data() + s.size()) {
        throw ConfigError(what + ": '" + std::string(text) + "' is not a number");
    }
    return value;
}

// Typed readers over toml++ nodes; `path` names the key in error messages.
class Reader {
public:
    explicit Reader(std::string source) : source_(std::move(source)) {}

    [[noreturn]] void fail(const std::string& path, const std::string& message) const
    {
        throw ConfigError(source_ + ": " + path + ": " + message);
    }

    std::string str(const toml::node& node, const std::string& path) const
    {
        if (const auto* v = node.as_string()) {
            return v->get();
        }
        fail(path, "expected a string");
    }

    std::int64_t integer(const toml::node& node, const std::string& path) const
    {
        if (const auto* v = node.as_integer()) {
            return v->get();
        }
        fail(path, "expected an integer");
    }

    std::int64_t positive(const toml::node& node, const std::string& path) const
    {
        const auto v = integer(node, path);
        if (v < 1) {
            fail(path, "must be at least 1");
        }
        return v;
    }

    double number(const toml::node& node, const std::string& path) const
    {
        if (const auto* v = node.as_floating_point()) {
            return v->get();
        }
        if (const auto* v = node.as_integer()) {
            return static_cast<double>(v->get());
        }
        fail(path, "expected a number");
    }

    bool boolean(const toml::node& node, const std::string& path) const
    {
        if (const auto* v = node.as_boolean()) {
            return v->get();
        }
        fail(path, "expected true or false");
    }

    const toml::array& array(const toml::node& node, const std::string& path) const
    {
        if (const auto* v = node.as_array()) {
            return *v;
        }
        fail(path, "expected an array");
    }

    const toml::table& table(const toml::node& node, const std::string& path) const
    {
        if (const auto* v = node.as_table()) {
            return *v;
        }
        fail(path, "expected a table");
    }

    std::vector<std::string> strings(const toml::node& node, const std::string& path) const
    {
        std::vector<std::string> out;
        for (const auto& item : array(node, path)) {
            out.push_back(str(item, path));
        }
        return out;
    }

    std::vector<double> numbers(const toml::node& node, const std::string& path) const
    {
        std::vector<double> out;
        for (const auto& item : array(node, path)) {
            out.push_back(number(item, path));
        }
        return out;
    }

private:
    std::string source_;
};

scheduler::HpSource parse_hp_source(const std::string& text)
{
    if (text == "study") {
        return scheduler::HpSource::tpe_study;
    }
    if (text == "default") {
        return scheduler::HpSource::backend_default;
    }
    throw ConfigError("hyperparameter source must be 'study' or 'default', got '" + text + "'");
}

void apply_search_space(RunConfig& config, const Reader& r, const toml::table& table)
{
    static const std::set<std::string> kNames{"epochs", "batch_size", "learning_rate"};
    auto params = config.space.params();
    for (const auto& [key, node] : table) {
        const std::string name(key.str());
        const auto path = "search_space." + name;
        if (kNames.count(name) == 0) {
            r.fail(path, "unknown parameter (epochs, batch_size, learning_rate)");
        }
        const auto& spec = r.table(node, path);
        auto it = std::find_if(params.begin(), params.end(), [&](const tpe::ParamSpec& p) { return p.name == name; });
        if (const auto* enabled = spec.get("enabled"); enabled && !r.boolean(*enabled, path + ".enabled")) {
            if (name != "learning_rate") {
                r.fail(path, "only learning_rate can be disabled");
            }
            if (it != params.end()) {
                params.erase(it);
            }
            continue;
        }
        std::string kind = it == params.end() ? "log" : "";
        if (it != params.end()) {
            switch (it->kind) {
            case tpe::ParamKind::uniform: kind = "uniform"; break;
            case tpe::ParamKind::log_uniform: kind = "log"; break;
            case tpe::ParamKind::int_uniform: kind = "int"; break;
            case tpe::ParamKind::categorical: kind = "categorical"; break;
            }
        }
        double low = it == params.end() ? 0.0 : it->low;
        double high = it == params.end() ? 0.0 : it->high;
        std::vector<double> choices = it == params.end() ? std::vector<double>{} : it->choices;
        for (const auto& [field_key, value] : spec) {
            const std::string field(field_key.str());
            const auto field_path = path + "." + field;
            if (field == "kind") {
                kind = r.str(value, field_path);
            } else if (field == "low") {
                low = r.number(value, field_path);
            } else if (field == "high") {
                high = r.number(value, field_path);
            } else if (field == "choices") {
                choices = r.numbers(value, field_path);
                kind = "categorical";
            } else if (field != "enabled") {
                r.fail(field_path, "unknown key");
            }
        }
        tpe::ParamSpec updated;
        if (kind == "int") {
            updated = tpe::ParamSpec::int_uniform(name, std::lround(low), std::lround(high));
        } else if (kind == "uniform") {
            updated = tpe::ParamSpec::uniform(name, low, high);
        } else if (kind == "log") {
            updated = tpe::ParamSpec::log_uniform(name, low, high);
        } else if (kind == "categorical") {
            updated = tpe::ParamSpec::categorical(name, choices);
        } else {
            r.fail(path + ".kind", "must be int, uniform, log or categorical");
        }
        if (it != params.end()) {
            *it = updated;
        } else {
            params.push_back(updated);
        }
    }
    try {
        config.space = tpe::SearchSpace(params);
    } catch (const tpe::TpeError& e) {
        throw ConfigError(std::string("search_space: ") + e.what());
    }
}

void apply_backend(RunConfig& config, const Reader& r, const toml::table& table)
{
    for (const auto& [key, node] : table) {
        const std::string name(key.str());
        const auto path = "backend." + name;
        if (name == "name") {
            config.backend = r.str(node, path);
        } else if (name == "study") {
            config.study_backend = r.str(node, path);
        } else if (name == "retry") {
            for (const auto& [k, v] : r.table(node, path)) {
                const std::string field(k.str());
                if (field == "max_attempts") {
                    config.retry.max_attempts = static_cast<int>(r.positive(v, path + "." + field));
                } else if (field == "base_delay_ms") {
                    config.retry.base_delay = std::chrono::milliseconds(r.integer(v, path + "." + field));
                } else {
                    r.fail(path + "." + field, "unknown key");
                }
            }
        } else if (name == "mock") {
            auto& m = config.mock;
            for (const auto& [k, v] : r.table(node, path)) {
                const std::string field(k.str());
                const auto fp = path + "." + field;
                if (field == "base_accuracy") {
                    m.base_accuracy = r.number(v, fp);
                } else if (field == "retention") {
                    m.retention = r.number(v, fp);
                } else if (field == "malformed_rate") {
                    m.malformed_rate = r.number(v, fp);
                } else if (field == "flag_modulus") {
                    m.flag_modulus = static_cast<std::uint64_t>(r.integer(v, fp));
                } else if (field == "strict_flagging") {
                    m.strict_flagging = r.boolean(v, fp);
                } else {
                    r.fail(fp, "unknown key");
                }
            }
        } else if (name == "remote") {
            auto& rc = config.remote;
            for (const auto& [k, v] : r.table(node, path)) {
                const std::string field(k.str());
                const auto fp = path + "." + field;
                if (field == "base_url") {
                    rc.base_url = r.str(v, fp);
                } else if (field == "timeout_s") {
                    rc.timeout = std::chrono::seconds(r.positive(v, fp));
                } else if (field == "temperature") {
                    rc.temperature = r.number(v, fp);
                } else if (field == "max_tokens") {
                    rc.max_tokens = static_cast<int>(r.positive(v, fp));
                } else {
                    r.fail(fp, "unknown key");
                }
            }
        } else if (name == "subprocess") {
            for (const auto& [k, v] : r.table(node, path)) {
                const std::string field(k.str());
                const auto fp = path + "." + field;
                if (field == "command") {
                    config.trainer_command = r.strings(v, fp);
                } else if (field == "architecture") {
                    config.trainer_architecture = r.str(v, fp);
                } else {
                    r.fail(fp, "unknown key");
                }
            }
        } else {
            r.fail(path, "unknown key");
        }
    }
}

void apply_tpe(RunConfig& config, const Reader& r, const toml::table& table)
{
    for (const auto& [key, node] : table) {
        const std::string name(key.str());
        const auto path = "tpe." + name;
        if (name == "n_trials") {
            config.n_trials = static_cast<int>(r.positive(node, path));
        } else if (name == "gamma") {
            config.tpe.gamma = r.number(node, path);
        } else if (name == "n_startup") {
            config.tpe.n_startup = static_cast<int>(r.integer(node, path));
        } else if (name == "n_candidates") {
            config.tpe.n_candidates = static_cast<int>(r.positive(node, path));
        } else if (name == "min_trials") {
            config.tpe.min_trials = static_cast<int>(r.integer(node, path));
        } else if (name == "warmup") {
            config.tpe.warmup = static_cast<int>(r.integer(node, path));
        } else {
            r.fail(path, "unknown key");
        }
    }
}

void apply_pricing(RunConfig& config, const Reader& r, const toml::table& table)
{
    for (const auto& [key, node] : table) {
        const std::string prefix(key.str());
        const auto path = "pricing." + prefix;
        backends::ModelPrice price = config.remote.pricing[prefix];
        for (const auto& [k, v] : r.table(node, path)) {
            const std::string field(k.str());
            const auto fp = path + "." + field;
            const double value = r.number(v, fp);
            if (value < 0) {
                r.fail(fp, "must not be negative");
            }
            if (field == "input_usd_per_1k") {
                price.input_usd_per_1k = value;
            } else if (field == "output_usd_per_1k") {
                price.output_usd_per_1k = value;
            } else if (field == "training_usd_per_1k") {
                price.training_usd_per_1k = value;
            } else {
                r.fail(fp, "unknown key");
            }
        }
        config.remote.pricing[prefix] = price;
    }
}

bool mentions_api_key(const toml::table& table)
{
    for (const auto& [key, node] : table) {
        if (key.str() == "api_key") {
            return true;
        }
        if (const auto* sub = node.as_table(); sub && mentions_api_key(*sub)) {
            return true;
        }
    }
    return false;
}

} // namespace

Env process_env()
{
    return [](const std::string& name) -> std::optional<std::string> {
        const char* value = std::getenv(name.c_str());
        if (value == nullptr) {
            return std::nullopt;
        }
        return std::string(value);
    };
}

backends::RemoteConfig RunConfig::default_remote()
{
    backends::RemoteConfig rc;
    rc.pricing["gpt-4o-2024-08-06"] = {0.0025, 0.01, 0.025};
    rc.pricing["gpt-4o-mini"] = {0.00015, 0.0006, 0.003};
    return rc;
}

void RunConfig::validate() const
{
    if (run_dir.empty()) {
        throw ConfigError("run directory is empty");
    }
    for (int r : resolutions) {
        if (kResolutions.count(r) == 0) {
            throw ConfigError("resolution " + std::to_string(r) + " is not one of 100, 150, 256");
        }
    }
    for (const auto& name : {backend, study_backend.empty() ? backend : study_backend}) {
        if (kBackends.count(name) == 0) {
            throw ConfigError("unknown backend '" + name + "' (mock, remote, subprocess)");
        }
    }
    if (base_model.empty()) {
        throw ConfigError("base model is empty");
    }
    if (n_trials < 1) {
        throw ConfigError("n_trials must be at least 1");
    }
    if (!(tpe.gamma > 0.0 && tpe.gamma <= 1.0)) {
        throw ConfigError("tpe gamma must be in (0, 1]");
    }
    if (tpe.n_startup < 0 || tpe.min_trials < 0 || tpe.warmup < 0 || tpe.n_candidates < 1) {
        throw ConfigError("tpe settings must not be negative");
    }
    if (parallelism < 1) {
        throw ConfigError("parallelism must be at least 1");
    }
    if (per_class < 1 || phase_size < 1) {
        throw ConfigError("per_class and phase_size must be at least 1");
    }
    if (mock.base_accuracy < 0 || mock.base_accuracy > 1 || mock.retention < 0 || mock.retention > 1 ||
        mock.malformed_rate < 0 || mock.malformed_rate > 1) {
        throw ConfigError("mock probabilities must be in [0, 1]");
    }
    if (trainer_command.empty()) {
        throw ConfigError("trainer command is empty");
    }
    for (const char* name : {"epochs", "batch_size"}) {
        (void)space.at(name);
    }
}

std::chrono::milliseconds RunConfig::effective_poll_interval(const std::string& backend_name) const
{
    if (poll_interval) {
        return *poll_interval;
    }
    return backend_name == "mock" ? std::chrono::milliseconds(0) : std::chrono::milliseconds(2000);
}

scheduler::SchedulerOptions RunConfig::scheduler_options() const
{
    scheduler::SchedulerOptions o;
    o.poll_interval = effective_poll_interval(backend);
    o.sweep_parallelism = parallelism;
    o.transfer_learning_rate = transfer_learning_rate;
    if (o.poll_interval.count() > 0) {
        // About two days of polling at the configured interval.
        o.max_polls = static_cast<int>(std::max<long long>(1000, 172'800'000LL / o.poll_interval.count()));
    }
    return o;
}

tpe::StudyOptions RunConfig::study_options() const
{
    tpe::StudyOptions o;
    o.n_trials = n_trials;
    o.seed = seed;
    o.tpe = tpe;
    return o;
}

scheduler::MatrixConfig RunConfig::matrix_config() const
{
    scheduler::MatrixConfig m;
    m.plants = plants;
    m.resolutions = resolutions;
    m.regimes = regimes;
    m.full_hp_source = full_hp_source;
    m.backend = backend;
    m.base_model = base_model;
    m.zero_shot_models = zero_shot_models;
    m.space = space;
    m.study = study_options();
    m.cross_resolution = cross_resolution;
    m.cross_plant = cross_plant;
    return m;
}

void apply_toml(RunConfig& config, std::string_view text, const std::string& source)
{
    toml::table root;
    try {
        root = toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        throw ConfigError(source + ": " + std::string(e.description()));
    }
    if (mentions_api_key(root)) {
        throw ConfigError(source + ": api_key is not allowed in config files; set LEAFBENCH_API_KEY");
    }
    const Reader r(source);
    for (const auto& [key, node] : root) {
        const std::string name(key.str());
        if (name == "run_dir") {
            config.run_dir = r.str(node, name);
        } else if (name == "dataset_root") {
            config.dataset_root = r.str(node, name);
        } else if (name == "plants") {
            config.plants.clear();
            for (const auto& p : r.strings(node, name)) {
                config.plants.push_back(dataset::parse_plant(p));
            }
        } else if (name == "resolutions") {
            config.resolutions.clear();
            for (const auto& item : r.array(node, name)) {
                config.resolutions.push_back(static_cast<int>(r.integer(item, name)));
            }
        } else if (name == "seed") {
            const auto seed = r.integer(node, name);
            if (seed < 0) {
                r.fail(name, "must not be negative");
            }
            config.seed = static_cast<std::uint64_t>(seed);
        } else if (name == "per_class") {
            config.per_class = static_cast<std::size_t>(r.positive(node, name));
        } else if (name == "phase_size") {
            config.phase_size = static_cast<std::size_t>(r.positive(node, name));
        } else if (name == "image_base_url") {
            config.image_base_url = r.str(node, name);
        } else if (name == "regimes") {
            config.regimes.clear();
            for (const auto& g : r.strings(node, name)) {
                config.regimes.push_back(parse_regime(g));
            }
        } else if (name == "hyperparameters") {
            config.full_hp_source = parse_hp_source(r.str(node, name));
        } else if (name == "transfer_learning_rate") {
            config.transfer_learning_rate = r.boolean(node, name);
        } else if (name == "cross_resolution") {
            config.cross_resolution = r.boolean(node, name);
        } else if (name == "cross_plant") {
            config.cross_plant = r.boolean(node, name);
        } else if (name == "base_model") {
            config.base_model = r.str(node, name);
        } else if (name == "zero_shot_models") {
            config.zero_shot_models = r.strings(node, name);
        } else if (name == "parallelism") {
            config.parallelism = static_cast<std::size_t>(r.positive(node, name));
        } else if (name == "poll_interval_ms") {
            config.poll_interval = std::chrono::milliseconds(r.integer(node, name));
        } else if (name == "backend") {
            apply_backend(config, r, r.table(node, name));
        } else if (name == "tpe") {
            apply_tpe(config, r, r.table(node, name));
        } else if (name == "search_space") {
            apply_search_space(config, r, r.table(node, name));
        } else if (name == "pricing") {
            apply_pricing(config, r, r.table(node, name));
        } else {
            r.fail(name, "unknown key");
        }
    }
}

void apply_toml_file(RunConfig& config, const fs::path& path)
{
    if (!fs::exists(path)) {
        throw ConfigError("config file " + path.string() + " does not exist");
    }
    apply_toml(config, io::read_text(path), path.string());
}

void apply_env(RunConfig& config, const Env& env)
{
    const auto get = [&](const char* name) { return env(name); };
    if (auto v = get("LEAFBENCH_RUN_DIR")) {
        config.run_dir = *v;
    }
    if (auto v = get("LEAFBENCH_DATASET_ROOT")) {
        config.dataset_root = *v;
    }
    if (auto v = get("LEAFBENCH_PLANTS")) {
        config.plants = parse_plants(*v);
    }
    if (auto v = get("LEAFBENCH_RESOLUTIONS")) {
        config.resolutions = parse_resolutions(*v);
    }
    if (auto v = get("LEAFBENCH_SEED")) {
        config.seed = parse_number<std::uint64_t>(*v, "LEAFBENCH_SEED");
    }
    if (auto v = get("LEAFBENCH_REGIMES")) {
        config.regimes = parse_regimes(*v);
    }
    if (auto v = get("LEAFBENCH_BACKEND")) {
        config.backend = trim(*v);
    }
    if (auto v = get("LEAFBENCH_STUDY_BACKEND")) {
        config.study_backend = trim(*v);
    }
    if (auto v = get("LEAFBENCH_BASE_MODEL")) {
        config.base_model = trim(*v);
    }
    if (auto v = get("LEAFBENCH_ZERO_SHOT_MODELS")) {
        config.zero_shot_models = split_list(*v);
    }
    if (auto v = get("LEAFBENCH_N_TRIALS")) {
        config.n_trials = parse_number<int>(*v, "LEAFBENCH_N_TRIALS");
    }
    if (auto v = get("LEAFBENCH_PARALLELISM")) {
        config.parallelism = parse_number<std::size_t>(*v, "LEAFBENCH_PARALLELISM");
    }
    if (auto v = get("LEAFBENCH_POLL_INTERVAL_MS")) {
        config.poll_interval = std::chrono::milliseconds(parse_number<long>(*v, "LEAFBENCH_POLL_INTERVAL_MS"));
    }
    if (auto v = get("LEAFBENCH_BASE_URL")) {
        config.remote.base_url = trim(*v);
    }
    if (auto v = get("LEAFBENCH_IMAGE_BASE_URL")) {
        config.image_base_url = trim(*v);
    }
}

RunConfig load(const std::optional<fs::path>& config_path, const Env& env)
{
    RunConfig config;
    if (config_path) {
        apply_toml_file(config, *config_path);
    } else if (auto from_env = env(kConfigEnv); from_env && !from_env->empty()) {
        apply_toml_file(config, *from_env);
    }
    apply_env(config, env);
    return config;
}

std::vector<std::string> split_list(std::string_view list)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= list.size()) {
        const auto comma = list.find(',', start);
        const auto item = trim(list.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                                   : comma - start));
        if (!item.empty()) {
            out.push_back(item);
        }
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

std::vector<dataset::Plant> parse_plants(std::string_view list)
{
    std::vector<dataset::Plant> out;
    for (const auto& item : split_list(list)) {
        out.push_back(dataset::parse_plant(item));
    }
    return out;
}

std::vector<int> parse_resolutions(std::string_view list)
{
    std::vector<int> out;
    for (const auto& item : split_list(list)) {
        out.push_back(parse_number<int>(item, "resolution"));
    }
    return out;
}

std::vector<Regime> parse_regimes(std::string_view list)
{
    std::vector<Regime> out;
    for (const auto& item : split_list(list)) {
        out.push_back(parse_regime(item));
    }
    return out;
}

namespace {

// URL -> local file, rebuilt from the run's domain manifests on a miss.
class ImageResolver {
public:
    explicit ImageResolver(fs::path manifests) : manifests_(std::move(manifests)) {}

    fs::path operator()(const std::string& url)
    {
        std::lock_guard lock(mutex_);
        if (auto it = paths_.find(url); it != paths_.end()) {
            return it->second;
        }
        reload();
        if (auto it = paths_.find(url); it != paths_.end()) {
            return it->second;
        }
        if (fs::exists(url)) {
            return url;
        }
        throw backends::BackendError("no local image for '" + url + "' in " + manifests_.string());
    }

private:
    void reload()
    {
        if (!fs::exists(manifests_)) {
            return;
        }
        static const std::regex domain_csv(R"([a-z]+-\d+\.csv)");
        for (const auto& item : fs::directory_iterator(manifests_)) {
            if (!std::regex_match(item.path().filename().string(), domain_csv)) {
                continue;
            }
            for (const auto& s : dataset::import_manifest_csv(item.path()).manifest.samples) {
                if (s.public_url) {
                    paths_[*s.public_url] = s.local_path;
                }
            }
        }
    }

    fs::path manifests_;
    std::mutex mutex_;
    std::map<std::string, fs::path> paths_;
};

} // namespace

std::unique_ptr<backends::Backend> make_backend(const RunConfig& config, const std::string& name)
{
    if (name == "mock") {
        auto m = config.mock;
        m.seed = config.seed;
        return std::make_unique<backends::MockBackend>(m);
    }
    if (name == "remote") {
        auto rc = config.remote;
        rc.api_key = backends::api_key_from_env();
        return std::make_unique<backends::RetryingBackend>(std::make_shared<backends::RemoteBackend>(rc),
                                                           config.retry);
    }
    if (name == "subprocess") {
        backends::SubprocessConfig sc;
        sc.command = config.trainer_command;
        sc.architecture = config.trainer_architecture;
        auto resolver = std::make_shared<ImageResolver>(config.layout().manifests());
        sc.resolve_image = [resolver](const std::string& url) { return (*resolver)(url); };
        return std::make_unique<backends::SubprocessBackend>(sc);
    }
    throw ConfigError("unknown backend '" + name + "' (mock, remote, subprocess)");
}

} // namespace leafbench::config
