#pragma once

#include "leafbench/backends.hpp"
#include "leafbench/scheduler.hpp"
#include "leafbench/tpe.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace leafbench::config {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Looks up an environment variable; nullopt when unset.
using Env = std::function<std::optional<std::string>(const std::string&)>;

/// The real process environment.
Env process_env();

inline constexpr const char* kConfigEnv = "LEAFBENCH_CONFIG";

struct RunConfig {
    std::filesystem::path run_dir = "leafbench-run";
    std::filesystem::path dataset_root;
    std::vector<dataset::Plant> plants{dataset::Plant::apple, dataset::Plant::corn};
    std::vector<int> resolutions{256, 150, 100};
    std::uint64_t seed = 42;
    std::size_t per_class = 200;
    std::size_t phase_size = 128;
    std::string image_base_url;

    std::vector<Regime> regimes{Regime::full, Regime::progressive, Regime::zero_shot};
    scheduler::HpSource full_hp_source = scheduler::HpSource::tpe_study;
    bool transfer_learning_rate = false;
    bool cross_resolution = true;
    bool cross_plant = true;

    /// mock, remote or subprocess.
    std::string backend = "mock";
    /// Trains the study trials; empty means `backend`.
    std::string study_backend;
    std::string base_model = "gpt-4o-2024-08-06";
    std::vector<std::string> zero_shot_models;

    int n_trials = 30;
    tpe::TpeSettings tpe;
    tpe::SearchSpace space = tpe::SearchSpace::default_space();

    std::size_t parallelism = 4;
    /// Unset means 0 for the mock and 2 s otherwise.
    std::optional<std::chrono::milliseconds> poll_interval;
    backends::RetryPolicy retry;

    backends::MockConfig mock;
    /// api_key is never read from here; see make_backend.
    backends::RemoteConfig remote = default_remote();
    std::vector<std::string> trainer_command{"python3", "-m", "local_trainer"};
    std::string trainer_architecture = "resnet50";

    static backends::RemoteConfig default_remote();

    /// Throws ConfigError on an empty or unsupported value.
    void validate() const;

    std::chrono::milliseconds effective_poll_interval(const std::string& backend_name) const;
    scheduler::SchedulerOptions scheduler_options() const;
    tpe::StudyOptions study_options() const;
    scheduler::MatrixConfig matrix_config() const;
    scheduler::RunLayout layout() const { return scheduler::RunLayout(run_dir); }
};

/// Applies a TOML document on top of `config`. Unknown keys, wrong types and
/// an `api_key` anywhere are errors.
void apply_toml(RunConfig& config, std::string_view text, const std::string& source = "config");
void apply_toml_file(RunConfig& config, const std::filesystem::path& path);

/// LEAFBENCH_* overrides (see docs). LEAFBENCH_API_KEY is not a setting.
void apply_env(RunConfig& config, const Env& env);

/// Defaults, then the file named by `config_path` or LEAFBENCH_CONFIG, then
/// environment overrides. Flags are applied on top by the caller.
RunConfig load(const std::optional<std::filesystem::path>& config_path, const Env& env);

std::vector<dataset::Plant> parse_plants(std::string_view list);
std::vector<int> parse_resolutions(std::string_view list);
std::vector<Regime> parse_regimes(std::string_view list);
std::vector<std::string> split_list(std::string_view list);

/// Builds the named backend. The remote key comes from LEAFBENCH_API_KEY only;
/// the subprocess worker resolves image URLs through the run's manifests.
std::unique_ptr<backends::Backend> make_backend(const RunConfig& config, const std::string& name);

} // namespace leafbench::config
