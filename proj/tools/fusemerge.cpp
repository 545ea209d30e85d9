// fusemerge CLI: merge checkpoints in parameter space, run pairwise fuse
// training on the toy model, inspect containers, and project distribution
// matrices across tokenizers.
//
// Machine-readable JSON goes to stdout; diagnostics go to stderr. Exit codes:
//   0 success, 1 usage/config error, 2 incompatible checkpoints,
//   3 I/O or file-format error, 4 non-finite training loss.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fusemerge/align.hpp"
#include "fusemerge/container.hpp"
#include "fusemerge/corpus.hpp"
#include "fusemerge/dist_io.hpp"
#include "fusemerge/merge.hpp"
#include "fusemerge/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitIncompatible = 2;
constexpr int kExitIo = 3;
constexpr int kExitNonFiniteLoss = 4;

const std::vector<std::string> kConfigKeys = {
    "method",     "granularity", "weight_mode", "coeffs",    "t",
    "scale",      "density",     "drop_rate",   "seed",      "softmax_temperature",
    "layer_pattern", "tensor_filter", "lambda", "lr",        "epochs",
    "batch",      "block_len",   "mince_granularity",        "base",
    "targets",    "out",         "pivot",       "teacher_dir", "corpus", "vocab"};

json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw fusemerge::IoError("cannot open config '" + path + "'");
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw std::invalid_argument("config '" + path + "' is not a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find(kConfigKeys.begin(), kConfigKeys.end(), key) == kConfigKeys.end())
            throw std::invalid_argument("config '" + path + "': unknown key '" + key + "'");
    }
    return j;
}

template <typename T>
void config_take(const json& cfg, const char* key, T& into) {
    auto it = cfg.find(key);
    if (it == cfg.end()) return;
    try {
        into = it->get<T>();
    } catch (const json::exception&) {
        throw std::invalid_argument(std::string("config: key '") + key + "' has the wrong type");
    }
}

void require_input_path(const std::string& path, const char* what) {
    if (!fs::exists(path))
        throw fusemerge::IoError(std::string(what) + " path '" + path + "' does not exist");
}

std::vector<std::string> load_string_list(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw fusemerge::IoError(std::string("cannot open ") + what + " '" + path + "'");
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_array())
        throw std::invalid_argument(std::string(what) + " '" + path + "' is not a JSON list");
    try {
        return j.get<std::vector<std::string>>();
    } catch (const json::exception&) {
        throw std::invalid_argument(std::string(what) + " '" + path + "' holds non-string entries");
    }
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const fusemerge::IncompatibleError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIncompatible;
    } catch (const fusemerge::NonFiniteLossError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNonFiniteLoss;
    } catch (const fusemerge::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fusemerge::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}

// ---------------------------------------------------------------------------
// merge

struct MergeArgs {
    std::string config_path;
    std::string method = "varm";
    std::string granularity = "matrix";
    std::string weight_mode = "square";
    std::string base;
    std::vector<std::string> targets;
    std::string out;
    std::vector<double> coeffs;
    double t = 0.5;
    double scale = 1.0;
    double density = 0.2;
    double drop_rate = 0.5;
    std::uint64_t seed = 0;
    double softmax_temperature = 1.0;
    std::string layer_pattern = fusemerge::kDefaultLayerPattern;
    std::string tensor_filter;
};

fusemerge::Checkpoint filter_tensors(const fusemerge::Checkpoint& ckpt, const std::regex& re) {
    fusemerge::Checkpoint out;
    out.metadata = ckpt.metadata;
    for (const auto& [name, t] : ckpt.tensors)
        if (std::regex_search(name, re)) out.tensors.emplace(name, t);
    return out;
}

int cmd_merge(const MergeArgs& args) {
    using namespace fusemerge;
    const auto method = merge_method_from_name(args.method);
    if (!method) throw std::invalid_argument("unknown method '" + args.method + "'");
    const auto granularity = granularity_from_name(args.granularity);
    if (!granularity) throw std::invalid_argument("unknown granularity '" + args.granularity + "'");
    const auto weight_mode = weight_mode_from_name(args.weight_mode);
    if (!weight_mode) throw std::invalid_argument("unknown weight mode '" + args.weight_mode + "'");
    if (args.targets.empty()) throw std::invalid_argument("merge needs at least one --targets checkpoint");
    if (args.out.empty()) throw std::invalid_argument("merge needs --out");

    const bool needs_base = *method == MergeMethod::Varm || *method == MergeMethod::TaskArithmetic ||
                            *method == MergeMethod::Ties || *method == MergeMethod::Dare;
    if (needs_base && args.base.empty())
        throw std::invalid_argument("--base is required for method '" + args.method + "'");
    if (*method == MergeMethod::Slerp && args.targets.size() != 2)
        throw std::invalid_argument("slerp takes exactly two --targets");

    MergeConfig cfg;
    cfg.method = *method;
    cfg.granularity = *granularity;
    cfg.weight_mode = *weight_mode;
    cfg.coeffs = args.coeffs;
    cfg.t = args.t;
    cfg.scale = args.scale;
    cfg.density = args.density;
    cfg.drop_rate = args.drop_rate;
    cfg.seed = args.seed;
    cfg.softmax_temperature = args.softmax_temperature;
    cfg.layer_pattern = args.layer_pattern;
    cfg.validate();

    if (!args.base.empty()) require_input_path(args.base, "base checkpoint");
    for (const std::string& t : args.targets) require_input_path(t, "target checkpoint");

    Checkpoint base;
    if (!args.base.empty()) base = load_checkpoint(args.base);
    std::vector<Checkpoint> targets;
    targets.reserve(args.targets.size());
    for (const std::string& t : args.targets) targets.push_back(load_checkpoint(t));

    // Optional participation filter: tensors whose names do not match are
    // carried over unmerged from the base (first target when there is none).
    std::optional<std::regex> filter;
    if (!args.tensor_filter.empty()) {
        try {
            filter.emplace(args.tensor_filter);
        } catch (const std::regex_error& e) {
            throw std::invalid_argument("invalid --tensor-filter '" + args.tensor_filter + "': " + e.what());
        }
    }
    const Checkpoint& carrier = needs_base ? base : targets[0];
    Checkpoint base_f = filter ? filter_tensors(base, *filter) : base;
    std::vector<Checkpoint> targets_f;
    if (filter) {
        for (const Checkpoint& t : targets) targets_f.push_back(filter_tensors(t, *filter));
    } else {
        targets_f = targets;
    }

    ordered_json report;
    report["method"] = args.method;
    report["out"] = args.out;
    report["targets"] = args.targets;

    Checkpoint merged;
    switch (*method) {
        case MergeMethod::Varm: {
            const UnitPartition partition = partition_units(base_f, cfg.granularity, cfg.layer_pattern);
            for (const std::string& w : partition.warnings) std::cerr << "warning: " << w << "\n";
            std::vector<DeltaStats> stats;
            for (const Checkpoint& t : targets_f) stats.push_back(delta_stats(base_f, t, partition));
            const MergeWeights weights = varm_weights(stats, cfg.weight_mode, cfg.softmax_temperature);
            merged = merge_weighted(targets_f, weights, partition,
                                    {{"merge.method", "varm"},
                                     {"merge.granularity", granularity_name(cfg.granularity)},
                                     {"merge.weight_mode", weight_mode_name(cfg.weight_mode)}});
            report["granularity"] = args.granularity;
            report["weight_mode"] = args.weight_mode;
            ordered_json units = ordered_json::object();
            for (const std::string& id : weights.unit_ids) {
                ordered_json u;
                u["weights"] = weights.weights.at(id);
                ordered_json mean_sq = ordered_json::array();
                ordered_json mean_abs = ordered_json::array();
                for (const DeltaStats& s : stats) {
                    mean_sq.push_back(s.units.at(id).mean_sq);
                    mean_abs.push_back(s.units.at(id).mean_abs);
                }
                u["mean_sq"] = mean_sq;
                u["mean_abs"] = mean_abs;
                units[id] = u;
            }
            report["units"] = units;
            break;
        }
        case MergeMethod::Linear:
            merged = merge_linear(targets_f, cfg.coeffs);
            report["coeffs"] = cfg.coeffs;
            break;
        case MergeMethod::Slerp:
            merged = merge_slerp(targets_f[0], targets_f[1], cfg.t);
            report["t"] = cfg.t;
            break;
        case MergeMethod::TaskArithmetic:
            merged = merge_task_arithmetic(base_f, targets_f, cfg.scale);
            report["scale"] = cfg.scale;
            break;
        case MergeMethod::Ties:
            merged = merge_ties(base_f, targets_f, cfg.density, cfg.scale);
            report["density"] = cfg.density;
            report["scale"] = cfg.scale;
            break;
        case MergeMethod::Dare:
            merged = merge_dare(base_f, targets_f, cfg.drop_rate, cfg.scale, cfg.seed);
            report["drop_rate"] = cfg.drop_rate;
            report["scale"] = cfg.scale;
            report["seed"] = cfg.seed;
            break;
    }

    if (filter) {
        Checkpoint assembled;
        assembled.metadata = merged.metadata;
        assembled.metadata["merge.tensor_filter"] = args.tensor_filter;
        for (const auto& [name, t] : carrier.tensors) {
            auto it = merged.tensors.find(name);
            assembled.tensors.emplace(name, it != merged.tensors.end() ? it->second : t);
        }
        merged = std::move(assembled);
        report["tensor_filter"] = args.tensor_filter;
    }

    save_checkpoint(merged, args.out);
    std::cout << report.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// fuse-train

struct FuseTrainArgs {
    std::string config_path;
    std::string pivot;
    std::string teacher_dir;
    std::string corpus;
    std::string out;
    std::string vocab_path;
    std::string log_path;
    fusemerge::TrainConfig cfg;
    std::string mince = "sequence";
};

int cmd_fuse_train(const FuseTrainArgs& args) {
    using namespace fusemerge;
    if (args.pivot.empty() || args.teacher_dir.empty() || args.corpus.empty() || args.out.empty())
        throw std::invalid_argument("fuse-train needs --pivot, --teacher-dir, --corpus and --out");
    const auto mince = fuse_granularity_from_name(args.mince);
    if (!mince) throw std::invalid_argument("unknown mince granularity '" + args.mince + "'");
    TrainConfig cfg = args.cfg;
    cfg.mince = *mince;
    cfg.validate();

    require_input_path(args.pivot, "pivot checkpoint");
    require_input_path(args.teacher_dir, "teacher directory");
    require_input_path(args.corpus, "corpus");

    Checkpoint pivot_ckpt = load_checkpoint(args.pivot);
    std::vector<std::string> vocab_tokens;
    if (!args.vocab_path.empty()) {
        vocab_tokens = load_string_list(args.vocab_path, "vocabulary");
    } else {
        auto it = pivot_ckpt.metadata.find("vocab");
        if (it == pivot_ckpt.metadata.end())
            throw std::invalid_argument(
                "pivot checkpoint has no 'vocab' metadata; pass --vocab <json-list-file>");
        json j = json::parse(it->second, nullptr, false);
        if (j.is_discarded() || !j.is_array())
            throw FormatError(FormatError::Kind::MalformedHeader,
                              "pivot metadata 'vocab' is not a JSON list");
        vocab_tokens = j.get<std::vector<std::string>>();
    }
    const CharVocab vocab = char_vocab_from_tokens(vocab_tokens);
    const ToyLM pivot = ToyLM::from_checkpoint(std::move(pivot_ckpt));
    if (pivot.vocab_size() != vocab.size())
        throw std::invalid_argument("pivot embedding rows do not match the vocabulary size");

    const std::vector<DialogueSample> samples = ingest_dialogues(args.corpus, vocab, cfg.block_len);
    std::vector<fs::path> teacher_files;
    teacher_files.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
        teacher_files.push_back(fs::path(args.teacher_dir) / ("teacher_" + std::to_string(i) + ".st"));

    TrainResult result = pairwise_fuse(pivot, teacher_files, samples, cfg);
    Checkpoint out_ckpt = std::move(result.params);
    out_ckpt.metadata["vocab"] = json(vocab.id_to_token).dump();
    save_checkpoint(out_ckpt, args.out);

    ordered_json report;
    report["out"] = args.out;
    report["samples"] = samples.size();
    report["lambda"] = cfg.lambda;
    report["lr"] = cfg.lr;
    report["epochs"] = cfg.epochs;
    report["seed"] = cfg.seed;
    report["mince_granularity"] = fuse_granularity_name(cfg.mince);
    ordered_json log = ordered_json::array();
    for (const TrainLogEntry& e : result.log)
        log.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"clm", e.clm}, {"fusion", e.fusion}});
    report["log"] = log;
    if (!args.log_path.empty()) {
        std::ofstream lf(args.log_path);
        if (!lf) throw IoError("cannot open log file '" + args.log_path + "'");
        lf << report.dump(2) << "\n";
    }
    std::cout << report.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// inspect

int cmd_inspect(const std::string& ckpt_path, const std::string& delta_against) {
    using namespace fusemerge;
    require_input_path(ckpt_path, "checkpoint");
    const Checkpoint ckpt = load_checkpoint(ckpt_path);

    ordered_json report;
    ordered_json tensors = ordered_json::array();
    for (const auto& [name, t] : ckpt.tensors)
        tensors.push_back({{"name", name}, {"dtype", dtype_name(t.dtype)}, {"shape", t.shape}});
    report["tensors"] = tensors;
    report["metadata"] = ckpt.metadata;

    if (!delta_against.empty()) {
        require_input_path(delta_against, "delta reference");
        const Checkpoint other = load_checkpoint(delta_against);
        const UnitPartition partition = partition_units(other, Granularity::Matrix);
        const DeltaStats stats = delta_stats(other, ckpt, partition);
        ordered_json delta = ordered_json::object();
        for (const std::string& id : stats.unit_ids) {
            const UnitDelta& u = stats.units.at(id);
            delta[id] = {{"mean_sq", u.mean_sq}, {"mean_abs", u.mean_abs}, {"count", u.count}};
        }
        report["delta"] = delta;
    }
    std::cout << report.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// align

struct AlignArgs {
    std::string source_dist;
    std::string source_tokens;
    std::string pivot_tokens;
    std::string source_vocab;
    std::string pivot_vocab;
    std::string out;
    std::size_t top_k = 0;  // 0 = all
};

int cmd_align(const AlignArgs& args) {
    using namespace fusemerge;
    if (args.source_dist.empty() || args.pivot_tokens.empty() || args.pivot_vocab.empty() || args.out.empty())
        throw std::invalid_argument("align needs --source-dist, --pivot-tokens, --pivot-vocab and --out");
    require_input_path(args.source_dist, "source distribution");
    const DistFile source = load_dist_file(args.source_dist);

    const std::vector<std::string> source_tokens =
        args.source_tokens.empty() ? source.tokens : load_string_list(args.source_tokens, "source tokens");
    const std::vector<std::string> pivot_tokens = load_string_list(args.pivot_tokens, "pivot tokens");
    const std::vector<std::string> source_vocab =
        args.source_vocab.empty() ? source.vocab : load_string_list(args.source_vocab, "source vocabulary");
    const std::vector<std::string> pivot_vocab = load_string_list(args.pivot_vocab, "pivot vocabulary");

    if (source_tokens.empty() || pivot_tokens.empty())
        throw std::invalid_argument("align: token lists must be non-empty");
    if (source_vocab.empty())
        throw std::invalid_argument(
            "align: no source vocabulary (pass --source-vocab or store 'vocab' metadata in the dist file)");
    if (pivot_vocab.empty()) throw std::invalid_argument("align: pivot vocabulary is empty");
    if (source_tokens.size() != source.dist.rows)
        throw std::invalid_argument("align: source token count does not match distribution rows");

    const std::size_t top_k = args.top_k == 0 ? source.dist.cols : args.top_k;
    const AlignmentMap map = align_tokens(source_tokens, pivot_tokens, source_vocab, pivot_vocab);
    const DistMatrix projected =
        project_distribution(source.dist, map, pivot_tokens.size(), pivot_vocab.size(), top_k);

    DistFile out_file;
    out_file.dist = projected;
    out_file.tokens = pivot_tokens;
    out_file.gold = {};
    out_file.vocab = pivot_vocab;
    save_dist_file(out_file, args.out);

    ordered_json report;
    report["out"] = args.out;
    report["rows"] = projected.rows;
    report["cols"] = projected.cols;
    report["top_k"] = top_k;
    ordered_json pairs = ordered_json::array();
    for (const auto& [s, p] : map.pairs) pairs.push_back({s, p});
    report["pairs"] = pairs;
    report["mapped_vocab"] = map.vocab_map.size();
    std::cout << report.dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fuse-then-merge toolkit for toy language-model checkpoints"};
    app.require_subcommand(1);

    MergeArgs margs;
    CLI::App* merge = app.add_subcommand("merge", "Merge target checkpoints in parameter space");
    auto* m_method = merge->add_option("--method", margs.method, "varm|linear|slerp|ta|ties|dare");
    auto* m_gran = merge->add_option("--granularity", margs.granularity, "model|layer|matrix|parameter");
    auto* m_mode = merge->add_option("--weight-mode", margs.weight_mode, "square|abs|softmax");
    auto* m_base = merge->add_option("--base", margs.base, "base (pre-fine-tuning) checkpoint");
    auto* m_targets = merge->add_option("--targets", margs.targets, "target checkpoints (repeatable)");
    auto* m_out = merge->add_option("--out", margs.out, "output checkpoint path");
    auto* m_coeffs = merge->add_option("--coeffs", margs.coeffs, "linear coefficients (must sum to 1)");
    auto* m_t = merge->add_option("--t", margs.t, "slerp interpolation parameter in [0,1]");
    auto* m_scale = merge->add_option("--scale", margs.scale, "task-vector scale (ta/ties/dare)");
    auto* m_density = merge->add_option("--density", margs.density, "ties trim density in (0,1]");
    auto* m_drop = merge->add_option("--drop-rate", margs.drop_rate, "dare drop probability in [0,1)");
    auto* m_seed = merge->add_option("--seed", margs.seed, "dare PRNG seed");
    auto* m_temp = merge->add_option("--softmax-temperature", margs.softmax_temperature,
                                     "temperature for the softmax weight mode");
    auto* m_pattern = merge->add_option("--layer-pattern", margs.layer_pattern,
                                        "regex extracting the layer index from tensor names");
    auto* m_filter = merge->add_option("--tensor-filter", margs.tensor_filter,
                                       "regex selecting which tensors participate in merging");
    merge->add_option("--config", margs.config_path, "JSON config file (flags take precedence)");

    FuseTrainArgs fargs;
    CLI::App* fuse = app.add_subcommand("fuse-train", "Train a target model against fused distributions");
    fuse->add_option("--pivot", fargs.pivot, "pivot model checkpoint");
    fuse->add_option("--teacher-dir", fargs.teacher_dir, "directory holding teacher_<i>.st files");
    fuse->add_option("--corpus", fargs.corpus, "line-delimited JSON dialogue corpus");
    fuse->add_option("--config", fargs.config_path, "JSON config file (flags take precedence)");
    fuse->add_option("--out", fargs.out, "output checkpoint path");
    fuse->add_option("--vocab", fargs.vocab_path, "JSON list vocabulary file (overrides pivot metadata)");
    fuse->add_option("--log", fargs.log_path, "also write the JSON training log here");
    auto* f_lambda = fuse->add_option("--lambda", fargs.cfg.lambda, "combination weight in [0,1]");
    auto* f_lr = fuse->add_option("--lr", fargs.cfg.lr, "gradient-descent step size");
    auto* f_epochs = fuse->add_option("--epochs", fargs.cfg.epochs, "full-batch epochs");
    auto* f_seed = fuse->add_option("--seed", fargs.cfg.seed, "training seed (recorded)");
    auto* f_block = fuse->add_option("--block-len", fargs.cfg.block_len, "max tokens per sample block");
    auto* f_mince = fuse->add_option("--mince", fargs.mince, "fusion granularity: sequence|token");

    std::string i_ckpt, i_delta;
    CLI::App* inspect = app.add_subcommand("inspect", "Print tensor names/shapes/dtypes as JSON");
    inspect->add_option("--ckpt", i_ckpt, "checkpoint to inspect")->required();
    inspect->add_option("--delta-against", i_delta, "report per-matrix mean squared delta against this checkpoint");

    AlignArgs aargs;
    CLI::App* align = app.add_subcommand("align", "Project a distribution file onto the pivot tokenizer");
    align->add_option("--source-dist", aargs.source_dist, "source distribution container");
    align->add_option("--source-tokens", aargs.source_tokens, "JSON list of source token strings");
    align->add_option("--pivot-tokens", aargs.pivot_tokens, "JSON list of pivot token strings");
    align->add_option("--source-vocab", aargs.source_vocab, "JSON list source vocabulary (id order)");
    align->add_option("--pivot-vocab", aargs.pivot_vocab, "JSON list pivot vocabulary (id order)");
    align->add_option("--out", aargs.out, "output distribution container");
    align->add_option("--top-k", aargs.top_k, "source probabilities kept per row (default: all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    if (merge->parsed()) {
        return run_guarded([&] {
            if (!margs.config_path.empty()) {
                const json cfg = load_config_file(margs.config_path);
                MergeArgs from_file = margs;
                config_take(cfg, "method", from_file.method);
                config_take(cfg, "granularity", from_file.granularity);
                config_take(cfg, "weight_mode", from_file.weight_mode);
                config_take(cfg, "base", from_file.base);
                config_take(cfg, "targets", from_file.targets);
                config_take(cfg, "out", from_file.out);
                config_take(cfg, "coeffs", from_file.coeffs);
                config_take(cfg, "t", from_file.t);
                config_take(cfg, "scale", from_file.scale);
                config_take(cfg, "density", from_file.density);
                config_take(cfg, "drop_rate", from_file.drop_rate);
                config_take(cfg, "seed", from_file.seed);
                config_take(cfg, "softmax_temperature", from_file.softmax_temperature);
                config_take(cfg, "layer_pattern", from_file.layer_pattern);
                config_take(cfg, "tensor_filter", from_file.tensor_filter);
                // Flags win over config values.
                if (!m_method->count()) margs.method = from_file.method;
                if (!m_gran->count()) margs.granularity = from_file.granularity;
                if (!m_mode->count()) margs.weight_mode = from_file.weight_mode;
                if (!m_base->count()) margs.base = from_file.base;
                if (!m_targets->count()) margs.targets = from_file.targets;
                if (!m_out->count()) margs.out = from_file.out;
                if (!m_coeffs->count()) margs.coeffs = from_file.coeffs;
                if (!m_t->count()) margs.t = from_file.t;
                if (!m_scale->count()) margs.scale = from_file.scale;
                if (!m_density->count()) margs.density = from_file.density;
                if (!m_drop->count()) margs.drop_rate = from_file.drop_rate;
                if (!m_seed->count()) margs.seed = from_file.seed;
                if (!m_temp->count()) margs.softmax_temperature = from_file.softmax_temperature;
                if (!m_pattern->count()) margs.layer_pattern = from_file.layer_pattern;
                if (!m_filter->count()) margs.tensor_filter = from_file.tensor_filter;
            }
            return cmd_merge(margs);
        });
    }
    if (fuse->parsed()) {
        return run_guarded([&] {
            if (!fargs.config_path.empty()) {
                const json cfg = load_config_file(fargs.config_path);
                FuseTrainArgs from_file = fargs;
                config_take(cfg, "pivot", from_file.pivot);
                config_take(cfg, "teacher_dir", from_file.teacher_dir);
                config_take(cfg, "corpus", from_file.corpus);
                config_take(cfg, "out", from_file.out);
                config_take(cfg, "vocab", from_file.vocab_path);
                config_take(cfg, "lambda", from_file.cfg.lambda);
                config_take(cfg, "lr", from_file.cfg.lr);
                config_take(cfg, "epochs", from_file.cfg.epochs);
                config_take(cfg, "batch", from_file.cfg.batch);
                config_take(cfg, "seed", from_file.cfg.seed);
                config_take(cfg, "block_len", from_file.cfg.block_len);
                config_take(cfg, "mince_granularity", from_file.mince);
                if (fargs.pivot.empty()) fargs.pivot = from_file.pivot;
                if (fargs.teacher_dir.empty()) fargs.teacher_dir = from_file.teacher_dir;
                if (fargs.corpus.empty()) fargs.corpus = from_file.corpus;
                if (fargs.out.empty()) fargs.out = from_file.out;
                if (fargs.vocab_path.empty()) fargs.vocab_path = from_file.vocab_path;
                if (!f_lambda->count()) fargs.cfg.lambda = from_file.cfg.lambda;
                if (!f_lr->count()) fargs.cfg.lr = from_file.cfg.lr;
                if (!f_epochs->count()) fargs.cfg.epochs = from_file.cfg.epochs;
                if (!f_seed->count()) fargs.cfg.seed = from_file.cfg.seed;
                if (!f_block->count()) fargs.cfg.block_len = from_file.cfg.block_len;
                if (!f_mince->count()) fargs.mince = from_file.mince;
                fargs.cfg.batch = from_file.cfg.batch;
            }
            return cmd_fuse_train(fargs);
        });
    }
    if (inspect->parsed()) {
        return run_guarded([&] { return cmd_inspect(i_ckpt, i_delta); });
    }
    if (align->parsed()) {
        return run_guarded([&] { return cmd_align(aargs); });
    }
    std::cerr << app.help();
    return kExitUsage;
}
