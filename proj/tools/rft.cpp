#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <robust_finetune/checkpoint.hpp>
#include <robust_finetune/config.hpp>
#include <robust_finetune/ensemble.hpp>
#include <robust_finetune/eval_report.hpp>
#include <robust_finetune/toy_corpus.hpp>
#include <robust_finetune/trainer.hpp>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

/// Usage problems that CLI11 cannot see (bad option values); exit code 2.
struct UsageError : rft::Error {
    using rft::Error::Error;
};

template <typename F>
auto as_usage_error(F&& parse)
{
    try {
        return parse();
    } catch (const rft::Error& e) {
        throw UsageError(e.what());
    }
}

std::string sha256_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw rft::Error("cannot read '" + path + "' for hashing");
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char byte[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(byte, sizeof byte, "%02x", md[i]);
        hex += byte;
    }
    return hex;
}

std::string utc_now()
{
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text)) throw rft::Error("cannot write '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

char parse_delimiter(const std::string& s)
{
    if (s == "tab" || s == "\\t") return '\t';
    if (s.size() == 1) return s[0];
    throw UsageError("delimiter must be one character or 'tab'");
}

rft::LabelSet labels_for(const std::string& path, std::size_t num_classes)
{
    if (!path.empty()) return rft::LabelSet::load(path);
    if (num_classes == rft::LabelSet::default_set().size()) return rft::LabelSet::default_set();
    return rft::LabelSet::numbered(num_classes);
}

int cmd_defaults()
{
    for (const auto& k : rft::config_keys()) std::cout << "# " << k.help << "\n" << k.name << " = " << k.default_value << "\n";
    return 0;
}

struct TrainArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
};

int cmd_train(const TrainArgs& args, const std::vector<std::string>& argv)
{
    const auto t0 = std::chrono::steady_clock::now();
    rft::Config cfg = args.config.empty() ? rft::Config{} : rft::Config::load(args.config);
    for (const auto& o : args.overrides) cfg.apply_override(o);
    if (!args.out.empty()) cfg.set("output.dir", args.out);
    const char* env_seed = std::getenv(rft::seed_env_var);
    auto settings = rft::resolve_settings(cfg, env_seed);
    if (settings.data.train_path.empty()) throw rft::ConfigError("data.train", "config key 'data.train' is required");
    if (settings.data.valid_path.empty()) throw rft::ConfigError("data.valid", "config key 'data.valid' is required");
    const auto labels = labels_for(settings.data.labels_path, settings.model.num_classes);
    if (labels.size() != settings.model.num_classes)
        throw rft::ConfigError("model.num_classes", "model.num_classes = " + std::to_string(settings.model.num_classes) +
                                                        " but the label file lists " + std::to_string(labels.size()) +
                                                        " classes");

    const fs::path out_dir = settings.output_dir;
    fs::create_directories(out_dir);
    auto resolved = cfg.resolved();
    resolved["seed"] = std::to_string(settings.seed);
    std::string resolved_text;
    for (const auto& [k, v] : resolved) resolved_text += k + " = " + v + "\n";
    write_text(out_dir / "resolved.cfg", resolved_text);

    json inputs = json::object();
    for (const auto& p : {settings.data.train_path, settings.data.valid_path, settings.data.labels_path, args.config})
        if (!p.empty()) inputs[p] = {{"sha256", sha256_file(p)}};
    json manifest = {
        {"tool", "rft train"},
        {"command", argv},
        {"status", "running"},
        {"config", resolved},
        {"seeds",
         {{"seed", settings.seed},
          {"source", cfg.is_set("seed") ? "config" : (env_seed && *env_seed ? rft::seed_env_var : "default")},
          {"streams", {"init", "dropout", "mask", "shuffle"}}}},
        {"inputs", inputs},
        {"artifacts",
         {{"resolved_config", (out_dir / "resolved.cfg").string()},
          {"vocabulary", (out_dir / "vocab.tsv").string()},
          {"labels", (out_dir / "labels.txt").string()},
          {"checkpoint", (out_dir / "checkpoint.bin").string()},
          {"metrics", (out_dir / "metrics.csv").string()}}},
        {"timings", {{"started_utc", utc_now()}}},
    };
    write_json(out_dir / "manifest.json", manifest);

    const auto train_split = rft::load_corpus(settings.data.train_path, settings.data.schema, labels);
    const auto valid_split = rft::load_corpus(settings.data.valid_path, settings.data.schema, labels);
    const auto vocab = rft::build_vocab(train_split, settings.data.max_vocab);
    vocab.save((out_dir / "vocab.tsv").string());
    labels.save((out_dir / "labels.txt").string());
    const double load_s = seconds_since(t0);

    const auto t1 = std::chrono::steady_clock::now();
    rft::Checkpoint ckpt;
    try {
        ckpt = rft::train(settings.model, train_split, valid_split, vocab, settings.train, [](const rft::EpochMetrics& m) {
            std::fprintf(stderr, "epoch %zu  train_loss %.6f  valid_acc %.6f\n", m.epoch, m.train_loss, m.valid_acc);
        });
    } catch (const rft::Error& e) {
        manifest["status"] = "failed";
        manifest["error"] = e.what();
        manifest["timings"]["finished_utc"] = utc_now();
        write_json(out_dir / "manifest.json", manifest);
        throw;
    }
    const double train_s = seconds_since(t1);
    ckpt.label_names = labels.names();
    rft::save_checkpoint((out_dir / "checkpoint.bin").string(), ckpt);
    {
        std::ofstream metrics(out_dir / "metrics.csv", std::ios::binary);
        rft::write_metrics(metrics, ckpt.history);
        if (!metrics) throw rft::Error("cannot write metrics.csv");
    }

    manifest["status"] = "completed";
    manifest["result"] = {{"best_epoch", ckpt.best_epoch},
                          {"best_step", ckpt.best_step},
                          {"best_valid_acc", ckpt.history.at(ckpt.best_epoch - 1).valid_acc},
                          {"vocab_size", vocab.size()}};
    for (const auto& name : {"checkpoint.bin", "metrics.csv", "vocab.tsv"})
        manifest["artifact_sha256"][name] = sha256_file((out_dir / name).string());
    manifest["timings"]["finished_utc"] = utc_now();
    manifest["timings"]["load_seconds"] = load_s;
    manifest["timings"]["train_seconds"] = train_s;
    manifest["timings"]["total_seconds"] = seconds_since(t0);
    write_json(out_dir / "manifest.json", manifest);
    std::printf("best epoch %zu, valid_acc %.3f; artifacts in %s\n", ckpt.best_epoch,
                ckpt.history.at(ckpt.best_epoch - 1).valid_acc, out_dir.string().c_str());
    return 0;
}

struct PredictArgs {
    std::string checkpoint, corpus, vocab, out, delimiter = ",";
    bool probs = false;
    std::size_t batch_size = 32;
};

int cmd_predict(const PredictArgs& a)
{
    const auto ckpt = rft::load_checkpoint(a.checkpoint);
    const auto vocab_path = a.vocab.empty() ? (fs::path(a.checkpoint).parent_path() / "vocab.tsv").string() : a.vocab;
    const auto vocab = rft::Vocabulary::load(vocab_path);
    if (vocab.size() != ckpt.model.vocab_size)
        throw rft::Error("vocabulary '" + vocab_path + "' has " + std::to_string(vocab.size()) +
                         " entries but the checkpoint was trained with " + std::to_string(ckpt.model.vocab_size) +
                         "; pass the vocab.tsv written next to this checkpoint");
    const auto labels = ckpt.label_names.empty() ? rft::LabelSet::numbered(ckpt.model.num_classes)
                                                 : rft::LabelSet(ckpt.label_names);
    rft::CorpusSchema schema;
    schema.delimiter = parse_delimiter(a.delimiter);
    const auto corpus = rft::load_corpus(a.corpus, schema, labels);
    const rft::Classifier model(ckpt.model);
    const auto preds = rft::predict_corpus(model, ckpt.params, rft::tokenize_corpus(corpus, vocab, ckpt.train.max_length),
                                           std::max<std::size_t>(a.batch_size, 1));
    rft::PredictionTable table;
    for (std::size_t i = 0; i < corpus.size(); ++i) table.rows.push_back({corpus[i].id, preds[i].label, preds[i].probabilities});
    if (a.out.empty()) rft::write_predictions(std::cout, table, a.probs);
    else rft::write_predictions(a.out, table, a.probs);
    return 0;
}

struct GoldArgs {
    std::string predictions, gold, labels, delimiter = ",";
    std::size_t num_classes = 14;
};

rft::LabelSet gold_labels(const GoldArgs& a) { return labels_for(a.labels, a.labels.empty() ? a.num_classes : 0); }

rft::Corpus load_gold(const GoldArgs& a, const rft::LabelSet& labels)
{
    rft::CorpusSchema schema;
    schema.delimiter = parse_delimiter(a.delimiter);
    return rft::load_corpus(a.gold, schema, labels);
}

int cmd_evaluate(const GoldArgs& a)
{
    const auto labels = gold_labels(a);
    const auto r = rft::accuracy(rft::read_predictions(a.predictions), load_gold(a, labels), labels.size());
    std::printf("Acc = %.3f (%zu/%zu)\n", r.accuracy, r.right, r.all);
    return 0;
}

struct ReportArgs : GoldArgs {
    std::size_t k = 100;
    std::string out_dir, format = "text";
};

int cmd_report(const ReportArgs& a)
{
    const auto format = as_usage_error([&] { return rft::parse_report_format(a.format); });
    const auto labels = gold_labels(a);
    const auto preds = rft::read_predictions(a.predictions);
    const auto gold = load_gold(a, labels);
    const auto eval = rft::accuracy(preds, gold, labels.size());
    const auto study = rft::case_study(preds, gold, a.k);
    if (!a.out_dir.empty()) {
        fs::create_directories(a.out_dir);
        write_text(fs::path(a.out_dir) / "report.txt", rft::render_report(eval, study, labels, rft::ReportFormat::text));
        write_text(fs::path(a.out_dir) / "case_study.csv", rft::render_report(eval, study, labels, rft::ReportFormat::csv));
    }
    std::cout << rft::render_report(eval, study, labels, format);
    return 0;
}

int cmd_ensemble(const std::vector<std::string>& inputs, const std::string& out, const std::string& tie_rule, bool probs)
{
    const auto rule = as_usage_error([&] { return rft::parse_tie_rule(tie_rule); });
    std::vector<rft::PredictionTable> tables;
    for (const auto& p : inputs) tables.push_back(rft::read_predictions(p));
    const auto voted = rft::majority_vote(tables, rule);
    const bool with_probs = probs && voted.has_probabilities();
    if (out.empty()) rft::write_predictions(std::cout, voted, with_probs);
    else rft::write_predictions(out, voted, with_probs);
    return 0;
}

int cmd_bootstrap(const std::string& corpus_path, std::size_t k, std::uint64_t seed, const std::string& out_dir,
                  bool no_resample, const std::string& delimiter)
{
    rft::CorpusSchema schema;
    schema.delimiter = parse_delimiter(delimiter);
    const auto corpus = rft::load_corpus(corpus_path, schema);
    fs::create_directories(out_dir);
    const auto members = rft::bootstrap_split(corpus, k, seed, !no_resample);
    for (std::size_t m = 0; m < members.size(); ++m) {
        const auto path = fs::path(out_dir) / ("member_" + std::to_string(m + 1) + ".csv");
        std::ofstream out(path, std::ios::binary);
        rft::write_corpus(out, members[m], schema.delimiter);
        if (!out) throw rft::Error("cannot write '" + path.string() + "'");
    }
    return 0;
}

struct SynthArgs {
    std::size_t n = 1000, classes = 14;
    std::uint64_t seed = 0;
    double noise = 0.0;
    std::string out, id_prefix;
};

int cmd_synth(const SynthArgs& a)
{
    if (a.classes < 2) throw UsageError("--classes must be >= 2");
    if (a.noise < 0.0 || a.noise > 1.0) throw UsageError("--noise must lie in [0, 1]");
    rft::ToyCorpusOptions opt;
    opt.num_classes = a.classes;
    auto corpus = rft::make_toy_corpus(a.n, opt, a.seed, a.id_prefix);
    if (a.noise > 0.0) rft::add_symmetric_noise(corpus, a.noise, a.classes, rft::derive_seed(a.seed, {1}));
    if (a.out.empty()) rft::write_corpus(std::cout, corpus);
    else {
        std::ofstream out(a.out, std::ios::binary);
        rft::write_corpus(out, corpus);
        if (!out) throw rft::Error("cannot write '" + a.out + "'");
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"rft: training strategies for multi-class artificial-text detection"};
    app.require_subcommand(1);
    const std::vector<std::string> raw_args(argv, argv + argc);

    auto* defaults = app.add_subcommand("defaults", "Print every config key with its default value");

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Train a classifier; writes checkpoint, vocabulary, metrics and manifest");
    train->add_option("-c,--config", train_args.config, "config file (key = value lines)")->check(CLI::ExistingFile);
    train->add_option("-o,--override", train_args.overrides, "key=value, applied after the config file")->take_all();
    train->add_option("--out", train_args.out, "output directory (overrides output.dir)");

    PredictArgs predict_args;
    auto* predict = app.add_subcommand("predict", "Classify a corpus with a trained checkpoint");
    predict->add_option("--checkpoint", predict_args.checkpoint, "checkpoint.bin")->required()->check(CLI::ExistingFile);
    predict->add_option("--corpus", predict_args.corpus, "corpus with id and text columns (labels optional)")
        ->required()
        ->check(CLI::ExistingFile);
    predict->add_option("--vocab", predict_args.vocab, "vocabulary file; defaults to vocab.tsv beside the checkpoint");
    predict->add_flag("--probs", predict_args.probs, "add one probability column per class");
    predict->add_option("--out", predict_args.out, "output file; stdout when omitted");
    predict->add_option("--delimiter", predict_args.delimiter, "corpus delimiter (one character or 'tab')");
    predict->add_option("--batch-size", predict_args.batch_size, "examples per forward pass");

    GoldArgs eval_args;
    auto* evaluate = app.add_subcommand("evaluate", "Print accuracy of a prediction file against gold labels");
    evaluate->add_option("predictions", eval_args.predictions, "prediction file")->required()->check(CLI::ExistingFile);
    evaluate->add_option("gold", eval_args.gold, "gold corpus")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--labels", eval_args.labels, "class-name file");
    evaluate->add_option("--num-classes", eval_args.num_classes, "class count when no label file is given");
    evaluate->add_option("--delimiter", eval_args.delimiter, "gold corpus delimiter");

    std::vector<std::string> ensemble_inputs;
    std::string ensemble_out, tie_rule = "mean-prob";
    bool ensemble_probs = false;
    auto* ensemble = app.add_subcommand("ensemble", "Majority vote over prediction files");
    ensemble->add_option("predictions", ensemble_inputs, "prediction files")->required()->check(CLI::ExistingFile);
    ensemble->add_option("--out", ensemble_out, "output file; stdout when omitted");
    ensemble->add_option("--tie-rule", tie_rule, "mean-prob | lowest-index");
    ensemble->add_flag("--probs", ensemble_probs, "write mean probabilities when every input has them");

    ReportArgs report_args;
    auto* report = app.add_subcommand("report", "Accuracy, confusion matrix and case study of the worst mispredictions");
    report->add_option("predictions", report_args.predictions, "prediction file written with --probs")
        ->required()
        ->check(CLI::ExistingFile);
    report->add_option("gold", report_args.gold, "gold corpus")->required()->check(CLI::ExistingFile);
    report->add_option("--k", report_args.k, "mispredictions kept in the case study");
    report->add_option("--out-dir", report_args.out_dir, "write report.txt and case_study.csv here");
    report->add_option("--format", report_args.format, "stdout format: text | csv");
    report->add_option("--labels", report_args.labels, "class-name file");
    report->add_option("--num-classes", report_args.num_classes, "class count when no label file is given");
    report->add_option("--delimiter", report_args.delimiter, "gold corpus delimiter");

    std::string boot_corpus, boot_out, boot_delim = ",";
    std::size_t boot_k = 5;
    std::uint64_t boot_seed = 0;
    bool no_resample = false;
    auto* bootstrap = app.add_subcommand("bootstrap", "Write k bootstrap resamples of a training corpus");
    bootstrap->add_option("--corpus", boot_corpus, "training corpus")->required()->check(CLI::ExistingFile);
    bootstrap->add_option("--k", boot_k, "number of members");
    bootstrap->add_option("--seed", boot_seed, "resampling seed");
    bootstrap->add_option("--out-dir", boot_out, "directory for member_<i>.csv")->required();
    bootstrap->add_flag("--no-resample", no_resample, "copy the corpus unchanged into every member");
    bootstrap->add_option("--delimiter", boot_delim, "corpus delimiter");

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled corpus for smoke tests");
    synth->add_option("--n", synth_args.n, "examples");
    synth->add_option("--classes", synth_args.classes, "classes");
    synth->add_option("--seed", synth_args.seed, "generator seed");
    synth->add_option("--noise", synth_args.noise, "fraction of labels replaced by a different class");
    synth->add_option("--id-prefix", synth_args.id_prefix, "prefix for generated ids");
    synth->add_option("--out", synth_args.out, "output file; stdout when omitted");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*defaults) return cmd_defaults();
        if (*train) return cmd_train(train_args, raw_args);
        if (*predict) return cmd_predict(predict_args);
        if (*evaluate) return cmd_evaluate(eval_args);
        if (*ensemble) return cmd_ensemble(ensemble_inputs, ensemble_out, tie_rule, ensemble_probs);
        if (*report) return cmd_report(report_args);
        if (*bootstrap) return cmd_bootstrap(boot_corpus, boot_k, boot_seed, boot_out, no_resample, boot_delim);
        if (*synth) return cmd_synth(synth_args);
    } catch (const rft::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
