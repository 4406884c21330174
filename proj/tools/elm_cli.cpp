// Command-line front end tying the pipeline together: corpus generation,
// tokenizer training, tokenization, LM training, sampling and reports.
// Every command resolves a flat key=value config (file, then flags), echoes
// it into its run directory, and exits 0 on success, 2 on config errors,
// 3 on data/format errors, 4 on numerical failures.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "elm/analysis.hpp"
#include "elm/config.hpp"
#include "elm/corpus.hpp"
#include "elm/infer.hpp"
#include "elm/kernels.hpp"
#include "elm/lm.hpp"
#include "elm/sampler.hpp"
#include "elm/tokenizer.hpp"

namespace fs = std::filesystem;
using namespace elm;

namespace {

struct Flag {
    std::string key;      // config key the flag overrides
    std::string value;    // captured text
    bool seen = false;
};

// Binds --flag to a config key; applied to the RunConfig after parsing.
void bind(CLI::App* cmd, const std::string& flag, Flag& slot, const std::string& key,
          const std::string& help) {
    slot.key = key;
    cmd->add_option_function<std::string>(
        flag,
        [&slot](const std::string& v) {
            slot.value = v;
            slot.seen = true;
        },
        help);
}

void apply_flags(RunConfig& cfg, const std::vector<Flag*>& flags) {
    for (const Flag* f : flags)
        if (f->seen) cfg.set(f->key, f->value);
}

std::string make_run_dir(const std::string& out, const std::string& cmd, const RunConfig& cfg,
                         const std::string& inputs) {
    std::string dir = out;
    if (dir.empty()) {
        // content-addressed by the resolved config and input paths
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char c : cfg.resolved_text() + cmd + inputs) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        char buf[17];
        snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        dir = "runs/" + cmd + "-" + std::string(buf);
    }
    fs::create_directories(dir);
    cfg.echo((fs::path(dir) / "config.txt").string());
    return dir;
}

CfgSchedule parse_cfg_schedule(const std::string& text) {
    // kind:smin:smax
    const auto c1 = text.find(':');
    const auto c2 = text.find(':', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
        throw ConfigError("cfg schedule must look like kind:smin:smax, got \"" + text + "\"");
    CfgSchedule s;
    s.kind = cfg_kind_from_string(text.substr(0, c1));
    try {
        s.s_min = static_cast<real>(std::stod(text.substr(c1 + 1, c2 - c1 - 1)));
        s.s_max = static_cast<real>(std::stod(text.substr(c2 + 1)));
    } catch (const std::exception&) {
        throw ConfigError("bad cfg schedule bounds in \"" + text + "\"");
    }
    return s;
}

VocabSpec vocab_for_dataset(const RunConfig& cfg, const std::string& key, int D) {
    const std::string name = cfg.get(key);
    if (name.empty()) return VocabSpec(D, 1, D);
    return VocabSpec::parse(name, D);
}

void write_loss_csv(const std::string& path, const std::vector<std::pair<int, real>>& log) {
    std::ofstream f(path);
    f << "step,loss\n";
    for (const auto& [s, l] : log) f << s << "," << static_cast<double>(l) << "\n";
}

SamplerConfig sampler_from_config(const RunConfig& cfg, const LmModel& model) {
    SamplerConfig sc;
    sc.cfg = parse_cfg_schedule(cfg.get("sample.cfg"));
    sc.top_k = static_cast<int>(cfg.get_int("sample.topk"));
    sc.temperature = static_cast<real>(cfg.get_real("sample.temperature"));
    sc.tau = static_cast<real>(cfg.get_real("sample.tau"));
    sc.anneal_tau = cfg.get_bool("sample.anneal_tau");
    sc.iterations = static_cast<int>(cfg.get_int("sample.iters"));
    sc.seed = static_cast<std::uint64_t>(cfg.get_int("sample.seed"));
    const int L = model.config().seq_len;
    int h = static_cast<int>(std::sqrt(static_cast<double>(L)));
    while (h > 1 && L % h != 0) --h;
    sc.grid_h = h;
    sc.grid_w = L / h;
    return sc;
}

// -------------------- commands --------------------

int cmd_gen_data(const RunConfig& cfg, const std::string& out) {
    CorpusSpec spec;
    spec.num_classes = static_cast<int>(cfg.get_int("corpus.num_classes"));
    spec.samples_per_class = static_cast<int>(cfg.get_int("corpus.per_class"));
    spec.H = static_cast<int>(cfg.get_int("corpus.h"));
    spec.W = static_cast<int>(cfg.get_int("corpus.w"));
    spec.C = static_cast<int>(cfg.get_int("corpus.c"));
    spec.kind = corpus_kind_from_string(cfg.get("corpus.kind"));
    spec.master_seed = static_cast<std::uint64_t>(cfg.get_int("corpus.seed"));
    if (spec.H % 4 != 0 || spec.W % 4 != 0)
        std::cerr << "note: dimensions not divisible by 4 will fail tokenization at f=4\n";
    const auto corpus = generate_corpus(spec);
    std::vector<ImageSample> train, val;
    split_corpus(corpus, cfg.get_real("corpus.val_fraction"), spec.master_seed, train, val);
    write_corpus((fs::path(out) / "train").string(), train);
    if (!val.empty()) write_corpus((fs::path(out) / "val").string(), val);
    std::cout << "wrote " << train.size() << " train / " << val.size() << " val images to " << out
              << "\n";
    return 0;
}

int cmd_train_tokenizer(const RunConfig& cfg, const std::string& data, const std::string& out) {
    TokenizerConfig tc;
    tc.kind = tokenizer_kind_from_string(cfg.get("tokenizer.kind"));
    tc.f = static_cast<int>(cfg.get_int("tokenizer.f"));
    tc.D = static_cast<int>(cfg.get_int("tokenizer.d"));
    tc.hidden = static_cast<int>(cfg.get_int("tokenizer.hidden"));
    tc.beta = static_cast<real>(cfg.get_real("tokenizer.beta"));
    const auto corpus = load_corpus(data);
    tc.C = corpus.empty() ? 1 : corpus[0].image.C;
    TokenizerTrainOptions opts;
    opts.steps = static_cast<int>(cfg.get_int("tokenizer.steps"));
    opts.batch = static_cast<int>(cfg.get_int("tokenizer.batch"));
    opts.lr = static_cast<real>(cfg.get_real("tokenizer.lr"));
    opts.seed = static_cast<std::uint64_t>(cfg.get_int("tokenizer.seed"));
    opts.train_quantizer = quantizer_mode_from_string(cfg.get("tokenizer.train_quantizer"));
    auto result = train_tokenizer(corpus, tc, opts);
    result.tokenizer.save((fs::path(out) / "tokenizer.elmc").string());
    write_loss_csv((fs::path(out) / "loss_log.csv").string(), result.loss_log);
    if (result.diverged) {
        std::cerr << "error: numerical: tokenizer training diverged; last good checkpoint saved\n";
        return 4;
    }
    std::cout << "tokenizer saved to " << out << "/tokenizer.elmc (final loss "
              << static_cast<double>(result.loss_log.empty() ? 0 : result.loss_log.back().second)
              << ")\n";
    return 0;
}

int cmd_tokenize(const RunConfig& cfg, const std::string& data, const std::string& ckpt,
                 const std::string& out) {
    const auto corpus = load_corpus(data);
    const auto tok = ImageTokenizer::load(ckpt);
    QuantizerMode mode = quantizer_mode_from_string(cfg.get("tokenize.mode"));
    if (tok.config().kind == TokenizerKind::vq) mode = QuantizerMode::vq;
    const VocabSpec group = vocab_for_dataset(cfg, "tokenize.vocab", tok.config().D);
    const auto ds = tokenize_dataset(corpus, tok, mode,
                                     static_cast<std::uint64_t>(cfg.get_int("tokenize.seed")),
                                     group);
    save_dataset((fs::path(out) / "tokens.elmt").string(), ds);
    std::cout << "tokenized " << ds.samples.size() << " images into " << out << "/tokens.elmt ("
              << ds.h << "x" << ds.w << ", vocab " << group.name() << ", mode "
              << to_string(ds.mode) << ")\n";
    return 0;
}

int cmd_stats(const RunConfig& cfg, const std::string& tokens, const std::string& out) {
    const auto ds = load_dataset(tokens);
    const int order = static_cast<int>(cfg.get_int("stats.order"));
    std::vector<ReportRow> rows;
    const char* names[3] = {"", "unigram", "bigram"};
    for (int o = 1; o <= order; ++o) {
        const double kl = ngram_kl(ds, o);
        printf("%s KL %.4f\n", names[o], kl);
        rows.push_back({std::string(names[o]) + "_kl_to_uniform", "tokens", kl});
    }
    const auto util = code_utilization(ds);
    printf("code utilization %d/%zu (%.2f%%)\n", util.distinct, util.counts.size(),
           util.fraction * 100.0);
    rows.push_back({"code_utilization", "tokens", util.fraction});
    write_report_csv((fs::path(out) / "report.csv").string(), rows);
    return 0;
}

int cmd_train_lm(const RunConfig& cfg, const std::string& tokens, const std::string& out) {
    TokenDataset ds = load_dataset(tokens);
    LmConfig lc = LmConfig::preset(cfg.get("lm.size"));
    lc.mode = lm_mode_from_string(cfg.get("lm.mode"));
    lc.vocab = VocabSpec::parse(cfg.get("lm.vocab"), ds.vocab.D);
    lc.seq_len = ds.L();
    lc.num_classes = ds.num_classes;
    lc.class_drop_prob = static_cast<real>(cfg.get_real("lm.class_drop"));
    lc.full_width_tables = cfg.get_bool("lm.full_width_tables");
    if (ds.vocab.g != lc.vocab.g) ds = ds.regroup(lc.vocab);

    LmTrainOptions opts;
    opts.steps = static_cast<int>(cfg.get_int("lm.steps"));
    opts.batch = static_cast<int>(cfg.get_int("lm.batch"));
    opts.lr = static_cast<real>(cfg.get_real("lm.lr"));
    opts.weight_decay = static_cast<real>(cfg.get_real("lm.wd"));
    opts.seed = static_cast<std::uint64_t>(cfg.get_int("lm.seed"));

    LmModel model(lc, opts.seed);
    const auto result = train_lm(model, ds, opts);
    {
        std::ofstream f((fs::path(out) / "train_log.csv").string());
        f << "step,loss,lr,wall_ms\n";
        for (const auto& r : result.log)
            f << r.step << "," << static_cast<double>(r.loss) << "," << static_cast<double>(r.lr)
              << "," << r.wall_ms << "\n";
    }
    Rng rng(opts.seed);
    model.save((fs::path(out) / "lm.elml").string(), opts.steps, rng);
    if (result.diverged) {
        std::cerr << "error: numerical: lm training diverged\n";
        return 4;
    }
    std::cout << "lm saved to " << out << "/lm.elml (final loss "
              << static_cast<double>(result.final_loss) << ")\n";
    return 0;
}

int cmd_sample(const RunConfig& cfg, const std::string& ckpt, const std::string& tokenizer,
               const std::string& out) {
    const auto loaded = LmModel::load(ckpt);
    const auto tok = ImageTokenizer::load(tokenizer);
    SamplerConfig sc = sampler_from_config(cfg, loaded.model);
    const int n = static_cast<int>(cfg.get_int("sample.n"));
    const int cls = static_cast<int>(cfg.get_int("sample.class"));
    std::vector<int> classes(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        classes[static_cast<std::size_t>(i)] =
            cls >= 0 ? cls : i % loaded.model.config().num_classes;
    const auto grids = generate_batch(loaded.model, classes, sc);

    std::ofstream manifest((fs::path(out) / "manifest.csv").string());
    manifest << "index,class,seed,grid\n";
    std::vector<ManifestRecord> img_records;
    for (int i = 0; i < n; ++i) {
        const std::string grid_name = "grid_" + std::to_string(i) + ".elmt";
        save_grid((fs::path(out) / grid_name).string(), grids[static_cast<std::size_t>(i)],
                  classes[static_cast<std::size_t>(i)], sc.seed,
                  loaded.model.config().num_classes);
        const Image img = tokens_to_image(grids[static_cast<std::size_t>(i)], tok);
        const std::string img_name = "img_" + std::to_string(i) + (img.C == 1 ? ".pgm" : ".ppm");
        write_image((fs::path(out) / img_name).string(), img);
        manifest << i << "," << classes[static_cast<std::size_t>(i)] << "," << sc.seed << ","
                 << grid_name << "\n";
        img_records.push_back({img_name, classes[static_cast<std::size_t>(i)], sc.seed});
    }
    write_manifest((fs::path(out) / "manifest.txt").string(), img_records);
    std::cout << "generated " << n << " samples into " << out << "\n";
    return 0;
}

int cmd_extend(const RunConfig& cfg, const std::string& ckpt, const std::string& tokenizer,
               const std::string& out) {
    const auto loaded = LmModel::load(ckpt);
    const auto tok = ImageTokenizer::load(tokenizer);
    SamplerConfig sc = sampler_from_config(cfg, loaded.model);
    const int th = static_cast<int>(cfg.get_int("extend.height"));
    const int tw = static_cast<int>(cfg.get_int("extend.width"));
    const int cls = static_cast<int>(cfg.get_int("sample.class"));
    const auto grid = extend_generate(loaded.model, cls, th, tw, sc);
    save_grid((fs::path(out) / "grid.elmt").string(), grid, cls, sc.seed,
              loaded.model.config().num_classes);
    const Image img = tokens_to_image(grid, tok);
    write_image((fs::path(out) / (img.C == 1 ? "img.pgm" : "img.ppm")).string(), img);
    std::cout << "extended grid " << th << "x" << tw << " written to " << out << "\n";
    return 0;
}

int cmd_attn(const RunConfig& cfg, const std::string& ckpt, const std::string& tokens,
             const std::string& out) {
    const auto loaded = LmModel::load(ckpt);
    const auto ds = load_dataset(tokens);
    const int n = static_cast<int>(cfg.get_int("attn.n"));
    const int head = static_cast<int>(cfg.get_int("attn.head"));
    const auto summary = attention_average(loaded.model, ds, n, head);
    save_attention_summary((fs::path(out) / "attention.bin").string(), summary);
    const auto locality = locality_index(summary);
    std::vector<ReportRow> rows;
    for (std::size_t l = 0; l < locality.size(); ++l) {
        printf("layer %zu locality %.4f\n", l, locality[l]);
        rows.push_back({"locality_index", "layer" + std::to_string(l), locality[l]});
    }
    write_report_csv((fs::path(out) / "report.csv").string(), rows);
    return 0;
}

int cmd_eval(const std::string& real_manifest, const std::string& gen_manifest,
             const std::string& tokenizer, const std::string& out) {
    const auto tok = ImageTokenizer::load(tokenizer);
    const auto real_set = load_corpus(real_manifest);
    const auto gen_set = load_corpus(gen_manifest);
    const double d = latent_frechet(real_set, gen_set, tok);
    printf("latent_frechet %.6f\n", d);
    write_report_csv((fs::path(out) / "report.csv").string(),
                     {{"latent_frechet", "real_vs_generated", d}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"language-model image generation lab"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "worker threads (0 = hardware default)");

    RunConfig cfg;
    std::string config_file, out_dir;
    std::string data, ckpt, tokenizer, tokens, real_manifest, gen_manifest;
    std::vector<Flag> slots(40);
    std::size_t slot = 0;
    std::vector<Flag*> used;
    auto next_slot = [&]() -> Flag& { return slots.at(slot++); };

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_file, "key=value config file");
        cmd->add_option("--out", out_dir, "run directory (default runs/<cmd>-<confighash>)");
    };
    auto bind_key = [&](CLI::App* cmd, const std::string& flag, const std::string& key,
                        const std::string& help) {
        Flag& f = next_slot();
        bind(cmd, flag, f, key, help);
        used.push_back(&f);
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate the procedural corpus + manifest");
    add_common(gen);
    gen->add_option("--spec", config_file, "corpus spec file (key=value)");
    bind_key(gen, "--classes", "corpus.num_classes", "number of classes");
    bind_key(gen, "--per-class", "corpus.per_class", "samples per class");
    bind_key(gen, "--height", "corpus.h", "image height");
    bind_key(gen, "--width", "corpus.w", "image width");
    bind_key(gen, "--channels", "corpus.c", "1 or 3");
    bind_key(gen, "--kind", "corpus.kind", "shapes|grammar");
    bind_key(gen, "--seed", "corpus.seed", "master seed");
    bind_key(gen, "--val-fraction", "corpus.val_fraction", "validation fraction");

    CLI::App* tt = app.add_subcommand("train-tokenizer", "train the image tokenizer");
    add_common(tt);
    tt->add_option("--data", data, "corpus manifest")->required();
    bind_key(tt, "--quantizer", "tokenizer.kind", "bae|vq");
    bind_key(tt, "--D", "tokenizer.d", "code bits");
    bind_key(tt, "--f", "tokenizer.f", "downsample factor");
    bind_key(tt, "--hidden", "tokenizer.hidden", "hidden width");
    bind_key(tt, "--steps", "tokenizer.steps", "training steps");
    bind_key(tt, "--batch", "tokenizer.batch", "images per step");
    bind_key(tt, "--lr", "tokenizer.lr", "learning rate");
    bind_key(tt, "--train-quantizer", "tokenizer.train_quantizer", "sign|bernoulli (bae)");
    bind_key(tt, "--seed", "tokenizer.seed", "init/train seed");

    CLI::App* tk = app.add_subcommand("tokenize", "tokenize a corpus with a frozen checkpoint");
    add_common(tk);
    tk->add_option("--data", data, "corpus manifest")->required();
    tk->add_option("--ckpt", ckpt, "tokenizer checkpoint")->required();
    bind_key(tk, "--mode", "tokenize.mode", "sign|bernoulli");
    bind_key(tk, "--vocab", "tokenize.vocab", "storage grouping g-b (default 1-D)");
    bind_key(tk, "--seed", "tokenize.seed", "bernoulli seed");

    CLI::App* st = app.add_subcommand("stats", "token distribution statistics");
    add_common(st);
    st->add_option("--tokens", tokens, "token dataset (.elmt)")->required();
    bind_key(st, "--order", "stats.order", "1 = unigram, 2 = adds bigram");

    CLI::App* tl = app.add_subcommand("train-lm", "train the AR or MLM transformer");
    add_common(tl);
    tl->add_option("--tokens", tokens, "token dataset (.elmt)")->required();
    bind_key(tl, "--mode", "lm.mode", "ar|mlm");
    bind_key(tl, "--vocab", "lm.vocab", "subcode split g-b");
    bind_key(tl, "--size", "lm.size", "s|m|l|xl|xxl|2b");
    bind_key(tl, "--steps", "lm.steps", "training steps");
    bind_key(tl, "--batch", "lm.batch", "sequences per step");
    bind_key(tl, "--lr", "lm.lr", "learning rate");
    bind_key(tl, "--wd", "lm.wd", "weight decay");
    bind_key(tl, "--class-drop", "lm.class_drop", "null-class probability");
    bind_key(tl, "--full-width-tables", "lm.full_width_tables", "paper-literal table widths");
    bind_key(tl, "--seed", "lm.seed", "init/train seed");

    CLI::App* sm = app.add_subcommand("sample", "generate token grids and images");
    add_common(sm);
    sm->add_option("--ckpt", ckpt, "lm checkpoint")->required();
    sm->add_option("--tokenizer", tokenizer, "tokenizer checkpoint")->required();
    bind_key(sm, "--class", "sample.class", "class id (-1 cycles all)");
    bind_key(sm, "--n", "sample.n", "sample count");
    bind_key(sm, "--cfg", "sample.cfg", "schedule kind:smin:smax");
    bind_key(sm, "--topk", "sample.topk", "top-k per subhead (0 = all)");
    bind_key(sm, "--temperature", "sample.temperature", "softmax temperature");
    bind_key(sm, "--tau", "sample.tau", "mlm confidence noise");
    bind_key(sm, "--anneal-tau", "sample.anneal_tau", "anneal tau over iterations");
    bind_key(sm, "--iters", "sample.iters", "mlm iterations");
    bind_key(sm, "--seed", "sample.seed", "sampling seed");

    CLI::App* ex = app.add_subcommand("extend", "any-size sliding-window generation");
    add_common(ex);
    ex->add_option("--ckpt", ckpt, "lm checkpoint (ar)")->required();
    ex->add_option("--tokenizer", tokenizer, "tokenizer checkpoint")->required();
    bind_key(ex, "--class", "sample.class", "class id");
    bind_key(ex, "--height", "extend.height", "target grid height (tokens)");
    bind_key(ex, "--width", "extend.width", "target grid width (tokens)");
    bind_key(ex, "--cfg", "sample.cfg", "schedule kind:smin:smax");
    bind_key(ex, "--topk", "sample.topk", "top-k per subhead");
    bind_key(ex, "--seed", "sample.seed", "sampling seed");

    CLI::App* at = app.add_subcommand("attn", "average attention maps and locality");
    add_common(at);
    at->add_option("--ckpt", ckpt, "lm checkpoint")->required();
    at->add_option("--tokens", tokens, "token dataset to probe with")->required();
    bind_key(at, "--n", "attn.n", "samples to average");
    bind_key(at, "--head", "attn.head", "head index");

    CLI::App* ev = app.add_subcommand("eval", "latent distribution distance real vs generated");
    add_common(ev);
    ev->add_option("--real", real_manifest, "manifest of real images")->required();
    ev->add_option("--gen", gen_manifest, "manifest of generated images")->required();
    ev->add_option("--tokenizer", tokenizer, "tokenizer checkpoint")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (threads > 0) set_num_threads(threads);
        if (!config_file.empty()) cfg.load_file(config_file);
        apply_flags(cfg, used);
        const std::string inputs = data + "|" + ckpt + "|" + tokenizer + "|" + tokens + "|" +
                                   real_manifest + "|" + gen_manifest;

        if (gen->parsed()) {
            const std::string dir = make_run_dir(out_dir, "gen-data", cfg, inputs);
            return cmd_gen_data(cfg, dir);
        }
        if (tt->parsed()) {
            const std::string dir = make_run_dir(out_dir, "train-tokenizer", cfg, inputs);
            return cmd_train_tokenizer(cfg, data, dir);
        }
        if (tk->parsed()) {
            const std::string dir = make_run_dir(out_dir, "tokenize", cfg, inputs);
            return cmd_tokenize(cfg, data, ckpt, dir);
        }
        if (st->parsed()) {
            const std::string dir = make_run_dir(out_dir, "stats", cfg, inputs);
            return cmd_stats(cfg, tokens, dir);
        }
        if (tl->parsed()) {
            const std::string dir = make_run_dir(out_dir, "train-lm", cfg, inputs);
            return cmd_train_lm(cfg, tokens, dir);
        }
        if (sm->parsed()) {
            const std::string dir = make_run_dir(out_dir, "sample", cfg, inputs);
            return cmd_sample(cfg, ckpt, tokenizer, dir);
        }
        if (ex->parsed()) {
            const std::string dir = make_run_dir(out_dir, "extend", cfg, inputs);
            return cmd_extend(cfg, ckpt, tokenizer, dir);
        }
        if (at->parsed()) {
            const std::string dir = make_run_dir(out_dir, "attn", cfg, inputs);
            return cmd_attn(cfg, ckpt, tokens, dir);
        }
        if (ev->parsed()) {
            const std::string dir = make_run_dir(out_dir, "eval", cfg, inputs);
            return cmd_eval(real_manifest, gen_manifest, tokenizer, dir);
        }
    } catch (const NumericalError& e) {
        std::cerr << "error: numerical: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
