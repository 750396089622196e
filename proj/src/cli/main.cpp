#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "flowgen/checkpoint.hpp"
#include "flowgen/config.hpp"
#include "flowgen/data.hpp"
#include "flowgen/image_io.hpp"
#include "flowgen/inpaint.hpp"
#include "flowgen/metrics.hpp"
#include "flowgen/model.hpp"
#include "flowgen/processes.hpp"
#include "flowgen/record.hpp"
#include "flowgen/samplers.hpp"
#include "flowgen/tensor.hpp"

namespace flowgen {
namespace {

// Seed derivation, shared by every command:
//   seed     model init
//   seed+1   training loop stream (shuffles, times, noise, dropout, masks)
//   seed+2   dataset generation
//   seed+3   validation / inpaint mask-and-sample stream
//   seed+4   validation dataset
//   seed+c   per-class sampler noise (class c)
//   seed+9   kid subset selection

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out_override;
    int64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool seed_required) {
    cmd->add_option("--config", a.config_path, "config file (key=value with [section] headers)");
    cmd->add_option("--set", a.sets, "override a config key, e.g. --set train.lr=1e-3");
    cmd->add_option("--out", a.out_override, "output directory (overrides run.out_dir)");
    auto* seed = cmd->add_option("--seed", a.seed, "run seed");
    if (seed_required) seed->required();
}

Config assemble_config(const CommonArgs& a) {
    Config cfg = a.config_path.empty() ? Config{} : Config::parse_file(a.config_path);
    for (const std::string& kv : a.sets) {
        size_t eq = kv.find('=');
        require(eq != std::string::npos && eq > 0, "--set wants key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!a.out_override.empty()) cfg.set("run.out_dir", a.out_override);
    return cfg;
}

std::string make_out_dir(const Config& cfg) {
    std::string out = cfg.get_str("run.out_dir", "run_out");
    std::filesystem::create_directories(out);
    return out;
}

std::vector<int> parse_int_list(const std::string& csv, const std::string& what) {
    std::vector<int> out;
    size_t pos = 0;
    while (pos <= csv.size()) {
        size_t comma = csv.find(',', pos);
        std::string tok = csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        require(!tok.empty(), what + ": empty entry in '" + csv + "'");
        char* end = nullptr;
        long v = std::strtol(tok.c_str(), &end, 10);
        require(end != tok.c_str() && *end == '\0', what + ": bad integer '" + tok + "'");
        out.push_back(static_cast<int>(v));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

std::vector<std::string> parse_str_list(const std::string& csv) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos <= csv.size()) {
        size_t comma = csv.find(',', pos);
        std::string tok = csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!tok.empty()) out.push_back(tok);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    require(!out.empty(), "expected a comma-separated list");
    return out;
}

std::string require_method(const Config& cfg) {
    std::string m = cfg.get_str("run.method", "cfm");
    require(m == "ddpm" || m == "cfm" || m == "meanflow",
            "run.method must be ddpm, cfm, or meanflow, got '" + m + "'");
    return m;
}

Dataset dataset_from_config(const Config& cfg, uint64_t seed) {
    std::string name = cfg.get_str("run.dataset", "tiny_shapes");
    if (name == "cifar10")
        return load_cifar10_binary(cfg.require_str("run.data_dir"), cfg.get_str("run.split", "train"));
    Rng rng(seed);
    if (name == "tiny_shapes") {
        int64_t n = cfg.get_int("run.n", 4000);
        return tiny_shapes(n, static_cast<int>(cfg.get_int("model.image_size", 8)), rng);
    }
    return toy_2d(name, cfg.get_int("run.n", 8000), rng);
}

ModelSpec spec_from_config(const Config& cfg, const std::string& method, const Dataset& ds) {
    ModelSpec s;
    bool image_data = ds.images.rank() == 4;
    s.arch = cfg.get_str("model.arch", image_data ? "unet" : "mlp2d");
    require(s.arch == "unet" || s.arch == "mlp2d", "model.arch must be unet or mlp2d");
    require((s.arch == "unet") == image_data,
            "model.arch '" + s.arch + "' does not fit the dataset shape");
    bool mf = method == "meanflow";
    if (s.arch == "unet") {
        UNetConfig& u = s.unet;
        u.image_channels = static_cast<int>(cfg.get_int("model.image_channels", ds.images.dim(1)));
        u.image_size = static_cast<int>(cfg.get_int("model.image_size", ds.images.dim(2)));
        u.base_channels = static_cast<int>(cfg.get_int("model.base_channels", u.base_channels));
        u.channel_multipliers = parse_int_list(
            cfg.get_str("model.channel_multipliers", "1,2,2"), "model.channel_multipliers");
        u.blocks_per_resolution =
            static_cast<int>(cfg.get_int("model.blocks", u.blocks_per_resolution));
        u.time_embed_dim = static_cast<int>(cfg.get_int("model.time_embed_dim", u.time_embed_dim));
        u.num_classes = static_cast<int>(cfg.get_int("model.num_classes", ds.num_classes));
        u.meanflow_mode = mf;
        require(u.image_channels == ds.images.dim(1) && u.image_size == ds.images.dim(2) &&
                    u.image_size == ds.images.dim(3),
                "model image shape does not match the dataset");
    } else {
        Mlp2dConfig& m = s.mlp2d;
        m.hidden_dim = static_cast<int>(cfg.get_int("model.hidden_dim", m.hidden_dim));
        m.hidden_layers = static_cast<int>(cfg.get_int("model.hidden_layers", m.hidden_layers));
        m.time_embed_dim = static_cast<int>(cfg.get_int("model.time_embed_dim", m.time_embed_dim));
        m.num_classes = static_cast<int>(cfg.get_int("model.num_classes", ds.num_classes));
        m.meanflow_mode = mf;
    }
    require(s.num_classes() == ds.num_classes, "model.num_classes does not match the dataset");
    s.validate();
    return s;
}

// [N,...] -> row i as [ ... ] with the leading dim dropped
Tensor image_row(const Tensor& batch, int64_t i) {
    int64_t per = batch.size() / batch.dim(0);
    std::vector<double> v(batch.data() + i * per, batch.data() + (i + 1) * per);
    Shape shape(batch.shape().begin() + 1, batch.shape().end());
    return Tensor::from(shape, std::move(v));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    int64_t n = 0;
    for (const Tensor& p : parts) n += p.dim(0);
    std::vector<double> v;
    v.reserve(static_cast<size_t>(n) * (parts[0].size() / parts[0].dim(0)));
    for (const Tensor& p : parts) v.insert(v.end(), p.data(), p.data() + p.size());
    Shape shape = parts[0].shape();
    shape[0] = static_cast<int>(n);
    return Tensor::from(shape, std::move(v));
}

// model range [-1,1] -> metric range [0,1]
Tensor to_unit(const Tensor& x) {
    std::vector<double> v(static_cast<size_t>(x.size()));
    for (int64_t k = 0; k < x.size(); ++k)
        v[static_cast<size_t>(k)] = std::clamp((x.at(k) + 1.0) * 0.5, 0.0, 1.0);
    return Tensor::from(x.shape(), std::move(v));
}

using LossFn =
    std::function<Tensor(const ParamSet& tracked_params, const Tensor& x, const std::vector<int>& y, Rng& rng)>;

int64_t run_epoch(const ModelSpec& spec, ParamSet& params, AdamState& opt, const Dataset& ds,
                  int batch_size, int64_t step, int64_t total_steps, int64_t epoch_no, double lr0,
                  double lr1, bool cosine, double wd, const LossFn& loss_fn, Rng& rng,
                  std::ostream& log) {
    (void)spec;
    for (const LabeledBatch& b : batches(ds, batch_size, rng)) {
        double lr = cosine ? cosine_lr(step, total_steps, lr0, lr1) : lr0;
        Record rec;
        ParamSet tp = tracked(params, rec);
        Tensor loss = loss_fn(tp, b.images, b.labels, rng);
        std::vector<Tensor> wrt;
        wrt.reserve(tp.items.size());
        for (const auto& [name, t] : tp.items) wrt.push_back(t);
        std::vector<Tensor> grads = grad(rec, loss, wrt);
        adamw_step(params, grads, opt, lr, wd);
        log << step << "," << epoch_no << "," << fmt17(loss.item()) << "," << fmt17(lr) << "\n";
        ++step;
    }
    return step;
}

struct SamplerChoice {
    std::string method;  // sampler name
    int steps = 50;
    CosineSchedule sched;
};

SamplerChoice sampler_for(const std::string& ck_method, const Config& cfg, const std::string& section) {
    SamplerChoice sc;
    if (ck_method == "ddpm") {
        sc.method = "ddim";
        sc.sched = CosineSchedule::make(static_cast<int>(cfg.get_int(section + ".timesteps", 200)));
    } else if (ck_method == "cfm") {
        sc.method = "cfm_euler";
    } else {
        sc.method = "meanflow_onestep";
    }
    sc.steps = static_cast<int>(cfg.get_int(section + ".steps", ck_method == "meanflow" ? 1 : 50));
    return sc;
}

SampleResult run_sampler(const ModelSpec& spec, const ParamSet& params, const SamplerChoice& sc,
                         SamplerConfig cfg) {
    cfg.method = sc.method;
    cfg.steps = sc.steps;
    if (sc.method == "ddim") return ddim_sample(spec, params, sc.sched, cfg);
    if (sc.method == "cfm_euler") return cfm_euler_sample(spec, params, cfg);
    return meanflow_onestep(spec, params, cfg);
}

void save_run_checkpoint(const std::string& path, const std::string& method, const ModelSpec& spec,
                         const ParamSet& params, const AdamState& opt, int64_t step, const Rng& rng) {
    Checkpoint ck;
    ck.method = method;
    ck.spec = spec;
    ck.params = params;
    ck.has_opt = true;
    ck.opt = opt;
    ck.step = step;
    ck.rng_state = rng.serialize();
    save_checkpoint(ck, path);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    CommonArgs common;
    std::string resume;
};

int cmd_train(const TrainArgs& args) {
    Config cfg = assemble_config(args.common);
    std::string method = require_method(cfg);
    std::string out = make_out_dir(cfg);
    uint64_t seed = static_cast<uint64_t>(args.common.seed);

    Dataset ds = dataset_from_config(cfg, seed + 2);
    ModelSpec spec = spec_from_config(cfg, method, ds);

    ParamSet params;
    AdamState opt;
    int64_t step0 = 0;
    Rng loop_rng(seed + 1);
    bool resuming = !args.resume.empty();
    if (resuming) {
        Checkpoint ck = load_checkpoint(args.resume);
        require(ck.method == method,
                "resume: checkpoint method '" + ck.method + "' does not match run.method '" + method + "'");
        require(ck.spec.num_classes() == ds.num_classes, "resume: checkpoint classes do not match dataset");
        spec = ck.spec;
        params = ck.params;
        opt = ck.has_opt ? ck.opt : AdamState::init(params);
        step0 = ck.step;
        if (!ck.rng_state.empty()) loop_rng.deserialize(ck.rng_state);
    } else {
        params = init_model(spec, seed).params;
        opt = AdamState::init(params);
    }

    int epochs = static_cast<int>(cfg.get_int("train.epochs", method == "ddpm" ? 400 : 200));
    int batch = static_cast<int>(cfg.get_int("train.batch_size", 128));
    double lr0 = cfg.get_double("train.lr", 3e-4);
    double lr1 = cfg.get_double("train.lr_final", 1e-4);
    double wd = cfg.get_double("train.weight_decay", 0.01);
    double dropout = cfg.get_double("train.cfg_dropout", 0.10);
    std::string schedule = cfg.get_str("train.lr_schedule", "cosine");
    require(schedule == "cosine" || schedule == "constant", "train.lr_schedule must be cosine or constant");
    int ck_every = static_cast<int>(cfg.get_int("train.checkpoint_every", 0));
    require(epochs >= 1 && batch >= 1, "train: epochs and batch_size must be positive");

    int64_t n = ds.images.dim(0);
    int64_t spb = (n + batch - 1) / batch;
    int64_t total = step0 + static_cast<int64_t>(epochs) * spb;
    int64_t epoch_base = step0 / spb;

    CosineSchedule sched;
    if (method == "ddpm") sched = CosineSchedule::make(static_cast<int>(cfg.get_int("train.timesteps", 200)));

    LossFn loss_fn;
    if (method == "ddpm") {
        loss_fn = [&spec, &sched, dropout](const ParamSet& tp, const Tensor& x, const std::vector<int>& y,
                                           Rng& rng) { return ddpm_loss(spec, tp, x, y, sched, dropout, rng); };
    } else if (method == "cfm") {
        loss_fn = [&spec, dropout](const ParamSet& tp, const Tensor& x, const std::vector<int>& y, Rng& rng) {
            return cfm_loss(spec, tp, x, y, dropout, rng);
        };
    } else {
        loss_fn = [&spec, dropout](const ParamSet& tp, const Tensor& x, const std::vector<int>& y, Rng& rng) {
            return meanflow_loss(spec, tp, x, y, dropout, rng);
        };
    }

    std::string log_path = out + "/train_log.csv";
    bool append = resuming && std::filesystem::exists(log_path) &&
                  std::filesystem::file_size(log_path) > 0;
    std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
    require(log.good(), "train: cannot open '" + log_path + "'");
    if (!append) log << "step,epoch,loss,lr\n";

    int64_t step = step0;
    for (int e = 0; e < epochs; ++e) {
        step = run_epoch(spec, params, opt, ds, batch, step, total, epoch_base + e, lr0, lr1,
                         schedule == "cosine", wd, loss_fn, loop_rng, log);
        if (ck_every > 0 && (e + 1) % ck_every == 0 && e + 1 < epochs)
            save_run_checkpoint(out + "/ckpt_epoch_" + std::to_string(epoch_base + e + 1) + ".flow",
                                method, spec, params, opt, step, loop_rng);
    }
    save_run_checkpoint(out + "/ckpt_final.flow", method, spec, params, opt, step, loop_rng);
    std::printf("trained %s for %d epoch(s), steps %lld..%lld; wrote %s/ckpt_final.flow\n",
                method.c_str(), epochs, static_cast<long long>(step0), static_cast<long long>(step - 1),
                out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

struct FinetuneArgs {
    CommonArgs common;
    std::string base;
};

int cmd_finetune(const FinetuneArgs& args) {
    Config cfg = assemble_config(args.common);
    std::string out = make_out_dir(cfg);
    uint64_t seed = static_cast<uint64_t>(args.common.seed);

    Checkpoint ck = load_checkpoint(args.base);
    require(ck.method == "cfm",
            "finetune: base checkpoint method is '" + ck.method + "', need a cfm model");
    require(ck.spec.arch == "unet", "finetune: inpainting needs an image model");
    ModelSpec spec = ck.spec;
    ParamSet params = ck.params;
    AdamState opt = ck.has_opt ? ck.opt : AdamState::init(params);
    int size = spec.unet.image_size;

    Dataset ds = dataset_from_config(cfg, seed + 2);
    require(ds.images.rank() == 4 && ds.images.dim(1) == spec.unet.image_channels &&
                ds.images.dim(2) == size && ds.num_classes == spec.num_classes(),
            "finetune: dataset does not match the checkpoint model");

    TrainingHyper hyper;
    hyper.cfg_dropout = cfg.get_double("finetune.cfg_dropout", 0.15);
    hyper.mask_prob = cfg.get_double("finetune.mask_prob", 0.5);
    hyper.full_weight = cfg.get_double("finetune.full_weight", 0.7);
    hyper.masked_weight = cfg.get_double("finetune.masked_weight", 0.3);
    hyper.lr = cfg.get_double("finetune.lr", 5e-5);
    hyper.lr_final = hyper.lr;
    hyper.weight_decay = cfg.get_double("finetune.weight_decay", 0.01);
    hyper.epochs = static_cast<int>(cfg.get_int("finetune.epochs", 20));
    hyper.batch_size = static_cast<int>(cfg.get_int("finetune.batch_size", 128));
    hyper.validate();

    std::vector<std::string> kinds =
        parse_str_list(cfg.get_str("finetune.mask_kinds", "center,random_bbox,irregular,half"));

    // when no batch is ever masked this draws exactly what plain cfm training
    // draws, so the loss streams coincide
    LossFn loss_fn = [&spec, &hyper, &kinds, size](const ParamSet& tp, const Tensor& x,
                                                   const std::vector<int>& y, Rng& rng) {
        bool masked = hyper.mask_prob > 0.0 && rng.bernoulli(hyper.mask_prob);
        if (!masked) return cfm_loss(spec, tp, x, y, hyper.cfg_dropout, rng);
        const std::string& kind = kinds[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(kinds.size()) - 1))];
        Mask m = make_mask(kind, size, rng);
        return inpaint_finetune_loss(spec, tp, x, y, m.values, hyper, rng);
    };

    int64_t val_count = cfg.get_int("finetune.val_count", 8);
    int val_steps = static_cast<int>(cfg.get_int("finetune.val_steps", 20));
    Dataset val = dataset_from_config(cfg, seed + 4);
    require(val.images.dim(0) >= val_count, "finetune: validation set smaller than finetune.val_count");

    std::ofstream log(out + "/finetune_log.csv", std::ios::trunc);
    std::ofstream val_log(out + "/finetune_val_psnr.csv", std::ios::trunc);
    require(log.good() && val_log.good(), "finetune: cannot open logs in '" + out + "'");
    log << "step,epoch,loss,lr\n";
    val_log << "epoch,mask,psnr\n";

    int64_t n = ds.images.dim(0);
    int64_t spb = (n + hyper.batch_size - 1) / hyper.batch_size;
    int64_t step = ck.step;
    int64_t total = step + static_cast<int64_t>(hyper.epochs) * spb;
    int64_t epoch_base = spb > 0 ? ck.step / spb : 0;
    Rng loop_rng(seed + 1);
    Rng val_rng(seed + 3);

    for (int e = 0; e < hyper.epochs; ++e) {
        step = run_epoch(spec, params, opt, ds, hyper.batch_size, step, total, epoch_base + e,
                         hyper.lr, hyper.lr_final, false, hyper.weight_decay, loss_fn, loop_rng, log);
        for (const std::string& kind : kinds) {
            double acc = 0.0;
            for (int64_t i = 0; i < val_count; ++i) {
                Mask m = make_mask(kind, size, val_rng);
                SamplerConfig scfg;
                scfg.method = "cfm_euler";
                scfg.steps = val_steps;
                scfg.label = val.labels[static_cast<size_t>(i)];
                scfg.seed = val_rng.next_u64();
                scfg.count = 1;
                Tensor x = Tensor::from(
                    {1, spec.unet.image_channels, size, size},
                    std::vector<double>(val.images.data() + i * val.images.size() / val.images.dim(0),
                                        val.images.data() + (i + 1) * val.images.size() / val.images.dim(0)));
                SampleResult res = inpaint_sample(spec, params, x, m, scfg);
                acc += psnr_masked(to_unit(image_row(x, 0)), to_unit(image_row(res.images, 0)), m.values);
            }
            val_log << epoch_base + e << "," << kind << "," << fmt17(acc / static_cast<double>(val_count))
                    << "\n";
        }
    }

    save_run_checkpoint(out + "/ckpt_final.flow", "cfm", spec, params, opt, step, loop_rng);
    std::printf("fine-tuned for %d epoch(s), steps %lld..%lld; wrote %s/ckpt_final.flow\n",
                hyper.epochs, static_cast<long long>(ck.step), static_cast<long long>(step - 1),
                out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

struct SampleArgs {
    CommonArgs common;
    std::string checkpoint;
};

int cmd_sample(const SampleArgs& args) {
    Config cfg = assemble_config(args.common);
    std::string out = make_out_dir(cfg);
    uint64_t seed = static_cast<uint64_t>(args.common.seed);

    Checkpoint ck = load_checkpoint(args.checkpoint);
    SamplerChoice sc = sampler_for(ck.method, cfg, "sample");

    int count = static_cast<int>(cfg.get_int("sample.count", 64));
    double cfg_scale = cfg.get_double("sample.cfg_scale", 0.0);
    int label = static_cast<int>(cfg.get_int("sample.label", kNullClass));
    bool per_class = cfg.get_bool("sample.per_class", false);
    require(count >= 1, "sample.count must be positive");

    std::vector<Tensor> parts;
    std::vector<int> labels;
    std::vector<int64_t> evals;
    int nfe = 0;
    if (per_class) {
        int classes = ck.spec.num_classes();
        require(count % classes == 0, "sample.count must divide evenly across " +
                                          std::to_string(classes) + " classes");
        for (int c = 0; c < classes; ++c) {
            SamplerConfig s;
            s.cfg_scale = cfg_scale;
            s.label = c;
            s.count = count / classes;
            s.seed = seed + static_cast<uint64_t>(c);
            SampleResult r = run_sampler(ck.spec, ck.params, sc, s);
            parts.push_back(r.images);
            for (int i = 0; i < s.count; ++i) {
                labels.push_back(c);
                evals.push_back(r.model_evals);
            }
            nfe = r.nfe_steps;
        }
    } else {
        SamplerConfig s;
        s.cfg_scale = cfg_scale;
        s.label = label;
        s.count = count;
        s.seed = seed;
        SampleResult r = run_sampler(ck.spec, ck.params, sc, s);
        parts.push_back(r.images);
        labels.assign(static_cast<size_t>(count), label);
        evals.assign(static_cast<size_t>(count), r.model_evals);
        nfe = r.nfe_steps;
    }
    Tensor images = concat_rows(parts);

    std::ofstream csv(out + "/samples.csv", std::ios::trunc);
    require(csv.good(), "sample: cannot open '" + out + "/samples.csv'");
    if (ck.spec.arch == "mlp2d") {
        csv << "index,label,x0,x1,nfe_steps,model_evals\n";
        for (int i = 0; i < count; ++i)
            csv << i << "," << labels[static_cast<size_t>(i)] << "," << fmt17(images.at(2 * i)) << ","
                << fmt17(images.at(2 * i + 1)) << "," << nfe << "," << evals[static_cast<size_t>(i)]
                << "\n";
    } else {
        csv << "index,label,nfe_steps,model_evals\n";
        for (int i = 0; i < count; ++i)
            csv << i << "," << labels[static_cast<size_t>(i)] << "," << nfe << ","
                << evals[static_cast<size_t>(i)] << "\n";
        write_image_grid(out + "/samples.png", images);
    }
    std::printf("sampled %d image(s) with %s (nfe %d); wrote %s/samples.csv\n", count,
                sc.method.c_str(), nfe, out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// inpaint
// ---------------------------------------------------------------------------

struct InpaintArgs {
    CommonArgs common;
    std::string checkpoint;
};

int cmd_inpaint(const InpaintArgs& args) {
    Config cfg = assemble_config(args.common);
    std::string out = make_out_dir(cfg);
    uint64_t seed = static_cast<uint64_t>(args.common.seed);

    Checkpoint ck = load_checkpoint(args.checkpoint);
    require(ck.method == "cfm", "inpaint: checkpoint method is '" + ck.method + "', need a cfm model");
    require(ck.spec.arch == "unet", "inpaint: need an image model");
    const ModelSpec& spec = ck.spec;
    int size = spec.unet.image_size;
    int ch = spec.unet.image_channels;

    std::string kind = cfg.get_str("inpaint.kind", "center");
    int count = static_cast<int>(cfg.get_int("inpaint.count", 4));
    int steps = static_cast<int>(cfg.get_int("inpaint.steps", 50));
    double cfg_scale = cfg.get_double("inpaint.cfg_scale", 0.0);
    require(count >= 1, "inpaint.count must be positive");

    Dataset ds = dataset_from_config(cfg, seed + 4);
    require(ds.images.rank() == 4 && ds.images.dim(1) == ch && ds.images.dim(2) == size,
            "inpaint: dataset does not match the checkpoint model");
    require(ds.images.dim(0) >= count, "inpaint: dataset smaller than inpaint.count");

    Rng mask_rng(seed + 3);
    std::ofstream csv(out + "/inpaint.csv", std::ios::trunc);
    require(csv.good(), "inpaint: cannot open '" + out + "/inpaint.csv'");
    csv << "index,kind,nmse,psnr,ssim\n";

    std::vector<Tensor> panels;
    for (int i = 0; i < count; ++i) {
        Tensor x = Tensor::from({1, ch, size, size},
                                std::vector<double>(ds.images.data() + static_cast<int64_t>(i) * ch * size * size,
                                                    ds.images.data() + static_cast<int64_t>(i + 1) * ch * size * size));
        Mask m = make_mask(kind, size, mask_rng);

        SamplerConfig scfg;
        scfg.method = "cfm_euler";
        scfg.steps = steps;
        scfg.cfg_scale = cfg_scale;
        scfg.label = ds.labels[static_cast<size_t>(i)];
        scfg.seed = seed + 100 + static_cast<uint64_t>(i);
        scfg.count = 1;
        SampleResult res = inpaint_sample(spec, ck.params, x, m, scfg);

        Tensor xu = to_unit(image_row(x, 0));
        Tensor ru = to_unit(image_row(res.images, 0));
        double nmse = nmse_masked(xu, ru, m.values);
        double psnr = psnr_masked(xu, ru, m.values);
        std::string ssim_cell = "absent";  // images below 11x11 have no ssim window
        if (size >= 11) ssim_cell = fmt17(ssim(xu, ru, m.values));
        csv << i << "," << kind << "," << fmt17(nmse) << "," << fmt17(psnr) << "," << ssim_cell << "\n";

        // panel row: original, masked view (hole black), filled result
        std::vector<double> shown(static_cast<size_t>(ch) * size * size);
        for (int c = 0; c < ch; ++c)
            for (int p = 0; p < size * size; ++p) {
                double mv = m.values.at(p);
                shown[static_cast<size_t>(c * size * size + p)] =
                    mv * x.at(c * size * size + p) + (1.0 - mv) * -1.0;
            }
        panels.push_back(x);
        panels.push_back(Tensor::from({1, ch, size, size}, std::move(shown)));
        panels.push_back(res.images);
    }
    write_image_grid(out + "/inpaint_" + kind + ".png", concat_rows(panels), 3);
    std::printf("inpainted %d image(s) with %s mask(s); wrote %s/inpaint.csv\n", count, kind.c_str(),
                out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    CommonArgs common;
    std::string checkpoint;
    bool timing = false;
};

int cmd_eval(const EvalArgs& args) {
    Config cfg = assemble_config(args.common);
    std::string out = make_out_dir(cfg);
    uint64_t seed = static_cast<uint64_t>(args.common.seed);

    Checkpoint ck = load_checkpoint(args.checkpoint);
    SamplerChoice sc = sampler_for(ck.method, cfg, "eval");
    int classes = ck.spec.num_classes();

    int count = static_cast<int>(cfg.get_int("eval.count", 512));
    double cfg_scale = cfg.get_double("eval.cfg_scale", 0.0);
    bool identity = cfg.get_bool("eval.identity", false);
    require(count >= 2 * classes && count % classes == 0,
            "eval.count must be a multiple of num_classes with at least 2 per class");

    Dataset ref = dataset_from_config(cfg, seed + 2);
    int64_t ref_count = cfg.get_int("eval.ref_count", count);
    require(ref.images.dim(0) >= ref_count, "eval: dataset smaller than eval.ref_count");
    Tensor ref_images = ref.images;
    if (ref_count < ref.images.dim(0)) {
        std::vector<Tensor> slices;
        for (int64_t i = 0; i < ref_count; ++i) {
            Tensor r = image_row(ref.images, i);
            Shape s = ref.images.shape();
            s[0] = 1;
            slices.push_back(Tensor::from(s, std::vector<double>(r.data(), r.data() + r.size())));
        }
        ref_images = concat_rows(slices);
    }
    std::vector<int> ref_labels(ref.labels.begin(), ref.labels.begin() + ref_count);

    Tensor gen_images;
    std::vector<int> gen_labels;
    int nfe = sc.steps;
    if (identity) {
        gen_images = ref_images;
        gen_labels = ref_labels;
        nfe = 0;
    } else {
        std::vector<Tensor> parts;
        for (int c = 0; c < classes; ++c) {
            SamplerConfig s;
            s.cfg_scale = cfg_scale;
            s.label = c;
            s.count = count / classes;
            s.seed = seed + static_cast<uint64_t>(c);
            SampleResult r = run_sampler(ck.spec, ck.params, sc, s);
            parts.push_back(r.images);
            for (int i = 0; i < s.count; ++i) gen_labels.push_back(c);
            nfe = r.nfe_steps;
        }
        gen_images = concat_rows(parts);
    }

    FeatureFn fx = [](const Tensor& im) { return pixel_features(im, 64, 1234); };
    Tensor ref_feats = fx(ref_images);
    Tensor gen_feats = fx(gen_images);
    GaussianStats ref_stats = feature_stats(ref_images, fx);
    GaussianStats gen_stats = feature_stats(gen_images, fx);

    double overall_fid = fid(gen_stats, ref_stats);
    double overall_kid = kid(gen_feats, ref_feats, seed + 9) * 1000.0;
    double ips = 0.0;  // timing stays out of the deterministic report by default
    if (args.timing) {
        SamplerConfig s;
        s.method = sc.method;
        s.steps = sc.steps;
        s.count = 1;
        s.seed = seed;
        ips = throughput(ck.spec, ck.params, sc.sched, s, 8);
    }

    auto rows_for_class = [](const Tensor& images, const std::vector<int>& labels, int cls) {
        std::vector<Tensor> picked;
        for (size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == cls) {
                Tensor r = image_row(images, static_cast<int64_t>(i));
                Shape s = images.shape();
                s[0] = 1;
                picked.push_back(Tensor::from(s, std::vector<double>(r.data(), r.data() + r.size())));
            }
        return picked;
    };

    std::vector<ClassFidRow> class_rows;
    for (int c = 0; c < classes; ++c) {
        std::vector<Tensor> g = rows_for_class(gen_images, gen_labels, c);
        std::vector<Tensor> r = rows_for_class(ref_images, ref_labels, c);
        if (g.size() < 2 || r.size() < 2) continue;  // too few samples for a covariance
        class_rows.push_back(
            {ck.method, c, fid(feature_stats(concat_rows(g), fx), feature_stats(concat_rows(r), fx))});
    }

    MetricReport report =
        build_report({{ck.method, overall_fid, overall_kid, static_cast<double>(nfe), ips}}, class_rows, {});
    write_report_csv(report, out + "/report.csv");
    write_report_text(report, out + "/report.txt");
    std::printf("eval: fid %.6g kid*1000 %.6g over %d generated vs %lld reference; wrote %s/report.csv\n",
                overall_fid, overall_kid, identity ? static_cast<int>(ref_count) : count,
                static_cast<long long>(ref_count), out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// grid
// ---------------------------------------------------------------------------

struct GridArgs {
    CommonArgs common;
};

int cmd_grid(const GridArgs& args) {
    Config cfg = assemble_config(args.common);
    std::string out = make_out_dir(cfg);
    uint64_t seed = static_cast<uint64_t>(args.common.seed);

    int count = static_cast<int>(cfg.get_int("grid.count", 64));
    require(count >= 1, "grid.count must be positive");
    Dataset ds = dataset_from_config(cfg, seed + 2);
    require(ds.images.rank() == 4, "grid: dataset has no raster images");
    require(ds.images.dim(0) >= count, "grid: dataset smaller than grid.count");

    std::vector<Tensor> rows;
    for (int i = 0; i < count; ++i) {
        Tensor r = image_row(ds.images, i);
        Shape s = ds.images.shape();
        s[0] = 1;
        rows.push_back(Tensor::from(s, std::vector<double>(r.data(), r.data() + r.size())));
    }
    write_image_grid(out + "/grid.png", concat_rows(rows));
    std::printf("wrote %s/grid.png with %d tile(s)\n", out.c_str(), count);
    return 0;
}

}  // namespace
}  // namespace flowgen

int main(int argc, char** argv) {
    using namespace flowgen;

    CLI::App app{"diffusion / flow matching trainer and sampler"};
    app.require_subcommand(1);

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "train a model from scratch or resume");
    add_common(train, train_args.common, true);
    train->add_option("--resume", train_args.resume, "checkpoint to continue from");

    FinetuneArgs ft_args;
    CLI::App* finetune = app.add_subcommand("finetune", "mask-aware fine-tune of a cfm checkpoint");
    add_common(finetune, ft_args.common, true);
    finetune->add_option("--checkpoint", ft_args.base, "base cfm checkpoint")->required();

    SampleArgs sample_args;
    CLI::App* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
    add_common(sample, sample_args.common, true);
    sample->add_option("--checkpoint", sample_args.checkpoint, "model checkpoint")->required();

    InpaintArgs inpaint_args;
    CLI::App* inpaint = app.add_subcommand("inpaint", "fill masked images with a cfm checkpoint");
    add_common(inpaint, inpaint_args.common, false);
    inpaint->add_option("--checkpoint", inpaint_args.checkpoint, "cfm checkpoint")->required();

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "distribution metrics for a checkpoint");
    add_common(eval, eval_args.common, false);
    eval->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")->required();
    eval->add_flag("--timing", eval_args.timing, "measure images/sec (breaks byte-for-byte reproducibility)");

    GridArgs grid_args;
    CLI::App* grid = app.add_subcommand("grid", "render dataset images as a grid png");
    add_common(grid, grid_args.common, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*train) return cmd_train(train_args);
        if (*finetune) return cmd_finetune(ft_args);
        if (*sample) return cmd_sample(sample_args);
        if (*inpaint) return cmd_inpaint(inpaint_args);
        if (*eval) return cmd_eval(eval_args);
        return cmd_grid(grid_args);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
