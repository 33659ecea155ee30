//! Command-line interface: one executable, six subcommands, a flat
//! `key=value` config file with flag overrides (flags win).

use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use crate::permute::{
    cloze_mask, mask_from_permutation, AttentionMask, MaskRole, Permutation,
};
use crate::pipeline::{
    decode_ar, decode_nar, latency_bench, prepare_dataset, render_bench_table, render_bench_tsv,
    render_synthetic, evaluate, random_labels, train_loop, DecodeConfig, DecodeScheme,
    PreparedDataset, SampleManifest, TrainConfig,
};
use crate::rng::SplitMix64;
use crate::textcodec::{Charset, TokenCodec};
use std::path::{Path, PathBuf};

/// Exit codes: 0 success, 1 usage error, 2 data/model error.
pub fn run_command(argv: &[String]) -> i32 {
    match dispatch(argv) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("{}", usage_text());
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

/// Failure classes mapped to exit codes 1 (usage) and 2 (data/model).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn usage_text() -> String {
    "usage: permread <synth|train|eval|predict|dump-masks|bench> [--help] [flags]".to_string()
}

const CONFIG_KEYS: [&str; 12] = [
    "preset",
    "charset",
    "k",
    "steps",
    "batch",
    "max_lr",
    "seed",
    "swa_start_frac",
    "swa_every",
    "val_every",
    "scheme",
    "refine",
];

/// Flat run configuration: training, decoding, and preset selection.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub preset: String,
    pub charset: usize,
    pub k: usize,
    pub steps: u64,
    pub batch: usize,
    pub max_lr: f64,
    pub seed: u64,
    pub swa_start_frac: f64,
    pub swa_every: u64,
    pub val_every: u64,
    pub scheme: String,
    pub refine: usize,
    refine_explicit: bool,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            preset: "tiny64".to_string(),
            charset: 36,
            k: 6,
            steps: 3000,
            batch: 16,
            max_lr: 1e-3,
            seed: 1,
            swa_start_frac: 0.75,
            swa_every: 100,
            val_every: 200,
            scheme: "ar".to_string(),
            refine: 1,
            refine_explicit: false,
        }
    }
}

impl CliConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse()
                .map_err(|e| CliError::Usage(format!("bad value for {key}: {e}")))
        }
        match key {
            "preset" => self.preset = value.to_string(),
            "charset" => self.charset = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "max_lr" => self.max_lr = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "swa_start_frac" => self.swa_start_frac = parse(key, value)?,
            "swa_every" => self.swa_every = parse(key, value)?,
            "val_every" => self.val_every = parse(key, value)?,
            "scheme" => {
                if value != "ar" && value != "nar" {
                    return Err(CliError::Usage(format!(
                        "scheme must be 'ar' or 'nar', got '{value}'"
                    )));
                }
                self.scheme = value.to_string();
            }
            "refine" => {
                self.refine = parse(key, value)?;
                self.refine_explicit = true;
            }
            _ => {
                return Err(CliError::Usage(format!(
                    "unknown config key '{key}' (valid: {})",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies the scheme-default refinement count unless one was given.
    fn resolve(&mut self) {
        if !self.refine_explicit {
            self.refine = match self.scheme.as_str() {
                "nar" => 2,
                _ => 1,
            };
        }
    }

    fn scheme_enum(&self) -> DecodeScheme {
        if self.scheme == "nar" {
            DecodeScheme::Nar
        } else {
            DecodeScheme::Ar
        }
    }

    /// Effective config as a parseable key=value block.
    pub fn render(&self) -> String {
        format!(
            "# effective configuration\npreset={}\ncharset={}\nk={}\nsteps={}\nbatch={}\nmax_lr={}\nseed={}\nswa_start_frac={}\nswa_every={}\nval_every={}\nscheme={}\nrefine={}\n",
            self.preset,
            self.charset,
            self.k,
            self.steps,
            self.batch,
            self.max_lr,
            self.seed,
            self.swa_start_frac,
            self.swa_every,
            self.val_every,
            self.scheme,
            self.refine,
        )
    }

    pub fn parse_file_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            preset: self.preset.clone(),
            charset_size: self.charset,
            k: self.k,
            batch_size: self.batch,
            total_steps: self.steps,
            max_lr: self.max_lr,
            swa_start_frac: self.swa_start_frac,
            swa_every: self.swa_every,
            val_every: self.val_every,
            seed: self.seed,
        }
    }
}

/// Parsed flags: `--key value` pairs in order, plus `--help`.
struct Flags {
    pairs: Vec<(String, String)>,
    help: bool,
}

fn parse_flags(args: &[String], allowed: &[&str]) -> Result<Flags, CliError> {
    let mut pairs = Vec::new();
    let mut help = false;
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        if arg == "--help" {
            help = true;
            i += 1;
            continue;
        }
        let Some(name) = arg.strip_prefix("--") else {
            return Err(CliError::Usage(format!("unexpected argument '{arg}'")));
        };
        let (name, inline_value) = match name.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (name, None),
        };
        if !allowed.contains(&name) {
            return Err(CliError::Usage(format!(
                "unknown flag '--{name}' (valid: {})",
                allowed
                    .iter()
                    .map(|f| format!("--{f}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        let value = match inline_value {
            Some(v) => v,
            None => {
                i += 1;
                args.get(i)
                    .cloned()
                    .ok_or_else(|| CliError::Usage(format!("flag '--{name}' needs a value")))?
            }
        };
        pairs.push((name.to_string(), value));
        i += 1;
    }
    Ok(Flags { pairs, help })
}

impl Flags {
    fn get(&self, name: &str) -> Option<&str> {
        self.pairs
            .iter()
            .rev()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    fn require(&self, name: &str) -> Result<&str, CliError> {
        self.get(name)
            .ok_or_else(|| CliError::Usage(format!("missing required flag '--{name}'")))
    }

    fn parse_opt<T: std::str::FromStr>(&self, name: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(name) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("bad value for --{name}: {e}"))),
        }
    }
}

/// Builds the effective config: defaults, then `--config` file, then the
/// config-key flags in order.
fn effective_config(flags: &Flags) -> Result<CliConfig, CliError> {
    let mut cfg = CliConfig::default();
    if let Some(path) = flags.get("config") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("config {path}: {e}")))?;
        cfg.parse_file_text(&text)?;
    }
    for (k, v) in &flags.pairs {
        if CONFIG_KEYS.contains(&k.as_str()) {
            cfg.set(k, v)?;
        }
    }
    cfg.resolve();
    Ok(cfg)
}

fn dispatch(argv: &[String]) -> Result<(), CliError> {
    let Some(sub) = argv.first() else {
        return Err(CliError::Usage("missing subcommand".into()));
    };
    let rest = &argv[1..];
    match sub.as_str() {
        "synth" => cmd_synth(rest),
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "predict" => cmd_predict(rest),
        "dump-masks" => cmd_dump_masks(rest),
        "bench" => cmd_bench(rest),
        "--help" | "help" => {
            println!("{}", usage_text());
            println!("  synth       render a synthetic corpus (PGM images + manifest.tsv)");
            println!("  train       train a model and write a checkpoint");
            println!("  eval        evaluate a checkpoint on a manifest");
            println!("  predict     decode a single image");
            println!("  dump-masks  print attention masks as 0/1 grids");
            println!("  bench       measure decode latency vs output length");
            Ok(())
        }
        other => Err(CliError::Usage(format!("unknown subcommand '{other}'"))),
    }
}

fn help_for(name: &str, flags_doc: &[(&str, &str)]) -> String {
    let mut out = format!("usage: permread {name} [flags]\n");
    for (f, d) in flags_doc {
        out.push_str(&format!("  --{f:<16} {d}\n"));
    }
    out
}

fn cmd_synth(args: &[String]) -> Result<(), CliError> {
    let allowed = [
        "out", "count", "min-len", "max-len", "config", "preset", "charset", "seed",
    ];
    let doc = [
        ("out", "output directory (required)"),
        ("count", "number of samples (default 512)"),
        ("min-len", "minimum label length (default 2)"),
        ("max-len", "maximum label length (default: model T)"),
        ("config", "key=value config file"),
        ("preset", "model preset: tiny64 | ti192"),
        ("charset", "charset size: 36 | 62 | 94"),
        ("seed", "corpus seed"),
    ];
    let flags = parse_flags(args, &allowed)?;
    if flags.help {
        println!("{}", help_for("synth", &doc));
        return Ok(());
    }
    let cfg = effective_config(&flags)?;
    print!("{}", cfg.render());
    let out_dir = PathBuf::from(flags.require("out")?);
    let count: usize = flags.parse_opt("count")?.unwrap_or(512);
    let model_cfg = preset_config(&cfg)?;
    let min_len: usize = flags.parse_opt("min-len")?.unwrap_or(2);
    let max_len: usize = flags
        .parse_opt("max-len")?
        .unwrap_or(model_cfg.max_label_len);
    if min_len == 0 || min_len > max_len || max_len > model_cfg.max_label_len {
        return Err(CliError::Usage(format!(
            "label lengths {min_len}..{max_len} invalid for T={}",
            model_cfg.max_label_len
        )));
    }
    let charset = Charset::slice(cfg.charset)?;
    let mut rng = SplitMix64::new(cfg.seed);
    let labels = random_labels(count, &charset, min_len, max_len, &mut rng);
    let manifest = render_synthetic(
        &labels,
        model_cfg.image_w,
        model_cfg.image_h,
        &mut rng,
        &out_dir,
    )?;
    println!(
        "wrote {} samples to {}",
        manifest.rows.len(),
        out_dir.display()
    );
    Ok(())
}

fn preset_config(cfg: &CliConfig) -> Result<ModelConfig, CliError> {
    ModelConfig::preset(&cfg.preset, cfg.charset)
        .ok_or_else(|| CliError::Usage(format!("unknown preset '{}'", cfg.preset)))
}

fn cmd_train(args: &[String]) -> Result<(), CliError> {
    let allowed = [
        "data", "out", "config", "preset", "charset", "k", "steps", "batch", "max_lr", "seed",
        "swa_start_frac", "swa_every", "val_every",
    ];
    let doc = [
        ("data", "manifest.tsv path (required)"),
        ("out", "checkpoint output path (required)"),
        ("config", "key=value config file"),
        ("preset", "model preset: tiny64 | ti192"),
        ("charset", "charset size: 36 | 62 | 94"),
        ("k", "permutation count (1 or even)"),
        ("steps", "total optimizer steps"),
        ("batch", "batch size"),
        ("max_lr", "peak learning rate"),
        ("seed", "run seed"),
        ("swa_start_frac", "fraction of steps before weight averaging"),
        ("swa_every", "steps between weight-average snapshots"),
        ("val_every", "steps between validation log lines"),
    ];
    let flags = parse_flags(args, &allowed)?;
    if flags.help {
        println!("{}", help_for("train", &doc));
        return Ok(());
    }
    let cfg = effective_config(&flags)?;
    print!("{}", cfg.render());
    let data = PathBuf::from(flags.require("data")?);
    let out = PathBuf::from(flags.require("out")?);
    let manifest = SampleManifest::load(&data)?;
    let train_cfg = cfg.to_train_config();
    let outcome = train_loop(&train_cfg, &manifest, &mut |line| println!("{line}"))?;
    save_checkpoint(&out, &outcome.model_cfg, &outcome.params)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn load_eval_charset(
    cfg: &CliConfig,
    model_cfg: &ModelConfig,
) -> Result<(Charset, usize), CliError> {
    if cfg.charset > model_cfg.charset_size {
        return Err(CliError::Runtime(format!(
            "evaluation charset {} exceeds training charset {}",
            cfg.charset, model_cfg.charset_size
        )));
    }
    Ok((Charset::slice(cfg.charset)?, cfg.charset))
}

fn cmd_eval(args: &[String]) -> Result<(), CliError> {
    let allowed = ["checkpoint", "data", "config", "scheme", "refine", "charset"];
    let doc = [
        ("checkpoint", "trained checkpoint path (required)"),
        ("data", "manifest.tsv path (required)"),
        ("config", "key=value config file"),
        ("scheme", "decoding scheme: ar | nar"),
        ("refine", "refinement iterations (default: ar 1, nar 2)"),
        ("charset", "evaluation charset size: 36 | 62 | 94"),
    ];
    let flags = parse_flags(args, &allowed)?;
    if flags.help {
        println!("{}", help_for("eval", &doc));
        return Ok(());
    }
    let mut cfg = effective_config(&flags)?;
    let ckpt = PathBuf::from(flags.require("checkpoint")?);
    let data = PathBuf::from(flags.require("data")?);
    let (model_cfg, params) = load_checkpoint(&ckpt)?;
    // default evaluation charset: the training charset
    if flags.get("charset").is_none() {
        cfg.charset = model_cfg.charset_size;
    }
    print!("{}", cfg.render());
    let (eval_charset, s_eval) = load_eval_charset(&cfg, &model_cfg)?;
    let train_codec = TokenCodec::new(
        Charset::slice(model_cfg.charset_size)?,
        model_cfg.max_label_len,
    );
    let eval_codec = TokenCodec::new(eval_charset, model_cfg.max_label_len);
    let manifest = SampleManifest::load(&data)?;
    let ds: PreparedDataset<f32> = prepare_dataset(&manifest, &model_cfg, &eval_codec)?;
    if ds.skipped > 0 {
        eprintln!("warning: skipped {} rows with unusable labels", ds.skipped);
    }
    let decode_cfg = DecodeConfig {
        scheme: cfg.scheme_enum(),
        refine_iters: cfg.refine,
    };
    let report = evaluate(&params, &model_cfg, &train_codec, &ds, decode_cfg, s_eval)?;
    print!("{}", report.render_records());
    print!("{}", report.render_summary());
    Ok(())
}

fn cmd_predict(args: &[String]) -> Result<(), CliError> {
    let allowed = ["checkpoint", "image", "config", "scheme", "refine", "charset"];
    let doc = [
        ("checkpoint", "trained checkpoint path (required)"),
        ("image", "PGM/PPM image path (required)"),
        ("config", "key=value config file"),
        ("scheme", "decoding scheme: ar | nar"),
        ("refine", "refinement iterations (default: ar 1, nar 2)"),
        ("charset", "evaluation charset size: 36 | 62 | 94"),
    ];
    let flags = parse_flags(args, &allowed)?;
    if flags.help {
        println!("{}", help_for("predict", &doc));
        return Ok(());
    }
    let mut cfg = effective_config(&flags)?;
    let ckpt = PathBuf::from(flags.require("checkpoint")?);
    let image_path = PathBuf::from(flags.require("image")?);
    let (model_cfg, params) = load_checkpoint(&ckpt)?;
    if flags.get("charset").is_none() {
        cfg.charset = model_cfg.charset_size;
    }
    print!("{}", cfg.render());
    let (_, s_eval) = load_eval_charset(&cfg, &model_cfg)?;
    let codec = TokenCodec::new(
        Charset::slice(model_cfg.charset_size)?,
        model_cfg.max_label_len,
    );
    let raw = crate::pipeline::read_netpbm(&image_path)?;
    let img: Vec<f32> = crate::pipeline::resize_to_model_input(&raw, &model_cfg);
    let out = match cfg.scheme_enum() {
        DecodeScheme::Ar => decode_ar(&params, &model_cfg, &codec, &img, cfg.refine, s_eval)?,
        DecodeScheme::Nar => decode_nar(&params, &model_cfg, &codec, &img, cfg.refine, s_eval)?,
    };
    println!("{}\t{:.6}", out.text, out.confidence);
    Ok(())
}

fn cmd_dump_masks(args: &[String]) -> Result<(), CliError> {
    let allowed = ["t", "perm", "kind", "role"];
    let doc = [
        ("t", "sequence length T (required)"),
        ("perm", "comma-separated factorization order, e.g. 2,3,1"),
        ("kind", "mask kind: perm | ltr | cloze | nar (default: perm with --perm, else ltr)"),
        ("role", "[E]-row role for perm masks: interior | ltr-first | rtl-second"),
    ];
    let flags = parse_flags(args, &allowed)?;
    if flags.help {
        println!("{}", help_for("dump-masks", &doc));
        return Ok(());
    }
    let t: usize = flags
        .require("t")?
        .parse()
        .map_err(|e| CliError::Usage(format!("bad value for --t: {e}")))?;
    if t == 0 {
        return Err(CliError::Usage("--t must be at least 1".into()));
    }
    let kind = flags
        .get("kind")
        .unwrap_or(if flags.get("perm").is_some() { "perm" } else { "ltr" });
    let role = match flags.get("role").unwrap_or("interior") {
        "interior" => MaskRole::Interior,
        "ltr-first" => MaskRole::LtrPairFirst,
        "rtl-second" => MaskRole::RtlPairSecond,
        other => {
            return Err(CliError::Usage(format!(
                "role must be interior | ltr-first | rtl-second, got '{other}'"
            )))
        }
    };
    let mask = match kind {
        "perm" => {
            let spec = flags
                .require("perm")
                .map_err(|_| CliError::Usage("--kind perm needs --perm".into()))?;
            let order: Vec<usize> = spec
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Usage(format!("bad --perm: {e}")))?;
            if order.len() != t {
                return Err(CliError::Usage(format!(
                    "--perm has {} entries, --t is {t}",
                    order.len()
                )));
            }
            let z = Permutation::new(order).map_err(|e| CliError::Usage(e.to_string()))?;
            mask_from_permutation(&z, role)
        }
        "ltr" => mask_from_permutation(&Permutation::identity(t), MaskRole::LtrPairFirst),
        "cloze" => cloze_mask(t),
        "nar" => AttentionMask::all_ones(t),
        other => {
            return Err(CliError::Usage(format!(
                "kind must be perm | ltr | cloze | nar, got '{other}'"
            )))
        }
    };
    print!("{}", mask.render());
    Ok(())
}

fn cmd_bench(args: &[String]) -> Result<(), CliError> {
    let allowed = ["checkpoint", "config", "preset", "charset", "seed", "lengths", "reps"];
    let doc = [
        ("checkpoint", "trained checkpoint (optional; random weights otherwise)"),
        ("config", "key=value config file"),
        ("preset", "model preset when no checkpoint is given"),
        ("charset", "charset size when no checkpoint is given"),
        ("seed", "weight seed when no checkpoint is given"),
        ("lengths", "comma-separated forced output lengths"),
        ("reps", "repetitions per point (default 10)"),
    ];
    let flags = parse_flags(args, &allowed)?;
    if flags.help {
        println!("{}", help_for("bench", &doc));
        return Ok(());
    }
    let cfg = effective_config(&flags)?;
    print!("{}", cfg.render());
    let (model_cfg, params): (ModelConfig, ModelParams<f32>) = match flags.get("checkpoint") {
        Some(path) => load_checkpoint(Path::new(path))?,
        None => {
            let mc = preset_config(&cfg)?;
            let p = ModelParams::init(&mc, &mut SplitMix64::new(cfg.seed))?;
            (mc, p)
        }
    };
    let lengths: Vec<usize> = match flags.get("lengths") {
        Some(spec) => spec
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Usage(format!("bad --lengths: {e}")))?,
        None => (1..=model_cfg.max_label_len).step_by(4).collect(),
    };
    let reps: usize = flags.parse_opt("reps")?.unwrap_or(10);
    let codec = TokenCodec::new(
        Charset::slice(model_cfg.charset_size)?,
        model_cfg.max_label_len,
    );
    let rows = latency_bench(&params, &model_cfg, &codec, &lengths, reps)?;
    print!("{}", render_bench_table(&rows));
    print!("{}", render_bench_tsv(&rows));
    Ok(())
}
