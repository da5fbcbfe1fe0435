//! Subcommand implementations.

use std::path::{Path, PathBuf};

use w2lp_core::audio::read_wav;
use w2lp_core::ctc::{Charset, DecodeParams};
use w2lp_core::dataset::{Manifest, Origin};
use w2lp_core::lm::{load_arpa, ArpaModel};
use w2lp_core::metrics;
use w2lp_core::net::{build_model, Network};
use w2lp_core::synth::{build_synthetic_manifest, default_voices, SynthConfig, TempoVariant};
use w2lp_core::train::{
    parse_kv, parse_ratio, transcribe_features, transcribe_waveforms, Checkpoint, RunConfig,
    TrainInputs,
};
use w2lp_core::audio::{normalize_features, FeatureExtractor};

use crate::error::CliError;
use crate::{DecodeArgs, EvalArgs, SynthArgs, TrainArgs};

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let charset = Charset::default();
    let text = std::fs::read_to_string(&args.transcripts).map_err(|e| {
        CliError::new(
            "io",
            format!("cannot read transcripts {}: {e}", args.transcripts.display()),
        )
    })?;
    let transcripts: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if transcripts.is_empty() {
        return Err(CliError::new(
            "data",
            format!("no transcripts in {}", args.transcripts.display()),
        ));
    }

    let tempos: Vec<TempoVariant> = parse_list(&args.tempos, "tempos")?
        .into_iter()
        .map(|tempo| TempoVariant { tempo })
        .collect();
    let all_voices = default_voices();
    let mut voices = Vec::new();
    for idx in parse_list::<usize>(&args.voices, "voices")? {
        let v = all_voices
            .get(idx)
            .ok_or_else(|| CliError::config(format!("voice index {idx} out of range (0..=2)")))?;
        voices.push(v.clone());
    }
    let origin: Origin = args
        .origin
        .parse()
        .map_err(|e: String| CliError::config(e))?;

    let manifest = build_synthetic_manifest(
        &transcripts,
        &voices,
        &tempos,
        &args.out,
        args.seed,
        origin,
        &SynthConfig::default(),
        &charset,
    )?;
    let manifest_path = args.out.join("manifest.tsv");
    manifest.save(&manifest_path)?;
    println!("{} utterances written", manifest.len());
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<T>()
                .map_err(|_| CliError::config(format!("bad {what} entry {p:?}")))
        })
        .collect()
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let charset = Charset::default();
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        CliError::new(
            "io",
            format!("cannot read config {}: {e}", args.config.display()),
        )
    })?;
    let mut map = parse_kv(&text).map_err(CliError::from)?;

    // path keys live beside the run configuration
    let natural_path = map.remove("data.natural").map(PathBuf::from);
    let synthetic_path = map.remove("data.synthetic").map(PathBuf::from);
    let dev_path = map.remove("data.dev").map(PathBuf::from);
    let out_key = map.remove("out.dir").map(PathBuf::from);

    let mut cfg = RunConfig::from_map(&mut map).map_err(CliError::from)?;
    if let Some(key) = map.keys().next() {
        return Err(CliError::config(format!("unknown key {key:?}")));
    }
    // flags win over the config file
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(ratio) = &args.ratio {
        cfg.train.p_natural = parse_ratio(ratio).map_err(CliError::from)?;
    }
    let out_dir = args
        .out
        .or(out_key)
        .ok_or_else(|| CliError::config("no output directory (set out.dir or --out)"))?;

    // validate referenced paths before any work
    for (key, path) in [
        ("data.natural", &natural_path),
        ("data.synthetic", &synthetic_path),
        ("data.dev", &dev_path),
    ] {
        if let Some(p) = path {
            if !p.exists() {
                return Err(CliError::new(
                    "io",
                    format!("{key} path does not exist: {}", p.display()),
                ));
            }
        }
    }
    if let Some(r) = &args.resume {
        if !r.exists() {
            return Err(CliError::new(
                "io",
                format!("resume checkpoint does not exist: {}", r.display()),
            ));
        }
    }

    let load = |p: &Option<PathBuf>| -> Result<Manifest, CliError> {
        match p {
            Some(p) => Ok(Manifest::load(p, &charset)?),
            None => Ok(Manifest::default()),
        }
    };
    let natural = load(&natural_path)?;
    let synthetic = load(&synthetic_path)?;
    let dev = dev_path.as_ref().map(|p| Manifest::load(p, &charset)).transpose()?;

    let report = w2lp_core::train::train_run(
        &TrainInputs {
            natural: &natural,
            synthetic: &synthetic,
            dev: dev.as_ref(),
        },
        &cfg,
        &charset,
        &out_dir,
        args.resume.as_deref(),
    )?;

    for line in &report.metrics_lines {
        println!("{line}");
    }
    println!(
        "trained {} steps; final loss {:.4}; skipped {}; checkpoint {}",
        report.steps_run,
        report.final_train_loss,
        report.skipped_items,
        report.final_checkpoint.display()
    );
    if let Some(w) = report.final_dev_wer {
        println!("dev greedy WER {w:.2}%");
    }
    Ok(())
}

/// Rebuild the network and front end recorded inside a checkpoint.
fn load_model(path: &Path) -> Result<(Network<f32>, FeatureExtractor, RunConfig), CliError> {
    let ck = Checkpoint::load(path)?;
    let cfg = RunConfig::parse(&ck.config_text).map_err(|e| {
        CliError::new("ckpt", format!("embedded config is unreadable: {e}"))
    })?;
    let mut net = build_model::<f32>(&cfg.model, cfg.train.seed)?;
    ck.restore(&mut net)?;
    let extractor = FeatureExtractor::new(cfg.feature.clone())?;
    Ok((net, extractor, cfg))
}

fn decode_params<'a>(
    lm: &'a Option<ArpaModel>,
    width: Option<usize>,
    alpha: f64,
    beta: f64,
) -> Option<DecodeParams<'a>> {
    width.map(|w| DecodeParams {
        width: w,
        lm: lm.as_ref(),
        lm_alpha: alpha,
        word_bonus: beta,
    })
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let charset = Charset::default();
    let (net, extractor, cfg) = load_model(&args.checkpoint)?;
    let manifest = Manifest::load(&args.manifest, &charset)?;
    if manifest.is_empty() {
        return Err(CliError::new(
            "data",
            format!("manifest {} is empty", args.manifest.display()),
        ));
    }
    let lm = args.lm.as_ref().map(load_arpa).transpose()?;
    let params = decode_params(&lm, args.width, args.alpha, args.beta);

    let feats = manifest
        .entries()
        .iter()
        .map(|u| {
            let w = read_wav(&u.audio_path)?;
            Ok(normalize_features(&extractor.compute(&w)?))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let hyps = transcribe_features(&net, &feats, &charset, params.as_ref(), cfg.train.batch_size)?;

    let pairs: Vec<(&str, &str)> = manifest
        .entries()
        .iter()
        .map(|u| u.transcript.as_str())
        .zip(hyps.iter().map(|h| h.as_str()))
        .collect();
    let wer = metrics::wer(&pairs).unwrap_or(f64::NAN);
    let cer = metrics::cer(&pairs).unwrap_or(f64::NAN);
    let mode = match args.width {
        Some(w) => format!("beam width {w}{}", if lm.is_some() { " + lm" } else { "" }),
        None => "greedy".to_string(),
    };
    println!("{} utterances, {mode}", manifest.len());
    println!("WER {wer:.2}%");
    println!("CER {cer:.2}%");
    Ok(())
}

pub fn decode(args: DecodeArgs) -> Result<(), CliError> {
    let charset = Charset::default();
    let (net, extractor, cfg) = load_model(&args.checkpoint)?;
    let wave = read_wav(&args.wav)?;
    let lm = args.lm.as_ref().map(load_arpa).transpose()?;
    let params = decode_params(&lm, args.width, args.alpha, args.beta);
    let hyps = transcribe_waveforms(
        &net,
        &extractor,
        std::slice::from_ref(&wave),
        &charset,
        params.as_ref(),
        cfg.train.batch_size,
    )?;
    println!("{}", hyps[0]);
    Ok(())
}
