//! Command-line entry point for the diagd toolkit.
//!
//! Every subcommand emits machine-readable output carrying the flat config
//! header, so artifacts can be reloaded and revalidated. Exit codes: 0 on
//! success, 2 for argument errors, 3 for invalid configurations, 4 when a
//! dense matrix would exceed the position cap, 70 for broken internal
//! invariants, and 1 otherwise.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diagd::analysis::{
    calibrate_two_point, divergence, report_table, table_csv, table_json, throughput_estimate,
    throughput_estimate_ntp, CostModel, ThroughputReport,
};
use diagd::decode::{decode_diagd, decode_ntp, grid_json, ModelRef, Sampling};
use diagd::model::{LocalFieldModel, ParentOffset, TinyTransformer, TransformerConfig};
use diagd::{
    build_finetune_mask_capped, build_schedule, preset, speedup, step_count, ConfigHeader,
    DiagConfig, Error, GridGeometry, MaskOrder, PredecessorPolicy, Preset, TemporalDelay,
    TokenGrid, DEFAULT_MAX_POSITIONS,
};
use serde_json::json;

const POSITION_CAP_VAR: &str = "DIAGD_MAX_POSITIONS";

#[derive(Parser)]
#[command(
    name = "diagd",
    version,
    about = "Diagonal decode-order scheduling for autoregressive token grids"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct GeomArgs {
    /// Preset geometry (cosmos, wham, or mcar); conflicts with explicit
    /// geometry flags
    #[arg(
        long,
        conflicts_with_all = ["height", "width", "frames", "prompt_frames", "vocab"]
    )]
    preset: Option<String>,
    /// Token rows per frame
    #[arg(long, default_value_t = 6)]
    height: usize,
    /// Token columns per frame
    #[arg(long, default_value_t = 8)]
    width: usize,
    /// Generated frames
    #[arg(long, default_value_t = 4)]
    frames: usize,
    /// Prompt frames (fully visible context)
    #[arg(long, default_value_t = 1)]
    prompt_frames: usize,
    /// Vocabulary size
    #[arg(long, default_value_t = 16)]
    vocab: u32,
}

impl GeomArgs {
    fn resolve(&self) -> Result<GridGeometry, Error> {
        match &self.preset {
            Some(name) => {
                let p: Preset = name.parse()?;
                Ok(preset(p).0)
            }
            None => GridGeometry::new(
                self.frames,
                self.height,
                self.width,
                self.prompt_frames,
                self.vocab,
            ),
        }
    }
}

#[derive(Args)]
struct CfgArgs {
    /// Spatial window: previous-row tokens available before a token decodes
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Temporal delay in steps; the literal "h" resolves to k*height.
    /// Omitted = spatial-only (frames scheduled back to back)
    #[arg(long)]
    d: Option<String>,
    /// Predecessor policy for prediction queries (raster or temporal)
    #[arg(long, default_value = "temporal")]
    policy: String,
}

impl CfgArgs {
    fn resolve(&self, geom: &GridGeometry) -> Result<DiagConfig, Error> {
        let policy: PredecessorPolicy = self.policy.parse()?;
        let delay = match self.d.as_deref() {
            None => TemporalDelay::SpatialOnly,
            Some("h") => TemporalDelay::Overlap(self.k * geom.height),
            Some(raw) => {
                let d: usize = raw.parse().map_err(|_| {
                    Error::InvalidConfig(format!("bad --d value '{raw}' (expected a count or 'h')"))
                })?;
                TemporalDelay::Overlap(d)
            }
        };
        let cfg = DiagConfig::new(self.k, delay, policy);
        diagd::validate_config(geom, &cfg)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the diagonal step count
    Steps {
        #[command(flatten)]
        geom: GeomArgs,
        #[command(flatten)]
        cfg: CfgArgs,
    },
    /// Step-count table over preset configuration variants
    Table {
        /// Preset to tabulate; all presets when omitted
        #[arg(long)]
        preset: Option<String>,
        /// Append the published step counts for side-by-side diffing
        #[arg(long)]
        paper_compare: bool,
        /// Output encoding (csv or json)
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the full schedule (steps and wavefronts) as JSON
    Schedule {
        #[command(flatten)]
        geom: GeomArgs,
        #[command(flatten)]
        cfg: CfgArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the finetuning attention mask as PBM with a JSON sidecar
    Mask {
        #[command(flatten)]
        geom: GeomArgs,
        #[command(flatten)]
        cfg: CfgArgs,
        /// Row/column permutation: raster or schedule order
        #[arg(long, default_value = "raster")]
        order: String,
        /// PBM path; the sidecar lands next to it with a .json extension
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a token grid with either backend
    Decode {
        #[command(flatten)]
        geom: GeomArgs,
        #[command(flatten)]
        cfg: CfgArgs,
        /// Backend: lfm or tt
        #[arg(long, default_value = "lfm")]
        model: String,
        /// Decode order: ntp or diagd
        #[arg(long, default_value = "diagd")]
        mode: String,
        /// Sampling: greedy or stochastic
        #[arg(long, default_value = "greedy")]
        sampling: String,
        /// Sampling seed; also seeds the synthetic prompt
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Parent offsets for the lfm backend
        #[arg(long, default_value = "left,up,prev")]
        parents: String,
        /// Conditional seed for the lfm backend
        #[arg(long, default_value_t = 0)]
        model_seed: u64,
        /// Weight seed for the tt backend
        #[arg(long, default_value_t = 0)]
        weight_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare sequential and diagonal rollouts on the oracle model
    Compare {
        #[command(flatten)]
        geom: GeomArgs,
        #[command(flatten)]
        cfg: CfgArgs,
        /// Backend; only lfm has exact conditionals
        #[arg(long, default_value = "lfm")]
        model: String,
        #[arg(long, default_value = "left,up,prev")]
        parents: String,
        #[arg(long, default_value_t = 0)]
        model_seed: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        rollouts: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Wall-clock estimates under an affine cost model
    Bench {
        #[command(flatten)]
        geom: GeomArgs,
        #[command(flatten)]
        cfg: CfgArgs,
        /// Fixed cost of one forward pass
        #[arg(long, default_value_t = 1.0)]
        overhead: f64,
        /// Marginal cost per query slot
        #[arg(long, default_value_t = 0.0)]
        cost_per_token: f64,
        /// Tokens per reported frame (default: h*w)
        #[arg(long)]
        tokens_per_frame: Option<usize>,
        /// Calibrate overhead and per-token cost to hit these frame rates
        /// (ntp,diagd) instead of using the flags above
        #[arg(long, value_delimiter = ',')]
        fit_fps: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean attention map of one frame on the toy transformer
    Attn {
        #[command(flatten)]
        geom: GeomArgs,
        #[command(flatten)]
        cfg: CfgArgs,
        /// Generated frame whose queries are dumped
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        weight_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Lib(Error),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Lib(Error::InvalidConfig(_)) => 3,
        CliError::Lib(Error::ResourceCap { .. }) => 4,
        CliError::Lib(Error::Internal(_)) => 70,
        _ => 1,
    }
}

fn position_cap() -> Result<usize, Error> {
    match std::env::var(POSITION_CAP_VAR) {
        Ok(raw) => raw.parse().map_err(|_| {
            Error::InvalidConfig(format!(
                "{POSITION_CAP_VAR}='{raw}' is not a position count"
            ))
        }),
        Err(_) => Ok(DEFAULT_MAX_POSITIONS),
    }
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, content)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
            if !content.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn parse_parents(raw: &str) -> Result<Vec<ParentOffset>, Error> {
    raw.split(',')
        .filter(|s| !s.is_empty())
        .map(ParentOffset::parse)
        .collect()
}

fn throughput_json(r: &ThroughputReport) -> serde_json::Value {
    json!({
        "steps": r.steps,
        "total_time": r.total_time,
        "fps": r.fps,
        "tokens_per_second": r.tokens_per_second,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Steps { geom, cfg } => {
            let geom = geom.resolve()?;
            let cfg = cfg.resolve(&geom)?;
            println!("{}", step_count(&geom, &cfg)?);
            Ok(())
        }
        Cmd::Table {
            preset: which,
            paper_compare,
            format,
            out,
        } => {
            let presets: Vec<Preset> = match which {
                Some(name) => vec![name.parse()?],
                None => Preset::ALL.to_vec(),
            };
            let rows = report_table(&presets)?;
            let rendered = match format.as_str() {
                "csv" => table_csv(&rows, paper_compare),
                "json" => serde_json::to_string_pretty(&table_json(&rows, paper_compare))
                    .expect("table serializes"),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown format '{other}' (expected csv or json)"
                    ))
                    .into())
                }
            };
            emit(&out, &rendered)
        }
        Cmd::Schedule { geom, cfg, out } => {
            let geom = geom.resolve()?;
            let cfg = cfg.resolve(&geom)?;
            let sched = build_schedule(&geom, &cfg)?;
            let rendered = serde_json::to_string(&sched.to_json()).expect("schedule serializes");
            emit(&out, &rendered)
        }
        Cmd::Mask {
            geom,
            cfg,
            order,
            out,
        } => {
            let geom = geom.resolve()?;
            let cfg = cfg.resolve(&geom)?;
            let order: MaskOrder = order.parse()?;
            let sched = build_schedule(&geom, &cfg)?;
            let mask = build_finetune_mask_capped(&sched, position_cap()?)?;
            let mut pbm = Vec::new();
            mask.write_pbm(&mut pbm, &sched, order)?;
            fs::write(&out, &pbm)?;
            let sidecar = out.with_extension("json");
            fs::write(
                &sidecar,
                serde_json::to_string(&mask.sidecar_json(order)).expect("sidecar serializes"),
            )?;
            eprintln!(
                "wrote {} ({} positions) and {}",
                out.display(),
                mask.size(),
                sidecar.display()
            );
            Ok(())
        }
        Cmd::Decode {
            geom,
            cfg,
            model,
            mode,
            sampling,
            seed,
            parents,
            model_seed,
            weight_seed,
            out,
        } => {
            let geom = geom.resolve()?;
            let cfg = cfg.resolve(&geom)?;
            let sampling: Sampling = sampling.parse()?;
            let prompt = TokenGrid::seeded_prompt(geom, seed);
            let header = ConfigHeader::new(&geom, &cfg)?;

            let lfm_model;
            let tt_model;
            let model_ref = match model.as_str() {
                "lfm" => {
                    lfm_model =
                        LocalFieldModel::new(geom.vocab, parse_parents(&parents)?, model_seed)?;
                    ModelRef::LocalField(&lfm_model)
                }
                "tt" => {
                    tt_model =
                        TinyTransformer::new(TransformerConfig::small(geom.vocab, weight_seed))?;
                    ModelRef::Transformer(&tt_model)
                }
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown model '{other}' (expected lfm or tt)"
                    ))
                    .into())
                }
            };

            let (grid, report) = match mode.as_str() {
                "ntp" => decode_ntp(model_ref, &prompt, sampling, seed)?,
                "diagd" => {
                    let sched = build_schedule(&geom, &cfg)?;
                    decode_diagd(model_ref, &prompt, &sched, cfg.policy, sampling, seed)?
                }
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown mode '{other}' (expected ntp or diagd)"
                    ))
                    .into())
                }
            };
            let mut doc = grid_json(&grid, &header, Some(&report));
            doc["model"] = model_ref.spec_json();
            doc["mode"] = json!(mode);
            doc["seed"] = json!(seed);
            let rendered = serde_json::to_string(&doc).expect("grid serializes");
            emit(&out, &rendered)
        }
        Cmd::Compare {
            geom,
            cfg,
            model,
            parents,
            model_seed,
            seed,
            rollouts,
            out,
        } => {
            let geom = geom.resolve()?;
            let cfg = cfg.resolve(&geom)?;
            if model != "lfm" {
                return Err(Error::UnsupportedBackend(format!(
                    "compare needs exact conditionals; got '{model}'"
                ))
                .into());
            }
            let lfm = LocalFieldModel::new(geom.vocab, parse_parents(&parents)?, model_seed)?;
            let report = divergence(
                ModelRef::LocalField(&lfm),
                &geom,
                &cfg,
                cfg.policy,
                rollouts,
                seed,
            )?;
            let mut doc = report.to_json();
            doc["config"] = serde_json::to_value(ConfigHeader::new(&geom, &cfg)?).unwrap();
            doc["model"] = lfm.spec_json();
            doc["seed"] = json!(seed);
            let rendered = serde_json::to_string_pretty(&doc).expect("report serializes");
            emit(&out, &rendered)
        }
        Cmd::Bench {
            geom,
            cfg,
            overhead,
            cost_per_token,
            tokens_per_frame,
            fit_fps,
            out,
        } => {
            let geom = geom.resolve()?;
            let cfg = cfg.resolve(&geom)?;
            let tpf = tokens_per_frame.unwrap_or_else(|| geom.tokens_per_frame());
            let cost = match fit_fps {
                Some(targets) => {
                    if targets.len() != 2 {
                        return Err(Error::InvalidConfig(
                            "--fit-fps takes exactly two values: ntp,diagd".into(),
                        )
                        .into());
                    }
                    calibrate_two_point(&geom, &cfg, tpf, targets[0], targets[1])?
                }
                None => CostModel::new(overhead, cost_per_token, tpf)?,
            };
            let ntp = throughput_estimate_ntp(&cost, &geom)?;
            let diag = throughput_estimate(&cost, &geom, &cfg)?;
            let ratios = speedup(&geom, &cfg)?;
            let doc = json!({
                "config": ConfigHeader::new(&geom, &cfg)?,
                "cost_model": {
                    "overhead_per_step": cost.overhead_per_step,
                    "cost_per_token": cost.cost_per_token,
                    "tokens_per_frame": cost.tokens_per_frame,
                },
                "ntp": throughput_json(&ntp),
                "diagd": throughput_json(&diag),
                "fps_ratio": diag.fps / ntp.fps,
                "step_ratio": ratios.ratio_exact,
            });
            let rendered = serde_json::to_string_pretty(&doc).expect("bench serializes");
            emit(&out, &rendered)
        }
        Cmd::Attn {
            geom,
            cfg,
            frame,
            seed,
            weight_seed,
            out,
        } => {
            let geom = geom.resolve()?;
            let cfg = cfg.resolve(&geom)?;
            let sched = build_schedule(&geom, &cfg)?;
            let model = TinyTransformer::new(TransformerConfig::small(geom.vocab, weight_seed))?;
            let prompt = TokenGrid::seeded_prompt(geom, seed);
            let (grid, _) = decode_diagd(
                ModelRef::Transformer(&model),
                &prompt,
                &sched,
                cfg.policy,
                Sampling::Stochastic,
                seed,
            )?;
            let dump = model.attention_dump_capped(&sched, &grid, frame, position_cap()?)?;
            if let Some(path) = &out {
                let sidecar = path.with_extension("json");
                let doc = json!({
                    "config": ConfigHeader::new(&geom, &cfg)?,
                    "model": model.spec_json(),
                    "frame": frame,
                    "queries": dump.query_globals.len(),
                    "context": geom.total_positions(),
                });
                fs::write(
                    &sidecar,
                    serde_json::to_string(&doc).expect("sidecar serializes"),
                )?;
            }
            emit(&out, &dump.to_csv())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
