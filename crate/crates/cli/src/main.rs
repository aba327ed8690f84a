//! `desom`: synthesize data, extract stamps, train, evaluate and serve.

use std::fs;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use desom_core::desom::{
    load_model, preset, save_model, stamps_tensor, train_autoencoder_stage, train_combined, train_separate,
    train_som_stage, DesomModel, TrainConfig, PRESET_NAMES,
};
use desom_core::eval::{
    confusion_rates, figure_of_merit, majority_selection, order_cells_by_percentile, ratio_map, roc_switch_off,
    fit_scorer, LabeledCells, PvSelection, ReferenceScorer, ScorerConfig,
};
use desom_core::formats::{load_frame, load_stamps, save_frame, save_stamps};
use desom_core::stamps::{
    build_stamp_set, fit_offset_threshold, ExtractConfig, ExtractionMode, OffsetFit, OffsetPair, Stamp, STAMP_SIDE,
};
use desom_core::synth::{label_from_truth, synth_field, synth_stamp_set, FieldConfig, ObjectKind, StampSetConfig, TruthObject};
use desom_serve::{contact_sheet, AppState, ServeOptions};

#[derive(Parser)]
#[command(name = "desom", version, about = "Real/bogus classification of difference-image stamps with an autoencoder and a self-organizing map")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic frames or labeled stamp sets.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Detect sources on a frame pair and cut normalized stamps.
    Extract(ExtractArgs),
    /// Fit the magnitude-dependent cross-match radius to offset pairs.
    FitOffset(FitOffsetArgs),
    /// Train the autoencoder and initialize (but not train) the map.
    TrainAe(TrainAeArgs),
    /// Train the map of an existing model on its frozen latents.
    TrainSom(TrainSomArgs),
    /// Train a full model, separately or jointly.
    TrainDesom(TrainDesomArgs),
    /// Render the decoded prototypes as one PNG contact sheet.
    DecodeMap(DecodeMapArgs),
    /// MDR and FPR of a selection on a labeled stamp set.
    Evaluate(EvaluateArgs),
    /// Switch-off curve for one percentile ordering, as CSV.
    Roc(RocArgs),
    /// Per-cell ratio of real to bogus landing probability, as JSON.
    RatioMap(RatioMapArgs),
    /// Serve the inspector HTTP API on 127.0.0.1.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum SynthCommand {
    /// A labeled STMP set of real and bogus archetypes.
    Stamps {
        #[arg(long)]
        real: usize,
        #[arg(long)]
        bogus: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// StampSetConfig JSON; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Science, reference and difference IMGF frames plus a truth catalog.
    Field {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// FieldConfig JSON; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Dc,
    Sc,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    science: PathBuf,
    #[arg(long)]
    difference: PathBuf,
    #[arg(long, value_enum, default_value = "sc")]
    mode: Mode,
    #[arg(long)]
    out: PathBuf,
    /// ExtractConfig JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k_sigma: Option<f64>,
    /// OffsetFit JSON from `fit-offset`; defaults to the survey fit.
    #[arg(long)]
    offset_fit: Option<PathBuf>,
    /// Where to write the science/difference offset pairs (SC mode).
    #[arg(long)]
    pairs_out: Option<PathBuf>,
    /// Truth catalog from `synth field`; stamps are labeled from it.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Pixel distance within which a transient makes a stamp real.
    #[arg(long, default_value_t = 3.0)]
    label_radius: f64,
}

#[derive(Args)]
struct FitOffsetArgs {
    /// JSON array of {"magnitude", "offset"} pairs.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "desk-8x8")]
    preset: String,
    /// TrainConfig JSON; replaces the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    t_min: Option<f64>,
    /// SOM iterations.
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args)]
struct TrainAeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct TrainSomArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainMode {
    Separate,
    Combined,
}

#[derive(Args)]
struct TrainDesomArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "separate")]
    mode: TrainMode,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct DecodeMapArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labeled stamps to evaluate on.
    #[arg(long)]
    data: PathBuf,
    /// Selection JSON.
    #[arg(long, conflicts_with = "majority_from", required_unless_present = "majority_from")]
    selection: Option<PathBuf>,
    /// Build the selection from the cells whose members in this set are majority real.
    #[arg(long)]
    majority_from: Option<PathBuf>,
    /// Where to write the selection that was evaluated.
    #[arg(long)]
    save_selection: Option<PathBuf>,
}

#[derive(Args)]
struct RocArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labeled stamps the rates are computed on.
    #[arg(long)]
    data: PathBuf,
    /// Percentile of member scores that orders the cells.
    #[arg(long, default_value_t = 50.0)]
    q: f64,
    /// Labeled stamps that train the reference scorer and order the cells; defaults to --data.
    #[arg(long)]
    scorer_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    scorer_seed: u64,
    /// Hidden units of an MLP reference scorer; 0 uses logistic regression.
    #[arg(long, default_value_t = 0)]
    scorer_hidden: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RatioMapArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Selection file that POSTs are saved to and that is loaded at startup.
    #[arg(long)]
    selection: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    scorer_seed: u64,
    /// Hidden units of an MLP reference scorer; 0 uses logistic regression.
    #[arg(long, default_value_t = 0)]
    scorer_hidden: usize,
}

/// Truth catalog row on disk. Artifacts have no magnitude.
#[derive(Serialize, Deserialize)]
struct TruthRow {
    kind: ObjectKind,
    x: f64,
    y: f64,
    flux: f64,
    magnitude: Option<f64>,
}

impl From<&TruthObject> for TruthRow {
    fn from(t: &TruthObject) -> Self {
        TruthRow {
            kind: t.kind,
            x: t.x,
            y: t.y,
            flux: t.flux,
            magnitude: t.magnitude.is_finite().then_some(t.magnitude),
        }
    }
}

impl From<TruthRow> for TruthObject {
    fn from(r: TruthRow) -> Self {
        TruthObject {
            kind: r.kind,
            x: r.x,
            y: r.y,
            flux: r.flux,
            magnitude: r.magnitude.unwrap_or(f64::NAN),
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn read_stamps(path: &Path) -> Result<Vec<Stamp>> {
    let stamps = load_stamps(path).with_context(|| format!("loading stamps from {}", path.display()))?;
    ensure!(!stamps.is_empty(), "{} holds no stamps", path.display());
    Ok(stamps)
}

fn read_model(path: &Path) -> Result<DesomModel> {
    load_model(path).with_context(|| format!("loading model from {}", path.display()))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => read_json(p)?,
            None => preset(&self.preset).with_context(|| format!("presets: {}", PRESET_NAMES.join(", ")))?,
        }
        .with_seed(self.seed);
        if let Some(v) = self.epochs {
            cfg.ae.epochs = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.t0 {
            cfg.schedule.t0 = v;
        }
        if let Some(v) = self.t_min {
            cfg.schedule.t_min = v;
        }
        if let Some(v) = self.iterations {
            cfg.schedule.n_iters = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn synth(cmd: SynthCommand) -> Result<()> {
    match cmd {
        SynthCommand::Stamps {
            real,
            bogus,
            seed,
            out,
            config,
        } => {
            let cfg: StampSetConfig = config.as_deref().map(read_json).transpose()?.unwrap_or_default();
            let stamps = synth_stamp_set(&cfg, real, bogus, seed)?;
            save_stamps(&out, &stamps)?;
            print_json(&serde_json::json!({ "stamps": stamps.len(), "real": real, "bogus": bogus }))
        }
        SynthCommand::Field { seed, out_dir, config } => {
            let mut cfg: FieldConfig = config.as_deref().map(read_json).transpose()?.unwrap_or_default();
            cfg.seed = seed;
            let field = synth_field(&cfg)?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            save_frame(out_dir.join("science.imgf"), &field.science)?;
            save_frame(out_dir.join("reference.imgf"), &field.reference)?;
            save_frame(out_dir.join("difference.imgf"), &field.difference)?;
            let truth: Vec<TruthRow> = field.truth.iter().map(TruthRow::from).collect();
            write_json(&out_dir.join("truth.json"), &truth)?;
            print_json(&serde_json::json!({ "objects": truth.len(), "width": cfg.width, "height": cfg.height }))
        }
    }
}

fn extract(a: ExtractArgs) -> Result<()> {
    let science = load_frame(&a.science).with_context(|| format!("loading {}", a.science.display()))?;
    let difference = load_frame(&a.difference).with_context(|| format!("loading {}", a.difference.display()))?;
    let mut cfg: ExtractConfig = a.config.as_deref().map(read_json).transpose()?.unwrap_or_default();
    if let Some(k) = a.k_sigma {
        cfg.k_sigma = k;
    }
    let fit: OffsetFit = a.offset_fit.as_deref().map(read_json).transpose()?.unwrap_or_default();
    let mode = match a.mode {
        Mode::Dc => ExtractionMode::Dc,
        Mode::Sc => ExtractionMode::Sc,
    };
    let mut ex = build_stamp_set(&science, &difference, mode, &fit, &cfg)?;
    if let Some(p) = &a.truth {
        let rows: Vec<TruthRow> = read_json(p)?;
        let truth: Vec<TruthObject> = rows.into_iter().map(TruthObject::from).collect();
        label_from_truth(&mut ex.stamps, &truth, a.label_radius);
    }
    save_stamps(&a.out, &ex.stamps)?;
    if let Some(p) = &a.pairs_out {
        write_json(p, &ex.pairs)?;
    }
    print_json(&serde_json::json!({
        "stamps": ex.stamps.len(),
        "science_detections": ex.n_science,
        "difference_detections": ex.n_difference,
        "pairs": ex.pairs.len(),
    }))
}

fn fit_offset(a: FitOffsetArgs) -> Result<()> {
    let pairs: Vec<OffsetPair> = read_json(&a.pairs)?;
    let report = fit_offset_threshold(&pairs)?;
    write_json(&a.out, &report.fit)?;
    print_json(&report)
}

fn train_ae(a: TrainAeArgs) -> Result<()> {
    let cfg = a.train.config()?;
    let data = stamps_tensor(&read_stamps(&a.data)?)?;
    let (model, history) = train_autoencoder_stage(&data, &cfg)?;
    save_model(&a.out, &model)?;
    print_json(&serde_json::json!({ "m": model.m(), "d": model.d(), "ae_loss": history }))
}

fn train_som(a: TrainSomArgs) -> Result<()> {
    let cfg = a.train.config()?;
    let mut model = read_model(&a.model)?;
    let data = stamps_tensor(&read_stamps(&a.data)?)?;
    let history = train_som_stage(&mut model, &data, &cfg)?;
    save_model(&a.out, &model)?;
    let qe: Vec<[f64; 2]> = history.iter().map(|p| [p.iteration as f64, p.quantization_error]).collect();
    print_json(&serde_json::json!({ "m": model.m(), "d": model.d(), "quantization_error": qe }))
}

fn train_desom(a: TrainDesomArgs) -> Result<()> {
    let cfg = a.train.config()?;
    let data = stamps_tensor(&read_stamps(&a.data)?)?;
    let summary = match a.mode {
        TrainMode::Separate => {
            let fit = train_separate(&data, &cfg)?;
            save_model(&a.out, &fit.model)?;
            let qe = fit.qe_history.last().map(|p| p.quantization_error);
            serde_json::json!({
                "mode": "separate",
                "ae_loss": fit.ae_history,
                "final_quantization_error": qe,
                "ae_checksum": fit.checksum_after_som,
            })
        }
        TrainMode::Combined => {
            let fit = train_combined(&data, &cfg)?;
            save_model(&a.out, &fit.model)?;
            let last = fit.history.last();
            serde_json::json!({
                "mode": "combined",
                "final_total": last.map(|p| p.total),
                "final_reconstruction": last.map(|p| p.reconstruction),
                "final_som": last.map(|p| p.som),
            })
        }
    };
    print_json(&summary)
}

fn decode_map(a: DecodeMapArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let pvs = model.decode_prototypes()?;
    let tiles: Vec<&[f32]> = pvs.samples().collect();
    let png = contact_sheet(&tiles, STAMP_SIDE as u32, model.m() as u32, 1);
    fs::write(&a.out, png).with_context(|| format!("writing {}", a.out.display()))
}

fn labeled_cells(model: &DesomModel, path: &Path) -> Result<LabeledCells> {
    Ok(LabeledCells::from_stamps(model, &read_stamps(path)?)?)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let sel = match (&a.selection, &a.majority_from) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            PvSelection::from_json(&text)?
        }
        (None, Some(p)) => majority_selection(&labeled_cells(&model, p)?),
        (None, None) => bail!("give --selection or --majority-from"),
    };
    ensure!(sel.m() == model.m(), "selection is for a {0}x{0} map, the model's is {1}x{1}", sel.m(), model.m());
    let rates = confusion_rates(&sel, &labeled_cells(&model, &a.data)?)?;
    if let Some(p) = &a.save_selection {
        fs::write(p, sel.to_json()).with_context(|| format!("writing {}", p.display()))?;
    }
    print_json(&serde_json::json!({ "mdr": rates.mdr, "fpr": rates.fpr, "selected": sel.len() }))
}

fn roc(a: RocArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let eval_cells = labeled_cells(&model, &a.data)?;
    let scorer_stamps = read_stamps(a.scorer_data.as_deref().unwrap_or(&a.data))?;
    let data = stamps_tensor(&scorer_stamps)?;
    let latents = model.encode(&data)?;
    let labels: Vec<_> = scorer_stamps.iter().map(|s| s.label).collect();
    let cfg = ScorerConfig {
        hidden: a.scorer_hidden,
        ..ScorerConfig::default()
    };
    let scorer = fit_scorer(&latents, model.d(), &labels, a.scorer_seed, &cfg)?;
    let scores: Vec<f64> = latents.chunks_exact(model.d()).map(|z| scorer.score(z)).collect();
    let cells = model.som.assign(&latents)?;
    let order = order_cells_by_percentile(&cells, &scores, model.m(), a.q)?;
    let curve = roc_switch_off(&order, &eval_cells, Some(a.q))?;
    eprintln!("scorer: {}", scorer.provenance());
    eprintln!("MDR at FPR 1%: {}", figure_of_merit(&curve));
    write_output(a.out.as_deref(), &curve.to_csv())
}

fn ratio(a: RatioMapArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let map = ratio_map(&labeled_cells(&model, &a.data)?)?;
    let text = serde_json::to_string(&map.grid())? + "\n";
    write_output(a.out.as_deref(), &text)
}

fn serve(a: ServeArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let stamps = read_stamps(&a.data)?;
    let opts = ServeOptions {
        selection_path: a.selection,
        scorer_seed: a.scorer_seed,
        scorer: ScorerConfig {
            hidden: a.scorer_hidden,
            ..ScorerConfig::default()
        },
    };
    let state = AppState::new(&model, stamps, opts)?;
    let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, a.port));
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("serving on http://{addr}");
    rt.block_on(desom_serve::serve(state, addr)).with_context(|| format!("serving on {addr}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => synth(c),
        Command::Extract(a) => extract(a),
        Command::FitOffset(a) => fit_offset(a),
        Command::TrainAe(a) => train_ae(a),
        Command::TrainSom(a) => train_som(a),
        Command::TrainDesom(a) => train_desom(a),
        Command::DecodeMap(a) => decode_map(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Roc(a) => roc(a),
        Command::RatioMap(a) => ratio(a),
        Command::Serve(a) => serve(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
