use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use echoloop_core::corpus::{
    generate_synthetic_corpus, ingest, load_annotations, read_jsonl, AlignedLine, ClipRecord, SpectroConfig,
    SyntheticCorpusSpec,
};
use echoloop_core::evalsuite::{eval_impact, eval_precision, export_listening_pairs};
use echoloop_core::latent_gan::{self, FusionMode, GanConfig, GanModel, GanTrainConfig};
use echoloop_core::pipeline::{self, load_spectrograms, PipelineConfig};
use echoloop_core::retrieval::LatentIndex;
use echoloop_core::session::SessionModels;
use echoloop_core::spec_vae::{self, SpecVae, SpecVaeConfig, SpecVaeTrainConfig};
use echoloop_core::text_cvae::{self, aligned_pairs, TextCvae, TextCvaeConfig, TextTrainConfig, Vocabulary};
use echoloop_neural::SessionRng;
use echoloop_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "echoloop", about = "Lyric and music generative stream")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a clip catalogue.
    Corpus {
        #[command(subcommand)]
        command: CorpusCmd,
    },
    TrainSpec {
        /// Corpus directory containing manifest.jsonl.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    TrainText {
        #[arg(long)]
        aligned: PathBuf,
        #[arg(long)]
        spec_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to manifest.jsonl beside the aligned file.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Encode consecutive clips and their lines into GAN training triples.
    BuildTriples {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        aligned: PathBuf,
        #[arg(long)]
        spec_ckpt: PathBuf,
        #[arg(long)]
        text_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        tau: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    TrainGan {
        #[arg(long)]
        triples: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Fusion::Add)]
        fusion: Fusion,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    Index {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        spec_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// 0 stores posterior means.
        #[arg(long, default_value_t = 1.0)]
        tau: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate the synthetic corpus and train every model into one directory.
    TrainAll {
        #[arg(long)]
        out: PathBuf,
        /// Pipeline settings as TOML; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve the stream.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    Eval {
        #[arg(value_enum)]
        what: EvalKind,
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        per_family: usize,
        #[arg(long, default_value_t = 16)]
        clips: usize,
    },
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Fusion {
    Add,
    Hadamard,
    Weighted,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalKind {
    Precision,
    Impact,
    Pairs,
}

fn dir_of(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

fn read_manifest(path: &Path) -> Result<Vec<ClipRecord>> {
    read_jsonl(path).with_context(|| format!("reading manifest {}", path.display()))
}

fn posteriors(
    manifest: &[ClipRecord],
    corpus_dir: &Path,
    vae: &SpecVae,
) -> Result<Vec<echoloop_core::LatentDistribution>> {
    let specs = load_spectrograms(manifest, corpus_dir, &SpectroConfig::default())?;
    Ok(specs.iter().map(|s| vae.encode(s)).collect::<echoloop_core::Result<_>>()?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn conditioning_clips(cfg: &ServiceConfig, models: &SessionModels) -> Vec<String> {
    if !cfg.eval.clips.is_empty() {
        return cfg.eval.clips.clone();
    }
    models
        .manifest
        .iter()
        .step_by(cfg.eval.stride.max(1))
        .map(|r| r.clip_id.clone())
        .collect()
}

async fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Corpus {
            command: CorpusCmd::Synth {
                seed,
                out,
                per_family,
                clips,
            },
        } => {
            let spec = SyntheticCorpusSpec {
                drone: per_family,
                percussion: per_family,
                keyboard: per_family,
                clips_per_composition: clips,
                seed,
                ..Default::default()
            };
            let corpus = generate_synthetic_corpus(&spec)?;
            corpus.write(&out, &SpectroConfig::default())?;
            println!("wrote {} clips to {}", corpus.manifest.len(), out.display());
        }
        Cmd::Corpus {
            command: CorpusCmd::Ingest { input, annotations, out },
        } => {
            let ann = load_annotations(&annotations)?;
            let records = ingest(&input, &ann, &out, &SpectroConfig::default())?;
            println!("ingested {} clips into {}", records.len(), out.display());
        }
        Cmd::TrainSpec {
            corpus,
            out,
            epochs,
            batch,
            lr,
            seed,
        } => {
            let manifest = read_manifest(&corpus.join("manifest.jsonl"))?;
            let specs = load_spectrograms(&manifest, &corpus, &SpectroConfig::default())?;
            let mut vae = SpecVae::new(SpecVaeConfig::default(), &mut SessionRng::new(seed))?;
            let cfg = SpecVaeTrainConfig {
                epochs,
                batch_size: batch,
                lr,
                seed,
                ..Default::default()
            };
            let trace = spec_vae::train(&mut vae, &specs, &cfg)?;
            for (i, e) in trace.epochs.iter().enumerate() {
                println!("epoch {:>3}  bce {:>10.2}  kl {:>8.2}  total {:>10.2}", i + 1, e.bce, e.kl, e.total);
            }
            vae.save(&out, trace.steps.len() as u64, &SessionRng::new(seed))?;
        }
        Cmd::TrainText {
            aligned,
            spec_ckpt,
            out,
            manifest,
            epochs,
            seed,
        } => {
            let manifest_path = manifest.unwrap_or_else(|| dir_of(&aligned).join("manifest.jsonl"));
            let records = read_manifest(&manifest_path)?;
            let lines: Vec<AlignedLine> = read_jsonl(&aligned)?;
            let vae = SpecVae::load(&spec_ckpt)?;
            let post = posteriors(&records, &dir_of(&manifest_path), &vae)?;
            let texts: Vec<&str> = lines.iter().map(|l| l.text.as_str()).collect();
            let vocab = Vocabulary::build(&texts, 2);
            let pairs = aligned_pairs(&lines, &records, &vocab)?;
            let mut model = TextCvae::new(TextCvaeConfig::default(), vocab, &mut SessionRng::new(seed))?;
            let cfg = TextTrainConfig {
                epochs,
                seed,
                ..Default::default()
            };
            let trace = text_cvae::train(&mut model, &pairs, &post, &cfg)?;
            println!(
                "vocabulary {}  final nll/token {:.3}",
                model.vocab().len(),
                trace.recent_nll_per_token(20)
            );
            model.save(&out, trace.steps.len() as u64, &SessionRng::new(seed))?;
        }
        Cmd::BuildTriples {
            manifest,
            aligned,
            spec_ckpt,
            text_ckpt,
            out,
            tau,
            seed,
        } => {
            let records = read_manifest(&manifest)?;
            let lines: Vec<AlignedLine> = read_jsonl(&aligned)?;
            let post = posteriors(&records, &dir_of(&manifest), &SpecVae::load(&spec_ckpt)?)?;
            let text = TextCvae::load(&text_ckpt)?;
            let triples = latent_gan::build_triples(&records, &post, &lines, &text, tau, &mut SessionRng::new(seed))?;
            latent_gan::write_triples(&out, &triples)?;
            println!("wrote {} triples", triples.len());
        }
        Cmd::TrainGan {
            triples,
            out,
            fusion,
            epochs,
            seed,
        } => {
            let data = latent_gan::read_triples(&triples)?;
            let fusion = match fusion {
                Fusion::Add => FusionMode::Add,
                Fusion::Hadamard => FusionMode::Hadamard,
                Fusion::Weighted => FusionMode::Weighted,
            };
            let mut gan = GanModel::new(
                GanConfig {
                    fusion,
                    ..Default::default()
                },
                &mut SessionRng::new(seed),
            )?;
            let cfg = GanTrainConfig {
                epochs,
                seed,
                ..Default::default()
            };
            let trace = latent_gan::train(&mut gan, &data, &cfg)?;
            if let Some(last) = trace.steps.last() {
                println!(
                    "steps {}  d_loss {:.4}  g_adv {:.4}  mse {:.4}  d_acc {:.3}",
                    trace.steps.len(),
                    last.d_loss,
                    last.g_adv,
                    last.mse,
                    last.d_accuracy
                );
            }
            gan.save(&out, trace.steps.len() as u64, &SessionRng::new(seed))?;
        }
        Cmd::Index {
            manifest,
            spec_ckpt,
            out,
            tau,
            seed,
        } => {
            let records = read_manifest(&manifest)?;
            let specs = load_spectrograms(&records, dir_of(&manifest), &SpectroConfig::default())?;
            let vae = SpecVae::load(&spec_ckpt)?;
            let index = LatentIndex::build(&records, &specs, &vae, tau, &mut SessionRng::new(seed))?;
            index.save(&out)?;
            println!("indexed {} clips", index.len());
        }
        Cmd::TrainAll { out, config } => {
            let cfg: PipelineConfig = match config {
                Some(p) => toml::from_str(&std::fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => PipelineConfig::default(),
            };
            let system = pipeline::run(&cfg)?;
            let paths = system.save(&out)?;
            println!("trained system written to {}", out.display());
            println!("{}", serde_json::to_string_pretty(&paths)?);
        }
        Cmd::Run { config } => {
            let cfg = ServiceConfig::load(&config)?;
            let handle = echoloop_service::serve(&cfg).await?;
            println!("commands on {}  http on {}", handle.tcp_addr, handle.http_addr);
            tokio::signal::ctrl_c().await?;
            handle.shutdown();
        }
        Cmd::Eval { what, config } => {
            let cfg = ServiceConfig::load(&config)?;
            let models = Arc::new(SessionModels::load(&cfg.artifact_paths()?, cfg.spectro.clone())?);
            let out = &cfg.eval.out_dir;
            std::fs::create_dir_all(out)?;
            match what {
                EvalKind::Precision => {
                    let clips = conditioning_clips(&cfg, &models);
                    let report = eval_precision(&models, &clips, &cfg.eval.cutoffs, &cfg.eval.settings)?;
                    write_json(&out.join("precision.json"), &report)?;
                    std::fs::write(out.join("precision.txt"), report.to_table())?;
                    print!("{}", report.to_table());
                }
                EvalKind::Impact => {
                    let clips = conditioning_clips(&cfg, &models);
                    let report = eval_impact(&models, &clips, cfg.eval.iterations, &cfg.eval.impact_n, &cfg.eval.settings)?;
                    write_json(&out.join("impact.json"), &report)?;
                    std::fs::write(out.join("impact.txt"), report.to_table())?;
                    print!("{}", report.to_table());
                }
                EvalKind::Pairs => {
                    let keys = export_listening_pairs(models, &cfg.session, &cfg.eval.pairs, out.join("pairs"))?;
                    println!("wrote {} pairs to {}", keys.len(), out.join("pairs").display());
                }
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(run(cli))
}
