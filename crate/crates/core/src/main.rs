use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crn::baselines::ModelKind;
use crn::dump::EpisodeDump;
use crn::harness::{emit_plot, resume_training, run_eval, run_training, MetricsWriter, RunConfig};
use crn::oracle::{edge_marginals, enumerate_worlds_with_beta, map_accuracy_against, posterior_from_enumeration};
use crn::scm::{EpisodeSpec, DEFAULT_BETA};
use crn::{Error, Result};

#[derive(Parser)]
#[command(name = "crn", version, about = "Meta-learned causal structure discovery from interventional samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a world and one episode and write it as an episode dump.
    Gen {
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long, default_value_t = 0.5)]
        p_edge: f64,
        #[arg(long, default_value_t = DEFAULT_BETA)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Episode index within the seed's stream.
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Meta-train a model; writes config.txt, metrics.csv and checkpoints.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long, conflicts_with_all = ["config", "model", "seed", "output_dir"])]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on held-out episodes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        /// Metrics CSV to write; the summary goes to stdout either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact posterior over structures for an episode dump.
    Oracle {
        #[arg(long)]
        episodes_file: PathBuf,
        #[arg(long)]
        n: usize,
        /// Prior edge probability; defaults to the dump's.
        #[arg(long)]
        p_edge: Option<f64>,
        /// Use only the first this-many samples.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render charts and their CSV data from metrics files.
    Plot {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn write_output(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            n,
            k,
            p_edge,
            beta,
            seed,
            index,
            out,
        } => {
            let spec = EpisodeSpec {
                n,
                k,
                p_edge,
                beta,
                permute_labels: false,
            };
            let episode = spec.generate_indexed(seed, 0, index)?;
            std::fs::write(&out, EpisodeDump::from_episode(&episode, seed, p_edge).to_text())?;
            eprintln!("wrote {} ({} samples, {} edges)", out.display(), k, episode.world.edge_count());
        }
        Command::Train {
            config,
            model,
            seed,
            iterations,
            output_dir,
            resume,
        } => {
            let start = Instant::now();
            let mut observer = |t: &crn::harness::Trainer, m: &crn::model::IterationMetrics, e: Option<&crn::harness::EpisodeMetrics>| {
                if let Some(e) = e {
                    eprintln!(
                        "[{}] iter {:>6}  loss {:.4} (recon {:.4}, dec {:.4})  eval acc t=1 {:.3}  t={} {:.3}  {:.0}s",
                        t.config.model,
                        t.iteration,
                        m.loss,
                        m.recon_loss,
                        m.dec_loss,
                        e.edge_acc_full[0],
                        e.edge_acc_full.len(),
                        e.final_accuracy(),
                        start.elapsed().as_secs_f64()
                    );
                }
            };
            let summary = match resume {
                Some(path) => resume_training(&path, iterations, &mut observer)?,
                None => {
                    let mut cfg = match config {
                        Some(path) => RunConfig::load(&path)?,
                        None => RunConfig::default(),
                    };
                    if let Some(m) = model {
                        cfg.model = m;
                    }
                    if let Some(s) = seed {
                        cfg.seed = s;
                    }
                    if let Some(i) = iterations {
                        cfg.iterations = i;
                    }
                    if let Some(d) = output_dir {
                        cfg.output_dir = d;
                    }
                    cfg.validate()?;
                    run_training(&cfg, &mut observer)?
                }
            };
            eprintln!(
                "finished {} iterations; metrics {}, checkpoint {}",
                summary.iterations,
                summary.metrics_path.display(),
                summary.checkpoint_path.display()
            );
        }
        Command::Eval {
            checkpoint,
            episodes,
            out,
        } => {
            let (trainer, _) = crn::harness::load_checkpoint(&checkpoint)?;
            let mut cfg = trainer.config.clone();
            cfg.eval_episodes = episodes;
            cfg.validate()?;
            let metrics = run_eval(&checkpoint, Some(&cfg))?;
            if let Some(path) = &out {
                let mut w = MetricsWriter::create(path)?;
                for row in metrics.rows(cfg.seed) {
                    w.write(&row)?;
                }
                w.flush()?;
            }
            let k = metrics.edge_acc_full.len();
            println!(
                "{} after {} iterations, {} episodes: full accuracy t=1 {:.4}, t={} {:.4}; lower-triangle t={} {:.4}",
                metrics.model,
                metrics.train_iter,
                episodes,
                metrics.edge_acc_full[0],
                k,
                metrics.final_accuracy(),
                k,
                metrics.edge_acc_lower[k - 1]
            );
        }
        Command::Oracle {
            episodes_file,
            n,
            p_edge,
            samples,
            out,
        } => {
            let text = std::fs::read_to_string(&episodes_file)?;
            let dump = EpisodeDump::parse(&text, &episodes_file.display().to_string())?;
            if dump.n != n {
                return Err(Error::InvalidArgument(format!("--n {n} but the dump has n = {}", dump.n)));
            }
            let used = samples.unwrap_or(dump.k).min(dump.k);
            let enumeration = enumerate_worlds_with_beta(n, p_edge.unwrap_or(dump.p_edge), dump.beta)?;
            let posterior = posterior_from_enumeration(&enumeration, &dump.samples[..used])?;
            let marginals = edge_marginals(&posterior);
            let mut csv = String::from("kind,i,j,value\n");
            for i in 0..n {
                for j in 0..n {
                    csv.push_str(&format!("marginal,{i},{j},{}\n", marginals[i * n + j]));
                }
            }
            for (idx, &m) in posterior.map_mask().iter().enumerate() {
                csv.push_str(&format!("map,{},{},{}\n", idx / n, idx % n, m as u8));
            }
            let acc = map_accuracy_against(&posterior, &dump.adjacency)?;
            csv.push_str(&format!("map_accuracy,,,{acc}\n"));
            csv.push_str(&format!("samples_used,,,{used}\n"));
            write_output(out.as_ref(), &csv)?;
        }
        Command::Plot { inputs, out } => {
            let outputs = emit_plot(&inputs, &out)?;
            for f in outputs.files {
                eprintln!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}
