use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use vbwmm::engine::fit;
use vbwmm::igg::{igg_moments, IggParams};
use vbwmm::io::{
    generate_synthetic, read_dataset, read_label_map, score, write_dataset, write_label_map, write_results,
    ClassificationResult, ConfigBuilder, SceneSpec,
};
use vbwmm::special::BesselRatioMode;
use vbwmm::{Error, Result};

#[derive(Parser)]
#[command(
    name = "vbwmm",
    version,
    about = "Variational Bayesian Wishart mixture clustering of PolSAR covariance images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a PWC1 dataset and write labels, report and ELBO trace.
    Fit(Knobs),
    /// Sample a synthetic scene; writes scene.pwc and truth.pgm.
    Synth(Knobs),
    /// Overall accuracy and kappa of a label map against ground truth.
    Score {
        #[arg(long)]
        predicted: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// IGG moments for given a, b, c in both Bessel ratio modes.
    Moments {
        #[arg(long)]
        a: f64,
        #[arg(long)]
        b: f64,
        #[arg(long)]
        c: f64,
    },
}

/// Flags mirror config keys and override values read from `--config`.
#[derive(Args)]
struct Knobs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    output: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    alpha0: Option<String>,
    #[arg(long)]
    beta0: Option<String>,
    #[arg(long)]
    b0: Option<String>,
    #[arg(long)]
    c0: Option<String>,
    #[arg(long)]
    nominal_looks: Option<String>,
    #[arg(long)]
    win: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    bessel_mode: Option<String>,
    #[arg(long)]
    prune_threshold: Option<String>,
    #[arg(long)]
    look_rate: Option<String>,
}

impl Knobs {
    fn builder(&self) -> Result<ConfigBuilder> {
        let mut b = ConfigBuilder::new();
        if let Some(p) = &self.config {
            b.parse_file(p)?;
        }
        let flags = [
            ("input", &self.input),
            ("output", &self.output),
            ("k", &self.k),
            ("alpha0", &self.alpha0),
            ("beta0", &self.beta0),
            ("b0", &self.b0),
            ("c0", &self.c0),
            ("nominal_looks", &self.nominal_looks),
            ("win", &self.win),
            ("tol", &self.tol),
            ("max_iter", &self.max_iter),
            ("seed", &self.seed),
            ("bessel_mode", &self.bessel_mode),
            ("prune_threshold", &self.prune_threshold),
            ("look_rate", &self.look_rate),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                b.set(key, v)?;
            }
        }
        Ok(b)
    }
}

fn missing(what: &str) -> Error {
    Error::Config(format!("missing '{what}' (flag or config key)"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(knobs) => {
            let config = knobs.builder()?.build()?;
            let input = config.input.ok_or_else(|| missing("input"))?;
            let output = config.output.ok_or_else(|| missing("output"))?;
            let image = read_dataset(&input)?;
            let start = Instant::now();
            let result = fit(&image, &config.hyper)?;
            let wall_clock = start.elapsed();
            let result = ClassificationResult {
                width: image.width(),
                height: image.height(),
                hyper: config.hyper,
                fit: result,
                wall_clock,
            };
            write_results(&result, &output)?;
            let f = &result.fit;
            println!("effective_k={}", f.effective_k());
            println!("iterations={}", f.trace.iterations);
            println!("converged={}", f.trace.converged);
            println!("final_elbo={}", f.final_elbo());
            for (j, l) in f.enl.iter().enumerate() {
                println!("cluster.{j}.enl={l}");
            }
            println!("wall_clock_seconds={:.3}", wall_clock.as_secs_f64());
        }
        Command::Synth(knobs) => {
            let config = knobs.builder()?.build()?;
            let output = config.output.ok_or_else(|| missing("output"))?;
            let scene = config.scene.unwrap_or_else(SceneSpec::benchmark);
            let (image, truth) = generate_synthetic(&scene, config.hyper.seed)?;
            std::fs::create_dir_all(&output).map_err(|e| Error::Io(format!("{}: {e}", output.display())))?;
            write_dataset(&output.join("scene.pwc"), &image)?;
            write_label_map(&output.join("truth.pgm"), scene.width, scene.height, &truth, Some(config.hyper.seed))?;
            println!("dataset={}", output.join("scene.pwc").display());
            println!("truth={}", output.join("truth.pgm").display());
        }
        Command::Score { predicted, truth } => {
            let (pw, ph, p) = read_label_map(&predicted)?;
            let (tw, th, t) = read_label_map(&truth)?;
            if (pw, ph) != (tw, th) {
                return Err(Error::Config(format!("label maps differ in size: {pw}x{ph} vs {tw}x{th}")));
            }
            let s = score(&p, &t)?;
            println!("overall_accuracy={:.2}", 100.0 * s.overall_accuracy);
            println!("kappa={:.4}", s.kappa);
        }
        Command::Moments { a, b, c } => {
            let p = IggParams::new(a, b, c)?;
            println!("mode={}", p.mode());
            for mode in [BesselRatioMode::NumericOracle, BesselRatioMode::PaperClosedForm] {
                match igg_moments(&p, mode) {
                    Ok(m) => {
                        println!("{mode}.e_l={}", m.e_l);
                        println!("{mode}.e_ln_l={}", m.e_ln_l);
                        println!("{mode}.e_inv_l={}", m.e_inv_l);
                        println!("{mode}.e_inv_l2={}", m.e_inv_l2);
                    }
                    Err(e) => println!("{mode}.error={}", e.class()),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error class={} message={}", e.class(), e);
            let code = match &e {
                Error::Config(_) => 2,
                e if e.is_numeric() => 3,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
