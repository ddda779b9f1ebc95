//! Command-line surface for cooperative communication planning.
//!
//! Exit codes: 0 success, 2 violated precondition or malformed input,
//! 3 Sinkhorn non-convergence under `--strict`.

mod io;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coopcomm::experiments::{run_study, StudyConfig, StudyKind};
use coopcomm::gradients::{finite_difference_grad, grad_c, grad_m, grad_r, FdTarget};
use coopcomm::metrics::cooperative_index;
use coopcomm::planning::{
    argmax_plan, cooperative_inference, learning_plan, one_step_listener, one_step_teacher,
    teaching_plan, CommonGround, Plan, SelectionExpense,
};
use coopcomm::scenarios::{apple_scenarios, sensitivity_examples};
use coopcomm::{
    sinkhorn_log, Dense, Domain, LogKernel, MarginalVector, NonnegMatrix, SinkhornOptions,
};
use io::{CliFailure, CliResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "coopcomm",
    version,
    about = "Cooperative communication planning via entropy-regularized optimal transport"
)]
struct Cli {
    /// Worker threads for studies (default: COOPCOMM_THREADS, then all
    /// cores). Affects wall time only, never output bytes.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Auto,
    Linear,
    Log,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Domain {
        match d {
            DomainArg::Auto => Domain::Auto,
            DomainArg::Linear => Domain::Linear,
            DomainArg::Log => Domain::Log,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanKindArg {
    Teaching,
    Learning,
    Cooperative,
    OnestepTeacher,
    OnestepListener,
    Argmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExpenseArg {
    /// -log prior (cooperative-inference-compatible)
    Default,
    Zero,
}

impl From<ExpenseArg> for SelectionExpense {
    fn from(e: ExpenseArg) -> SelectionExpense {
        match e {
            ExpenseArg::Default => SelectionExpense::LogPrior,
            ExpenseArg::Zero => SelectionExpense::Zero,
        }
    }
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = DomainArg::Auto)]
    domain: DomainArg,
    /// Zero out support entries no feasible plan can use before scaling.
    #[arg(long, default_value_t = false)]
    trim_support: bool,
    /// Exit 3 when the scaling fails to converge.
    #[arg(long, default_value_t = false)]
    strict: bool,
}

impl ScalingArgs {
    fn options(&self) -> SinkhornOptions {
        SinkhornOptions::default()
            .with_tol(self.tol)
            .with_max_iter(self.max_iter)
            .with_domain(self.domain.into())
            .with_trim_support(self.trim_support)
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::json!({
            "tol": self.tol,
            "max_iter": self.max_iter,
            "domain": Domain::from(self.domain),
            "trim_support": self.trim_support,
            "strict": self.strict,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sinkhorn-scale M^[lambda] toward row and column marginals.
    Sinkhorn {
        /// Matrix file (CSV, or JSON which may embed the marginals).
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        row_marginal: Option<PathBuf>,
        #[arg(long)]
        col_marginal: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[command(flatten)]
        scaling: ScalingArgs,
        /// Plan CSV destination.
        #[arg(long)]
        output: PathBuf,
    },
    /// Construct a communication plan from common ground.
    Plan {
        #[arg(long)]
        matrix: PathBuf,
        /// Prior over data (rows); uniform if omitted.
        #[arg(long)]
        row_prior: Option<PathBuf>,
        /// Prior over hypotheses (columns); uniform if omitted.
        #[arg(long)]
        col_prior: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: PlanKindArg,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, value_enum, default_value_t = ExpenseArg::Default)]
        expense: ExpenseArg,
        #[command(flatten)]
        scaling: ScalingArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Cooperative index of a teacher/learner conditional pair.
    Ci {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        learner: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Validate analytic gradients against finite differences on a random
    /// instance.
    GradCheck {
        /// Shape as ROWSxCOLS, e.g. 5x7.
        #[arg(long)]
        shape: String,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Monte-Carlo robustness study (Sinkhorn vs one-step under
    /// perturbation).
    PerturbStudy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        rows_out: PathBuf,
        #[arg(long)]
        summary_out: PathBuf,
    },
    /// Greediness sweep study.
    LambdaSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        rows_out: PathBuf,
        #[arg(long)]
        summary_out: PathBuf,
    },
    /// Linear-repair benchmark study.
    LinearApprox {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        rows_out: PathBuf,
        #[arg(long)]
        summary_out: PathBuf,
    },
    /// Quantifier and numeral scenes with their model predictions.
    Apple {
        #[arg(long)]
        output: PathBuf,
    },
    /// Sensitivity examples: noisy learner across lambda, and the
    /// divergent enhanced-diagonal pair.
    AppendixC {
        #[arg(long)]
        output: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(2);
        }
    };
    let threads = cli.threads.or_else(|| {
        std::env::var("COOPCOMM_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli.command) {
        Ok(()) => {}
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            std::process::exit(failure.code);
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Sinkhorn {
            matrix,
            row_marginal,
            col_marginal,
            lambda,
            scaling,
            output,
        } => cmd_sinkhorn(&matrix, row_marginal, col_marginal, lambda, &scaling, &output),
        Command::Plan {
            matrix,
            row_prior,
            col_prior,
            kind,
            lambda,
            expense,
            scaling,
            output,
        } => cmd_plan(&matrix, row_prior, col_prior, kind, lambda, expense, &scaling, &output),
        Command::Ci {
            teacher,
            learner,
            output,
        } => cmd_ci(&teacher, &learner, output.as_deref()),
        Command::GradCheck {
            shape,
            lambda,
            seed,
            step,
            tolerance,
        } => cmd_grad_check(&shape, lambda, seed, step, tolerance),
        Command::PerturbStudy {
            config,
            rows_out,
            summary_out,
        } => cmd_study(&config, &rows_out, &summary_out, StudyKind::SkVsOnestep),
        Command::LambdaSweep {
            config,
            rows_out,
            summary_out,
        } => cmd_study(&config, &rows_out, &summary_out, StudyKind::LambdaSweep),
        Command::LinearApprox {
            config,
            rows_out,
            summary_out,
        } => cmd_study(&config, &rows_out, &summary_out, StudyKind::LinearApprox),
        Command::Apple { output } => {
            let report = apple_scenarios()?;
            let doc = serde_json::json!({
                "schema": 1,
                "config": {"subcommand": "apple"},
                "report": report,
            });
            io::write_atomic(&output, &format!("{:#}\n", doc))?;
            println!(
                "numeral ci_eot={} ci_onestep={}",
                report.numeral.ci_eot, report.numeral.ci_onestep
            );
            Ok(())
        }
        Command::AppendixC { output } => {
            let report = sensitivity_examples()?;
            let doc = serde_json::json!({
                "schema": 1,
                "config": {"subcommand": "appendix-c"},
                "report": report,
            });
            io::write_atomic(&output, &format!("{:#}\n", doc))?;
            for entry in &report.entries {
                println!("lambda={} ci={}", entry.lambda, entry.ci);
            }
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sinkhorn(
    matrix: &Path,
    row_marginal: Option<PathBuf>,
    col_marginal: Option<PathBuf>,
    lambda: f64,
    scaling: &ScalingArgs,
    output: &Path,
) -> CliResult<()> {
    let file = io::read_matrix_file(matrix)?;
    let r = match row_marginal {
        Some(path) => io::read_marginal(&path)?,
        None => file.row_marginal.clone().ok_or_else(|| {
            CliFailure::precondition("no row marginal: pass --row-marginal or embed row_marginal in the matrix JSON")
        })?,
    };
    let c = match col_marginal {
        Some(path) => io::read_marginal(&path)?,
        None => file.col_marginal.clone().ok_or_else(|| {
            CliFailure::precondition("no column marginal: pass --col-marginal or embed col_marginal in the matrix JSON")
        })?,
    };
    let mut config = scaling.config_json();
    config["subcommand"] = "sinkhorn".into();
    config["matrix"] = matrix.display().to_string().into();
    config["lambda"] = lambda.into();

    let kernel = LogKernel::from_matrix(&file.matrix, lambda)?;
    let opts = scaling.options();
    let out = sinkhorn_log(&kernel, &r, &c, &opts)?;
    io::write_atomic(output, &io::matrix_csv(&out.plan, &config))?;
    let summary = serde_json::json!({
        "schema": 1,
        "config": config,
        "iterations": out.iterations,
        "residual": out.residual,
        "converged": out.converged,
        "output": output.display().to_string(),
    });
    println!("{summary}");
    if scaling.strict && !out.converged {
        return Err(CliFailure {
            code: 3,
            message: format!(
                "scaling did not converge within {} iterations (residual {:.3e})",
                out.iterations, out.residual
            ),
        });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_plan(
    matrix: &Path,
    row_prior: Option<PathBuf>,
    col_prior: Option<PathBuf>,
    kind: PlanKindArg,
    lambda: f64,
    expense: ExpenseArg,
    scaling: &ScalingArgs,
    output: &Path,
) -> CliResult<()> {
    let file = io::read_matrix_file(matrix)?;
    let m = file.matrix;
    let r = match row_prior {
        Some(path) => io::read_marginal(&path)?,
        None => file
            .row_marginal
            .unwrap_or(MarginalVector::uniform(m.rows(), 1.0)?),
    };
    let c = match col_prior {
        Some(path) => io::read_marginal(&path)?,
        None => file
            .col_marginal
            .unwrap_or(MarginalVector::uniform(m.cols(), 1.0)?),
    };
    let ground = CommonGround::new(m.clone(), r, c)?;
    let kind_name = match kind {
        PlanKindArg::Teaching => "teaching",
        PlanKindArg::Learning => "learning",
        PlanKindArg::Cooperative => "cooperative",
        PlanKindArg::OnestepTeacher => "onestep-teacher",
        PlanKindArg::OnestepListener => "onestep-listener",
        PlanKindArg::Argmax => "argmax",
    };
    let mut config = scaling.config_json();
    config["subcommand"] = "plan".into();
    config["kind"] = kind_name.into();
    config["matrix"] = matrix.display().to_string().into();
    config["lambda"] = lambda.into();

    let opts = scaling.options();
    let (doc, converged) = match kind {
        PlanKindArg::Teaching | PlanKindArg::Learning => {
            let plan = if matches!(kind, PlanKindArg::Teaching) {
                teaching_plan(&ground, lambda, &opts)?
            } else {
                learning_plan(&ground, lambda, &opts)?
            };
            (
                serde_json::json!({
                    "schema": 1,
                    "config": config,
                    "joint": io::matrix_json(plan.joint.matrix()),
                    "conditional": io::matrix_json(plan.conditional.matrix()),
                    "iterations": plan.sk.iterations,
                    "residual": plan.sk.residual,
                    "converged": plan.sk.converged,
                }),
                plan.sk.converged,
            )
        }
        PlanKindArg::Cooperative => {
            let ci = cooperative_inference(&ground, scaling.tol, scaling.max_iter)?;
            (
                serde_json::json!({
                    "schema": 1,
                    "config": config,
                    "teacher_conditional": io::matrix_json(ci.teacher.matrix()),
                    "learner_conditional": io::matrix_json(ci.learner.matrix()),
                    "iterations": ci.iterations,
                    "residual": ci.residual,
                    "converged": ci.converged,
                }),
                ci.converged,
            )
        }
        PlanKindArg::OnestepTeacher => {
            let t = one_step_teacher(&ground, lambda, &expense.into())?;
            (
                serde_json::json!({
                    "schema": 1,
                    "config": config,
                    "conditional": io::matrix_json(t.matrix()),
                }),
                true,
            )
        }
        PlanKindArg::OnestepListener => {
            let t = one_step_teacher(&ground, lambda, &expense.into())?;
            let l = one_step_listener(&t, ground.prior_hyp())?;
            (
                serde_json::json!({
                    "schema": 1,
                    "config": config,
                    "teacher_conditional": io::matrix_json(t.matrix()),
                    "conditional": io::matrix_json(l.matrix()),
                }),
                true,
            )
        }
        PlanKindArg::Argmax => {
            let plan = argmax_plan(&m);
            (
                serde_json::json!({
                    "schema": 1,
                    "config": config,
                    "conditional": io::matrix_json(plan.matrix()),
                }),
                true,
            )
        }
    };
    io::write_atomic(output, &format!("{:#}\n", doc))?;
    println!("wrote {}", output.display());
    if scaling.strict && !converged {
        return Err(CliFailure {
            code: 3,
            message: "plan construction did not converge".into(),
        });
    }
    Ok(())
}

fn cmd_ci(teacher: &Path, learner: &Path, output: Option<&Path>) -> CliResult<()> {
    let t = io::read_matrix_file(teacher)?.matrix;
    let l = io::read_matrix_file(learner)?.matrix;
    for (j, s) in t.col_sums().iter().enumerate() {
        if (s - 1.0).abs() > 1e-6 {
            return Err(CliFailure::precondition(format!(
                "teacher conditional invariant violated: column {j} sums to {s}, expected 1"
            )));
        }
    }
    for (i, s) in l.row_sums().iter().enumerate() {
        if (s - 1.0).abs() > 1e-6 {
            return Err(CliFailure::precondition(format!(
                "learner conditional invariant violated: row {i} sums to {s}, expected 1"
            )));
        }
    }
    let ci = cooperative_index(&Plan::teacher_view(&t, 1.0)?, &Plan::learner_view(&l, 1.0)?)?;
    println!("{ci}");
    if let Some(path) = output {
        let doc = serde_json::json!({
            "schema": 1,
            "config": {
                "subcommand": "ci",
                "teacher": teacher.display().to_string(),
                "learner": learner.display().to_string(),
            },
            "ci": ci,
        });
        io::write_atomic(path, &format!("{:#}\n", doc))?;
    }
    Ok(())
}

fn cmd_grad_check(shape: &str, lambda: f64, seed: u64, step: f64, tolerance: f64) -> CliResult<()> {
    let (rows, cols) = parse_shape(shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.1..1.0)).collect();
    let m = NonnegMatrix::new(rows, cols, data)?;
    let r = random_marginal(rows, &mut rng)?;
    let c = random_marginal(cols, &mut rng)?;

    let kernel = LogKernel::from_matrix(&m, lambda)?;
    let opts = SinkhornOptions::default().with_tol(1e-12).with_max_iter(400_000);
    let plan = sinkhorn_log(&kernel, &r, &c, &opts)?;
    if !plan.converged {
        return Err(CliFailure::precondition(format!(
            "base plan did not converge (residual {:.3e})",
            plan.residual
        )));
    }

    let mut worst: f64 = 0.0;
    let slices_r = grad_r(&plan, &r, &c)?;
    let fd_r = finite_difference_grad(&m, &r, &c, lambda, step, FdTarget::R)?;
    for (k, &(s, t)) in fd_r.indices.iter().enumerate() {
        worst = worst.max(slice_gap(
            fd_r.slices[k].as_slice(),
            slices_r[s].as_slice(),
            Some(slices_r[t].as_slice()),
        ));
    }
    let slices_c = grad_c(&plan, &r, &c)?;
    let fd_c = finite_difference_grad(&m, &r, &c, lambda, step, FdTarget::C)?;
    for (k, &(s, t)) in fd_c.indices.iter().enumerate() {
        worst = worst.max(slice_gap(
            fd_c.slices[k].as_slice(),
            slices_c[s].as_slice(),
            Some(slices_c[t].as_slice()),
        ));
    }
    let slices_m = grad_m(&plan, &m, &r, &c, lambda)?;
    let fd_m = finite_difference_grad(&m, &r, &c, lambda, step, FdTarget::M)?;
    for (k, index) in fd_m.indices.iter().enumerate() {
        let analytic = &slices_m
            .iter()
            .find(|(idx, _)| idx == index)
            .expect("pattern entry has a slice")
            .1;
        worst = worst.max(slice_gap(fd_m.slices[k].as_slice(), analytic.as_slice(), None));
    }

    let pass = worst < tolerance;
    let doc = serde_json::json!({
        "schema": 1,
        "config": {
            "subcommand": "grad-check",
            "shape": format!("{rows}x{cols}"),
            "lambda": lambda,
            "seed": seed,
            "step": step,
            "tolerance": tolerance,
        },
        "max_relative_error": worst,
        "pass": pass,
    });
    println!("{doc}");
    if pass {
        Ok(())
    } else {
        Err(CliFailure {
            code: 1,
            message: format!("max relative error {worst:.3e} exceeds {tolerance:.1e}"),
        })
    }
}

/// Max elementwise gap between a finite-difference slice and the analytic
/// slice (or difference of two slices), relative to the larger scale.
fn slice_gap(fd: &[f64], a: &[f64], b: Option<&[f64]>) -> f64 {
    let mut gap: f64 = 0.0;
    let mut scale: f64 = 1e-12;
    for (k, &numeric) in fd.iter().enumerate() {
        let analytic = match b {
            Some(b) => a[k] - b[k],
            None => a[k],
        };
        gap = gap.max((analytic - numeric).abs());
        scale = scale.max(analytic.abs()).max(numeric.abs());
    }
    gap / scale
}

fn random_marginal(len: usize, rng: &mut ChaCha8Rng) -> CliResult<MarginalVector> {
    let raw: Vec<f64> = (0..len).map(|_| rng.random_range(0.2..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    Ok(MarginalVector::new(
        raw.into_iter().map(|v| v / sum).collect(),
    )?)
}

fn parse_shape(shape: &str) -> CliResult<(usize, usize)> {
    let parts: Vec<&str> = shape.split(['x', 'X']).collect();
    if parts.len() == 2 {
        if let (Ok(r), Ok(c)) = (parts[0].parse(), parts[1].parse()) {
            if r > 0 && c > 0 {
                return Ok((r, c));
            }
        }
    }
    Err(CliFailure::precondition(format!(
        "bad shape '{shape}': expected ROWSxCOLS, e.g. 5x7"
    )))
}

fn cmd_study(config: &Path, rows_out: &Path, summary_out: &Path, expected: StudyKind) -> CliResult<()> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| CliFailure::precondition(format!("{}: {e}", config.display())))?;
    let parsed = StudyConfig::from_json(&text)?;
    if parsed.comparison != expected {
        return Err(CliFailure::precondition(format!(
            "config comparison {:?} does not match this subcommand",
            parsed.comparison
        )));
    }
    let record = run_study(&parsed)?;
    io::write_atomic(rows_out, &record.rows_csv())?;
    io::write_atomic(summary_out, &format!("{:#}\n", record.summary_json()))?;
    println!(
        "rows={} excluded={} rows_out={} summary_out={}",
        record.rows_recorded,
        record.rows_excluded,
        rows_out.display(),
        summary_out.display()
    );
    Ok(())
}
