//! One function per subcommand. Each turns an [`Invocation`] into report
//! artifacts and an exit code without touching the filesystem, except for
//! reading a lifted CSV named by an elasticity input.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use ma_lin::elasticity::{
    deform_jet, deformed_points_csv, incompressibility_check, incompressibility_from_w_jets, Deformation,
    DeformationKind, DeformedPoint, IncompressibilityReport,
};
use ma_lin::equations::{catalog_get, classify, khabirov_push, ClassificationReport, EquationError, MAEquation};
use ma_lin::fields::grid_to_csv;
use ma_lin::lift::{pipeline, read_lifted_samples, LiftedSample, PipelineConfig, PipelineError};
use ma_lin::linsolve::{solve_dirichlet, LinsolveError, ProblemSpec};
use ma_lin::{Expr, Rect};

use crate::output::Artifact;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_REJECTED: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Classify,
    Solve,
    Lift,
    Elasticity,
    Khabirov,
}

/// Everything a run depends on; stored in the manifest so it can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub command: Command,
    /// Parsed contents of the input file.
    pub input: Option<Value>,
    pub input_path: Option<String>,
    pub seed: u64,
    pub tol: Option<f64>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub id: Option<String>,
    pub g: Option<String>,
    pub jets: Option<usize>,
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn rejected(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_REJECTED,
            message: message.into(),
        }
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub code: u8,
    pub artifacts: Vec<Artifact>,
    pub summary: String,
}

pub fn run(inv: &Invocation) -> Result<Outcome, Failure> {
    match inv.command {
        Command::Classify => cmd_classify(inv),
        Command::Solve => cmd_solve(inv),
        Command::Lift => cmd_lift(inv),
        Command::Elasticity => cmd_elasticity(inv),
        Command::Khabirov => cmd_khabirov(inv),
    }
}

fn input<T: DeserializeOwned>(inv: &Invocation) -> Result<T, Failure> {
    let value = inv
        .input
        .clone()
        .ok_or_else(|| Failure::usage("this command needs --in PATH"))?;
    serde_json::from_value(value).map_err(|e| Failure::usage(format!("invalid input: {e}")))
}

fn with_seed(report: &impl Serialize, seed: u64) -> Value {
    let mut v = serde_json::to_value(report).expect("reports serialize");
    if let Value::Object(map) = &mut v {
        map.insert("seed".into(), json!(seed));
    }
    v
}

#[derive(Deserialize)]
struct ClassifyInput {
    id: String,
    #[serde(rename = "F")]
    rhs: Option<Expr>,
    #[serde(default)]
    note: String,
}

fn cmd_classify(inv: &Invocation) -> Result<Outcome, Failure> {
    let eq = match (&inv.input, &inv.id) {
        (Some(_), _) => {
            let i: ClassifyInput = input(inv)?;
            match i.rhs {
                Some(rhs) => MAEquation {
                    id: i.id,
                    rhs,
                    note: i.note,
                },
                None => catalog_get(&i.id).map_err(|e| Failure::usage(e.to_string()))?,
            }
        }
        (None, Some(id)) => catalog_get(id).map_err(|e| Failure::usage(e.to_string()))?,
        (None, None) => return Err(Failure::usage("classify needs --in PATH or --id ID")),
    };
    let c = classify(&eq, inv.seed).map_err(|e| Failure::usage(e.to_string()))?;
    let report = ClassificationReport::new(&eq, &c, inv.seed);
    let summary = match &report.f {
        Some(f) => format!("{}: in class, f = {f}", eq.id),
        None => format!("{}: not in class ({:?} test failed)", eq.id, report.failed_test.unwrap()),
    };
    Ok(Outcome {
        code: if report.in_class { EXIT_OK } else { EXIT_REJECTED },
        artifacts: vec![Artifact::json("classification.json", &report)],
        summary,
    })
}

fn cmd_solve(inv: &Invocation) -> Result<Outcome, Failure> {
    let mut spec: ProblemSpec = input(inv)?;
    spec.nx = inv.nx.unwrap_or(spec.nx);
    spec.ny = inv.ny.unwrap_or(spec.ny);
    spec.tol = inv.tol.or(spec.tol);
    let problem = spec.build().map_err(|e| match e {
        LinsolveError::NotElliptic { .. } => Failure::rejected(e.to_string()),
        _ => Failure::usage(e.to_string()),
    })?;
    let tol = spec.tol.unwrap_or_else(|| problem.default_tol());
    let geometry = *problem.geometry();
    match solve_dirichlet(&problem, tol, spec.max_iter) {
        Ok((grid, report)) => Ok(Outcome {
            code: EXIT_OK,
            summary: format!(
                "converged in {} iterations, residual {:e} ({:.3} s)",
                report.iterations, report.residual, report.elapsed_seconds
            ),
            artifacts: vec![
                Artifact::text("solution.csv", grid_to_csv(&grid)),
                Artifact::json(
                    "solve_report.json",
                    &json!({"seed": inv.seed, "status": "converged", "geometry": geometry, "report": report}),
                ),
            ],
        }),
        Err(LinsolveError::NotConverged { report, .. }) => Ok(Outcome {
            code: EXIT_NOT_CONVERGED,
            summary: format!(
                "not converged after {} iterations, residual {:e} > tol {:e}",
                report.iterations, report.residual, report.tol
            ),
            artifacts: vec![Artifact::json(
                "solve_report.json",
                &json!({"seed": inv.seed, "status": "not-converged", "geometry": geometry, "report": report}),
            )],
        }),
        Err(e) => Err(Failure::usage(e.to_string())),
    }
}

fn pipeline_failure(e: PipelineError) -> Failure {
    let code = match &e {
        PipelineError::NotInClass { .. } | PipelineError::AmpereOnly { .. } => EXIT_REJECTED,
        PipelineError::Solve(LinsolveError::NotElliptic { .. }) => EXIT_REJECTED,
        PipelineError::Solve(LinsolveError::NotConverged { .. }) => EXIT_NOT_CONVERGED,
        _ => EXIT_USAGE,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

fn apply_overrides(cfg: &mut PipelineConfig, inv: &Invocation) {
    cfg.nx = inv.nx.unwrap_or(cfg.nx);
    cfg.ny = inv.ny.unwrap_or(cfg.ny);
    cfg.tol = inv.tol.or(cfg.tol);
}

fn cmd_lift(inv: &Invocation) -> Result<Outcome, Failure> {
    let mut cfg: PipelineConfig = input(inv)?;
    apply_overrides(&mut cfg, inv);
    let out = pipeline(&cfg, inv.seed).map_err(pipeline_failure)?;
    let v = &out.verification;
    let summary = format!(
        "{}: {} samples, max residual {:e}, {:.1}% of target grid masked",
        v.equation_id,
        v.samples,
        v.max_abs,
        100.0 * out.resampled.masked_fraction()
    );
    let report = json!({
        "seed": inv.seed,
        "equation": out.equation,
        "f": out.class.f,
        "coefficient": out.coefficient,
        "solve": out.solve,
        "verification": out.verification,
        "degenerate": out.surface.degenerate,
        "target": out.resampled.grid().geometry(),
        "target_masked_fraction": out.resampled.masked_fraction(),
    });
    Ok(Outcome {
        code: EXIT_OK,
        summary,
        artifacts: vec![
            Artifact::text("solution.csv", grid_to_csv(&out.solution)),
            Artifact::text("lifted.csv", out.surface.to_csv()),
            Artifact::text("resampled.csv", grid_to_csv(out.resampled.grid())),
            Artifact::json("verification.json", &report),
        ],
    })
}

#[derive(Deserialize)]
struct ElasticityInput {
    kind: DeformationKind,
    potential: Option<Expr>,
    /// Lifted-surface CSV whose samples are taken as jets of `W`.
    lifted: Option<String>,
    /// Pipeline run whose lifted samples are taken as jets of `W`.
    pipeline: Option<PipelineConfig>,
    domain: Option<Rect>,
    #[serde(default = "default_n")]
    n: usize,
}

fn default_n() -> usize {
    21
}

fn resolve(inv: &Invocation, file: &str) -> PathBuf {
    let p = Path::new(file);
    match (&inv.input_path, p.is_relative()) {
        (Some(base), true) => Path::new(base).parent().unwrap_or(Path::new(".")).join(p),
        _ => p.to_path_buf(),
    }
}

fn cmd_elasticity(inv: &Invocation) -> Result<Outcome, Failure> {
    let i: ElasticityInput = input(inv)?;
    let (report, points): (IncompressibilityReport, Vec<DeformedPoint>) = match (&i.potential, &i.lifted, &i.pipeline) {
        (Some(potential), None, None) => {
            let domain = i.domain.ok_or_else(|| Failure::usage("a potential needs a domain"))?;
            let n = inv.nx.unwrap_or(i.n);
            let d = Deformation::new(i.kind, potential.clone());
            let report = incompressibility_check(&d, &domain, n).map_err(|e| Failure::usage(e.to_string()))?;
            let prepared = d.prepare().map_err(|e| Failure::usage(e.to_string()))?;
            let points = prepared
                .deform_grid(&domain, n)
                .map_err(|e| Failure::usage(e.to_string()))?
                .into_iter()
                .flatten()
                .collect();
            (report, points)
        }
        (None, lifted, pipe) if lifted.is_some() != pipe.is_some() => {
            if i.kind != DeformationKind::FromW {
                return Err(Failure::usage("tabulated jets are only supported for kind from-W"));
            }
            let samples: Vec<LiftedSample> = match (lifted, pipe) {
                (Some(file), _) => {
                    let path = resolve(inv, file);
                    let f = fs::File::open(&path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
                    read_lifted_samples(f).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
                }
                (None, Some(cfg)) => {
                    let mut cfg = cfg.clone();
                    apply_overrides(&mut cfg, inv);
                    let out = pipeline(&cfg, inv.seed).map_err(pipeline_failure)?;
                    out.surface.valid().copied().collect()
                }
                (None, None) => unreachable!(),
            };
            let jets = samples.iter().map(|s| (s.x, s.y, s.jet));
            let report = incompressibility_from_w_jets(jets.clone());
            let points = jets
                .filter_map(|(cx, cy, jet)| deform_jet(DeformationKind::FromW, &jet, cx, cy).ok())
                .collect();
            (report, points)
        }
        _ => return Err(Failure::usage("give exactly one of potential, lifted, pipeline")),
    };
    Ok(Outcome {
        code: EXIT_OK,
        summary: format!(
            "{}: max |J-1| = {:e}, max MA residual = {:e} over {} points",
            i.kind.name(),
            report.max_dev,
            report.ma_residual_max,
            report.samples
        ),
        artifacts: vec![
            Artifact::json("incompressibility.json", &with_seed(&report, inv.seed)),
            Artifact::text("deformed.csv", deformed_points_csv(&points)),
        ],
    })
}

#[derive(Deserialize)]
struct KhabirovInput {
    g: Expr,
    jets: Option<usize>,
}

fn cmd_khabirov(inv: &Invocation) -> Result<Outcome, Failure> {
    let (g, jets) = match (&inv.g, &inv.input) {
        (Some(text), _) => (
            text.parse::<Expr>().map_err(|e| Failure::usage(format!("--g: {e}")))?,
            inv.jets,
        ),
        (None, Some(_)) => {
            let i: KhabirovInput = input(inv)?;
            (i.g, inv.jets.or(i.jets))
        }
        (None, None) => return Err(Failure::usage("khabirov needs --g EXPR or --in PATH")),
    };
    let push = khabirov_push(&g, jets.unwrap_or(50), inv.seed).map_err(|e| match e {
        EquationError::KhabirovZero { .. } | EquationError::KhabirovTrivial => Failure::rejected(e.to_string()),
        _ => Failure::usage(e.to_string()),
    })?;
    Ok(Outcome {
        code: EXIT_OK,
        summary: format!(
            "g = {}: transformed F = {}, identity max {:e}",
            push.case.g, push.transformed.rhs, push.verification.identity_max
        ),
        artifacts: vec![Artifact::json("khabirov.json", &with_seed(&push, inv.seed))],
    })
}
