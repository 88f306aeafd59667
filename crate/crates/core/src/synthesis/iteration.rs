//! Policy evaluation, policy improvement and the alternating loop.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::assembly::{assemble_evaluation, assemble_improvement, LmiSettings};
use super::problem::{Backend, SolveStatus, SolverOptions};
use crate::error::{Error, Result};
use crate::geometry::Triangulation;
use crate::pwq::PwqFunction;
use crate::systems::{Policy, PolytopicModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisSettings {
    pub lmi: LmiSettings,
    pub solver: SolverOptions,
    /// Stop once the relative change of the evaluation objective drops below this.
    pub tol_pi: f64,
    /// An improvement that stops short of convergence is still used as a
    /// candidate when its worst constraint residual is at most this; the next
    /// evaluation decides whether it is kept.
    pub accept_residual: f64,
}

impl Default for SynthesisSettings {
    fn default() -> Self {
        SynthesisSettings {
            lmi: LmiSettings::default(),
            solver: SolverOptions::default(),
            tol_pi: 1e-4,
            accept_residual: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Eval,
    Improve,
}

/// One line of the JSON-lines iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub step: usize,
    pub kind: StepKind,
    /// Evaluation: ∫V̄. Improvement: ∫R.
    pub objective: f64,
    pub status: SolveStatus,
    /// Magnitude of the worst constraint violation at the returned point.
    pub max_residual: f64,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst_block: Option<String>,
    /// Backend-specific termination detail.
    #[serde(default)]
    pub detail: String,
}

pub fn write_log<W: Write>(mut out: W, log: &[IterationRecord]) -> Result<()> {
    for r in log {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_log(text: &str) -> Result<Vec<IterationRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub struct StepOutcome<T> {
    pub record: IterationRecord,
    pub value: Option<T>,
}

fn record(step: usize, kind: StepKind, objective: f64, sol: &super::problem::SdpSolution, start: Instant) -> IterationRecord {
    let worst = sol.residuals.worst();
    let worst_block = [sol.residuals.worst_equality, sol.residuals.worst_nonnegative, sol.residuals.worst_psd]
        .into_iter()
        .flatten()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .filter(|t| t.1 < 0.0)
        .map(|t| t.0.to_string());
    IterationRecord {
        step,
        kind,
        objective,
        status: sol.status,
        max_residual: (-worst).max(0.0),
        wall_time_s: start.elapsed().as_secs_f64(),
        worst_block,
        detail: sol.detail.clone(),
    }
}

/// Solve the evaluation program for `policy`.
pub fn evaluate_policy(
    tri: &Arc<Triangulation>,
    model: &PolytopicModel,
    policy: &Policy,
    settings: &SynthesisSettings,
    backend: &dyn Backend,
    step: usize,
) -> Result<StepOutcome<PwqFunction>> {
    let start = Instant::now();
    let asm = assemble_evaluation(tri, model, policy, settings.lmi)?;
    let sol = backend.solve(&asm.problem)?;
    let value = if sol.status.is_success() {
        Some(asm.certificate(&sol)?)
    } else {
        None
    };
    let objective = value.as_ref().map_or(sol.objective, PwqFunction::integral);
    Ok(StepOutcome {
        record: record(step, StepKind::Eval, objective, &sol, start),
        value,
    })
}

/// Solve the improvement program for the certificate `pwq`.
pub fn improve_policy(
    tri: &Arc<Triangulation>,
    model: &PolytopicModel,
    pwq: &PwqFunction,
    settings: &SynthesisSettings,
    backend: &dyn Backend,
    step: usize,
) -> Result<StepOutcome<Policy>> {
    let start = Instant::now();
    let asm = assemble_improvement(tri, model, pwq, settings.lmi)?;
    let sol = backend.solve(&asm.problem)?;
    let rec = record(step, StepKind::Improve, -sol.objective, &sol, start);
    let usable = sol.status.is_success()
        || (sol.status == SolveStatus::NumericalFailure
            && !sol.x.is_empty()
            && rec.max_residual <= settings.accept_residual);
    let value = if usable {
        Some(asm.policy(&sol, model.u_lower(), model.u_upper())?)
    } else {
        None
    };
    Ok(StepOutcome { record: rec, value })
}

pub struct IterationResult {
    pub certificate: PwqFunction,
    pub policy: Policy,
    pub log: Vec<IterationRecord>,
    pub warnings: Vec<String>,
    /// Every successfully evaluated pair in order, including a rejected last one.
    pub evaluated: Vec<(PwqFunction, Policy)>,
}

/// Alternate evaluation and improvement. `iterations` counts evaluations;
/// an improvement runs between consecutive evaluations, so the returned
/// certificate always belongs to the returned policy.
pub fn policy_iteration(
    tri: &Arc<Triangulation>,
    model: &PolytopicModel,
    initial: &Policy,
    iterations: usize,
    settings: &SynthesisSettings,
    backend: &dyn Backend,
    mut on_record: impl FnMut(&IterationRecord),
) -> Result<IterationResult> {
    if iterations == 0 {
        return Err(Error::Config("at least one iteration is required".into()));
    }
    let mut log = Vec::new();
    let mut warnings = Vec::new();
    let mut policy = initial.clone();
    let mut best: Option<(PwqFunction, Policy)> = None;
    let mut last_obj: Option<f64> = None;
    let mut step = 0;
    let mut tentative = false;
    let mut evaluated = Vec::new();
    for it in 0..iterations {
        let ev = evaluate_policy(tri, model, &policy, settings, backend, step)?;
        step += 1;
        on_record(&ev.record);
        let status = ev.record.status;
        let obj = ev.record.objective;
        log.push(ev.record);
        let regressed = match (&ev.value, last_obj) {
            (Some(_), Some(prev)) if tentative => obj > prev + 10.0 * settings.solver.tol * (1.0 + prev.abs()),
            _ => false,
        };
        if let Some(c) = &ev.value {
            evaluated.push((c.clone(), policy.clone()));
        }
        if regressed {
            warnings.push(format!(
                "inexact improvement {} raised the objective to {obj}; keeping the previous pair",
                it - 1
            ));
            break;
        }
        let Some(cert) = ev.value else {
            if best.is_none() {
                let msg = format!("evaluation of the initial policy ended {status}");
                return Err(match status {
                    SolveStatus::Infeasible => Error::Infeasible(format!(
                        "{msg}; the initial policy is not certifiable on this grid (try a decay-gain initial policy)"
                    )),
                    _ => Error::Solver(msg),
                });
            }
            warnings.push(format!("evaluation {it} ended {status}; keeping the last feasible pair"));
            break;
        };
        if let Some(prev) = last_obj {
            if obj > prev + 10.0 * settings.solver.tol * (1.0 + prev.abs()) {
                warnings.push(format!(
                    "evaluation objective increased from {prev} to {obj} at iteration {it}"
                ));
            }
        }
        best = Some((cert.clone(), policy.clone()));
        if let Some(prev) = last_obj {
            if (prev - obj).abs() <= settings.tol_pi * prev.abs().max(1e-12) {
                break;
            }
        }
        last_obj = Some(obj);
        if it + 1 == iterations {
            break;
        }
        let im = improve_policy(tri, model, &cert, settings, backend, step)?;
        step += 1;
        on_record(&im.record);
        let status = im.record.status;
        log.push(im.record);
        tentative = !status.is_success();
        match im.value {
            Some(p) => {
                if tentative {
                    warnings.push(format!(
                        "improvement {it} ended {status}; using its policy as an unconfirmed candidate"
                    ));
                }
                policy = p
            }
            None => {
                warnings.push(format!("improvement {it} ended {status}; keeping the last feasible pair"));
                break;
            }
        }
    }
    let (certificate, policy) = best.expect("at least one evaluation succeeded");
    Ok(IterationResult {
        certificate,
        policy,
        log,
        warnings,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_round_trip() {
        let r = IterationRecord {
            step: 3,
            kind: StepKind::Improve,
            objective: 1.5,
            status: SolveStatus::NearOptimal,
            max_residual: 1e-9,
            wall_time_s: 0.25,
            worst_block: None,
            detail: "Solved".into(),
        };
        let mut buf = Vec::new();
        write_log(&mut buf, &[r.clone(), r.clone()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"kind\":\"improve\""));
        assert!(text.contains("\"status\":\"near-optimal\""));
        assert_eq!(read_log(&text).unwrap(), vec![r.clone(), r]);
    }
}
